#include "dod/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace dod {

DepthMap SparseDepthMap::rasterize(int scale) const {
  const int w = (width + scale - 1) / scale;
  const int h = (height + scale - 1) / scale;
  DepthMap grid(w, h);
  for (const auto& s : samples) {
    const int x = std::clamp(static_cast<int>(std::lround(s.pixel.u / scale)), 0, w - 1);
    const int y = std::clamp(static_cast<int>(std::lround(s.pixel.v / scale)), 0, h - 1);
    double& cell = grid(x, y);
    if (cell <= 0.0 || s.depth < cell) cell = s.depth;
  }
  return grid;
}

ReprojectionResult reprojectSparseDepth(const SparseDepthMap& src, const Pose& source_to_target,
                                        const Intrinsics& k_source, const Intrinsics& k_target) {
  ReprojectionResult out;
  out.map.width = k_target.width;
  out.map.height = k_target.height;
  out.map.samples.reserve(src.samples.size());
  for (const auto& s : src.samples) {
    const Eigen::Vector3d p = source_to_target * backproject(s.pixel, s.depth, k_source);
    if (!(p.z() > 1e-9)) {
      ++out.dropped;
      continue;
    }
    const auto proj = projectCameraPoint(p, k_target);
    if (!insideImage(proj.pixel, k_target.width, k_target.height)) {
      ++out.dropped;
      continue;
    }
    out.map.samples.push_back({proj.pixel, proj.depth});
  }
  return out;
}

ReprojectionResult reprojectSparseDepth(const SparseDepthMap& src, const Pose& source_to_target, const Intrinsics& k) {
  return reprojectSparseDepth(src, source_to_target, k, k);
}

}  // namespace dod
