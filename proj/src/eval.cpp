#include "dod/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "marching_cubes_tables.hpp"

namespace dod {

Metrics2D metrics2d(const DepthMap& pred, const DepthMap& gt) {
  if (!pred.sameShape(gt)) throw DimensionMismatch("prediction and gt differ in size");
  const auto valid = gt.validMask();
  const Eigen::Index n = valid.count();
  if (n == 0) throw EmptyValidSet("ground truth has no valid pixel");
  const Eigen::ArrayXd g = valid.select(gt.values, 1.0);
  const Eigen::ArrayXd e = valid.select(pred.values - gt.values, 0.0);
  const Eigen::ArrayXd ratio = (pred.values / g).max(g / pred.values);
  const double inv = 1.0 / static_cast<double>(n);

  Metrics2D m;
  m.mae = e.abs().sum() * inv;
  m.rmse = std::sqrt(e.square().sum() * inv);
  m.abs_rel = (e.abs() / g).sum() * inv;
  m.sq_rel = (e.square() / g).sum() * inv;
  m.delta_105 = static_cast<double>((valid && (ratio < 1.05)).count()) * inv;
  m.delta_125 = static_cast<double>((valid && (ratio < 1.25)).count()) * inv;
  return m;
}

// ---------------------------------------------------------------------------
// Nearest neighbors

Eigen::VectorXd bruteForceNN(const PointSet& a, const PointSet& b) {
  if (b.cols() == 0) throw EmptyPointSet("nearest-neighbor reference set is empty");
  Eigen::VectorXd out(a.cols());
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.cols(); ++j) best = std::min(best, (a.col(i) - b.col(j)).squaredNorm());
    out(i) = std::sqrt(best);
  }
  return out;
}

KdTree::KdTree(PointSet points) : points_(std::move(points)) {
  if (points_.cols() == 0) throw EmptyPointSet("cannot index an empty point set");
  order_.resize(points_.cols());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * points_.cols() / 8 + 1);
  build(0, static_cast<int>(order_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= 8) return id;
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int l, int r) { return points_(axis, l) < points_(axis, r); });
  nodes_[id].axis = axis;
  nodes_[id].split = points_(axis, order_[mid]);
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Eigen::Vector3d& q, double& best) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) best = std::min(best, (q - points_.col(order_[i])).squaredNorm());
    return;
  }
  const double diff = q(n.axis) - n.split;
  const int near = diff < 0 ? n.left : n.right;
  const int far = diff < 0 ? n.right : n.left;
  search(near, q, best);
  if (diff * diff <= best) search(far, q, best);
}

double KdTree::nearest(const Eigen::Vector3d& q) const {
  double best = std::numeric_limits<double>::infinity();
  search(0, q, best);
  return std::sqrt(best);
}

Eigen::VectorXd KdTree::nearest(const PointSet& queries) const {
  Eigen::VectorXd out(queries.cols());
  for (Eigen::Index i = 0; i < queries.cols(); ++i) out(i) = nearest(Eigen::Vector3d(queries.col(i)));
  return out;
}

Metrics3D metrics3d(const PointSet& pred, const PointSet& gt, double threshold) {
  if (pred.cols() == 0 || gt.cols() == 0) throw EmptyPointSet("3D metrics need two non-empty point sets");
  const Eigen::VectorXd d_pred = KdTree(gt).nearest(pred);
  const Eigen::VectorXd d_gt = KdTree(pred).nearest(gt);
  Metrics3D m;
  m.acc = d_pred.mean();
  m.comp = d_gt.mean();
  m.chamfer = 0.5 * (m.acc + m.comp);
  m.prec = static_cast<double>((d_pred.array() < threshold).count()) / static_cast<double>(pred.cols());
  m.recall = static_cast<double>((d_gt.array() < threshold).count()) / static_cast<double>(gt.cols());
  m.fscore = m.prec + m.recall > 0 ? 2 * m.prec * m.recall / (m.prec + m.recall) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// TSDF

TsdfVolume TsdfVolume::create(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, double voxel,
                              double truncation) {
  if (!(voxel > 0) || !(hi.array() > lo.array()).all()) throw InvalidArgument("bad TSDF bounds or voxel size");
  TsdfVolume v;
  v.voxel_size = voxel;
  v.truncation = truncation > 0 ? truncation : 3 * voxel;
  v.origin = lo;
  v.dims = ((hi - lo) / voxel).array().ceil().cast<int>() + 1;
  const std::size_t n = static_cast<std::size_t>(v.dims.x()) * v.dims.y() * v.dims.z();
  v.sdf.assign(n, 0.0f);
  v.weight.assign(n, 0.0f);
  return v;
}

namespace {

// Bilinear depth at a continuous pixel, only where all four taps are valid.
bool sampleDepth(const DepthMap& d, double u, double v, double& out) {
  if (!(u >= 0 && v >= 0 && u <= d.width - 1 && v <= d.height - 1)) return false;
  const int x0 = std::min(static_cast<int>(u), std::max(d.width - 2, 0));
  const int y0 = std::min(static_cast<int>(v), std::max(d.height - 2, 0));
  const int x1 = std::min(x0 + 1, d.width - 1);
  const int y1 = std::min(y0 + 1, d.height - 1);
  const double a = d(x0, y0), b = d(x1, y0), c = d(x0, y1), e = d(x1, y1);
  if (!(a > 0 && b > 0 && c > 0 && e > 0)) return false;
  const double ax = u - x0, ay = v - y0;
  out = (1 - ay) * ((1 - ax) * a + ax * b) + ay * ((1 - ax) * c + ax * e);
  return true;
}

}  // namespace

void tsdfIntegrate(TsdfVolume& vol, const DepthMap& depth, const Pose& camera_to_world, const Intrinsics& k) {
  if (depth.width != k.width || depth.height != k.height) throw DimensionMismatch("depth does not match intrinsics");
  const Pose world_to_camera = camera_to_world.inverse();
  for (int z = 0; z < vol.dims.z(); ++z) {
    for (int y = 0; y < vol.dims.y(); ++y) {
      for (int x = 0; x < vol.dims.x(); ++x) {
        const Eigen::Vector3d c = world_to_camera * vol.center(x, y, z);
        if (c.z() <= 1e-9) continue;
        const double u = k.fx * c.x() / c.z() + k.cx;
        const double v = k.fy * c.y() / c.z() + k.cy;
        double measured;
        if (!sampleDepth(depth, u, v, measured)) continue;
        const double dist = measured - c.z();
        if (dist < -vol.truncation) continue;
        const double tsdf = std::min(dist, vol.truncation);
        const std::size_t i = vol.index(x, y, z);
        const double w = vol.weight[i];
        vol.sdf[i] = static_cast<float>((vol.sdf[i] * w + tsdf) / (w + 1.0));
        vol.weight[i] = static_cast<float>(w + 1.0);
      }
    }
  }
}

Mesh extractMesh(const TsdfVolume& vol) {
  static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1},
                                        {0, 1, 0}, {1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
  static constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                       {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  Mesh mesh;
  std::map<std::pair<std::size_t, std::size_t>, std::uint32_t> edge_vertex;

  for (int z = 0; z + 1 < vol.dims.z(); ++z) {
    for (int y = 0; y + 1 < vol.dims.y(); ++y) {
      for (int x = 0; x + 1 < vol.dims.x(); ++x) {
        std::size_t idx[8];
        double val[8];
        bool observed = true;
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          idx[c] = vol.index(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]);
          observed = observed && vol.weight[idx[c]] > 0;
          val[c] = vol.sdf[idx[c]];
          if (val[c] < 0) cube |= 1 << c;
        }
        if (!observed || detail::kEdgeTable[cube] == 0) continue;

        std::uint32_t vert[12];
        for (int e = 0; e < 12; ++e) {
          if (!(detail::kEdgeTable[cube] & (1 << e))) continue;
          const int a = kEdge[e][0], b = kEdge[e][1];
          const auto key = std::minmax(idx[a], idx[b]);
          auto it = edge_vertex.find(key);
          if (it == edge_vertex.end()) {
            const double t = val[a] / (val[a] - val[b]);
            const Eigen::Vector3d pa = vol.center(x + kCorner[a][0], y + kCorner[a][1], z + kCorner[a][2]);
            const Eigen::Vector3d pb = vol.center(x + kCorner[b][0], y + kCorner[b][1], z + kCorner[b][2]);
            it = edge_vertex.emplace(key, static_cast<std::uint32_t>(mesh.vertices.size())).first;
            mesh.vertices.push_back(pa + t * (pb - pa));
          }
          vert[e] = it->second;
        }
        for (int t = 0; detail::kTriTable[cube][t] != -1; t += 3)
          mesh.faces.push_back({vert[detail::kTriTable[cube][t]], vert[detail::kTriTable[cube][t + 1]],
                                vert[detail::kTriTable[cube][t + 2]]});
      }
    }
  }
  if (mesh.faces.empty()) throw EmptySurface("volume has no zero crossing");
  return mesh;
}

double surfaceArea(const Mesh& mesh) {
  double area = 0;
  for (const auto& f : mesh.faces)
    area += 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
  return area;
}

PointSet samplePoints(const Mesh& mesh, double density, std::uint64_t seed) {
  if (mesh.faces.empty()) throw EmptySurface("cannot sample an empty mesh");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double area = 0;
  for (const auto& f : mesh.faces) {
    area += 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
    cumulative.push_back(area);
  }
  const auto n = static_cast<Eigen::Index>(std::max(1.0, std::round(area * density)));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointSet out(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = unit(rng) * area;
    const auto face = std::min<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin(), mesh.faces.size() - 1);
    double a = unit(rng), b = unit(rng);
    if (a + b > 1) {
      a = 1 - a;
      b = 1 - b;
    }
    const auto& f = mesh.faces[face];
    const Eigen::Vector3d& p0 = mesh.vertices[f[0]];
    out.col(i) = p0 + a * (mesh.vertices[f[1]] - p0) + b * (mesh.vertices[f[2]] - p0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PLY

void writePly(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(fmt::format("{}: cannot open for writing", path.string()));
  f << "ply\nformat binary_little_endian 1.0\n"
    << "element vertex " << mesh.vertices.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n"
    << "element face " << mesh.faces.size() << "\n"
    << "property list uchar uint vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    const float xyz[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z())};
    f.write(reinterpret_cast<const char*>(xyz), sizeof xyz);
  }
  for (const auto& face : mesh.faces) {
    const unsigned char three = 3;
    f.write(reinterpret_cast<const char*>(&three), 1);
    f.write(reinterpret_cast<const char*>(face.data()), 3 * sizeof(std::uint32_t));
  }
  if (!f) throw FormatError(fmt::format("{}: write failed", path.string()));
}

Mesh readPly(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(fmt::format("{}: cannot open", path.string()));
  std::string line;
  std::size_t nv = 0, nf = 0;
  bool binary = false;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string kind;
      ss >> kind;
      binary = kind == "binary_little_endian";
    } else if (word == "element") {
      std::string what;
      std::size_t n;
      ss >> what >> n;
      (what == "vertex" ? nv : nf) = n;
    } else if (word == "end_header") {
      break;
    }
  }
  if (!binary) throw FormatError(fmt::format("{}: only binary little-endian PLY is supported", path.string()));
  Mesh mesh;
  mesh.vertices.resize(nv);
  for (auto& v : mesh.vertices) {
    float xyz[3];
    f.read(reinterpret_cast<char*>(xyz), sizeof xyz);
    v = Eigen::Vector3d(xyz[0], xyz[1], xyz[2]);
  }
  mesh.faces.resize(nf);
  for (auto& face : mesh.faces) {
    unsigned char count = 0;
    f.read(reinterpret_cast<char*>(&count), 1);
    if (count != 3) throw FormatError(fmt::format("{}: non-triangle face", path.string()));
    f.read(reinterpret_cast<char*>(face.data()), 3 * sizeof(std::uint32_t));
  }
  if (!f) throw FormatError(fmt::format("{}: truncated", path.string()));
  return mesh;
}

}  // namespace dod
