#include "dod/encoding.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace dod {

std::vector<double> HypothesisSet::offsets() const {
  std::vector<double> out(count);
  for (int h = 0; h < count; ++h) out[h] = offset(h);
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear sampling and matching score

std::optional<BilinearTap> bilinearTap(int width, int height, Pixel q) {
  // Round-off from reprojection must not flip a border tap in or out.
  constexpr double kSnap = 1e-9;
  const auto snap = [](double c, double hi) {
    if (c < 0.0 && c > -kSnap) return 0.0;
    if (c > hi && c < hi + kSnap) return hi;
    return c;
  };
  q.u = snap(q.u, width - 1);
  q.v = snap(q.v, height - 1);
  if (!(q.u >= 0.0 && q.u <= width - 1 && q.v >= 0.0 && q.v <= height - 1)) return std::nullopt;
  const int x0 = std::min(static_cast<int>(q.u), std::max(width - 2, 0));
  const int y0 = std::min(static_cast<int>(q.v), std::max(height - 2, 0));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double ax = q.u - x0;
  const double ay = q.v - y0;
  BilinearTap t;
  t.index[0] = y0 * width + x0;
  t.index[1] = y0 * width + x1;
  t.index[2] = y1 * width + x0;
  t.index[3] = y1 * width + x1;
  t.weight[0] = (1.0 - ax) * (1.0 - ay);
  t.weight[1] = ax * (1.0 - ay);
  t.weight[2] = (1.0 - ax) * ay;
  t.weight[3] = ax * ay;
  return t;
}

namespace {

void sampleInto(const FeatureGrid& grid, const BilinearTap& t, Eigen::VectorXd& out) {
  out.noalias() = t.weight[0] * grid.data.col(t.index[0]) + t.weight[1] * grid.data.col(t.index[1]) +
                  t.weight[2] * grid.data.col(t.index[2]) + t.weight[3] * grid.data.col(t.index[3]);
}

}  // namespace

Eigen::VectorXd sampleFeatures(const FeatureGrid& grid, const BilinearTap& tap) {
  Eigen::VectorXd out(grid.channels);
  sampleInto(grid, tap, out);
  return out;
}

double correlationScore(const FeatureGrid& ft, const FeatureGrid& fs, const Pixel& qt, const Pixel& qs) {
  if (ft.channels != fs.channels) throw DimensionMismatch("feature grids differ in channel count");
  const bool integral = qt.u == std::floor(qt.u) && qt.v == std::floor(qt.v);
  if (!integral || qt.u < 0 || qt.v < 0 || qt.u >= ft.width || qt.v >= ft.height)
    throw OutOfBounds(fmt::format("target coordinate ({}, {}) is not a grid cell", qt.u, qt.v));
  const auto tap = bilinearTap(fs.width, fs.height, qs);
  if (!tap) throw OutOfBounds(fmt::format("source coordinate ({}, {}) outside the grid", qs.u, qs.v));
  Eigen::VectorXd s(fs.channels);
  sampleInto(fs, *tap, s);
  const int p = ft.index(static_cast<int>(qt.u), static_cast<int>(qt.v));
  return ft.data.col(p).dot(s) / std::sqrt(static_cast<double>(ft.channels));
}

// ---------------------------------------------------------------------------
// Correlation volume

CorrelationPlan planCorrelation(const DepthMap& depth, const Intrinsics& k, const Pose& target_to_source,
                                const HypothesisSet& hyp, int source_width, int source_height) {
  CorrelationPlan plan;
  plan.width = depth.width;
  plan.height = depth.height;
  plan.source_width = source_width;
  plan.source_height = source_height;
  plan.hypotheses = hyp.count;
  const std::size_t n = static_cast<std::size_t>(depth.width) * depth.height * hyp.count;
  plan.projected.assign(n, Pixel{});
  plan.valid.assign(n, 0);
  const auto offsets = hyp.offsets();
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const int p = y * depth.width + x;
      for (int h = 0; h < hyp.count; ++h) {
        const double d = std::max(depth(x, y) + offsets[h], kMinDepth);
        const Eigen::Vector3d pt = target_to_source * backproject(Pixel{double(x), double(y)}, d, k);
        if (!(pt.z() > 1e-9)) continue;
        const std::size_t i = static_cast<std::size_t>(p) * hyp.count + h;
        plan.projected[i] = projectCameraPoint(pt, k).pixel;
        plan.valid[i] = 1;
      }
    }
  }
  return plan;
}

namespace {

template <typename Visit>
void forEachTap(const CorrelationPlan& plan, Visit&& visit) {
  const int hw = plan.width * plan.height;
  for (int p = 0; p < hw; ++p) {
    for (int h = 0; h < plan.hypotheses; ++h) {
      const std::size_t i = static_cast<std::size_t>(p) * plan.hypotheses + h;
      if (!plan.valid[i]) continue;
      const Pixel q = plan.projected[i];
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto tap = bilinearTap(plan.source_width, plan.source_height, Pixel{q.u + dx, q.v + dy});
          if (!tap) continue;
          visit(p, h * HypothesisSet::kPatchSize + (dy + 1) * 3 + (dx + 1), *tap);
        }
      }
    }
  }
}

}  // namespace

CorrelationVolume applyCorrelationPlan(const FeatureGrid& ft, const FeatureGrid& fs, const CorrelationPlan& plan) {
  if (ft.channels != fs.channels) throw DimensionMismatch("feature grids differ in channel count");
  if (ft.width != plan.width || ft.height != plan.height || fs.width != plan.source_width ||
      fs.height != plan.source_height)
    throw DimensionMismatch("correlation plan does not match feature grids");
  CorrelationVolume vol(plan.hypotheses * HypothesisSet::kPatchSize, plan.height, plan.width);
  const double norm = std::sqrt(static_cast<double>(ft.channels));
  Eigen::VectorXd s(fs.channels);
  forEachTap(plan, [&](int p, int channel, const BilinearTap& tap) {
    sampleInto(fs, tap, s);
    vol.data(channel, p) = ft.data.col(p).dot(s) / norm;
  });
  return vol;
}

CorrelationVolume buildCorrelationVolume(const FeatureGrid& ft, const FeatureGrid& fs, const DepthMap& depth,
                                         const Intrinsics& k, const Pose& target_to_source,
                                         const HypothesisSet& hyp) {
  if (depth.width != ft.width || depth.height != ft.height) throw DimensionMismatch("depth does not match Ft");
  return applyCorrelationPlan(ft, fs, planCorrelation(depth, k, target_to_source, hyp, fs.width, fs.height));
}

ad::Var correlationVolume(const ad::Var& ft, const ad::Var& fs, const CorrelationPlan& plan) {
  return ad::makeNode(applyCorrelationPlan(ft->value, fs->value, plan), {ft, fs}, [plan](ad::Node& self) {
    auto& t = self.inputs[0];
    auto& s = self.inputs[1];
    const auto& ftv = t->value;
    const auto& fsv = s->value;
    const double norm = std::sqrt(static_cast<double>(ftv.channels));
    Eigen::MatrixXd dft = Eigen::MatrixXd::Zero(ftv.channels, ftv.pixels());
    Eigen::MatrixXd dfs = Eigen::MatrixXd::Zero(fsv.channels, fsv.pixels());
    Eigen::VectorXd sample(fsv.channels);
    forEachTap(plan, [&](int p, int channel, const BilinearTap& tap) {
      const double g = self.grad(channel, p) / norm;
      if (g == 0.0) return;
      if (t->requires_grad) {
        sampleInto(fsv, tap, sample);
        dft.col(p) += g * sample;
      }
      if (s->requires_grad) {
        for (int c = 0; c < 4; ++c) dfs.col(tap.index[c]) += (g * tap.weight[c]) * ftv.data.col(p);
      }
    });
    if (t->requires_grad) t->accumulate(dft);
    if (s->requires_grad) s->accumulate(dfs);
  });
}

// ---------------------------------------------------------------------------
// Encoders

void requireDivisibleBy8(const ColorImage& image) {
  if (image.width % 8 != 0 || image.height % 8 != 0 || image.width == 0 || image.height == 0)
    throw BadDimensions(fmt::format("image size {}x{} is not a multiple of 8", image.width, image.height));
}

Eigen::ArrayXd grayscale(const ColorImage& image) {
  return image.data.colwise().mean().transpose().array();
}

namespace {

Eigen::ArrayXd gaussianBlur(const Eigen::ArrayXd& img, int w, int h, double sigma) {
  if (sigma <= 0) return img;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += kernel[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : kernel) v /= sum;

  Eigen::ArrayXd tmp(img.size());
  Eigen::ArrayXd out(img.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += kernel[i + r] * img(y * w + std::clamp(x + i, 0, w - 1));
      tmp(y * w + x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += kernel[i + r] * tmp(std::clamp(y + i, 0, h - 1) * w + x);
      out(y * w + x) = acc;
    }
  return out;
}

}  // namespace

FeatureGrid DescriptorEncoder::encode(const ColorImage& image) const {
  requireDivisibleBy8(image);
  const int w = image.width;
  const int h = image.height;
  const Eigen::ArrayXd b = gaussianBlur(grayscale(image), w, h, sigma_);
  const auto at = [&](int x, int y) { return b(std::clamp(y, 0, h - 1) * w + std::clamp(x, 0, w - 1)); };

  FeatureGrid out(channels(), h / 8, w / 8);
  const int offs[4] = {-3 * step_ / 2, -step_ / 2, step_ / 2, 3 * step_ / 2};
  Eigen::VectorXd f(channels());
  for (int cy = 0; cy < out.height; ++cy) {
    for (int cx = 0; cx < out.width; ++cx) {
      const int px = 8 * cx;
      const int py = 8 * cy;
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) f[j * 4 + i] = at(px + offs[i], py + offs[j]);
      f.head<16>().array() -= f.head<16>().mean();

      double gx = 0, gy = 0, agx = 0, agy = 0;
      for (int y = py - 4; y < py + 4; ++y)
        for (int x = px - 4; x < px + 4; ++x) {
          const double dx = 0.5 * (at(x + 1, y) - at(x - 1, y));
          const double dy = 0.5 * (at(x, y + 1) - at(x, y - 1));
          gx += dx;
          gy += dy;
          agx += std::abs(dx);
          agy += std::abs(dy);
        }
      // Gradient pooling over 64 pixels; the factor puts it on the scale of
      // the intensity stencil differences.
      const double g = 4.0 / 64.0 * step_;
      f[16] = g * gx;
      f[17] = g * gy;
      f[18] = g * agx;
      f[19] = g * agy;
      const double n = f.norm();
      out.data.col(out.index(cx, cy)) = n > 1e-12 ? Eigen::VectorXd(f / n) : Eigen::VectorXd::Zero(channels());
    }
  }
  return out;
}

ConvEncoder::ConvEncoder(int width, int out_channels)
    : out_(out_channels), s1_(3, width, 3, 3, 2), s2_(width, width, 3, 3, 2), s3_(width, out_channels, 3, 3, 2) {}

ad::Var ConvEncoder::forward(const ad::Var& image) const {
  return s3_(ad::relu(s2_(ad::relu(s1_(image)))));
}

FeatureGrid ConvEncoder::encode(const ColorImage& image) const {
  requireDivisibleBy8(image);
  return forward(ad::constant(image))->value;
}

void ConvEncoder::collect(nn::ParameterList& out, const std::string& prefix) const {
  s1_.collect(out, prefix + ".stage1");
  s2_.collect(out, prefix + ".stage2");
  s3_.collect(out, prefix + ".stage3");
}

MonocularEncoder::MonocularEncoder(int c2, int c4, int c8) : s1_(3, c2, 3, 3, 2), s2_(c2, c4, 3, 3, 2), s3_(c4, c8, 3, 3, 2) {}

MonocularEncoder::Levels MonocularEncoder::forward(const ad::Var& image) const {
  Levels l;
  l.level2 = ad::relu(s1_(image));
  l.level4 = ad::relu(s2_(l.level2));
  l.level8 = ad::relu(s3_(l.level4));
  return l;
}

MonocularPyramid MonocularEncoder::encode(const ColorImage& image) const {
  requireDivisibleBy8(image);
  const auto l = forward(ad::constant(image));
  return {l.level2->value, l.level4->value, l.level8->value};
}

void MonocularEncoder::collect(nn::ParameterList& out, const std::string& prefix) const {
  s1_.collect(out, prefix + ".stage1");
  s2_.collect(out, prefix + ".stage2");
  s3_.collect(out, prefix + ".stage3");
}

FeatureGrid extractFeatures(const ColorImage& image, const FeatureEncoder& encoder) {
  requireDivisibleBy8(image);
  return encoder.encode(image);
}

MonocularPyramid extractMonocular(const ColorImage& image, const MonocularEncoder& encoder) {
  return encoder.encode(image);
}

}  // namespace dod
