#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dod/autodiff.hpp"
#include "dod/core.hpp"
#include "dod/geometry.hpp"
#include "dod/nn.hpp"

namespace dod {

/// Depth hypotheses relative to the current estimate: `count` offsets with
/// uniform `spacing`, symmetric about zero.
struct HypothesisSet {
  int count = 41;
  double spacing = 0.1;

  double offset(int h) const { return (h - (count - 1) / 2) * spacing; }
  std::vector<double> offsets() const;
  int centerIndex() const { return (count - 1) / 2; }
  int channels() const { return count * kPatchSize; }

  static constexpr int kPatchSize = 9;  // 3x3 patch, row-major (dy, dx)
};

/// Four-corner bilinear stencil into a grid.
struct BilinearTap {
  int index[4];
  double weight[4];
};

/// Stencil for continuous coordinate q, or nullopt when q is outside
/// [0, width-1] x [0, height-1].
std::optional<BilinearTap> bilinearTap(int width, int height, Pixel q);
Eigen::VectorXd sampleFeatures(const FeatureGrid& grid, const BilinearTap& tap);

/// Matching score (1 / sqrt(F)) * <Ft(q_t), bilinear Fs(q_s)>. Throws OutOfBounds.
double correlationScore(const FeatureGrid& ft, const FeatureGrid& fs, const Pixel& qt, const Pixel& qs);

/// Per-pixel hypotheses x 3x3 patch of correlation scores. Channel
/// h * 9 + k holds hypothesis h, patch entry k = (dy + 1) * 3 + (dx + 1).
using CorrelationVolume = Tensor;

/// Projected source coordinates for every (pixel, hypothesis); built from
/// the current depth and then treated as constant.
struct CorrelationPlan {
  int width = 0;   // target grid
  int height = 0;
  int source_width = 0;
  int source_height = 0;
  int hypotheses = 0;
  std::vector<Pixel> projected;     // index p * hypotheses + h
  std::vector<std::uint8_t> valid;  // 0 when behind the source camera
};

CorrelationPlan planCorrelation(const DepthMap& depth, const Intrinsics& k, const Pose& target_to_source,
                                const HypothesisSet& hyp, int source_width, int source_height);

CorrelationVolume applyCorrelationPlan(const FeatureGrid& ft, const FeatureGrid& fs, const CorrelationPlan& plan);

/// For every target pixel and offset d in `hyp`, projects the pixel at depth
/// max(D + d, kMinDepth) into the source grid and scores a 3x3 unit-offset
/// patch around it. Entries that leave the grid or land behind the camera are 0.
CorrelationVolume buildCorrelationVolume(const FeatureGrid& ft, const FeatureGrid& fs, const DepthMap& depth,
                                         const Intrinsics& k, const Pose& target_to_source,
                                         const HypothesisSet& hyp);

/// Differentiable in both feature grids (coordinates are constant).
ad::Var correlationVolume(const ad::Var& ft, const ad::Var& fs, const CorrelationPlan& plan);

// ---------------------------------------------------------------------------
// Encoders

/// Geometry encoder interface: color image to features at 1/8 resolution.
class FeatureEncoder {
 public:
  virtual ~FeatureEncoder() = default;
  virtual FeatureGrid encode(const ColorImage& image) const = 0;
  virtual int channels() const = 0;
};

/// Hand-crafted, training-free descriptor: Gaussian-smoothed intensity on a
/// 4x4 stencil around each cell center plus pooled gradient statistics,
/// made zero-mean and unit-norm per cell.
class DescriptorEncoder final : public FeatureEncoder {
 public:
  explicit DescriptorEncoder(double blur_sigma = 2.0, int stencil_step = 4)
      : sigma_(blur_sigma), step_(stencil_step) {}
  FeatureGrid encode(const ColorImage& image) const override;
  int channels() const override { return 20; }

 private:
  double sigma_;
  int step_;
};

/// Three stride-2 convolution stages (ReLU between) down to 1/8.
class ConvEncoder final : public FeatureEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(int width, int out_channels);

  ad::Var forward(const ad::Var& image) const;
  FeatureGrid encode(const ColorImage& image) const override;
  int channels() const override { return out_; }
  void collect(nn::ParameterList& out, const std::string& prefix) const;

 private:
  int out_ = 0;
  nn::Conv2d s1_, s2_, s3_;
};

/// Monocular features at 1/2, 1/4 and 1/8 of the target image.
struct MonocularPyramid {
  FeatureGrid level2;
  FeatureGrid level4;
  FeatureGrid level8;
};

class MonocularEncoder {
 public:
  MonocularEncoder() = default;
  MonocularEncoder(int c2, int c4, int c8);

  struct Levels {
    ad::Var level2, level4, level8;
  };
  Levels forward(const ad::Var& image) const;
  MonocularPyramid encode(const ColorImage& image) const;
  void collect(nn::ParameterList& out, const std::string& prefix) const;

 private:
  nn::Conv2d s1_, s2_, s3_;
};

/// Throws BadDimensions unless both image sides are multiples of 8.
void requireDivisibleBy8(const ColorImage& image);

FeatureGrid extractFeatures(const ColorImage& image, const FeatureEncoder& encoder);
MonocularPyramid extractMonocular(const ColorImage& image, const MonocularEncoder& encoder);

/// Grayscale intensity (channel mean).
Eigen::ArrayXd grayscale(const ColorImage& image);

}  // namespace dod
