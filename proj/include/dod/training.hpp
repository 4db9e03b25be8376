#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dod/autodiff.hpp"
#include "dod/core.hpp"
#include "dod/geometry.hpp"
#include "dod/model.hpp"
#include "dod/nn.hpp"
#include "dod/sequence.hpp"

namespace dod {

struct LossConfig {
  double nu = 0.8;
};

/// sum_i nu^(N - i) * mean over valid gt pixels of |pred_i - gt|.
/// Throws EmptyValidSet when gt has no valid pixel.
double sequenceLoss(const std::vector<DepthMap>& preds, const DepthMap& gt, const LossConfig& cfg = {});
ad::Var sequenceLoss(const std::vector<ad::Var>& preds, const DepthMap& gt, const LossConfig& cfg = {});

/// A past frame available as a source view.
struct BufferFrame {
  ColorImage color;
  SparseDepthMap sparse;
  Pose camera_to_world;
};

struct TrainSample {
  ColorImage target;
  DepthMap gt;
  Pose camera_to_world;
  Intrinsics k;
  std::vector<BufferFrame> buffer;
  int source = 0;

  void validate() const;
  /// Model inputs for the selected source view.
  FrameInputs inputs() const;
};

/// One sample per frame with evaluation depth and at least one earlier
/// depth frame; the buffer holds up to `buffer_size` of the latest depth
/// frames before it, with `n_points` sparse samples each.
std::vector<TrainSample> samplesFromSequence(const Sequence& seq, std::size_t n_points, int buffer_size,
                                             std::uint64_t seed);

struct AugmentConfig {
  double jitter = 0.2;  // brightness and contrast factors drawn from [1 - j, 1 + j]
  double flip_probability = 0.5;
};

/// Mirror about the vertical image axis: images, depth, sparse u
/// coordinates and cx are flipped; every pose is conjugated by diag(-1, 1, 1).
TrainSample flipSample(const TrainSample& s);

/// Color jitter shared by all views of the sample, then a random flip.
TrainSample augment(const TrainSample& s, std::uint64_t seed, const AugmentConfig& cfg = {});

struct ParameterSelection {
  int parameter;
  Eigen::Index index;
};

/// Max over the selection of |analytic - numeric| / max(|numeric|, 1e-8),
/// numeric from central differences. Throws InvalidArgument for eps <= 0
/// and NonFiniteGradient when a gradient is not finite.
double gradientCheck(const nn::ParameterList& params, const std::vector<ParameterSelection>& selection,
                     const std::function<ad::Var()>& loss_fn, double eps);

/// Same check for the scalar sum_i <projection_i, outputs_i>. Differences are
/// taken per output element before projecting, which keeps round-off of the
/// projected sum out of the numeric gradient.
double gradientCheck(const nn::ParameterList& params, const std::vector<ParameterSelection>& selection,
                     const std::function<std::vector<ad::Var>()>& outputs_fn, const std::vector<Tensor>& projection,
                     double eps);

/// Deterministic selection of `per_parameter` entries from every tensor.
std::vector<ParameterSelection> sampleSelection(const nn::ParameterList& params, int per_parameter,
                                                std::uint64_t seed);

struct ModuleGradientCheck {
  std::string module;
  double max_rel_error = 0;
  std::size_t entries = 0;
};

/// Central-difference check of every learned module (both encoders, hidden
/// init, correlation volume, update block, decoder) on random inputs, with respect to its
/// parameters and inputs. Biases are drawn from U(-0.1, 0.1) so no unit sits
/// exactly on a ReLU kink, and outputs are reduced by a fixed random
/// projection.
std::vector<ModuleGradientCheck> checkModuleGradients(const ModelConfig& cfg, std::uint64_t seed, double eps,
                                                      int per_parameter);

struct TrainConfig {
  int steps = 100;
  double lr = 1e-3;
  double momentum = 0.9;
  double clip_norm = 1.0;
  int iterations = 3;
  std::uint64_t seed = 0;
  bool augment = true;
  LossConfig loss;
};

struct TrainResult {
  std::vector<double> loss;
  std::vector<double> grad_norm;     // before clipping
  std::vector<double> clipped_norm;  // after clipping
};

/// SGD with momentum and global-norm clipping; one random sample and one
/// random buffer frame per step. Throws DivergedLoss on a non-finite loss.
TrainResult trainToy(Model& model, const std::vector<TrainSample>& dataset, const TrainConfig& cfg);

double globalNorm(const nn::ParameterList& params);

}  // namespace dod
