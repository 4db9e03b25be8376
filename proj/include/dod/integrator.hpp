#pragma once

#include <memory>
#include <vector>

#include "dod/autodiff.hpp"
#include "dod/core.hpp"
#include "dod/encoding.hpp"
#include "dod/geometry.hpp"
#include "dod/nn.hpp"

namespace dod {

struct IntegratorState {
  FeatureGrid hidden;
  DepthMap depth;
  int iteration = 0;
};

struct DeltaMaps {
  DepthMap delta_c;
  DepthMap delta_d;
  DepthMap delta_f;
};

/// Sparse cells keep their value; the rest get the mean of the sparse
/// values, or `fallback` when there are none.
DepthMap initDepth(const DepthMap& sparse_grid, double fallback = 3.0);

/// sparse - current where sparse > 0, else 0.
DepthMap depthDelta(const DepthMap& sparse_grid, const DepthMap& current);

enum class OperatorKind { Analytic, Learned };

struct OperatorOutput {
  FeatureGrid hidden;
  DeltaMaps deltas;
};

class UpdateOperator {
 public:
  virtual ~UpdateOperator() = default;
  virtual OperatorKind kind() const = 0;
  virtual OperatorOutput update(const FeatureGrid& hidden, const CorrelationVolume& volume, const FeatureGrid& mono8,
                                const DepthMap& depth, const DepthMap& delta_d) const = 0;
};

/// Training-free operator: sparse cells jump to their measurement, other
/// cells move `damping` times the offset of the best-scoring hypothesis
/// (patch center). Scores within `tie_tolerance * |best|` of the best count
/// as ties, and ties go to the smallest |offset|.
class AnalyticUpdate final : public UpdateOperator {
 public:
  explicit AnalyticUpdate(HypothesisSet hyp = {}, double damping = 0.5, double tie_tolerance = 0.0)
      : hyp_(hyp), damping_(damping), tie_tolerance_(tie_tolerance) {}
  OperatorKind kind() const override { return OperatorKind::Analytic; }
  OperatorOutput update(const FeatureGrid& hidden, const CorrelationVolume& volume, const FeatureGrid& mono8,
                        const DepthMap& depth, const DepthMap& delta_d) const override;

  /// Index of the winning hypothesis for pixel p.
  int argmaxHypothesis(const CorrelationVolume& volume, int p) const;

 private:
  HypothesisSet hyp_;
  double damping_;
  double tie_tolerance_;
};

/// Channel widths of the learned update block.
struct UpdateBlockConfig {
  int corr_channels = 369;
  int corr0 = 64, corr1 = 48;
  int depth0 = 32, depth1 = 16;
  int hidden = 32;
  int mono8 = 32;
  int head = 16;
};

/// Learned visual/depth cue integration: correlation and depth encoders,
/// two separable ConvGRUs (1x5 then 5x1), then a visual-cue head and a
/// fusion head producing the depth update.
class UpdateBlock {
 public:
  UpdateBlock() = default;
  explicit UpdateBlock(const UpdateBlockConfig& cfg);

  struct Output {
    ad::Var hidden;
    ad::Var delta_c;
    ad::Var delta_f;
  };
  Output forward(const ad::Var& hidden, const ad::Var& volume, const ad::Var& mono8, const ad::Var& depth,
                 const ad::Var& delta_d) const;
  void collect(nn::ParameterList& out, const std::string& prefix) const;
  const UpdateBlockConfig& config() const { return cfg_; }

 private:
  UpdateBlockConfig cfg_;
  nn::Conv2d corr0_, corr1_, depth0_, depth1_, conv0_;
  nn::ConvGRU gru_h_, gru_v_;
  nn::Conv2d c_head0_, c_head1_, f_head0_, f_head1_;
};

/// 3x3 convolution + tanh on the 1/8 monocular features.
class HiddenInit {
 public:
  HiddenInit() = default;
  HiddenInit(int mono8_channels, int hidden_channels) : conv_(mono8_channels, hidden_channels, 3) {}
  ad::Var forward(const ad::Var& mono8) const { return ad::tanh(conv_(mono8)); }
  FeatureGrid operator()(const FeatureGrid& mono8) const { return forward(ad::constant(mono8))->value; }
  void collect(nn::ParameterList& out, const std::string& prefix) const { conv_.collect(out, prefix + ".conv"); }

 private:
  nn::Conv2d conv_;
};

FeatureGrid initHidden(const FeatureGrid& mono8, const HiddenInit& module);

class LearnedUpdate final : public UpdateOperator {
 public:
  explicit LearnedUpdate(std::shared_ptr<const UpdateBlock> block) : block_(std::move(block)) {}
  OperatorKind kind() const override { return OperatorKind::Learned; }
  OperatorOutput update(const FeatureGrid& hidden, const CorrelationVolume& volume, const FeatureGrid& mono8,
                        const DepthMap& depth, const DepthMap& delta_d) const override;

 private:
  std::shared_ptr<const UpdateBlock> block_;
};

/// One refinement step. Throws DimensionMismatch on inconsistent grids.
IntegratorState step(const IntegratorState& state, const CorrelationVolume& volume, const FeatureGrid& mono8,
                     const DepthMap& sparse_grid, const UpdateOperator& op, DeltaMaps* deltas = nullptr);

/// Everything a refinement run needs at 1/8 resolution.
struct IntegratorInputs {
  FeatureGrid ft;
  FeatureGrid fs;
  FeatureGrid mono8;
  DepthMap sparse_grid;
  Intrinsics k8;
  Pose target_to_source;
  HypothesisSet hyp;
  FeatureGrid hidden0;  // may be empty for the analytic operator
  double fallback_depth = 3.0;
};

struct IntegratorRun {
  DepthMap init;
  std::vector<DepthMap> depths;  // one per iteration
  FeatureGrid hidden;
};

/// N refinement steps, rebuilding the correlation volume from the current
/// depth before each one.
IntegratorRun run(const IntegratorInputs& in, int iterations, const UpdateOperator& op);

}  // namespace dod
