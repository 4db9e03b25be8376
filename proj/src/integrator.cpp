#include "dod/integrator.hpp"

#include <algorithm>
#include <cmath>

namespace dod {

DepthMap initDepth(const DepthMap& sparse_grid, double fallback) {
  if (!(fallback > 0)) throw InvalidArgument("fallback depth must be positive");
  const auto valid = sparse_grid.validMask();
  const Eigen::Index n = valid.count();
  const double fill = n > 0 ? valid.select(sparse_grid.values, 0.0).sum() / static_cast<double>(n) : fallback;
  DepthMap out = sparse_grid;
  out.values = valid.select(sparse_grid.values, fill);
  return out;
}

DepthMap depthDelta(const DepthMap& sparse_grid, const DepthMap& current) {
  if (!sparse_grid.sameShape(current)) throw DimensionMismatch("sparse grid and depth differ in size");
  DepthMap out(current.width, current.height);
  out.values = (sparse_grid.values > 0.0).select(sparse_grid.values - current.values, 0.0);
  return out;
}

int AnalyticUpdate::argmaxHypothesis(const CorrelationVolume& volume, int p) const {
  const int center = hyp_.centerIndex();
  const int patch_center = HypothesisSet::kPatchSize / 2;
  const auto score = [&](int h) { return volume.data(h * HypothesisSet::kPatchSize + patch_center, p); };
  double top = score(0);
  for (int h = 1; h < hyp_.count; ++h) top = std::max(top, score(h));
  const double floor = top - tie_tolerance_ * std::abs(top);
  // Scan outward from the center so the first hypothesis reaching the
  // tie band has the smallest |offset|.
  if (score(center) >= floor) return center;
  for (int k = 1; k <= center; ++k)
    for (const int h : {center - k, center + k})
      if (score(h) >= floor) return h;
  return center;
}

OperatorOutput AnalyticUpdate::update(const FeatureGrid& hidden, const CorrelationVolume& volume,
                                      const FeatureGrid&, const DepthMap& depth, const DepthMap& delta_d) const {
  if (volume.channels != hyp_.channels()) throw DimensionMismatch("volume does not match the hypothesis set");
  OperatorOutput out;
  out.hidden = hidden;
  out.deltas.delta_d = delta_d;
  out.deltas.delta_c = DepthMap(depth.width, depth.height);
  out.deltas.delta_f = DepthMap(depth.width, depth.height);
  for (int p = 0; p < depth.width * depth.height; ++p) {
    const double dc = damping_ * hyp_.offset(argmaxHypothesis(volume, p));
    out.deltas.delta_c.values(p) = dc;
    out.deltas.delta_f.values(p) = delta_d.values(p) != 0.0 ? delta_d.values(p) : dc;
  }
  return out;
}

// ---------------------------------------------------------------------------

UpdateBlock::UpdateBlock(const UpdateBlockConfig& cfg)
    : cfg_(cfg),
      corr0_(cfg.corr_channels, cfg.corr0, 1),
      corr1_(cfg.corr0, cfg.corr1, 3),
      depth0_(1, cfg.depth0, 7),
      depth1_(cfg.depth0, cfg.depth1, 3),
      conv0_(cfg.corr1 + cfg.depth1, cfg.hidden - 1, 3),
      gru_h_(cfg.hidden, cfg.hidden + cfg.mono8, 1, 5),
      gru_v_(cfg.hidden, cfg.hidden + cfg.mono8, 5, 1),
      c_head0_(cfg.hidden, cfg.head, 3),
      c_head1_(cfg.head, 1, 3),
      f_head0_(cfg.hidden + 2, cfg.head, 3),
      f_head1_(cfg.head, 1, 3) {}

UpdateBlock::Output UpdateBlock::forward(const ad::Var& hidden, const ad::Var& volume, const ad::Var& mono8,
                                         const ad::Var& depth, const ad::Var& delta_d) const {
  const ad::Var corr = ad::relu(corr1_(ad::relu(corr0_(volume))));
  const ad::Var dep = ad::relu(depth1_(ad::relu(depth0_(depth))));
  const ad::Var motion = ad::relu(conv0_(ad::concat({corr, dep})));
  const ad::Var x = ad::concat({motion, depth, mono8});
  ad::Var h = gru_h_(hidden, x);
  h = gru_v_(h, x);
  Output out;
  out.hidden = h;
  out.delta_c = c_head1_(ad::relu(c_head0_(h)));
  out.delta_f = f_head1_(ad::relu(f_head0_(ad::concat({h, out.delta_c, delta_d}))));
  return out;
}

void UpdateBlock::collect(nn::ParameterList& out, const std::string& prefix) const {
  corr0_.collect(out, prefix + ".corr0");
  corr1_.collect(out, prefix + ".corr1");
  depth0_.collect(out, prefix + ".depth0");
  depth1_.collect(out, prefix + ".depth1");
  conv0_.collect(out, prefix + ".conv0");
  gru_h_.collect(out, prefix + ".gru1x5");
  gru_v_.collect(out, prefix + ".gru5x1");
  c_head0_.collect(out, prefix + ".visual0");
  c_head1_.collect(out, prefix + ".visual1");
  f_head0_.collect(out, prefix + ".fusion0");
  f_head1_.collect(out, prefix + ".fusion1");
}

FeatureGrid initHidden(const FeatureGrid& mono8, const HiddenInit& module) { return module(mono8); }

OperatorOutput LearnedUpdate::update(const FeatureGrid& hidden, const CorrelationVolume& volume,
                                     const FeatureGrid& mono8, const DepthMap& depth, const DepthMap& delta_d) const {
  const auto r = block_->forward(ad::constant(hidden), ad::constant(volume), ad::constant(mono8),
                                 ad::constant(depth.toTensor()), ad::constant(delta_d.toTensor()));
  OperatorOutput out;
  out.hidden = r.hidden->value;
  out.deltas.delta_c = DepthMap::fromTensor(r.delta_c->value);
  out.deltas.delta_d = delta_d;
  out.deltas.delta_f = DepthMap::fromTensor(r.delta_f->value);
  return out;
}

// ---------------------------------------------------------------------------

IntegratorState step(const IntegratorState& state, const CorrelationVolume& volume, const FeatureGrid& mono8,
                     const DepthMap& sparse_grid, const UpdateOperator& op, DeltaMaps* deltas) {
  const DepthMap& cur = state.depth;
  if (!sparse_grid.sameShape(cur) || volume.width != cur.width || volume.height != cur.height)
    throw DimensionMismatch("integrator grids differ in size");
  if (op.kind() == OperatorKind::Learned &&
      (mono8.width != cur.width || mono8.height != cur.height || state.hidden.width != cur.width ||
       state.hidden.height != cur.height))
    throw DimensionMismatch("hidden or monocular grid differs from depth grid");

  const DepthMap dd = depthDelta(sparse_grid, cur);
  OperatorOutput o = op.update(state.hidden, volume, mono8, cur, dd);
  const auto measured = sparse_grid.values > 0.0;
  if (op.kind() == OperatorKind::Analytic) o.deltas.delta_f.values = measured.select(dd.values, o.deltas.delta_f.values);

  IntegratorState next;
  next.hidden = std::move(o.hidden);
  next.iteration = state.iteration + 1;
  next.depth = cur;
  next.depth.values = (cur.values + o.deltas.delta_f.values).max(kMinDepth);
  if (op.kind() == OperatorKind::Analytic) {
    // cur + (s - cur) can miss s by an ulp; pin measured cells exactly.
    next.depth.values = measured.select(sparse_grid.values, next.depth.values);
  }
  if (deltas) *deltas = std::move(o.deltas);
  return next;
}

IntegratorRun run(const IntegratorInputs& in, int iterations, const UpdateOperator& op) {
  if (iterations < 0) throw InvalidArgument("iteration count must be non-negative");
  IntegratorRun out;
  out.init = initDepth(in.sparse_grid, in.fallback_depth);
  IntegratorState state{in.hidden0, out.init, 0};
  out.depths.reserve(iterations);
  for (int i = 0; i < iterations; ++i) {
    const CorrelationVolume vol = buildCorrelationVolume(in.ft, in.fs, state.depth, in.k8, in.target_to_source, in.hyp);
    state = step(state, vol, in.mono8, in.sparse_grid, op);
    out.depths.push_back(state.depth);
  }
  out.hidden = std::move(state.hidden);
  return out;
}

}  // namespace dod
