#include "dod/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <fmt/format.h>

#include "dod/scene_sim.hpp"

namespace dod {

double sequenceLoss(const std::vector<DepthMap>& preds, const DepthMap& gt, const LossConfig& cfg) {
  std::vector<ad::Var> vars;
  vars.reserve(preds.size());
  for (const auto& p : preds) vars.push_back(ad::constant(p.toTensor()));
  return ad::scalarValue(sequenceLoss(vars, gt, cfg));
}

ad::Var sequenceLoss(const std::vector<ad::Var>& preds, const DepthMap& gt, const LossConfig& cfg) {
  if (!(cfg.nu > 0 && cfg.nu <= 1)) throw InvalidArgument("nu must lie in (0, 1]");
  if (gt.validCount() == 0) throw EmptyValidSet("ground truth has no valid pixel");
  std::vector<ad::Var> terms;
  std::vector<double> weights;
  const int n = static_cast<int>(preds.size());
  for (int i = 0; i < n; ++i) {
    const Tensor& p = preds[i]->value;
    if (p.width != gt.width || p.height != gt.height) throw DimensionMismatch("prediction and gt differ in size");
    terms.push_back(ad::maskedL1Mean(preds[i], gt));
    weights.push_back(std::pow(cfg.nu, n - 1 - i));
  }
  return ad::weightedSum(terms, weights);
}

// ---------------------------------------------------------------------------

void TrainSample::validate() const {
  if (buffer.empty()) throw InvalidArgument("training sample has an empty buffer");
  if (source < 0 || source >= static_cast<int>(buffer.size())) throw OutOfBounds("source index outside the buffer");
}

FrameInputs TrainSample::inputs() const {
  validate();
  const BufferFrame& src = buffer[source];
  FrameInputs in;
  in.target = target;
  in.source = src.color;
  in.k = k;
  const Pose source_to_target = camera_to_world.inverse() * src.camera_to_world;
  in.target_to_source = source_to_target.inverse();
  in.sparse8 = reprojectSparseDepth(src.sparse, source_to_target, k).map.rasterize(8);
  return in;
}

std::vector<TrainSample> samplesFromSequence(const Sequence& seq, std::size_t n_points, int buffer_size,
                                             std::uint64_t seed) {
  if (buffer_size < 1) throw InvalidArgument("buffer size must be positive");
  std::vector<TrainSample> out;
  for (int t = 0; t < static_cast<int>(seq.frames.size()); ++t) {
    const Frame& fr = seq.frames[t];
    const std::optional<DepthMap>& gt = fr.ground_truth ? fr.ground_truth : fr.depth;
    if (!gt) continue;
    TrainSample s{fr.color, *gt, fr.camera_to_world, seq.intrinsics, {}, 0};
    for (int i = t - 1; i >= 0 && static_cast<int>(s.buffer.size()) < buffer_size; --i) {
      const Frame& src = seq.frames[i];
      if (!src.depth) continue;
      s.buffer.push_back({src.color, sampleSparse(*src.depth, n_points, frameSeed(seed, i)), src.camera_to_world});
    }
    if (!s.buffer.empty()) out.push_back(std::move(s));
  }
  return out;
}

namespace {

ColorImage flipImage(const ColorImage& img) {
  ColorImage out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.data.col(out.index(x, y)) = img.data.col(img.index(img.width - 1 - x, y));
  return out;
}

DepthMap flipDepth(const DepthMap& d) {
  DepthMap out = d;
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) out(x, y) = d(d.width - 1 - x, y);
  return out;
}

Pose mirror(const Pose& p) {
  const Eigen::Vector3d s(-1, 1, 1);
  return {s.asDiagonal() * p.rotation() * s.asDiagonal(), s.asDiagonal() * p.translation()};
}

void jitter(ColorImage& img, double brightness, double contrast) {
  const double mean = img.data.mean();
  img.data = (((img.data.array() - mean) * contrast + mean) * brightness).min(1.0).max(0.0).matrix();
}

}  // namespace

TrainSample flipSample(const TrainSample& s) {
  TrainSample out = s;
  out.target = flipImage(s.target);
  out.gt = flipDepth(s.gt);
  out.camera_to_world = mirror(s.camera_to_world);
  out.k.cx = s.k.width - 1 - s.k.cx;
  for (auto& b : out.buffer) {
    b.color = flipImage(b.color);
    b.camera_to_world = mirror(b.camera_to_world);
    for (auto& smp : b.sparse.samples) smp.pixel.u = b.sparse.width - 1 - smp.pixel.u;
  }
  return out;
}

TrainSample augment(const TrainSample& s, std::uint64_t seed, const AugmentConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> factor(1.0 - cfg.jitter, 1.0 + cfg.jitter);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double brightness = factor(rng);
  const double contrast = factor(rng);
  const bool flip = unit(rng) < cfg.flip_probability;

  TrainSample out = s;
  if (cfg.jitter > 0) {
    jitter(out.target, brightness, contrast);
    for (auto& b : out.buffer) jitter(b.color, brightness, contrast);
  }
  return flip ? flipSample(out) : out;
}

// ---------------------------------------------------------------------------

namespace {

// Central differences of `evaluate` (which maps the current parameters to a
// value) reduced to a scalar change by `difference(plus, minus)`, compared
// with the analytic gradient from one backward pass through `root`.
template <typename Evaluate, typename Difference>
double compareGradients(const nn::ParameterList& params, const std::vector<ParameterSelection>& selection,
                        const ad::Var& root, double eps, Evaluate evaluate, Difference difference) {
  if (!(eps > 0)) throw InvalidArgument("finite-difference step must be positive");
  std::vector<ad::Var> vars;
  for (const auto& p : params) vars.push_back(p.var);
  ad::zeroGrad(vars);
  ad::backward(root);

  double worst = 0;
  for (const auto& sel : selection) {
    const ad::Var& v = params.at(sel.parameter).var;
    const double analytic = v->hasGrad() ? v->grad.data()[sel.index] : 0.0;
    if (!std::isfinite(analytic))
      throw NonFiniteGradient(fmt::format("gradient of {} is not finite", params[sel.parameter].name));
    double& x = v->value.data.data()[sel.index];
    const double saved = x;
    x = saved + eps;
    const auto plus = evaluate();
    x = saved - eps;
    const auto minus = evaluate();
    x = saved;
    const double numeric = difference(plus, minus) / (2 * eps);
    if (!std::isfinite(numeric))
      throw NonFiniteGradient(fmt::format("numeric gradient of {} is not finite", params[sel.parameter].name));
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-8));
  }
  ad::zeroGrad(vars);
  return worst;
}

}  // namespace

double gradientCheck(const nn::ParameterList& params, const std::vector<ParameterSelection>& selection,
                     const std::function<ad::Var()>& loss_fn, double eps) {
  return compareGradients(
      params, selection, loss_fn(), eps, [&] { return ad::scalarValue(loss_fn()); },
      [](double plus, double minus) { return plus - minus; });
}

double gradientCheck(const nn::ParameterList& params, const std::vector<ParameterSelection>& selection,
                     const std::function<std::vector<ad::Var>()>& outputs_fn, const std::vector<Tensor>& projection,
                     double eps) {
  const auto project = [&](const std::vector<ad::Var>& outputs) {
    if (outputs.size() != projection.size()) throw DimensionMismatch("one projection per output expected");
    std::vector<ad::Var> terms;
    for (std::size_t i = 0; i < outputs.size(); ++i) terms.push_back(ad::dot(outputs[i], projection[i]));
    return ad::weightedSum(terms, std::vector<double>(terms.size(), 1.0));
  };
  const auto values = [&] {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& o : outputs_fn()) out.push_back(o->value.data);
    return out;
  };
  const auto difference = [&](const std::vector<Eigen::MatrixXd>& plus, const std::vector<Eigen::MatrixXd>& minus) {
    double d = 0;
    for (std::size_t i = 0; i < plus.size(); ++i) d += (plus[i] - minus[i]).cwiseProduct(projection[i].data).sum();
    return d;
  };
  return compareGradients(params, selection, project(outputs_fn()), eps, values, difference);
}

namespace {

struct Probe {
  std::mt19937_64 rng;
  std::normal_distribution<double> normal{0.0, 1.0};

  Tensor random(int c, int h, int w, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(c, h, w);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = u(rng);
    return t;
  }
  std::vector<Tensor> projection(const std::vector<ad::Var>& outputs) {
    std::vector<Tensor> w;
    for (const auto& o : outputs) {
      Tensor t(o->value.channels, o->value.height, o->value.width);
      for (Eigen::Index j = 0; j < t.data.size(); ++j) t.data.data()[j] = normal(rng);
      w.push_back(std::move(t));
    }
    return w;
  }
};

void randomizeBiases(const nn::ParameterList& params, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (const auto& p : params)
    if (p.name.ends_with(".bias"))
      for (Eigen::Index i = 0; i < p.var->value.data.size(); ++i) p.var->value.data.data()[i] = u(rng);
}

}  // namespace

std::vector<ModuleGradientCheck> checkModuleGradients(const ModelConfig& cfg, std::uint64_t seed, double eps,
                                                      int per_parameter) {
  ModelConfig c = cfg;
  Model model(c.resolve());
  model.initialize(seed);
  Probe probe{std::mt19937_64(seed), {}};
  randomizeBiases(model.parameters(), probe.rng);

  constexpr int kSide = 16;
  const int s8 = kSide / 8;
  const auto input = [](const std::string& name, Tensor t) { return nn::NamedParameter{name, ad::parameter(std::move(t))}; };
  const Tensor image = probe.random(3, kSide, kSide, 0.0, 1.0);
  const ModelConfig& mc = model.config();
  std::vector<ModuleGradientCheck> out;
  const auto check = [&](const std::string& name, nn::ParameterList params,
                         const std::function<std::vector<ad::Var>()>& fn) {
    const auto selection = sampleSelection(params, per_parameter, frameSeed(seed, static_cast<int>(out.size())));
    out.push_back({name, gradientCheck(params, selection, fn, probe.projection(fn()), eps), selection.size()});
  };

  {
    nn::ParameterList params{input("input.image", image)};
    model.geometry().collect(params, "geometry");
    check("geometry_encoder", params, [&, x = params[0].var] { return std::vector<ad::Var>{model.geometry().forward(x)}; });
  }
  {
    nn::ParameterList params{input("input.image", image)};
    model.monocular().collect(params, "monocular");
    check("monocular_encoder", params, [&, x = params[0].var] {
      const auto l = model.monocular().forward(x);
      return std::vector<ad::Var>{l.level2, l.level4, l.level8};
    });
  }
  {
    nn::ParameterList params{input("input.mono8", probe.random(mc.mono8, s8, s8, -1.0, 1.0))};
    model.hiddenInit().collect(params, "hidden_init");
    check("hidden_init", params, [&, x = params[0].var] { return std::vector<ad::Var>{model.hiddenInit().forward(x)}; });
  }
  {
    constexpr int g = 4;
    const Intrinsics k{4.0, 4.0, 1.5, 1.5, g, g};
    DepthMap depth = DepthMap::fromTensor(probe.random(1, g, g, 2.0, 3.0));
    const CorrelationPlan plan =
        planCorrelation(depth, k, Pose::translation(Eigen::Vector3d(0.1, 0.05, 0.0)), HypothesisSet{}, g, g);
    nn::ParameterList params{input("input.ft", probe.random(mc.geometry_channels, g, g, -1.0, 1.0)),
                             input("input.fs", probe.random(mc.geometry_channels, g, g, -1.0, 1.0))};
    check("correlation", params, [&, v = params] { return std::vector<ad::Var>{correlationVolume(v[0].var, v[1].var, plan)}; });
  }
  {
    const UpdateBlock& block = *model.updateBlock();
    const UpdateBlockConfig& u = block.config();
    nn::ParameterList params{input("input.hidden", probe.random(u.hidden, s8, s8, -1.0, 1.0)),
                             input("input.volume", probe.random(u.corr_channels, s8, s8, -1.0, 1.0)),
                             input("input.mono8", probe.random(u.mono8, s8, s8, -1.0, 1.0)),
                             input("input.depth", probe.random(1, s8, s8, 1.0, 4.0)),
                             input("input.delta_d", probe.random(1, s8, s8, -0.5, 0.5))};
    block.collect(params, "update");
    check("update_block", params, [&, v = params] {
      const auto r = block.forward(v[0].var, v[1].var, v[2].var, v[3].var, v[4].var);
      return std::vector<ad::Var>{r.hidden, r.delta_c, r.delta_f};
    });
  }
  {
    const DecoderConfig& d = model.decoder().config();
    nn::ParameterList params{input("input.depth8", probe.random(1, s8, s8, 1.0, 4.0)),
                             input("input.hidden", probe.random(d.hidden, s8, s8, -1.0, 1.0)),
                             input("input.mono2", probe.random(d.mono2, kSide / 2, kSide / 2, 0.0, 1.0)),
                             input("input.mono4", probe.random(d.mono4, kSide / 4, kSide / 4, 0.0, 1.0)),
                             input("input.mono8", probe.random(d.mono8, s8, s8, 0.0, 1.0))};
    model.decoder().collect(params, "decoder");
    check("decoder", params, [&, v = params] {
      return std::vector<ad::Var>{model.decoder().forward(v[0].var, v[1].var, {v[2].var, v[3].var, v[4].var})};
    });
  }
  return out;
}

std::vector<ParameterSelection> sampleSelection(const nn::ParameterList& params, int per_parameter,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ParameterSelection> out;
  for (int i = 0; i < static_cast<int>(params.size()); ++i) {
    const Eigen::Index n = params[i].var->value.data.size();
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (int k = 0; k < std::min<Eigen::Index>(per_parameter, n); ++k) out.push_back({i, pick(rng)});
  }
  return out;
}

double globalNorm(const nn::ParameterList& params) {
  double sq = 0;
  for (const auto& p : params)
    if (p.var->hasGrad()) sq += p.var->grad.squaredNorm();
  return std::sqrt(sq);
}

TrainResult trainToy(Model& model, const std::vector<TrainSample>& dataset, const TrainConfig& cfg) {
  if (cfg.steps < 1) throw InvalidArgument("training needs at least one step");
  if (dataset.empty()) throw InvalidArgument("empty training set");
  const auto params = model.parameters();
  std::vector<ad::Var> vars;
  std::vector<Eigen::MatrixXd> velocity;
  for (const auto& p : params) {
    vars.push_back(p.var);
    velocity.push_back(Eigen::MatrixXd::Zero(p.var->value.data.rows(), p.var->value.data.cols()));
  }

  TrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    const std::uint64_t step_seed = frameSeed(cfg.seed, step, 7);
    std::mt19937_64 pick(step_seed);
    TrainSample sample = dataset[std::uniform_int_distribution<std::size_t>(0, dataset.size() - 1)(pick)];
    sample.source = static_cast<int>(std::uniform_int_distribution<std::size_t>(0, sample.buffer.size() - 1)(pick));
    if (cfg.augment) sample = augment(sample, frameSeed(step_seed, 0, 1));

    ad::zeroGrad(vars);
    const auto fwd = model.forward(sample.inputs(), cfg.iterations, true);
    const ad::Var loss = sequenceLoss(fwd.predictions, sample.gt, cfg.loss);
    const double value = ad::scalarValue(loss);
    if (!std::isfinite(value)) throw DivergedLoss(fmt::format("loss became {} at step {}", value, step));
    ad::backward(loss);

    const double norm = globalNorm(params);
    if (!std::isfinite(norm)) throw NonFiniteGradient(fmt::format("gradient norm is {} at step {}", norm, step));
    const double scale = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
    double clipped_sq = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& v = *params[i].var;
      if (!v.hasGrad()) continue;
      const Eigen::MatrixXd g = v.grad * scale;
      clipped_sq += g.squaredNorm();
      velocity[i] = cfg.momentum * velocity[i] + g;
      v.value.data -= cfg.lr * velocity[i];
    }
    result.loss.push_back(value);
    result.grad_norm.push_back(norm);
    result.clipped_norm.push_back(std::sqrt(clipped_sq));
  }
  ad::zeroGrad(vars);
  return result;
}

}  // namespace dod
