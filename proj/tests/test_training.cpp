#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dod/scene_sim.hpp"
#include "dod/training.hpp"

using namespace dod;

namespace {

DepthMap randomDepth(int w, int h, std::uint64_t seed, double invalid_fraction = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 5.0), coin(0.0, 1.0);
  DepthMap d(w, h);
  for (Eigen::Index i = 0; i < d.values.size(); ++i) d.values(i) = coin(rng) < invalid_fraction ? 0.0 : u(rng);
  return d;
}

// Straight loops over pixels and iterates.
double bruteForceLoss(const std::vector<DepthMap>& preds, const DepthMap& gt, double nu) {
  const int n = static_cast<int>(preds.size());
  double total = 0;
  for (int i = 0; i < n; ++i) {
    double sum = 0;
    int count = 0;
    for (int y = 0; y < gt.height; ++y)
      for (int x = 0; x < gt.width; ++x)
        if (gt(x, y) > 0) {
          sum += std::abs(preds[i](x, y) - gt(x, y));
          ++count;
        }
    total += std::pow(nu, n - 1 - i) * sum / count;
  }
  return total;
}

const std::vector<TrainSample>& toyDataset() {
  static const std::vector<TrainSample> data = [] {
    const SuiteCase c = makeSuiteCase(0, 6);
    const Sequence seq = generateSequence(c.scene, c.trajectory, c.intrinsics, 0.5, 300, c.seed);
    return samplesFromSequence(seq, 300, 2, 5);
  }();
  return data;
}

}  // namespace

TEST(Training, LossExamples) {
  const DepthMap gt(2, 1, 2.0);
  DepthMap a(2, 1, 1.0), b(2, 1, 2.5);
  EXPECT_DOUBLE_EQ(sequenceLoss({a}, gt), 1.0);
  EXPECT_DOUBLE_EQ(sequenceLoss({a, b}, gt), 0.8 * 1.0 + 0.5);
  EXPECT_DOUBLE_EQ(sequenceLoss({a, b}, gt, {0.5}), 0.5 + 0.5);
  EXPECT_THROW(sequenceLoss({a}, DepthMap(2, 1)), EmptyValidSet);
  EXPECT_THROW(sequenceLoss({DepthMap(3, 1)}, gt), DimensionMismatch);
  EXPECT_THROW(sequenceLoss({a}, gt, {0.0}), InvalidArgument);
}

TEST(Training, LossMatchesDecomposition) {
  const DepthMap gt = randomDepth(13, 7, 1, 0.4);
  std::vector<DepthMap> preds;
  for (int i = 0; i < 10; ++i) preds.push_back(randomDepth(13, 7, 10 + i));
  EXPECT_NEAR(sequenceLoss(preds, gt), bruteForceLoss(preds, gt, 0.8), 1e-12);
  EXPECT_NEAR(sequenceLoss(preds, gt, {0.3}), bruteForceLoss(preds, gt, 0.3), 1e-12);
}

TEST(Training, LossGradientWeights) {
  const DepthMap gt(1, 1, 1.0);
  std::vector<ad::Var> preds;
  for (int i = 0; i < 3; ++i) preds.push_back(ad::parameter(Tensor(1, 1, 1, 2.0)));
  ad::backward(sequenceLoss(preds, gt));
  EXPECT_NEAR(preds[0]->grad(0, 0), 0.64, 1e-15);
  EXPECT_NEAR(preds[1]->grad(0, 0), 0.8, 1e-15);
  EXPECT_NEAR(preds[2]->grad(0, 0), 1.0, 1e-15);
}

TEST(Training, SamplesUseEarlierDepthFrames) {
  const auto& data = toyDataset();
  // Depth on frames 0, 2, 4: frames 1..5 have an earlier depth frame.
  ASSERT_EQ(data.size(), 5u);
  EXPECT_EQ(data[0].buffer.size(), 1u);
  EXPECT_EQ(data.back().buffer.size(), 2u);
  for (const auto& s : data) {
    EXPECT_NO_THROW(s.validate());
    for (const auto& b : s.buffer) EXPECT_EQ(b.sparse.samples.size(), 300u);
  }
  EXPECT_THROW(samplesFromSequence(Sequence{}, 10, 0, 1), InvalidArgument);
}

TEST(Training, FlipIsAnInvolution) {
  const TrainSample& s = toyDataset()[2];
  const TrainSample f = flipSample(s), ff = flipSample(f);
  EXPECT_EQ(ff.target.data, s.target.data);
  EXPECT_TRUE((ff.gt.values == s.gt.values).all());
  EXPECT_EQ(ff.k.cx, s.k.cx);
  EXPECT_LT((ff.camera_to_world.matrix() - s.camera_to_world.matrix()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(f.target.data.col(0), s.target.data.col(s.target.width - 1));
  EXPECT_TRUE(f.camera_to_world.isValid());
}

TEST(Training, FlipKeepsProjectionConsistent) {
  const TrainSample& s = toyDataset()[3];
  const TrainSample f = flipSample(s);
  const FrameInputs a = s.inputs(), b = f.inputs();
  // Mirrored camera points map to mirrored points in the source view.
  const Pose t2s_a = a.target_to_source, t2s_b = b.target_to_source;
  const Eigen::Vector3d p(0.3, -0.2, 2.0), pm(-0.3, -0.2, 2.0);
  const Eigen::Vector3d qa = t2s_a * p, qb = t2s_b * pm;
  EXPECT_NEAR(qa.x(), -qb.x(), 1e-12);
  EXPECT_NEAR(qa.y(), qb.y(), 1e-12);
  EXPECT_NEAR(qa.z(), qb.z(), 1e-12);
  const BufferFrame &sa = s.buffer[s.source], &sb = f.buffer[f.source];
  const auto ra = reprojectSparseDepth(sa.sparse, s.camera_to_world.inverse() * sa.camera_to_world, s.k);
  const auto rb = reprojectSparseDepth(sb.sparse, f.camera_to_world.inverse() * sb.camera_to_world, f.k);
  ASSERT_EQ(ra.map.samples.size(), rb.map.samples.size());
  for (std::size_t i = 0; i < ra.map.samples.size(); ++i) {
    EXPECT_NEAR(ra.map.samples[i].pixel.u, s.k.width - 1 - rb.map.samples[i].pixel.u, 1e-9);
    EXPECT_NEAR(ra.map.samples[i].pixel.v, rb.map.samples[i].pixel.v, 1e-9);
    EXPECT_NEAR(ra.map.samples[i].depth, rb.map.samples[i].depth, 1e-9);
  }
}

TEST(Training, AugmentIsSeeded) {
  const TrainSample& s = toyDataset()[1];
  const TrainSample a = augment(s, 3), b = augment(s, 3);
  EXPECT_EQ(a.target.data, b.target.data);
  EXPECT_LE(a.target.data.maxCoeff(), 1.0);
  EXPECT_GE(a.target.data.minCoeff(), 0.0);
  const TrainSample none = augment(s, 3, {0.0, 0.0});
  EXPECT_EQ(none.target.data, s.target.data);
}

TEST(Training, GradientCheckOnKnownFunctions) {
  const ad::Var w = ad::parameter(Tensor(2, 2, 2));
  for (int i = 0; i < 8; ++i) w->value.data.data()[i] = 0.1 * (i + 1);
  const nn::ParameterList params{{"w", w}};
  const auto sel = sampleSelection(params, 8, 1);
  EXPECT_EQ(sel.size(), 8u);
  Tensor c(2, 2, 2);
  for (int i = 0; i < 8; ++i) c.data.data()[i] = i - 3.5;
  EXPECT_LE(gradientCheck(params, sel, [&] { return ad::dot(w, c); }, 1e-6), 1e-9);
  EXPECT_LE(gradientCheck(params, sel, [&] { return ad::dot(ad::tanh(ad::mul(w, w)), c); }, 1e-5), 1e-6);
  EXPECT_THROW(gradientCheck(params, sel, [&] { return ad::dot(w, c); }, 0.0), InvalidArgument);
  const std::vector<Tensor> proj{c};
  EXPECT_LE(gradientCheck(params, sel, [&] { return std::vector<ad::Var>{ad::sigmoid(w)}; }, proj, 1e-5), 1e-6);
}

TEST(Training, ModuleGradientsAreExact) {
  const auto checks = checkModuleGradients(ModelConfig::toy(), 1, 1e-5, 10);
  ASSERT_EQ(checks.size(), 6u);
  for (const auto& c : checks) {
    EXPECT_GT(c.entries, 0u) << c.module;
    EXPECT_LE(c.max_rel_error, 1e-4) << c.module;
  }
}

TEST(Training, ZeroLearningRateLeavesWeights) {
  Model m(ModelConfig::toy());
  m.initialize(2);
  const auto before = m.parameters()[0].var->value.data;
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.lr = 0;
  cfg.seed = 1;
  cfg.augment = false;
  // Same sample every step: a single-element dataset.
  const TrainResult r = trainToy(m, {toyDataset()[0]}, cfg);
  ASSERT_EQ(r.loss.size(), 4u);
  for (double l : r.loss) EXPECT_EQ(l, r.loss[0]);
  EXPECT_EQ(m.parameters()[0].var->value.data, before);
  EXPECT_THROW(trainToy(m, {}, cfg), InvalidArgument);
}

TEST(Training, ClippingBoundsEveryStep) {
  Model m(ModelConfig::toy());
  m.initialize(3);
  TrainConfig cfg;
  cfg.steps = 12;
  cfg.lr = 1e-3;
  cfg.clip_norm = 1.0;
  cfg.seed = 4;
  const TrainResult r = trainToy(m, toyDataset(), cfg);
  for (std::size_t i = 0; i < r.loss.size(); ++i) {
    EXPECT_TRUE(std::isfinite(r.loss[i]));
    EXPECT_LE(r.clipped_norm[i], 1.0 + 1e-6);
    EXPECT_NEAR(r.clipped_norm[i], std::min(r.grad_norm[i], 1.0), 1e-9);
  }
}

TEST(Training, ToyTrainingReducesLoss) {
  Model m(ModelConfig::toy());
  m.initialize(5);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.lr = 5e-3;
  cfg.seed = 6;
  cfg.iterations = 2;
  const TrainResult r = trainToy(m, toyDataset(), cfg);
  const double first = std::accumulate(r.loss.begin(), r.loss.begin() + 50, 0.0) / 50;
  const double last = std::accumulate(r.loss.end() - 50, r.loss.end(), 0.0) / 50;
  EXPECT_LT(last, first);
}
