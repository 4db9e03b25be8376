#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dod/scene_sim.hpp"

using namespace dod;

namespace {

SceneSpec planeScene(double z) {
  SceneSpec s;
  s.textures.push_back(TextureSpec{});
  s.primitives.push_back(Plane{{0, 0, z}, {0, 0, -1}, 0});
  return s;
}

const Intrinsics kSmall{40, 40, 15.5, 11.5, 32, 24};

Eigen::Vector3d bilinearColor(const ColorImage& img, const Pixel& q) {
  const int x0 = static_cast<int>(std::floor(q.u)), y0 = static_cast<int>(std::floor(q.v));
  const double ax = q.u - x0, ay = q.v - y0;
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx)
      c += (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay) * img.data.col(img.index(x0 + dx, y0 + dy));
  return c;
}

}  // namespace

TEST(SceneSim, FrontoParallelPlaneHasConstantDepth) {
  const DepthMap d = renderDepth(planeScene(2.5), Pose::identity(), kSmall);
  for (int i = 0; i < d.values.size(); ++i) EXPECT_NEAR(d.values(i), 2.5, 1e-12);
}

TEST(SceneSim, OnAxisSphere) {
  SceneSpec s;
  s.textures.push_back(TextureSpec{});
  s.primitives.push_back(Sphere{{0, 0, 5}, 1.0, 0});
  const Intrinsics k{20, 20, 8, 8, 17, 17};
  const DepthMap d = renderDepth(s, Pose::identity(), k);
  EXPECT_NEAR(d(8, 8), 4.0, 1e-12);
  EXPECT_EQ(d(0, 0), 0.0);
  EXPECT_FALSE(d.valid(0, 0));
  const ColorImage c = renderColor(s, Pose::identity(), k);
  EXPECT_EQ(c.data.col(c.index(0, 0)), Eigen::Vector3d::Zero());
  EXPECT_GT(c.data.col(c.index(8, 8)).norm(), 0.0);
}

TEST(SceneSim, MissingRayIsInvalid) {
  const DepthMap d = renderDepth(planeScene(2.0), Pose(rotationFromEuler<double>({0, M_PI, 0}), {0, 0, 0}), kSmall);
  EXPECT_EQ(d.validCount(), 0);
}

TEST(SceneSim, RenderingIsDeterministic) {
  const SuiteCase c = makeSuiteCase(0, 2);
  const Pose& p = c.trajectory.frames[1].camera_to_world;
  const ColorImage a = renderColor(c.scene, p, c.intrinsics), b = renderColor(c.scene, p, c.intrinsics);
  EXPECT_EQ(a.data, b.data);
  EXPECT_TRUE((renderDepth(c.scene, p, c.intrinsics).values == renderDepth(c.scene, p, c.intrinsics).values).all());
}

TEST(SceneSim, TexturesAreWorldAnchored) {
  const SuiteCase c = makeSuiteCase(3, 3);
  const Pose& a = c.trajectory.frames[0].camera_to_world;
  const Pose& b = c.trajectory.frames[2].camera_to_world;
  int checked = 0;
  for (int y = 4; y < c.intrinsics.height; y += 9)
    for (int x = 4; x < c.intrinsics.width; x += 9) {
      const auto hit = castRay(c.scene, a, c.intrinsics, {double(x), double(y)});
      if (!hit) continue;
      const Eigen::Vector3d pb = b.inverse() * hit->point;
      if (pb.z() <= 0) continue;
      const auto q = projectCameraPoint(pb, c.intrinsics);
      if (!insideImage(q.pixel, c.intrinsics.width, c.intrinsics.height)) continue;
      const auto other = castRay(c.scene, b, c.intrinsics, q.pixel);
      if (!other || other->primitive != hit->primitive || (other->point - hit->point).norm() > 1e-6) continue;
      const auto tex = [&](const RayHit& h) {
        return std::visit([](const auto& p) { return p.texture; }, c.scene.primitives[h.primitive]);
      };
      EXPECT_LT((textureColor(c.scene.textures[tex(*hit)], hit->point) -
                 textureColor(c.scene.textures[tex(*other)], other->point))
                    .cwiseAbs()
                    .maxCoeff(),
                1e-6);
      ++checked;
    }
  EXPECT_GT(checked, 20);
}

TEST(SceneSim, PhotoConsistentWarp) {
  const SuiteCase c = makeSuiteCase(4, 2);
  const Intrinsics& k = c.intrinsics;
  const Pose& ps = c.trajectory.frames[0].camera_to_world;
  const Pose& pt = c.trajectory.frames[1].camera_to_world;
  const ColorImage cs = renderColor(c.scene, ps, k), ct = renderColor(c.scene, pt, k);
  const DepthMap dt = renderDepth(c.scene, pt, k);
  const Pose target_to_source = ps.inverse() * pt;
  double sum = 0;
  int n = 0;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      if (!dt.valid(x, y)) continue;
      const auto q = projectPoint(Pixel{double(x), double(y)}, dt(x, y), k, target_to_source);
      if (q.pixel.u < 0 || q.pixel.v < 0 || q.pixel.u > k.width - 1 || q.pixel.v > k.height - 1) continue;
      const auto hit = castRay(c.scene, ps, k, q.pixel);
      if (!hit || std::abs(hit->depth - q.depth) > 1e-6 * q.depth) continue;  // occluded in the source
      sum += (bilinearColor(cs, q.pixel) - ct.data.col(ct.index(x, y))).cwiseAbs().mean();
      ++n;
    }
  ASSERT_GT(n, k.width * k.height / 2);
  EXPECT_LT(sum / n, 0.02);
}

TEST(SceneSim, SampleSparseCounts) {
  const DepthMap full(32, 32, 2.0);
  const SparseDepthMap s = sampleSparse(full, 500, 3);
  ASSERT_EQ(s.samples.size(), 500u);
  std::set<std::pair<double, double>> unique;
  for (const auto& p : s.samples) {
    unique.insert({p.pixel.u, p.pixel.v});
    EXPECT_EQ(p.depth, 2.0);
    EXPECT_EQ(p.pixel.u, std::floor(p.pixel.u));
  }
  EXPECT_EQ(unique.size(), 500u);
  EXPECT_TRUE(sampleSparse(full, 0, 3).samples.empty());

  DepthMap hundred(32, 32);
  for (int i = 0; i < 100; ++i) hundred.values(i * 7) = 1.0 + i;
  const SparseDepthMap all = sampleSparse(hundred, 1000000, 3);
  EXPECT_EQ(all.samples.size(), 100u);
  for (const auto& p : all.samples) EXPECT_TRUE(hundred.valid(int(p.pixel.u), int(p.pixel.v)));
}

TEST(SceneSim, SampleSparseIsSeeded) {
  const DepthMap full(32, 32, 2.0);
  const auto a = sampleSparse(full, 50, 3), b = sampleSparse(full, 50, 3), c = sampleSparse(full, 50, 4);
  bool differ = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].pixel.u, b.samples[i].pixel.u);
    EXPECT_EQ(a.samples[i].pixel.v, b.samples[i].pixel.v);
    differ |= a.samples[i].pixel.u != c.samples[i].pixel.u || a.samples[i].pixel.v != c.samples[i].pixel.v;
  }
  EXPECT_TRUE(differ);
}

TEST(SceneSim, PerturbPoseZeroLambdaIsExact) {
  const Pose p(rotationFromEuler<double>({0.1, -0.2, 0.3}), {1, 2, 3});
  EXPECT_EQ(perturbPose(p, 0.0, 5).matrix(), p.matrix());
  PoseVector q;
  q << 1, 2, 3, 0.1, -0.2, 0.3;
  EXPECT_EQ(perturbPose(q, 0.0, 5).matrix(), poseFromVector<double>(q).matrix());
  EXPECT_THROW(perturbPose(q, -0.1, 5), InvalidArgument);
}

TEST(SceneSim, PerturbPoseStatistics) {
  PoseVector q;
  q << 0.8, -0.5, 0.0, 0.2, -0.1, 0.0;
  const double lambda = 0.3;
  const int n = 10000;
  PoseVector sum = PoseVector::Zero();
  for (int i = 0; i < n; ++i) {
    const PoseVector v = poseToVector(perturbPose(q, lambda, frameSeed(17, i)));
    sum += v;
    EXPECT_EQ(v(2), 0.0);
    EXPECT_NEAR(v(5), 0.0, 1e-12);
  }
  const PoseVector mean = sum / n;
  for (int i = 0; i < 6; ++i) {
    const double se = lambda * std::abs(q(i)) / std::sqrt(double(n));
    EXPECT_LE(std::abs(mean(i) - q(i)), 4 * se + 1e-12) << "component " << i;
  }
}

TEST(SceneSim, SequenceDepthSchedule) {
  const SuiteCase c = makeSuiteCase(0, 10);
  const auto depth_frames = [&](double tau) {
    std::vector<int> out;
    const Sequence s = generateSequence(c.scene, c.trajectory, c.intrinsics, tau, 20, 1);
    for (int i = 0; i < static_cast<int>(s.frames.size()); ++i) {
      EXPECT_TRUE(s.frames[i].ground_truth.has_value());
      if (s.frames[i].hasDepth()) {
        EXPECT_EQ(s.frames[i].sparse->samples.size(), 20u);
        out.push_back(i);
      }
    }
    return out;
  };
  EXPECT_EQ(depth_frames(1.0).size(), 10u);
  EXPECT_EQ(depth_frames(0.2), (std::vector<int>{0, 5}));
  EXPECT_EQ(depth_frames(0.1), (std::vector<int>{0}));
  for (const double bad : {0.0, -0.5, 1.5, 0.3})
    EXPECT_THROW(generateSequence(c.scene, c.trajectory, c.intrinsics, bad, 20, 1), InvalidTau);
}

TEST(SceneSim, SequenceIsDeterministic) {
  const SuiteCase c = makeSuiteCase(1, 3);
  const Sequence a = generateSequence(c.scene, c.trajectory, c.intrinsics, 0.5, 50, 9);
  const Sequence b = generateSequence(c.scene, c.trajectory, c.intrinsics, 0.5, 50, 9);
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_EQ(a.frames[i].color.data, b.frames[i].color.data);
    ASSERT_EQ(a.frames[i].sparse.has_value(), b.frames[i].sparse.has_value());
    if (!a.frames[i].sparse) continue;
    for (std::size_t j = 0; j < a.frames[i].sparse->samples.size(); ++j)
      EXPECT_EQ(a.frames[i].sparse->samples[j].depth, b.frames[i].sparse->samples[j].depth);
  }
}

TEST(SceneSim, SourceSelection) {
  const SuiteCase c = makeSuiteCase(0, 10);
  const Sequence s = generateSequence(c.scene, c.trajectory, c.intrinsics, 0.2, 20, 1);
  for (int t = 0; t < 10; ++t) EXPECT_EQ(sourceIndex(s, t), t < 5 ? 0 : 5);
  EXPECT_EQ(tauPeriod(1.0), 1);
  EXPECT_EQ(tauPeriod(1.0 / 3.0), 3);
  EXPECT_EQ(tauPeriod(0.1), 10);
}

TEST(SceneSim, Validation) {
  SceneSpec s = planeScene(1.0);
  EXPECT_NO_THROW(s.validate());
  std::get<Plane>(s.primitives[0]).normal = {0, 0, -1.1};
  EXPECT_THROW(s.validate(), InvalidArgument);
  SceneSpec sp;
  sp.textures.push_back(TextureSpec{});
  sp.primitives.push_back(Sphere{{0, 0, 3}, 0.0, 0});
  EXPECT_THROW(sp.validate(), InvalidArgument);
  sp.primitives[0] = Sphere{{0, 0, 3}, 1.0, 2};
  EXPECT_THROW(sp.validate(), InvalidArgument);
  Trajectory t;
  t.frames.push_back({0.0, Pose::identity()});
  t.frames.push_back({0.0, Pose::identity()});
  EXPECT_THROW(t.validate(), InvalidArgument);
}

TEST(SceneSim, SuiteLayout) {
  const auto suite = syntheticSuite();
  ASSERT_EQ(suite.size(), 8u);
  EXPECT_EQ(suite.front().intrinsics.width, 64);
  EXPECT_EQ(suite.back().intrinsics.width, 256);
  std::set<std::uint64_t> seeds;
  for (const auto& c : suite) {
    seeds.insert(c.seed);
    EXPECT_EQ(c.intrinsics.width % 8, 0);
    EXPECT_TRUE(c.intrinsics.isValid());
    EXPECT_NO_THROW(c.scene.validate());
    EXPECT_NO_THROW(c.trajectory.validate());
  }
  EXPECT_EQ(seeds.size(), 8u);
}
