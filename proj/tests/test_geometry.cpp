#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <map>
#include <random>

#include "dod/geometry.hpp"
#include "dod/scene_sim.hpp"

using namespace dod;

namespace {

Pose randomPose(std::mt19937_64& rng, double max_angle, double max_shift) {
  std::uniform_real_distribution<double> a(-max_angle, max_angle), t(-max_shift, max_shift);
  return {rotationFromEuler<double>(Eigen::Vector3d(a(rng), a(rng), a(rng))), Eigen::Vector3d(t(rng), t(rng), t(rng))};
}

// Homogeneous 4x4 oracle for the projection.
Eigen::Vector3d homogeneousProject(const Pixel& q, double depth, const Intrinsics& k, const Pose& p) {
  Eigen::Matrix4d km = Eigen::Matrix4d::Identity();
  km.topLeftCorner<3, 3>() = k.matrix();
  const Eigen::Vector4d x = km * p.matrix() * km.inverse() * Eigen::Vector4d(q.u * depth, q.v * depth, depth, 1.0);
  return {x(0) / x(2), x(1) / x(2), x(2)};
}

}  // namespace

TEST(Geometry, IdentityPoseKeepsPixelAndDepth) {
  const Intrinsics k{500, 480, 320, 240, 640, 480};
  const auto r = projectPoint(Pixel{7.5, 3.25}, 2.0, k, Pose::identity());
  EXPECT_DOUBLE_EQ(r.pixel.u, 7.5);
  EXPECT_DOUBLE_EQ(r.pixel.v, 3.25);
  EXPECT_DOUBLE_EQ(r.depth, 2.0);
}

TEST(Geometry, TranslationExamples) {
  const Intrinsics k{1, 1, 0, 0, 4, 4};
  auto r = projectPoint(Pixel{0, 0}, 2.0, k, Pose::translation({0, 0, -1}));
  EXPECT_DOUBLE_EQ(r.pixel.u, 0.0);
  EXPECT_DOUBLE_EQ(r.pixel.v, 0.0);
  EXPECT_DOUBLE_EQ(r.depth, 1.0);
  r = projectPoint(Pixel{0, 0}, 1.0, k, Pose::translation({0.5, 0, 0}));
  EXPECT_DOUBLE_EQ(r.pixel.u, 0.5);
  EXPECT_DOUBLE_EQ(r.pixel.v, 0.0);
  EXPECT_DOUBLE_EQ(r.depth, 1.0);
}

TEST(Geometry, MatchesHomogeneousOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 63), d(0.5, 6);
  const Intrinsics k{70, 65, 31.5, 30.2, 64, 64};
  for (int i = 0; i < 200; ++i) {
    const Pose p = randomPose(rng, 0.2, 0.3);
    const Pixel q{u(rng), u(rng)};
    const double depth = d(rng);
    const auto r = projectPoint(q, depth, k, p);
    const Eigen::Vector3d o = homogeneousProject(q, depth, k, p);
    EXPECT_NEAR(r.pixel.u, o.x(), 1e-9 * std::max(1.0, std::abs(o.x())));
    EXPECT_NEAR(r.pixel.v, o.y(), 1e-9 * std::max(1.0, std::abs(o.y())));
    EXPECT_NEAR(r.depth, o.z(), 1e-12 * o.z());
    EXPECT_EQ(r.depth, (p * backproject(q, depth, k)).z());
  }
}

TEST(Geometry, BehindCameraThrows) {
  const Intrinsics k{1, 1, 0, 0, 4, 4};
  EXPECT_THROW(projectPoint(Pixel{0, 0}, 1.0, k, Pose::translation({0, 0, -1.3})), NonPositiveSourceDepth);
}

TEST(Geometry, Backproject) {
  const Intrinsics k{2, 2, 0, 0, 8, 8};
  const Eigen::Vector3d p = backproject(Pixel{4, 2}, 1.0, k);
  EXPECT_EQ(p, Eigen::Vector3d(2, 1, 1));
  const Intrinsics k2{300, 310, 12.5, 7.25, 32, 16};
  EXPECT_EQ(backproject(Pixel{12.5, 7.25}, 3.5, k2), Eigen::Vector3d(0, 0, 3.5));
  const auto r = projectCameraPoint(backproject(Pixel{3.3, 9.1}, 2.2, k2), k2);
  EXPECT_NEAR(r.pixel.u, 3.3, 1e-9);
  EXPECT_NEAR(r.pixel.v, 9.1, 1e-9);
}

TEST(Geometry, RoundTripThroughInversePose) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 127), d(0.3, 10);
  const Intrinsics k{120, 118, 63.7, 64.1, 128, 128};
  for (int i = 0; i < 1000; ++i) {
    const Pose p = randomPose(rng, 0.3, 0.5);
    const Pixel q{u(rng), u(rng)};
    const double depth = d(rng);
    if ((p * backproject(q, depth, k)).z() < 0.1) continue;
    const auto s = projectPoint(q, depth, k, p);
    const auto back = projectPoint(s.pixel, s.depth, k, p.inverse());
    EXPECT_LT(std::abs(back.pixel.u - q.u), 1e-7 * std::max(1.0, q.u));
    EXPECT_LT(std::abs(back.pixel.v - q.v), 1e-7 * std::max(1.0, q.v));
    EXPECT_LT(std::abs(back.depth - depth), 1e-7 * depth);
  }
}

TEST(Geometry, PoseInvariants) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Pose p = randomPose(rng, 3.0, 2.0);
    EXPECT_TRUE(p.isValid());
    const Eigen::Matrix4d id = (p * p.inverse()).matrix();
    EXPECT_LT((id - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    const Eigen::Matrix<double, 6, 1> q = poseToVector(p);
    EXPECT_LT((poseFromVector(q).matrix() - p.matrix()).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_FALSE(Pose(Eigen::Matrix3d::Identity() * 1.01, Eigen::Vector3d::Zero()).isValid());
}

TEST(Geometry, IntrinsicsScaling) {
  const Intrinsics k{500, 480, 320, 240, 640, 480};
  EXPECT_TRUE(k.isValid());
  const Intrinsics k8 = k.scaled(8);
  EXPECT_EQ(k8.fx, 62.5);
  EXPECT_EQ(k8.fy, 60.0);
  EXPECT_EQ(k8.cx, 40.0);
  EXPECT_EQ(k8.cy, 30.0);
  EXPECT_EQ(k8.width, 80);
  EXPECT_EQ(k8.height, 60);
  EXPECT_FALSE((Intrinsics{500, 480, 640, 240, 640, 480}.isValid()));
  EXPECT_FALSE((Intrinsics{0, 480, 320, 240, 640, 480}.isValid()));
}

TEST(Geometry, ReprojectIdentityKeepsSamples) {
  SparseDepthMap src{16, 16, {{{1.25, 3.5}, 2.0}, {{15.0, 0.0}, 1.0}, {{7.0, 7.75}, 4.5}}};
  const auto r = reprojectSparseDepth(src, Pose::identity(), Intrinsics{20, 20, 7.5, 7.5, 16, 16});
  EXPECT_EQ(r.dropped, 0u);
  ASSERT_EQ(r.map.samples.size(), src.samples.size());
  for (std::size_t i = 0; i < src.samples.size(); ++i) {
    EXPECT_NEAR(r.map.samples[i].pixel.u, src.samples[i].pixel.u, 1e-12);
    EXPECT_NEAR(r.map.samples[i].pixel.v, src.samples[i].pixel.v, 1e-12);
    EXPECT_EQ(r.map.samples[i].depth, src.samples[i].depth);
  }
}

TEST(Geometry, ReprojectDropsBehindCameraAndOutOfBounds) {
  const Intrinsics k{1, 1, 0, 0, 4, 4};
  SparseDepthMap src{4, 4, {{{0, 0}, 1.0}, {{1, 1}, 2.0}}};
  // z: 1 - 1.3 < 0 for the first sample, 2 - 1.3 > 0 for the second.
  const auto r = reprojectSparseDepth(src, Pose::translation({0, 0, -1.3}), k);
  EXPECT_EQ(r.dropped, 1u);
  ASSERT_EQ(r.map.samples.size(), 1u);
  EXPECT_NEAR(r.map.samples[0].depth, 0.7, 1e-12);

  SparseDepthMap edge{4, 4, {{{3, 0}, 1.0}}};
  EXPECT_EQ(reprojectSparseDepth(edge, Pose::translation({1.0, 0, 0}), k).dropped, 1u);
}

TEST(Geometry, CollisionKeepsNearest) {
  const Intrinsics k{10, 10, 4, 4, 8, 8};
  // Both samples land on target pixel (6, 4) after a lateral shift.
  const Pose shift = Pose::translation({0.2, 0, 0});
  SparseDepthMap src{8, 8, {{{5.0, 4.0}, 2.0}, {{4.6666666666666667, 4.0}, 1.5}}};
  const auto r = reprojectSparseDepth(src, shift, k);
  ASSERT_EQ(r.map.samples.size(), 2u);
  const DepthMap grid = r.map.rasterize(1);
  double expected = std::numeric_limits<double>::infinity();
  int cx = -1, cy = -1;
  for (const auto& s : src.samples) {
    const auto p = projectPoint(s.pixel, s.depth, k, shift);
    const int x = static_cast<int>(std::lround(p.pixel.u)), y = static_cast<int>(std::lround(p.pixel.v));
    if (cx >= 0) {
      EXPECT_EQ(x, cx);
      EXPECT_EQ(y, cy);
    }
    cx = x;
    cy = y;
    expected = std::min(expected, p.depth);
  }
  EXPECT_EQ(grid(cx, cy), expected);
  EXPECT_NEAR(grid(cx, cy), 1.5, 1e-12);
}

TEST(Geometry, RasterizeMatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.5, 63.49), d(0.5, 9);
  SparseDepthMap m{64, 48, {}};
  for (int i = 0; i < 4000; ++i) {
    const Pixel q{u(rng), std::min(u(rng) * 0.75, 47.49)};
    m.samples.push_back({q, d(rng)});
  }
  for (const int scale : {1, 2, 8}) {
    const DepthMap g = m.rasterize(scale);
    const int w = (m.width + scale - 1) / scale, h = (m.height + scale - 1) / scale;
    ASSERT_EQ(g.width, w);
    ASSERT_EQ(g.height, h);
    std::map<std::pair<int, int>, double> oracle;
    for (const auto& s : m.samples) {
      const int x = std::clamp(static_cast<int>(std::lround(s.pixel.u / scale)), 0, w - 1);
      const int y = std::clamp(static_cast<int>(std::lround(s.pixel.v / scale)), 0, h - 1);
      auto [it, fresh] = oracle.try_emplace({x, y}, s.depth);
      if (!fresh) it->second = std::min(it->second, s.depth);
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto it = oracle.find({x, y});
        EXPECT_EQ(g(x, y), it == oracle.end() ? 0.0 : it->second);
      }
  }
}

TEST(Geometry, ReprojectionMatchesRenderedDepth) {
  const SuiteCase c = makeSuiteCase(2, 3);
  const Intrinsics& k = c.intrinsics;
  const Pose& src_pose = c.trajectory.frames[0].camera_to_world;
  const Pose& tgt_pose = c.trajectory.frames[2].camera_to_world;
  const DepthMap src_depth = renderDepth(c.scene, src_pose, k);
  const SparseDepthMap sparse = sampleSparse(src_depth, 2000, 9);
  const auto r = reprojectSparseDepth(sparse, tgt_pose.inverse() * src_pose, k);
  int matched = 0;
  for (const auto& s : r.map.samples) {
    const auto hit = castRay(c.scene, tgt_pose, k, s.pixel);
    ASSERT_TRUE(hit.has_value());
    if (std::abs(hit->depth - s.depth) <= 1e-6 * hit->depth) {
      ++matched;
    } else {
      EXPECT_LT(hit->depth, s.depth);  // occluded in the target view
    }
  }
  EXPECT_GT(matched, static_cast<int>(0.8 * r.map.samples.size()));
}
