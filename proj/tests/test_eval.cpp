#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "dod/eval.hpp"
#include "dod/scene_sim.hpp"

using namespace dod;

namespace {

PointSet randomCloud(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointSet p(3, n);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  return p;
}

Pose lookAt(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - eye).normalized();
  const Eigen::Vector3d x = Eigen::Vector3d(0, 1, 0).cross(z).normalized();
  Eigen::Matrix3d r;
  r << x, z.cross(x), z;
  return {r, eye};
}

TsdfVolume fuse(const SceneSpec& scene, const std::vector<Pose>& views, const Intrinsics& k, const Eigen::Vector3d& lo,
                const Eigen::Vector3d& hi, double voxel) {
  TsdfVolume vol = TsdfVolume::create(lo, hi, voxel);
  for (const Pose& p : views) tsdfIntegrate(vol, renderDepth(scene, p, k), p, k);
  return vol;
}

double percentile95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(0.95 * (v.size() - 1))];
}

const Intrinsics kCam{160, 160, 79.5, 59.5, 160, 120};

double sphereError95(double voxel) {
  SceneSpec s;
  s.textures.push_back(TextureSpec{});
  const Eigen::Vector3d c(0, 0, 3);
  s.primitives.push_back(Sphere{c, 0.5, 0});
  std::vector<Pose> views;
  for (int i = 0; i < 6; ++i) {
    const double a = 2 * M_PI * i / 6;
    views.push_back(lookAt(c + 1.6 * Eigen::Vector3d(std::sin(a), 0.3 * std::cos(2 * a), -std::cos(a)), c));
  }
  const Mesh m = extractMesh(fuse(s, views, kCam, c.array() - 0.6, c.array() + 0.6, voxel));
  std::vector<double> err;
  for (const auto& v : m.vertices) err.push_back(std::abs((v - c).norm() - 0.5));
  return percentile95(err);
}

}  // namespace

TEST(Eval, Metrics2dExamples) {
  DepthMap gt(3, 1), pred(3, 1);
  gt.values << 2, 2, 0;
  pred.values << 1, 2, 5;
  const Metrics2D m = metrics2d(pred, gt);
  EXPECT_DOUBLE_EQ(m.mae, 0.5);
  EXPECT_DOUBLE_EQ(m.rmse, std::sqrt(0.5));
  EXPECT_DOUBLE_EQ(m.abs_rel, 0.25);
  EXPECT_DOUBLE_EQ(m.sq_rel, 0.25);
  EXPECT_DOUBLE_EQ(m.delta_105, 0.5);
  EXPECT_DOUBLE_EQ(m.delta_125, 0.5);
  const Metrics2D same = metrics2d(gt, gt);
  EXPECT_EQ(same.mae, 0.0);
  EXPECT_EQ(same.delta_105, 1.0);
  EXPECT_THROW(metrics2d(pred, DepthMap(3, 1)), EmptyValidSet);
  EXPECT_THROW(metrics2d(DepthMap(2, 1), gt), DimensionMismatch);
}

TEST(Eval, KdTreeEqualsBruteForce) {
  for (const int n : {1, 7, 100, 500}) {
    const PointSet ref = randomCloud(n, n);
    const PointSet q = randomCloud(300, n + 1000);
    const Eigen::VectorXd brute = bruteForceNN(q, ref);
    const Eigen::VectorXd tree = KdTree(ref).nearest(q);
    for (Eigen::Index i = 0; i < q.cols(); ++i) EXPECT_EQ(tree(i), brute(i));
  }
  EXPECT_THROW(KdTree(PointSet(3, 0)), EmptyPointSet);
}

TEST(Eval, KdTreeHandlesDuplicates) {
  PointSet ref(3, 40);
  for (int i = 0; i < 40; ++i) ref.col(i) = Eigen::Vector3d(i % 2, 0, 0);
  const KdTree tree(ref);
  EXPECT_EQ(tree.nearest(Eigen::Vector3d(0.25, 0, 0)), 0.25);
  EXPECT_EQ(tree.nearest(Eigen::Vector3d(1, 0, 0)), 0.0);
}

TEST(Eval, Metrics3dIdentities) {
  const PointSet a = randomCloud(200, 3);
  const Metrics3D same = metrics3d(a, a);
  EXPECT_EQ(same.acc, 0.0);
  EXPECT_EQ(same.comp, 0.0);
  EXPECT_EQ(same.chamfer, 0.0);
  EXPECT_EQ(same.prec, 1.0);
  EXPECT_EQ(same.recall, 1.0);
  EXPECT_EQ(same.fscore, 1.0);

  const PointSet b = randomCloud(150, 4);
  const Metrics3D ab = metrics3d(a, b, 0.2), ba = metrics3d(b, a, 0.2);
  EXPECT_EQ(ab.acc, ba.comp);
  EXPECT_EQ(ab.prec, ba.recall);
  EXPECT_EQ(ab.chamfer, ba.chamfer);
  EXPECT_NEAR(ab.acc, bruteForceNN(a, b).mean(), 1e-15);

  PointSet shifted = a;
  shifted.row(0).array() += 10.0;
  const Metrics3D far = metrics3d(shifted, a);
  EXPECT_EQ(far.fscore, 0.0);
  EXPECT_THROW(metrics3d(PointSet(3, 0), a), EmptyPointSet);
}

TEST(Eval, TsdfIntegration) {
  const Intrinsics k{20, 20, 9.5, 9.5, 20, 20};
  const DepthMap flat(20, 20, 1.0);
  TsdfVolume once = TsdfVolume::create({-0.1, -0.1, 0.5}, {0.1, 0.1, 1.5}, 0.05);
  EXPECT_NEAR(once.truncation, 0.15, 1e-15);
  tsdfIntegrate(once, flat, Pose::identity(), k);
  TsdfVolume twice = once;
  tsdfIntegrate(twice, flat, Pose::identity(), k);
  for (std::size_t i = 0; i < once.sdf.size(); ++i) {
    EXPECT_NEAR(twice.sdf[i], once.sdf[i], 1e-6);
    EXPECT_EQ(twice.weight[i], 2 * once.weight[i]);
  }
  const auto at = [&](double z) { return once.index(2, 2, static_cast<int>(std::lround((z - 0.5) / 0.05))); };
  EXPECT_NEAR(once.sdf[at(0.5)], 0.15, 1e-6);
  EXPECT_NEAR(once.sdf[at(0.95)], 0.05, 1e-6);
  EXPECT_NEAR(once.sdf[at(1.1)], -0.1, 1e-6);
  EXPECT_EQ(once.weight[at(1.2)], 0.0f);
  EXPECT_THROW(tsdfIntegrate(once, DepthMap(10, 10, 1.0), Pose::identity(), k), DimensionMismatch);
  EXPECT_THROW(TsdfVolume::create({0, 0, 0}, {0, 1, 1}, 0.1), InvalidArgument);
}

TEST(Eval, PlaneMeshWithinOneVoxel) {
  SceneSpec s;
  s.textures.push_back(TextureSpec{});
  s.primitives.push_back(Plane{{0, 0, 2}, {0, 0, -1}, 0});
  std::vector<Pose> views;
  for (int i = 0; i < 3; ++i) views.push_back(Pose::translation({0.1 * (i - 1), 0.05 * i, 0}));
  const Mesh m = extractMesh(fuse(s, views, kCam, {-0.5, -0.4, 1.8}, {0.5, 0.4, 2.2}, 0.02));
  ASSERT_GT(m.faces.size(), 100u);
  std::vector<double> err;
  for (const auto& v : m.vertices) err.push_back(std::abs(v.z() - 2.0));
  EXPECT_LE(percentile95(err), 0.02);
  EXPECT_NEAR(surfaceArea(m), 0.96 * 0.76, 0.1);
}

TEST(Eval, SphereMeshWithinOneVoxel) {
  const double fine = sphereError95(0.02);
  EXPECT_LE(fine, 0.02);
  EXPECT_LE(fine, sphereError95(0.04));
}

TEST(Eval, EmptyVolumeHasNoSurface) {
  TsdfVolume v = TsdfVolume::create({0, 0, 0}, {0.1, 0.1, 0.1}, 0.05);
  EXPECT_THROW(extractMesh(v), EmptySurface);
  std::fill(v.weight.begin(), v.weight.end(), 1.0f);
  std::fill(v.sdf.begin(), v.sdf.end(), 0.1f);
  EXPECT_THROW(extractMesh(v), EmptySurface);
  EXPECT_THROW(samplePoints(Mesh{}, 10, 1), EmptySurface);
}

TEST(Eval, SamplePointsLieOnFaces) {
  Mesh m;
  m.vertices = {{0, 0, 1}, {2, 0, 1}, {0, 1, 1}};
  m.faces = {{0, 1, 2}};
  EXPECT_DOUBLE_EQ(surfaceArea(m), 1.0);
  const PointSet p = samplePoints(m, 500, 3);
  ASSERT_EQ(p.cols(), 500);
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    EXPECT_EQ(p(2, i), 1.0);
    EXPECT_GE(p(0, i), 0.0);
    EXPECT_GE(p(1, i), 0.0);
    EXPECT_LE(p(0, i) / 2 + p(1, i), 1.0 + 1e-12);
  }
  EXPECT_EQ(samplePoints(m, 500, 3), p);
}

TEST(Eval, PlyRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "dod_ply_test";
  std::filesystem::create_directories(dir);
  Mesh m;
  m.vertices = {{0, 0, 1}, {1.5, 0, 1}, {0, 1, 1.25}, {1, 1, 2}};
  m.faces = {{0, 1, 2}, {1, 3, 2}};
  writePly(dir / "m.ply", m);
  const Mesh r = readPly(dir / "m.ply");
  ASSERT_EQ(r.vertices.size(), 4u);
  EXPECT_EQ(r.faces, m.faces);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.vertices[i], m.vertices[i]);
  std::ofstream(dir / "ascii.ply") << "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
  EXPECT_THROW(readPly(dir / "ascii.ply"), FormatError);
  EXPECT_THROW(readPly(dir / "none.ply"), FormatError);
  std::filesystem::remove_all(dir);
}
