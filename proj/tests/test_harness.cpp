#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dod/harness.hpp"
#include "dod/image_io.hpp"
#include "dod/scene_sim.hpp"

using namespace dod;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dod_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const Sequence& smallSequence() {
  static const Sequence seq = [] {
    const SuiteCase c = makeSuiteCase(0, 6);
    return generateSequence(c.scene, c.trajectory, c.intrinsics, 1.0, 200, c.seed);
  }();
  return seq;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const int status = std::system((std::string(DOD_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Harness, SequenceRoundTrip) {
  const fs::path dir = scratch("roundtrip");
  const Sequence& seq = smallSequence();
  saveSequence(dir, seq);
  const Sequence back = loadSequence(dir);
  ASSERT_EQ(back.frames.size(), seq.frames.size());
  EXPECT_EQ(back.intrinsics.fx, seq.intrinsics.fx);
  EXPECT_EQ(back.intrinsics.width, seq.intrinsics.width);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame &a = seq.frames[i], &b = back.frames[i];
    EXPECT_LT((a.camera_to_world.matrix() - b.camera_to_world.matrix()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.color.data - b.color.data).cwiseAbs().maxCoeff(), 0.5 / 255 + 1e-12);
    ASSERT_EQ(a.depth.has_value(), b.depth.has_value());
    ASSERT_TRUE(b.ground_truth.has_value());
    if (a.depth) {
      EXPECT_LT((a.depth->values - b.depth->values).abs().maxCoeff(), 0.0005 + 1e-12);
    }
    ASSERT_EQ(a.sparse.has_value(), b.sparse.has_value());
    if (a.sparse) {
      ASSERT_EQ(a.sparse->samples.size(), b.sparse->samples.size());
      for (std::size_t j = 0; j < a.sparse->samples.size(); ++j)
        EXPECT_NEAR(a.sparse->samples[j].depth, b.sparse->samples[j].depth, 1e-9);
    }
  }
}

TEST(Harness, MissingMetadata) {
  const fs::path dir = scratch("missing");
  saveSequence(dir, smallSequence());
  fs::remove(dir / "poses.json");
  EXPECT_THROW(loadSequence(dir), MissingPose);
  saveSequence(dir, smallSequence());
  fs::remove(dir / "intrinsics.json");
  EXPECT_THROW(loadSequence(dir), MissingIntrinsics);
  EXPECT_THROW(loadSequence(dir / "nowhere"), FormatError);
  saveSequence(dir, smallSequence());
  std::ofstream(dir / "poses.json") << "{\"frames\": [{\"index\": 0, \"timestamp\": 0}]}";
  EXPECT_THROW(loadSequence(dir), MissingPose);
}

TEST(Harness, SparseCsv) {
  const fs::path dir = scratch("csv");
  SparseDepthMap s{8, 8, {{{1.5, 2.25}, 3.0}, {{7, 0}, 0.5}}};
  writeSparseCsv(dir / "s.csv", s);
  const SparseDepthMap r = readSparseCsv(dir / "s.csv", 8, 8);
  ASSERT_EQ(r.samples.size(), 2u);
  EXPECT_EQ(r.samples[0].pixel.u, 1.5);
  EXPECT_EQ(r.samples[0].pixel.v, 2.25);
  EXPECT_EQ(r.samples[1].depth, 0.5);
  std::ofstream(dir / "bad.csv") << "u,v,depth_m\n1,2\n";
  EXPECT_THROW(readSparseCsv(dir / "bad.csv", 8, 8), FormatError);
  std::ofstream(dir / "neg.csv") << "u,v,depth_m\n1,2,-1\n";
  EXPECT_THROW(readSparseCsv(dir / "neg.csv", 8, 8), FormatError);
}

TEST(Harness, DepthPngRange) {
  const fs::path dir = scratch("png");
  DepthMap d(8, 8, 1.234);
  d(0, 0) = 0;
  writeDepthPng(dir / "d.png", d);
  const DepthMap r = readDepthPng(dir / "d.png");
  EXPECT_EQ(r(0, 0), 0.0);
  EXPECT_NEAR(r(3, 3), 1.234, 1e-12);
  d(1, 1) = 70.0;
  EXPECT_THROW(writeDepthPng(dir / "e.png", d), FormatError);
}

TEST(Harness, SourceSelectionFollowsTau) {
  RunConfig cfg;
  cfg.tau = 0.5;
  cfg.iterations = 1;
  const RunReport r = runPipeline(smallSequence(), cfg);
  ASSERT_EQ(r.frames.size(), 6u);
  for (const auto& f : r.frames) EXPECT_EQ(f.source, f.frame / 2 * 2);
  cfg.tau = 0.4;
  EXPECT_THROW(runPipeline(smallSequence(), cfg), InvalidTau);
}

TEST(Harness, ZeroLambdaIsBitExact) {
  RunConfig cfg;
  cfg.iterations = 2;
  cfg.seed = 7;
  const RunReport a = runPipeline(smallSequence(), cfg);
  cfg.lambda = 0.0;
  const RunReport c = runPipeline(smallSequence(), cfg);
  ASSERT_EQ(a.predictions.size(), c.predictions.size());
  for (std::size_t i = 0; i < a.predictions.size(); ++i)
    EXPECT_TRUE((a.predictions[i].values == c.predictions[i].values).all());
  cfg.lambda = 0.05;
  const RunReport noisy = runPipeline(smallSequence(), cfg);
  bool differ = false;
  for (std::size_t i = 0; i < a.predictions.size(); ++i)
    differ |= !(a.predictions[i].values == noisy.predictions[i].values).all();
  EXPECT_TRUE(differ);
}

TEST(Harness, ZeroIterationsDecodeInitialization) {
  RunConfig cfg;
  cfg.iterations = 0;
  const RunReport r = runPipeline(smallSequence(), cfg);
  const Sequence& seq = smallSequence();
  for (std::size_t i = 0; i < r.frames.size(); ++i) {
    const auto& f = r.frames[i];
    ASSERT_EQ(f.mae8.size(), 1u);
    const Pose s2t = seq.frames[f.frame].camera_to_world.inverse() * seq.frames[f.source].camera_to_world;
    const SparseDepthMap sparse = sampleSparse(*seq.frames[f.source].depth, cfg.n_points, frameSeed(cfg.seed, f.source));
    const DepthMap init = initDepth(reprojectSparseDepth(sparse, s2t, seq.intrinsics).map.rasterize(8));
    EXPECT_TRUE((uniformDecode(init).values == r.predictions[i].values).all());
  }
}

TEST(Harness, AggregateIsFrameMean) {
  RunConfig cfg;
  cfg.iterations = 3;
  const RunReport r = runPipeline(smallSequence(), cfg);
  ASSERT_TRUE(r.aggregate.has_value());
  double mae = 0, rmse = 0;
  for (const auto& f : r.frames) {
    mae += f.metrics->mae;
    rmse += f.metrics->rmse;
    EXPECT_EQ(f.mae8.size(), 4u);
  }
  EXPECT_NEAR(r.aggregate->mae, mae / r.frames.size(), 1e-12);
  EXPECT_NEAR(r.aggregate->rmse, rmse / r.frames.size(), 1e-12);
}

TEST(Harness, SweepRecordsErrorsPerRow) {
  RunConfig cfg;
  cfg.iterations = 1;
  const auto rows = sweep(smallSequence(), SweepAxis::Tau, {1.0, 0.3, 0.5}, cfg);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_TRUE(rows[0].metrics.has_value());
  EXPECT_FALSE(rows[1].error.empty());
  EXPECT_FALSE(rows[1].metrics.has_value());
  EXPECT_TRUE(rows[2].error.empty());
  const fs::path dir = scratch("sweep");
  writeSweepCsv(dir / "s.csv", SweepAxis::Tau, rows);
  std::istringstream lines(slurp(dir / "s.csv"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 4);
  EXPECT_THROW(parseSweepAxis("gamma"), InvalidArgument);
  EXPECT_EQ(parseSweepAxis(sweepAxisName(SweepAxis::Points)), SweepAxis::Points);
  EXPECT_THROW(sweep(smallSequence(), SweepAxis::Points, {}, cfg), InvalidArgument);
}

TEST(Harness, RejectsBadConfig) {
  RunConfig cfg;
  cfg.lambda = -1;
  EXPECT_THROW(runPipeline(smallSequence(), cfg), InvalidArgument);
  cfg = RunConfig{};
  cfg.op = OperatorKind::Learned;
  EXPECT_THROW(runPipeline(smallSequence(), cfg), InvalidArgument);
}

TEST(Harness, CliExitCodes) {
  const fs::path dir = scratch("cli");
  const std::string seq = (dir / "seq").string();
  EXPECT_EQ(cli("simulate --out " + seq + " --seed 3 --frames 3 --case 0"), 0);
  EXPECT_EQ(cli("simulate --out " + seq), 2);
  EXPECT_EQ(cli("run --sequence " + seq + " --out " + (dir / "r").string() + " --iterations 2"), 0);
  EXPECT_TRUE(fs::exists(dir / "r" / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "r" / "frames.csv"));
  EXPECT_EQ(cli("run --sequence " + (dir / "none").string() + " --out " + (dir / "r2").string()), 2);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_EQ(cli("run --config " + (dir / "bad.json").string() + " --sequence " + seq + " --out " +
                (dir / "r3").string()),
            2);
  EXPECT_EQ(cli("sweep --sequence " + seq + " --out " + (dir / "s.csv").string() +
                " --axis iterations --values 0,1"),
            0);
  EXPECT_EQ(cli("mesh --sequence " + seq + " --out " + (dir / "m.ply").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "m.ply"));
  EXPECT_EQ(cli("gradcheck --eps 0"), 2);
  EXPECT_EQ(cli("nonsense"), 2);
}
