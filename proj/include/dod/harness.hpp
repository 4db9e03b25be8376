#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dod/eval.hpp"
#include "dod/integrator.hpp"
#include "dod/model.hpp"
#include "dod/sequence.hpp"

namespace dod {

// ---------------------------------------------------------------------------
// Sequence directory

/// intrinsics.json, poses.json, color/, depth/, sparse/ and optionally gt/
/// (evaluation depth for every frame). Throws FormatError, MissingPose,
/// MissingIntrinsics.
Sequence loadSequence(const std::filesystem::path& dir);
void saveSequence(const std::filesystem::path& dir, const Sequence& seq);

SparseDepthMap readSparseCsv(const std::filesystem::path& path, int width, int height);
void writeSparseCsv(const std::filesystem::path& path, const SparseDepthMap& sparse);

// ---------------------------------------------------------------------------
// Pipeline

struct RunConfig {
  double tau = 1.0;
  std::size_t n_points = 500;
  int iterations = 10;
  OperatorKind op = OperatorKind::Analytic;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::filesystem::path weights;  // learned operator only
  double fallback_depth = 3.0;
  double tie_tolerance = 0.0;  // analytic operator only
  bool mesh = false;
  double voxel_size = 0.04;
  double fscore_threshold = 0.05;
  double sample_density = 1e4;

  void validate() const;
};

struct StageTimings {
  double encode_ms = 0;
  double volume_ms = 0;
  double integrate_ms = 0;
  double decode_ms = 0;
};

struct FrameReport {
  int frame = 0;
  int source = 0;
  std::optional<Metrics2D> metrics;
  std::vector<double> mae8;  // 1/8-resolution MAE: initialization, then one per iteration
  StageTimings timings;
};

struct RunReport {
  std::vector<FrameReport> frames;
  std::optional<Metrics2D> aggregate;
  std::optional<Metrics3D> metrics3d;
  StageTimings timings;  // mean over frames after the first
  std::vector<DepthMap> predictions;
  std::optional<Mesh> mesh;
};

/// Every frame with an earlier (or same) usable depth frame is densified and
/// evaluated against its ground truth. Errors carry the frame index.
RunReport runPipeline(const Sequence& seq, const RunConfig& cfg, const Model* model = nullptr);

/// Point-sampled ground-truth depth at 1/scale (pixel centers 0, scale, 2*scale, ...).
DepthMap subsampleDepth(const DepthMap& depth, int scale);

/// Three uniform convex upsampling passes (the zero-weight decoder).
DepthMap uniformDecode(const DepthMap& depth8);

void writeReport(const std::filesystem::path& dir, const RunReport& report);

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { Tau, Points, Lambda, Iterations };
SweepAxis parseSweepAxis(const std::string& name);
std::string sweepAxisName(SweepAxis axis);

struct SweepRow {
  double value = 0;
  std::optional<Metrics2D> metrics;
  StageTimings timings;
  std::size_t frames = 0;
  std::string error;
};

std::vector<SweepRow> sweep(const Sequence& seq, SweepAxis axis, const std::vector<double>& values,
                            const RunConfig& cfg, const Model* model = nullptr);
void writeSweepCsv(const std::filesystem::path& path, SweepAxis axis, const std::vector<SweepRow>& rows);

}  // namespace dod
