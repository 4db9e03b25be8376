#include "dod/harness.hpp"

#include <array>
#include <chrono>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <fmt/os.h>

#include "dod/decoder.hpp"
#include "dod/encoding.hpp"
#include "dod/image_io.hpp"
#include "dod/scene_sim.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dod {

namespace {

std::string frameName(int i, const char* ext) { return fmt::format("{:06d}.{}", i, ext); }

json readJson(const fs::path& path) {
  std::ifstream f(path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void writeText(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(fmt::format("{}: cannot open for writing", path.string()));
  f << text;
}

}  // namespace

// ---------------------------------------------------------------------------
// Sequence directory

SparseDepthMap readSparseCsv(const fs::path& path, int width, int height) {
  std::ifstream f(path);
  if (!f) throw FormatError(fmt::format("{}: cannot open", path.string()));
  SparseDepthMap out{width, height, {}};
  std::string line;
  int row = 0;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty() || line.rfind("u,", 0) == 0) continue;
    std::istringstream ss(line);
    SparseSample s;
    char c1 = 0, c2 = 0;
    if (!(ss >> s.pixel.u >> c1 >> s.pixel.v >> c2 >> s.depth) || c1 != ',' || c2 != ',')
      throw FormatError(fmt::format("{}:{}: expected u,v,depth_m", path.string(), row));
    if (!(s.depth > 0)) throw FormatError(fmt::format("{}:{}: non-positive depth", path.string(), row));
    out.samples.push_back(s);
  }
  return out;
}

void writeSparseCsv(const fs::path& path, const SparseDepthMap& sparse) {
  std::string text = "u,v,depth_m\n";
  for (const auto& s : sparse.samples) text += fmt::format("{:.17g},{:.17g},{:.17g}\n", s.pixel.u, s.pixel.v, s.depth);
  writeText(path, text);
}

Sequence loadSequence(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(fmt::format("{}: not a directory", dir.string()));
  if (!fs::exists(dir / "intrinsics.json"))
    throw MissingIntrinsics(fmt::format("{}: intrinsics.json not found", dir.string()));
  if (!fs::exists(dir / "poses.json")) throw MissingPose(fmt::format("{}: poses.json not found", dir.string()));

  Sequence seq;
  const json ij = readJson(dir / "intrinsics.json");
  try {
    seq.intrinsics = {ij.at("fx"), ij.at("fy"), ij.at("cx"), ij.at("cy"), ij.at("width"), ij.at("height")};
  } catch (const json::exception& e) {
    throw MissingIntrinsics(fmt::format("{}: {}", (dir / "intrinsics.json").string(), e.what()));
  }
  if (!seq.intrinsics.isValid()) throw FormatError(fmt::format("{}: invalid intrinsics", dir.string()));
  const int w = seq.intrinsics.width;
  const int h = seq.intrinsics.height;

  const json pj = readJson(dir / "poses.json");
  if (!pj.contains("frames") || !pj["frames"].is_array())
    throw MissingPose(fmt::format("{}: poses.json has no frame list", dir.string()));
  int index = 0;
  for (const auto& entry : pj["frames"]) {
    Frame fr;
    try {
      fr.timestamp = entry.at("timestamp");
      const auto& m = entry.at("camera_to_world");
      if (m.size() != 16) throw MissingPose(fmt::format("{}: frame {} pose needs 16 values", dir.string(), index));
      Eigen::Matrix4d mat;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) mat(r, c) = m.at(r * 4 + c).get<double>();
      fr.camera_to_world = Pose::fromMatrix(mat);
    } catch (const json::exception& e) {
      throw MissingPose(fmt::format("{}: frame {}: {}", dir.string(), index, e.what()));
    }
    if (!fr.camera_to_world.isValid(1e-6))
      throw FormatError(fmt::format("{}: frame {} pose is not rigid", dir.string(), index));

    const fs::path color = dir / "color" / frameName(index, "png");
    if (!fs::exists(color)) throw FormatError(fmt::format("{}: missing", color.string()));
    fr.color = readColorPng(color);
    if (fr.color.width != w || fr.color.height != h)
      throw FormatError(fmt::format("{}: size differs from intrinsics", color.string()));

    const auto loadDepth = [&](const fs::path& p) -> std::optional<DepthMap> {
      if (!fs::exists(p)) return std::nullopt;
      DepthMap d = readDepthPng(p);
      if (d.width != w || d.height != h) throw FormatError(fmt::format("{}: size differs from intrinsics", p.string()));
      return d;
    };
    fr.depth = loadDepth(dir / "depth" / frameName(index, "png"));
    fr.ground_truth = loadDepth(dir / "gt" / frameName(index, "png"));
    const fs::path sparse = dir / "sparse" / frameName(index, "csv");
    if (fs::exists(sparse)) fr.sparse = readSparseCsv(sparse, w, h);
    seq.frames.push_back(std::move(fr));
    ++index;
  }
  return seq;
}

void saveSequence(const fs::path& dir, const Sequence& seq) {
  fs::create_directories(dir / "color");
  const auto& k = seq.intrinsics;
  json ij = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  writeText(dir / "intrinsics.json", ij.dump(2) + "\n");

  json pj;
  pj["frames"] = json::array();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& fr = seq.frames[i];
    const Eigen::Matrix4d m = fr.camera_to_world.matrix();
    std::vector<double> flat;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
    pj["frames"].push_back({{"timestamp", fr.timestamp}, {"camera_to_world", flat}});

    const int idx = static_cast<int>(i);
    writeColorPng(dir / "color" / frameName(idx, "png"), fr.color);
    if (fr.depth) {
      fs::create_directories(dir / "depth");
      writeDepthPng(dir / "depth" / frameName(idx, "png"), *fr.depth);
    }
    if (fr.sparse) {
      fs::create_directories(dir / "sparse");
      writeSparseCsv(dir / "sparse" / frameName(idx, "csv"), *fr.sparse);
    }
    if (fr.ground_truth) {
      fs::create_directories(dir / "gt");
      writeDepthPng(dir / "gt" / frameName(idx, "png"), *fr.ground_truth);
    }
  }
  writeText(dir / "poses.json", pj.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Pipeline

void RunConfig::validate() const {
  tauPeriod(tau);
  if (iterations < 0) throw InvalidArgument("iterations must be non-negative");
  if (!(lambda >= 0)) throw InvalidArgument("lambda must be non-negative");
  if (!(fallback_depth > 0)) throw InvalidArgument("fallback depth must be positive");
  if (!(tie_tolerance >= 0)) throw InvalidArgument("tie tolerance must be non-negative");
  if (!(voxel_size > 0)) throw InvalidArgument("voxel size must be positive");
}

DepthMap subsampleDepth(const DepthMap& depth, int scale) {
  DepthMap out((depth.width + scale - 1) / scale, (depth.height + scale - 1) / scale);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out(x, y) = depth(x * scale, y * scale);
  return out;
}

DepthMap uniformDecode(const DepthMap& depth8) {
  DepthMap d = depth8;
  for (int s = 0; s < 3; ++s) d = convexUpsample(d, normalizeMask(Tensor(kMaskChannels, d.height, d.width)));
  return d;
}

namespace {

using Clock = std::chrono::steady_clock;

double msSince(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

SparseDepthMap sourceSparse(const Frame& fr, std::size_t n, std::uint64_t seed) {
  if (fr.depth) return sampleSparse(*fr.depth, n, seed);
  SparseDepthMap s = *fr.sparse;
  if (s.samples.size() > n) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, s.samples.size() - 1);
      std::swap(s.samples[i], s.samples[pick(rng)]);
    }
    s.samples.resize(n);
  }
  return s;
}

Metrics2D meanMetrics(const std::vector<Metrics2D>& all) {
  Metrics2D m;
  for (const auto& x : all) {
    m.mae += x.mae;
    m.rmse += x.rmse;
    m.abs_rel += x.abs_rel;
    m.sq_rel += x.sq_rel;
    m.delta_105 += x.delta_105;
    m.delta_125 += x.delta_125;
  }
  const double n = static_cast<double>(all.size());
  m.mae /= n;
  m.rmse /= n;
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.delta_105 /= n;
  m.delta_125 /= n;
  return m;
}

struct FrameResult {
  FrameReport report;
  DepthMap prediction;
};

FrameResult processFrame(const Sequence& seq, int t, int s, const std::vector<Pose>& poses,
                         const SparseDepthMap& sparse, const RunConfig& cfg, const Model* model) {
  const Intrinsics& k = seq.intrinsics;
  const Intrinsics k8 = k.scaled(8);
  const Frame& target = seq.frames[t];
  const Frame& source = seq.frames[s];
  FrameResult out;
  out.report.frame = t;
  out.report.source = s;
  StageTimings& tm = out.report.timings;
  const bool learned = cfg.op == OperatorKind::Learned;

  auto t0 = Clock::now();
  FeatureGrid ft, fs, hidden;
  MonocularPyramid pyramid;
  if (learned) {
    ft = model->geometry().encode(target.color);
    fs = model->geometry().encode(source.color);
    pyramid = model->monocular().encode(target.color);
    hidden = initHidden(pyramid.level8, model->hiddenInit());
  } else {
    const DescriptorEncoder enc;
    ft = enc.encode(target.color);
    fs = enc.encode(source.color);
  }
  tm.encode_ms = msSince(t0);

  const Pose source_to_target = poses[t].inverse() * poses[s];
  const Pose target_to_source = source_to_target.inverse();
  const DepthMap sparse8 = reprojectSparseDepth(sparse, source_to_target, k).map.rasterize(8);

  const HypothesisSet hyp;
  const AnalyticUpdate analytic(hyp, 0.5, cfg.tie_tolerance);
  std::unique_ptr<LearnedUpdate> learned_op;
  if (learned) learned_op = std::make_unique<LearnedUpdate>(model->updateBlock());
  const UpdateOperator& op = learned ? static_cast<const UpdateOperator&>(*learned_op) : analytic;

  const std::optional<DepthMap>& gt_full = target.ground_truth ? target.ground_truth : target.depth;
  std::optional<DepthMap> gt8;
  if (gt_full) {
    gt8 = subsampleDepth(*gt_full, 8);
    if (gt8->validCount() == 0) gt8.reset();
  }

  IntegratorState state{hidden, initDepth(sparse8, cfg.fallback_depth), 0};
  if (gt8) out.report.mae8.push_back(metrics2d(state.depth, *gt8).mae);
  for (int i = 0; i < cfg.iterations; ++i) {
    t0 = Clock::now();
    const CorrelationVolume vol = buildCorrelationVolume(ft, fs, state.depth, k8, target_to_source, hyp);
    tm.volume_ms += msSince(t0);
    t0 = Clock::now();
    state = step(state, vol, pyramid.level8, sparse8, op);
    tm.integrate_ms += msSince(t0);
    if (gt8) out.report.mae8.push_back(metrics2d(state.depth, *gt8).mae);
  }

  t0 = Clock::now();
  out.prediction = learned ? decode(state.depth, state.hidden, pyramid, model->decoder()) : uniformDecode(state.depth);
  tm.decode_ms = msSince(t0);
  if (out.prediction.width != k.width || out.prediction.height != k.height)
    throw DimensionMismatch("decoded depth does not match the image size");

  if (gt_full && gt_full->validCount() > 0) out.report.metrics = metrics2d(out.prediction, *gt_full);
  return out;
}

template <typename Fn>
auto withFrame(int t, Fn&& fn) {
  try {
    return fn();
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("frame {}: {}", t, e.what()));
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("frame {}: {}", t, e.what()));
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(fmt::format("frame {}: {}", t, e.what()));
  }
}

// Fuses the predicted and the ground-truth depth of every evaluated frame
// into two volumes over the same bounds and compares surface samples.
void evaluate3d(const Sequence& seq, const RunConfig& cfg, RunReport& report) {
  const Intrinsics& k = seq.intrinsics;
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  std::vector<const DepthMap*> gts;
  for (std::size_t i = 0; i < report.frames.size(); ++i) {
    const Frame& fr = seq.frames[report.frames[i].frame];
    const DepthMap* gt = fr.ground_truth ? &*fr.ground_truth : fr.depth ? &*fr.depth : nullptr;
    gts.push_back(gt);
    for (const DepthMap* d : std::array<const DepthMap*, 2>{gt, &report.predictions[i]}) {
      if (!d) continue;
      for (int y = 0; y < d->height; ++y)
        for (int x = 0; x < d->width; ++x) {
          if (!d->valid(x, y)) continue;
          const Eigen::Vector3d p = fr.camera_to_world * backproject(Pixel{double(x), double(y)}, (*d)(x, y), k);
          lo = lo.cwiseMin(p);
          hi = hi.cwiseMax(p);
        }
    }
  }
  if (!lo.allFinite()) return;
  const double margin = 4 * cfg.voxel_size;
  TsdfVolume pred_vol = TsdfVolume::create(lo.array() - margin, hi.array() + margin, cfg.voxel_size);
  TsdfVolume gt_vol = pred_vol;
  bool any_gt = false;
  for (std::size_t i = 0; i < report.frames.size(); ++i) {
    const Frame& fr = seq.frames[report.frames[i].frame];
    tsdfIntegrate(pred_vol, report.predictions[i], fr.camera_to_world, k);
    if (gts[i]) {
      tsdfIntegrate(gt_vol, *gts[i], fr.camera_to_world, k);
      any_gt = true;
    }
  }
  report.mesh = extractMesh(pred_vol);
  if (!any_gt) return;
  const Mesh gt_mesh = extractMesh(gt_vol);
  report.metrics3d = metrics3d(samplePoints(*report.mesh, cfg.sample_density, frameSeed(cfg.seed, 0, 3)),
                               samplePoints(gt_mesh, cfg.sample_density, frameSeed(cfg.seed, 1, 3)),
                               cfg.fscore_threshold);
}

}  // namespace

RunReport runPipeline(const Sequence& seq, const RunConfig& cfg, const Model* model) {
  cfg.validate();
  if (cfg.op == OperatorKind::Learned && !model) throw InvalidArgument("the learned operator needs model weights");
  const int period = tauPeriod(cfg.tau);
  requireDivisibleBy8(ColorImage(3, seq.intrinsics.height, seq.intrinsics.width));

  std::vector<Pose> poses;
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Pose& p = seq.frames[i].camera_to_world;
    poses.push_back(cfg.lambda > 0 ? perturbPose(p, cfg.lambda, frameSeed(cfg.seed, static_cast<int>(i), 2)) : p);
  }

  RunReport report;
  std::map<int, SparseDepthMap> sparse_cache;
  std::vector<Metrics2D> evaluated;
  for (int t = 0; t < static_cast<int>(seq.frames.size()); ++t) {
    const int s = sourceIndex(seq, t, period);
    if (s < 0) {
      fmt::print(stderr, "warning: frame {} has no preceding depth frame, skipped\n", t);
      continue;
    }
    auto it = sparse_cache.find(s);
    if (it == sparse_cache.end())
      it = sparse_cache.emplace(s, sourceSparse(seq.frames[s], cfg.n_points, frameSeed(cfg.seed, s))).first;
    FrameResult r = withFrame(t, [&] { return processFrame(seq, t, s, poses, it->second, cfg, model); });
    if (r.report.metrics) evaluated.push_back(*r.report.metrics);
    report.frames.push_back(std::move(r.report));
    report.predictions.push_back(std::move(r.prediction));
  }
  if (!evaluated.empty()) report.aggregate = meanMetrics(evaluated);

  const std::size_t timed = report.frames.size() > 1 ? report.frames.size() - 1 : report.frames.size();
  for (std::size_t i = report.frames.size() - timed; i < report.frames.size(); ++i) {
    const auto& t = report.frames[i].timings;
    report.timings.encode_ms += t.encode_ms / timed;
    report.timings.volume_ms += t.volume_ms / timed;
    report.timings.integrate_ms += t.integrate_ms / timed;
    report.timings.decode_ms += t.decode_ms / timed;
  }
  if (cfg.mesh && !report.frames.empty()) evaluate3d(seq, cfg, report);
  return report;
}

namespace {

std::string metricsCells(const std::optional<Metrics2D>& m) {
  if (!m) return ",,,,,";
  return fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", m->mae, m->rmse, m->abs_rel, m->sq_rel,
                     m->delta_105, m->delta_125);
}

constexpr const char* kMetricsHeader = "mae,rmse,abs_rel,sq_rel,delta_105,delta_125";

}  // namespace

void writeReport(const fs::path& dir, const RunReport& report) {
  fs::create_directories(dir);
  std::string frames = fmt::format("frame,source,{},mae8_init,mae8_final\n", kMetricsHeader);
  for (const auto& f : report.frames) {
    const std::string m8 =
        f.mae8.empty() ? "," : fmt::format("{:.17g},{:.17g}", f.mae8.front(), f.mae8.back());
    frames += fmt::format("{},{},{},{}\n", f.frame, f.source, metricsCells(f.metrics), m8);
  }
  writeText(dir / "frames.csv", frames);

  std::size_t evaluated = 0;
  for (const auto& f : report.frames) evaluated += f.metrics.has_value();
  std::string summary = fmt::format("frames,{}", kMetricsHeader);
  if (report.metrics3d) summary += ",comp,acc,chamfer,prec,recall,fscore";
  summary += fmt::format("\n{},{}", evaluated, metricsCells(report.aggregate));
  if (report.metrics3d) {
    const auto& m = *report.metrics3d;
    summary += fmt::format(",{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", m.comp, m.acc, m.chamfer, m.prec,
                           m.recall, m.fscore);
  }
  writeText(dir / "summary.csv", summary + "\n");

  const auto& t = report.timings;
  writeText(dir / "timing.csv", fmt::format("stage,mean_ms\nencode,{:.3f}\nvolume,{:.3f}\nintegrate,{:.3f}\ndecode,{:.3f}\n",
                                            t.encode_ms, t.volume_ms, t.integrate_ms, t.decode_ms));
  if (report.mesh) writePly(dir / "mesh.ply", *report.mesh);
}

// ---------------------------------------------------------------------------
// Sweeps

SweepAxis parseSweepAxis(const std::string& name) {
  if (name == "tau") return SweepAxis::Tau;
  if (name == "n_points") return SweepAxis::Points;
  if (name == "lambda") return SweepAxis::Lambda;
  if (name == "iterations") return SweepAxis::Iterations;
  throw InvalidArgument(fmt::format("unknown sweep axis '{}'", name));
}

std::string sweepAxisName(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Tau: return "tau";
    case SweepAxis::Points: return "n_points";
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::Iterations: return "iterations";
  }
  return "?";
}

std::vector<SweepRow> sweep(const Sequence& seq, SweepAxis axis, const std::vector<double>& values,
                            const RunConfig& cfg, const Model* model) {
  if (values.empty()) throw InvalidArgument("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (const double v : values) {
    SweepRow row;
    row.value = v;
    try {
      RunConfig c = cfg;
      c.mesh = false;
      switch (axis) {
        case SweepAxis::Tau: c.tau = v; break;
        case SweepAxis::Points:
          if (!(v >= 0) || v != std::floor(v)) throw InvalidArgument("point count must be a non-negative integer");
          c.n_points = static_cast<std::size_t>(v);
          break;
        case SweepAxis::Lambda: c.lambda = v; break;
        case SweepAxis::Iterations:
          if (!(v >= 0) || v != std::floor(v)) throw InvalidArgument("iterations must be a non-negative integer");
          c.iterations = static_cast<int>(v);
          break;
      }
      const RunReport r = runPipeline(seq, c, model);
      row.metrics = r.aggregate;
      row.timings = r.timings;
      for (const auto& f : r.frames) row.frames += f.metrics.has_value();
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void writeSweepCsv(const fs::path& path, SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::string text = fmt::format("{},frames,{},encode_ms,volume_ms,integrate_ms,decode_ms,error\n",
                                 sweepAxisName(axis), kMetricsHeader);
  for (const auto& r : rows) {
    std::string err = r.error;
    for (char& c : err)
      if (c == ',' || c == '\n') c = ' ';
    text += fmt::format("{:.17g},{},{},{:.3f},{:.3f},{:.3f},{:.3f},{}\n", r.value, r.frames, metricsCells(r.metrics),
                        r.timings.encode_ms, r.timings.volume_ms, r.timings.integrate_ms, r.timings.decode_ms, err);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  writeText(path, text);
}

}  // namespace dod
