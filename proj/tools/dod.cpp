// Command-line front end: simulate, run, sweep, mesh, train-toy, gradcheck.
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dod/eval.hpp"
#include "dod/harness.hpp"
#include "dod/model.hpp"
#include "dod/scene_sim.hpp"
#include "dod/training.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFormat = 2;
constexpr int kNumeric = 3;

json loadConfig(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw dod::FormatError(fmt::format("{}: cannot open config", path));
  try {
    json j = json::parse(f);
    if (!j.is_object()) throw dod::FormatError(fmt::format("{}: config must be a JSON object", path));
    return j;
  } catch (const json::exception& e) {
    throw dod::FormatError(fmt::format("{}: {}", path, e.what()));
  }
}

template <typename T>
T pick(const std::optional<T>& flag, const json& cfg, const char* key, T fallback) {
  if (flag) return *flag;
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw dod::FormatError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

dod::OperatorKind parseOperator(const std::string& name) {
  if (name == "analytic") return dod::OperatorKind::Analytic;
  if (name == "learned") return dod::OperatorKind::Learned;
  throw dod::InvalidArgument(fmt::format("unknown operator '{}'", name));
}

dod::ModelConfig parseModelPreset(const std::string& name) {
  if (name == "desk") return dod::ModelConfig::desk();
  if (name == "full") return dod::ModelConfig::full();
  if (name == "toy") return dod::ModelConfig::toy();
  throw dod::InvalidArgument(fmt::format("unknown model preset '{}'", name));
}

struct RunFlags {
  std::string config;
  std::string sequence;
  std::string output;
  std::optional<double> tau, lambda, fallback, voxel;
  std::optional<std::size_t> points;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> op, weights;
  std::optional<bool> mesh;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON configuration file");
    app->add_option("--sequence", sequence, "sequence directory")->required();
    app->add_option("--tau", tau, "temporal ratio of depth frames (1/m)");
    app->add_option("--points", points, "sparse points per depth frame");
    app->add_option("--iterations", iterations, "update iterations N");
    app->add_option("--lambda", lambda, "relative pose noise");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--operator", op, "analytic or learned");
    app->add_option("--weights", weights, "model weights for the learned operator");
    app->add_option("--fallback-depth", fallback, "initial depth when no sparse point lands");
    app->add_option("--voxel", voxel, "TSDF voxel size in meters");
    app->add_flag("--mesh", mesh, "fuse predictions and compute 3D metrics");
  }

  dod::RunConfig resolve(const json& j) const {
    dod::RunConfig c;
    c.tau = pick(tau, j, "tau", c.tau);
    c.n_points = pick(points, j, "n_points", c.n_points);
    c.iterations = pick(iterations, j, "iterations", c.iterations);
    c.lambda = pick(lambda, j, "lambda", c.lambda);
    c.seed = pick(seed, j, "seed", c.seed);
    c.op = parseOperator(pick(op, j, "operator", std::string("analytic")));
    c.weights = pick(weights, j, "weights", std::string());
    c.fallback_depth = pick(fallback, j, "fallback_depth", c.fallback_depth);
    c.mesh = pick(mesh, j, "mesh", c.mesh);
    c.voxel_size = pick(voxel, j, "voxel_size", c.voxel_size);
    c.fscore_threshold = pick<double>(std::nullopt, j, "fscore_threshold", c.fscore_threshold);
    c.sample_density = pick<double>(std::nullopt, j, "sample_density", c.sample_density);
    c.tie_tolerance = pick<double>(std::nullopt, j, "tie_tolerance", c.tie_tolerance);
    c.validate();
    return c;
  }
};

std::optional<dod::Model> loadModelFor(const dod::RunConfig& c) {
  if (c.op != dod::OperatorKind::Learned) return std::nullopt;
  if (c.weights.empty()) throw dod::InvalidArgument("--weights is required for the learned operator");
  return dod::loadWeights(c.weights);
}

void printSummary(const dod::RunReport& r) {
  if (r.aggregate)
    fmt::print("frames {}  mae {:.4f}  rmse {:.4f}  abs_rel {:.4f}  d<1.25 {:.4f}\n", r.frames.size(), r.aggregate->mae,
               r.aggregate->rmse, r.aggregate->abs_rel, r.aggregate->delta_125);
  else
    fmt::print("frames {}  (no ground truth)\n", r.frames.size());
  if (r.metrics3d)
    fmt::print("3d: acc {:.4f}  comp {:.4f}  prec {:.4f}  recall {:.4f}  fscore {:.4f}\n", r.metrics3d->acc,
               r.metrics3d->comp, r.metrics3d->prec, r.metrics3d->recall, r.metrics3d->fscore);
}

std::vector<double> parseValues(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw dod::FormatError(fmt::format("'{}' is not a number", item));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-to-dense depth from a past depth frame and a new RGB view"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "render a synthetic sequence directory");
  std::string sim_config, sim_out;
  std::uint64_t sim_seed = 0;
  std::optional<int> sim_case, sim_frames;
  std::optional<double> sim_tau;
  std::optional<std::size_t> sim_points;
  sim->add_option("--config", sim_config, "JSON configuration file");
  sim->add_option("--out", sim_out, "output sequence directory")->required();
  sim->add_option("--seed", sim_seed, "random seed")->required();
  sim->add_option("--case", sim_case, "suite scene index (0-7)");
  sim->add_option("--frames", sim_frames, "frame count");
  sim->add_option("--tau", sim_tau, "temporal ratio of depth frames");
  sim->add_option("--points", sim_points, "sparse points per depth frame");

  // run
  auto* run = app.add_subcommand("run", "densify every frame of a sequence and report metrics");
  RunFlags run_flags;
  run_flags.attach(run);
  run->add_option("--out", run_flags.output, "report directory")->required();

  // sweep
  auto* sw = app.add_subcommand("sweep", "repeat run over values of one parameter");
  RunFlags sw_flags;
  std::string sw_axis, sw_values;
  sw_flags.attach(sw);
  sw->add_option("--out", sw_flags.output, "CSV file")->required();
  sw->add_option("--axis", sw_axis, "tau, n_points, lambda or iterations")->required();
  sw->add_option("--values", sw_values, "comma-separated values")->required();

  // mesh
  auto* me = app.add_subcommand("mesh", "fuse the dense depth of a sequence into a PLY mesh");
  std::string me_seq, me_out;
  double me_voxel = 0.04;
  me->add_option("--sequence", me_seq, "sequence directory")->required();
  me->add_option("--out", me_out, "PLY file")->required();
  me->add_option("--voxel", me_voxel, "voxel size in meters");

  // train-toy
  auto* tr = app.add_subcommand("train-toy", "train the learned operator on a synthetic sequence");
  std::string tr_config, tr_seq, tr_out, tr_log;
  std::uint64_t tr_seed = 0;
  std::optional<int> tr_steps, tr_iters, tr_buffer;
  std::optional<double> tr_lr;
  std::optional<std::string> tr_preset;
  tr->add_option("--config", tr_config, "JSON configuration file");
  tr->add_option("--sequence", tr_seq, "training sequence directory")->required();
  tr->add_option("--out", tr_out, "weights file")->required();
  tr->add_option("--seed", tr_seed, "random seed")->required();
  tr->add_option("--steps", tr_steps, "optimizer steps");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--iterations", tr_iters, "update iterations per forward pass");
  tr->add_option("--buffer", tr_buffer, "past depth frames per sample");
  tr->add_option("--model", tr_preset, "desk, full or toy");
  tr->add_option("--log", tr_log, "per-step CSV log");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the learned modules");
  std::uint64_t gc_seed = 1;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  int gc_per = 10;
  gc->add_option("--seed", gc_seed, "random seed");
  gc->add_option("--eps", gc_eps, "central-difference step");
  gc->add_option("--tolerance", gc_tol, "maximum relative error");
  gc->add_option("--per-tensor", gc_per, "entries checked per parameter tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kFormat;
  }

  try {
    if (*sim) {
      const json j = loadConfig(sim_config);
      const int index = pick(sim_case, j, "suite_case", 0);
      const int frames = pick(sim_frames, j, "frames", 20);
      const double tau = pick(sim_tau, j, "tau", 1.0);
      const std::size_t points = pick(sim_points, j, "n_points", std::size_t{500});
      const dod::SuiteCase c = dod::makeSuiteCase(index, frames);
      const dod::Sequence seq = dod::generateSequence(c.scene, c.trajectory, c.intrinsics, tau, points, sim_seed);
      dod::saveSequence(sim_out, seq);
      fmt::print("wrote {} frames ({}x{}) to {}\n", seq.frames.size(), c.intrinsics.width, c.intrinsics.height,
                 sim_out);
    } else if (*run) {
      const dod::RunConfig c = run_flags.resolve(loadConfig(run_flags.config));
      const auto model = loadModelFor(c);
      const dod::Sequence seq = dod::loadSequence(run_flags.sequence);
      const dod::RunReport r = dod::runPipeline(seq, c, model ? &*model : nullptr);
      dod::writeReport(run_flags.output, r);
      printSummary(r);
    } else if (*sw) {
      const dod::RunConfig c = sw_flags.resolve(loadConfig(sw_flags.config));
      const auto model = loadModelFor(c);
      const dod::SweepAxis axis = dod::parseSweepAxis(sw_axis);
      const dod::Sequence seq = dod::loadSequence(sw_flags.sequence);
      const auto rows = dod::sweep(seq, axis, parseValues(sw_values), c, model ? &*model : nullptr);
      dod::writeSweepCsv(sw_flags.output, axis, rows);
      for (const auto& row : rows) {
        if (!row.error.empty())
          fmt::print("{} = {}: {}\n", sw_axis, row.value, row.error);
        else if (row.metrics)
          fmt::print("{} = {}: mae {:.4f}\n", sw_axis, row.value, row.metrics->mae);
      }
    } else if (*me) {
      const dod::Sequence seq = dod::loadSequence(me_seq);
      std::vector<std::pair<const dod::DepthMap*, const dod::Pose*>> views;
      Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
      for (const auto& fr : seq.frames) {
        const dod::DepthMap* d = fr.ground_truth ? &*fr.ground_truth : fr.depth ? &*fr.depth : nullptr;
        if (!d) continue;
        views.emplace_back(d, &fr.camera_to_world);
        for (int y = 0; y < d->height; ++y)
          for (int x = 0; x < d->width; ++x)
            if (d->valid(x, y)) {
              const Eigen::Vector3d p =
                  fr.camera_to_world * dod::backproject(dod::Pixel{double(x), double(y)}, (*d)(x, y), seq.intrinsics);
              lo = lo.cwiseMin(p);
              hi = hi.cwiseMax(p);
            }
      }
      if (views.empty()) throw dod::EmptyValidSet("the sequence has no dense depth to fuse");
      dod::TsdfVolume vol =
          dod::TsdfVolume::create(lo.array() - 4 * me_voxel, hi.array() + 4 * me_voxel, me_voxel);
      for (const auto& [d, pose] : views) dod::tsdfIntegrate(vol, *d, *pose, seq.intrinsics);
      const dod::Mesh mesh = dod::extractMesh(vol);
      dod::writePly(me_out, mesh);
      fmt::print("{} vertices, {} faces\n", mesh.vertices.size(), mesh.faces.size());
    } else if (*tr) {
      const json j = loadConfig(tr_config);
      dod::TrainConfig tc;
      tc.seed = tr_seed;
      tc.steps = pick(tr_steps, j, "steps", tc.steps);
      tc.lr = pick(tr_lr, j, "lr", tc.lr);
      tc.momentum = pick<double>(std::nullopt, j, "momentum", tc.momentum);
      tc.clip_norm = pick<double>(std::nullopt, j, "clip_norm", tc.clip_norm);
      tc.iterations = pick(tr_iters, j, "iterations", tc.iterations);
      tc.augment = pick<bool>(std::nullopt, j, "augment", tc.augment);
      const int buffer = pick(tr_buffer, j, "buffer", 3);
      const std::size_t points = pick<std::size_t>(std::nullopt, j, "n_points", 500);
      dod::ModelConfig mc = parseModelPreset(pick(tr_preset, j, "model", std::string("desk")));
      const dod::Sequence seq = dod::loadSequence(tr_seq);
      const auto data = dod::samplesFromSequence(seq, points, buffer, tr_seed);
      dod::Model model(mc.resolve());
      model.initialize(tr_seed);
      const dod::TrainResult r = dod::trainToy(model, data, tc);
      dod::saveWeights(tr_out, model);
      if (!tr_log.empty()) {
        std::ofstream log(tr_log);
        log << "step,loss,grad_norm,clipped_norm\n";
        for (std::size_t i = 0; i < r.loss.size(); ++i)
          log << fmt::format("{},{:.17g},{:.17g},{:.17g}\n", i, r.loss[i], r.grad_norm[i], r.clipped_norm[i]);
      }
      fmt::print("{} samples, {} steps, loss {:.4f} -> {:.4f}\n", data.size(), r.loss.size(), r.loss.front(),
                 r.loss.back());
    } else if (*gc) {
      double worst = 0;
      for (const auto& r : dod::checkModuleGradients(dod::ModelConfig::toy(), gc_seed, gc_eps, gc_per)) {
        fmt::print("{:18s} {:4d} entries  max relative error {:.3e}\n", r.module, r.entries, r.max_rel_error);
        worst = std::max(worst, r.max_rel_error);
      }
      fmt::print("worst {:.3e} (tolerance {:.1e})\n", worst, gc_tol);
      if (!(worst <= gc_tol)) return kNumeric;
    }
  } catch (const dod::NumericError& e) {
    fmt::print(stderr, "numeric failure: {}\n", e.what());
    return kNumeric;
  } catch (const dod::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFormat;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return kOk;
}
