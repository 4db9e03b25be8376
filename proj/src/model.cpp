#include "dod/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "json.hpp"

namespace dod {

ModelConfig ModelConfig::desk() { return ModelConfig{}.resolve(); }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.geometry_width = 64;
  c.geometry_channels = 64;
  c.mono2 = 64;
  c.mono4 = 64;
  c.mono8 = 128;
  c.hidden = 128;
  c.resolve();
  c.update.corr0 = 256;
  c.update.corr1 = 192;
  c.update.depth0 = 128;
  c.update.depth1 = 64;
  c.update.head = 64;
  c.decoder.feats8 = 64;
  c.decoder.feats4 = 32;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.geometry_width = 8;
  c.geometry_channels = 8;
  c.mono2 = 4;
  c.mono4 = 4;
  c.mono8 = 8;
  c.hidden = 8;
  c.resolve();
  c.update.corr0 = 16;
  c.update.corr1 = 8;
  c.update.depth0 = 8;
  c.update.depth1 = 4;
  c.update.head = 8;
  c.decoder.feats8 = 4;
  c.decoder.feats4 = 4;
  return c;
}

ModelConfig& ModelConfig::resolve() {
  update.hidden = hidden;
  update.mono8 = mono8;
  decoder.hidden = hidden;
  decoder.mono2 = mono2;
  decoder.mono4 = mono4;
  decoder.mono8 = mono8;
  return *this;
}

Model::Model(ModelConfig cfg)
    : cfg_(cfg),
      geometry_(cfg.geometry_width, cfg.geometry_channels),
      mono_(cfg.mono2, cfg.mono4, cfg.mono8),
      hidden_init_(cfg.mono8, cfg.hidden),
      update_(std::make_shared<UpdateBlock>(cfg.update)),
      decoder_(cfg.decoder) {
  if (cfg.update.hidden != cfg.hidden || cfg.decoder.hidden != cfg.hidden || cfg.update.mono8 != cfg.mono8)
    throw InvalidArgument("model config is not resolved");
}

nn::ParameterList Model::parameters() const {
  nn::ParameterList out;
  geometry_.collect(out, "geometry");
  mono_.collect(out, "monocular");
  hidden_init_.collect(out, "hidden_init");
  update_->collect(out, "update");
  decoder_.collect(out, "decoder");
  return out;
}

void Model::initialize(std::uint64_t seed, double gain) { nn::initialize(parameters(), seed, gain); }

Model::Forward Model::forward(const FrameInputs& in, int iterations, bool decode_every_iteration,
                              const HypothesisSet& hyp) const {
  if (iterations < 0) throw InvalidArgument("iteration count must be non-negative");
  requireDivisibleBy8(in.target);
  requireDivisibleBy8(in.source);
  const Intrinsics k8 = in.k.scaled(8);

  const ad::Var ft = geometry_.forward(ad::constant(in.target));
  const ad::Var fs = geometry_.forward(ad::constant(in.source));
  const auto mono = mono_.forward(ad::constant(in.target));
  if (in.sparse8.width != ft->value.width || in.sparse8.height != ft->value.height)
    throw DimensionMismatch("sparse grid is not at 1/8 of the target image");

  Forward out;
  out.init8 = initDepth(in.sparse8);
  ad::Var hidden = hidden_init_.forward(mono.level8);
  ad::Var depth = ad::constant(out.init8.toTensor());
  DepthMap current = out.init8;

  for (int i = 0; i < iterations; ++i) {
    const CorrelationPlan plan = planCorrelation(current, k8, in.target_to_source, hyp, fs->value.width,
                                                 fs->value.height);
    const ad::Var vol = correlationVolume(ft, fs, plan);
    const DepthMap dd = depthDelta(in.sparse8, current);
    // The iterate enters the update block detached; gradients reach it
    // through the predicted increment only.
    const auto r = update_->forward(hidden, vol, mono.level8, ad::constant(current.toTensor()),
                                    ad::constant(dd.toTensor()));
    hidden = r.hidden;
    depth = ad::clampMin(ad::add(ad::constant(current.toTensor()), r.delta_f), kMinDepth);
    current = DepthMap::fromTensor(depth->value);
    out.depths8.push_back(current);
    if (decode_every_iteration) out.predictions.push_back(decoder_.forward(depth, hidden, mono));
  }
  if (!decode_every_iteration || iterations == 0) out.predictions.push_back(decoder_.forward(depth, hidden, mono));
  out.hidden = hidden;
  return out;
}

// ---------------------------------------------------------------------------
// Weights file

namespace {

constexpr char kMagic[4] = {'D', 'O', 'D', 'W'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "weights IO assumes a little-endian host");

nlohmann::json configToJson(const ModelConfig& c) {
  return {{"geometry_width", c.geometry_width},
          {"geometry_channels", c.geometry_channels},
          {"mono", {c.mono2, c.mono4, c.mono8}},
          {"hidden", c.hidden},
          {"update",
           {{"corr0", c.update.corr0},
            {"corr1", c.update.corr1},
            {"depth0", c.update.depth0},
            {"depth1", c.update.depth1},
            {"head", c.update.head}}},
          {"decoder", {{"feats8", c.decoder.feats8}, {"feats4", c.decoder.feats4}}}};
}

ModelConfig configFromJson(const nlohmann::json& j) {
  ModelConfig c;
  c.geometry_width = j.at("geometry_width");
  c.geometry_channels = j.at("geometry_channels");
  c.mono2 = j.at("mono").at(0);
  c.mono4 = j.at("mono").at(1);
  c.mono8 = j.at("mono").at(2);
  c.hidden = j.at("hidden");
  c.resolve();
  const auto& u = j.at("update");
  c.update.corr0 = u.at("corr0");
  c.update.corr1 = u.at("corr1");
  c.update.depth0 = u.at("depth0");
  c.update.depth1 = u.at("depth1");
  c.update.head = u.at("head");
  c.decoder.feats8 = j.at("decoder").at("feats8");
  c.decoder.feats4 = j.at("decoder").at("feats4");
  return c;
}

}  // namespace

void saveWeights(const std::filesystem::path& path, const Model& model) {
  const auto params = model.parameters();
  nlohmann::json header;
  header["config"] = configToJson(model.config());
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    const Tensor& t = p.var->value;
    const auto count = static_cast<std::uint64_t>(t.data.size());
    header["tensors"].push_back({{"name", p.name}, {"shape", {t.channels, t.height, t.width}}, {"offset", offset}});
    offset += count;
  }
  const std::string text = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(fmt::format("{}: cannot open for writing", path.string()));
  f.write(kMagic, 4);
  const std::uint32_t version = kVersion;
  const std::uint64_t len = text.size();
  f.write(reinterpret_cast<const char*>(&version), sizeof version);
  f.write(reinterpret_cast<const char*>(&len), sizeof len);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    const Eigen::VectorXf v = Eigen::Map<const Eigen::VectorXd>(p.var->value.data.data(), p.var->value.data.size())
                                  .cast<float>();
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!f) throw FormatError(fmt::format("{}: write failed", path.string()));
}

Model loadWeights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(fmt::format("{}: cannot open", path.string()));
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), sizeof version);
  f.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(fmt::format("{}: not a weights file", path.string()));
  if (version != kVersion) throw FormatError(fmt::format("{}: unsupported version {}", path.string(), version));
  if (len > (std::uint64_t{1} << 30)) throw FormatError(fmt::format("{}: header too large", path.string()));
  std::string text(len, '\0');
  f.read(text.data(), static_cast<std::streamsize>(len));
  if (!f) throw FormatError(fmt::format("{}: truncated header", path.string()));

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    Model model(configFromJson(header.at("config")));
    const auto params = model.parameters();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size()) throw FormatError(fmt::format("{}: tensor count mismatch", path.string()));
    const auto data_start = f.tellg();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = tensors[i];
      Tensor& t = params[i].var->value;
      const auto shape = entry.at("shape");
      if (entry.at("name") != params[i].name || shape.at(0) != t.channels || shape.at(1) != t.height ||
          shape.at(2) != t.width)
        throw FormatError(fmt::format("{}: tensor {} does not match the model", path.string(), params[i].name));
      const std::uint64_t offset = entry.at("offset");
      Eigen::VectorXf v(t.data.size());
      f.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(float)));
      f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
      if (!f) throw FormatError(fmt::format("{}: truncated tensor data", path.string()));
      Eigen::Map<Eigen::VectorXd>(t.data.data(), t.data.size()) = v.cast<double>();
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: bad header: {}", path.string(), e.what()));
  }
}

}  // namespace dod
