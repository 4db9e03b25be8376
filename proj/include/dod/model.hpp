#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dod/autodiff.hpp"
#include "dod/decoder.hpp"
#include "dod/encoding.hpp"
#include "dod/integrator.hpp"
#include "dod/nn.hpp"

namespace dod {

struct ModelConfig {
  int geometry_width = 32;
  int geometry_channels = 32;
  int mono2 = 16, mono4 = 16, mono8 = 32;
  int hidden = 32;
  UpdateBlockConfig update;
  DecoderConfig decoder;

  /// Channel counts of the reference architecture divided by four.
  static ModelConfig desk();
  /// Reference widths (hidden 128, monocular 64/64/128).
  static ModelConfig full();
  /// Small widths for fast unit tests and gradient checks.
  static ModelConfig toy();

  /// Derives the update-block and decoder widths from the top-level fields.
  ModelConfig& resolve();
};

/// Per-frame inputs at full resolution plus the sparse grid at 1/8.
struct FrameInputs {
  ColorImage target;
  ColorImage source;
  DepthMap sparse8;
  Intrinsics k;  // full resolution
  Pose target_to_source;
};

class Model {
 public:
  explicit Model(ModelConfig cfg = ModelConfig::desk());

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterList parameters() const;
  void initialize(std::uint64_t seed, double gain = 1.0);

  struct Forward {
    std::vector<ad::Var> predictions;  // full resolution, one per decoded iteration
    std::vector<DepthMap> depths8;     // iterates at 1/8
    DepthMap init8;
    ad::Var hidden;
  };

  /// Differentiable forward. With `decode_every_iteration` false only the
  /// final iterate is decoded (N = 0 decodes the initialization).
  Forward forward(const FrameInputs& in, int iterations, bool decode_every_iteration,
                  const HypothesisSet& hyp = {}) const;

  const ConvEncoder& geometry() const { return geometry_; }
  const MonocularEncoder& monocular() const { return mono_; }
  const HiddenInit& hiddenInit() const { return hidden_init_; }
  std::shared_ptr<const UpdateBlock> updateBlock() const { return update_; }
  const Decoder& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  ConvEncoder geometry_;
  MonocularEncoder mono_;
  HiddenInit hidden_init_;
  std::shared_ptr<UpdateBlock> update_;
  Decoder decoder_;
};

/// Weights file: "DODW", u32 version, u64 header length, JSON header with
/// the config and per-tensor name/shape/offset, then float32 little-endian
/// values.
void saveWeights(const std::filesystem::path& path, const Model& model);
Model loadWeights(const std::filesystem::path& path);

}  // namespace dod
