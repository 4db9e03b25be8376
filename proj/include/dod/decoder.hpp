#pragma once

#include "dod/autodiff.hpp"
#include "dod/core.hpp"
#include "dod/encoding.hpp"
#include "dod/nn.hpp"

namespace dod {

/// Convex 2x upsampling weights: 36 channels per coarse cell, channel
/// (a * 2 + b) * 9 + k for fine child (row a, column b) and neighbor
/// k = (dy + 1) * 3 + (dx + 1).
using UpsampleMask = Tensor;

inline constexpr int kMaskChannels = 36;

/// Softmax over k within every (cell, child) group of 9.
UpsampleMask normalizeMask(const Tensor& logits);

/// Fine pixel (2i + a, 2j + b) (row, column) is the mask-weighted sum of the
/// 3x3 coarse neighborhood centered at (i, j); borders replicate edges.
/// `mask` must already be normalized.
DepthMap convexUpsample(const DepthMap& coarse, const UpsampleMask& mask);

/// Differentiable variant taking raw logits (softmax applied inside).
ad::Var convexUpsample(const ad::Var& coarse, const ad::Var& logits);

struct DecoderConfig {
  int hidden = 32;
  int mono2 = 16, mono4 = 16, mono8 = 32;
  int feats8 = 16;
  int feats4 = 8;
};

/// One 2x stage: 3x3 conv + ReLU, 3x3 conv; the output splits into mask
/// logits and `feats` feature channels.
struct DecoderStage {
  nn::Conv2d conv0;
  nn::Conv2d conv1;
  int feats = 0;

  DecoderStage() = default;
  DecoderStage(int in_channels, int feats_out);

  struct Output {
    ad::Var logits;
    ad::Var feats;  // null when feats == 0
  };
  Output operator()(const ad::Var& x) const;
  void collect(nn::ParameterList& out, const std::string& prefix) const;
};

class Decoder {
 public:
  Decoder() = default;
  explicit Decoder(const DecoderConfig& cfg);

  struct Trace {
    ad::Var depth4, depth2, depth1;
    ad::Var mask8, mask4, mask2;  // normalized masks
  };

  ad::Var forward(const ad::Var& depth8, const ad::Var& hidden, const MonocularEncoder::Levels& mono,
                  Trace* trace = nullptr) const;
  void collect(nn::ParameterList& out, const std::string& prefix) const;
  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  DecoderStage theta8_, theta4_, theta2_;
};

/// Full-resolution depth from the 1/8 estimate. Throws DimensionMismatch.
DepthMap decode(const DepthMap& depth8, const FeatureGrid& hidden, const MonocularPyramid& pyramid,
                const Decoder& decoder);

}  // namespace dod
