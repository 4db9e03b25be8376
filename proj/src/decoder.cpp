#include "dod/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace dod {

namespace {

void requireMask(const Tensor& mask, int width, int height) {
  if (mask.channels != kMaskChannels || mask.width != width || mask.height != height)
    throw DimensionMismatch("upsampling mask does not match the coarse grid");
}

// Coarse pixel index of neighbor k around (x, y), edges replicated.
inline int neighbor(int x, int y, int k, int w, int h) {
  const int nx = std::clamp(x + k % 3 - 1, 0, w - 1);
  const int ny = std::clamp(y + k / 3 - 1, 0, h - 1);
  return ny * w + nx;
}

Eigen::MatrixXd upsampleValues(const Eigen::RowVectorXd& coarse, int w, int h, const Eigen::MatrixXd& weights) {
  const int fw = 2 * w;
  Eigen::MatrixXd fine(1, 4 * w * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int p = y * w + x;
      for (int child = 0; child < 4; ++child) {
        double acc = 0;
        for (int k = 0; k < 9; ++k) acc += weights(child * 9 + k, p) * coarse(neighbor(x, y, k, w, h));
        fine(0, (2 * y + child / 2) * fw + 2 * x + child % 2) = acc;
      }
    }
  }
  return fine;
}

}  // namespace

UpsampleMask normalizeMask(const Tensor& logits) {
  if (logits.channels != kMaskChannels) throw DimensionMismatch("mask logits need 36 channels");
  UpsampleMask m = logits;
  for (int p = 0; p < logits.pixels(); ++p) {
    for (int g = 0; g < 4; ++g) {
      auto seg = m.data.block(g * 9, p, 9, 1);
      seg.array() = (seg.array() - seg.maxCoeff()).exp();
      seg /= seg.sum();
    }
  }
  return m;
}

DepthMap convexUpsample(const DepthMap& coarse, const UpsampleMask& mask) {
  requireMask(mask, coarse.width, coarse.height);
  DepthMap out(2 * coarse.width, 2 * coarse.height);
  out.values = upsampleValues(coarse.values.matrix().transpose(), coarse.width, coarse.height, mask.data)
                   .row(0)
                   .transpose()
                   .array();
  return out;
}

ad::Var convexUpsample(const ad::Var& coarse, const ad::Var& logits) {
  const Tensor& c = coarse->value;
  if (c.channels != 1) throw DimensionMismatch("convex upsampling expects a single-channel map");
  requireMask(logits->value, c.width, c.height);
  const UpsampleMask w = normalizeMask(logits->value);
  Tensor out(1, 2 * c.height, 2 * c.width);
  out.data = upsampleValues(c.data.row(0), c.width, c.height, w.data);
  return ad::makeNode(std::move(out), {coarse, logits}, [w](ad::Node& self) {
    auto& cv = self.inputs[0];
    auto& lv = self.inputs[1];
    const Tensor& c = cv->value;
    const int cw = c.width;
    const int ch = c.height;
    const int fw = 2 * cw;
    Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(1, c.pixels());
    Eigen::MatrixXd dl = Eigen::MatrixXd::Zero(kMaskChannels, c.pixels());
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) {
        const int p = y * cw + x;
        for (int child = 0; child < 4; ++child) {
          const double g = self.grad(0, (2 * y + child / 2) * fw + 2 * x + child % 2);
          double dot = 0;
          double dw[9];
          for (int k = 0; k < 9; ++k) {
            const int n = neighbor(x, y, k, cw, ch);
            const double wk = w.data(child * 9 + k, p);
            dc(0, n) += g * wk;
            dw[k] = g * c.data(0, n);
            dot += wk * dw[k];
          }
          for (int k = 0; k < 9; ++k) {
            const double wk = w.data(child * 9 + k, p);
            dl(child * 9 + k, p) = wk * (dw[k] - dot);
          }
        }
      }
    }
    if (cv->requires_grad) cv->accumulate(dc);
    if (lv->requires_grad) lv->accumulate(dl);
  });
}

// ---------------------------------------------------------------------------

DecoderStage::DecoderStage(int in_channels, int feats_out)
    : conv0(in_channels, kMaskChannels + feats_out, 3), conv1(kMaskChannels + feats_out, kMaskChannels + feats_out, 3),
      feats(feats_out) {}

DecoderStage::Output DecoderStage::operator()(const ad::Var& x) const {
  const ad::Var y = conv1(ad::relu(conv0(x)));
  Output out;
  out.logits = feats > 0 ? ad::sliceChannels(y, 0, kMaskChannels) : y;
  if (feats > 0) out.feats = ad::sliceChannels(y, kMaskChannels, feats);
  return out;
}

void DecoderStage::collect(nn::ParameterList& out, const std::string& prefix) const {
  conv0.collect(out, prefix + ".conv0");
  conv1.collect(out, prefix + ".conv1");
}

Decoder::Decoder(const DecoderConfig& cfg)
    : cfg_(cfg),
      theta8_(cfg.hidden + cfg.mono8 + 1, cfg.feats8),
      theta4_(cfg.mono4 + 1 + cfg.feats8, cfg.feats4),
      theta2_(cfg.mono2 + 1 + cfg.feats4, 0) {}

ad::Var Decoder::forward(const ad::Var& depth8, const ad::Var& hidden, const MonocularEncoder::Levels& mono,
                         Trace* trace) const {
  const auto s8 = theta8_(ad::concat({hidden, mono.level8, depth8}));
  const ad::Var d4 = convexUpsample(depth8, s8.logits);
  const auto s4 = theta4_(ad::concat({mono.level4, d4, ad::upsampleNearest2(s8.feats)}));
  const ad::Var d2 = convexUpsample(d4, s4.logits);
  const auto s2 = theta2_(ad::concat({mono.level2, d2, ad::upsampleNearest2(s4.feats)}));
  const ad::Var d1 = convexUpsample(d2, s2.logits);
  if (trace) {
    trace->depth4 = d4;
    trace->depth2 = d2;
    trace->depth1 = d1;
    trace->mask8 = ad::constant(normalizeMask(s8.logits->value));
    trace->mask4 = ad::constant(normalizeMask(s4.logits->value));
    trace->mask2 = ad::constant(normalizeMask(s2.logits->value));
  }
  return d1;
}

void Decoder::collect(nn::ParameterList& out, const std::string& prefix) const {
  theta8_.collect(out, prefix + ".theta8");
  theta4_.collect(out, prefix + ".theta4");
  theta2_.collect(out, prefix + ".theta2");
}

DepthMap decode(const DepthMap& depth8, const FeatureGrid& hidden, const MonocularPyramid& pyramid,
                const Decoder& decoder) {
  const auto same = [&](const Tensor& t, int s) {
    return t.width == depth8.width * 8 / s && t.height == depth8.height * 8 / s;
  };
  if (!same(hidden, 8) || !same(pyramid.level8, 8) || !same(pyramid.level4, 4) || !same(pyramid.level2, 2))
    throw DimensionMismatch("decoder inputs are not on a consistent pyramid");
  MonocularEncoder::Levels mono{ad::constant(pyramid.level2), ad::constant(pyramid.level4),
                                ad::constant(pyramid.level8)};
  return DepthMap::fromTensor(
      decoder.forward(ad::constant(depth8.toTensor()), ad::constant(hidden), mono)->value);
}

}  // namespace dod
