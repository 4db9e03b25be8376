#include "dod/nn.hpp"

#include <cmath>
#include <random>

namespace dod::nn {

Conv2d::Conv2d(int in_channels, int out_channels, int kernel_h, int kernel_w, int stride_)
    : in(in_channels), out(out_channels), kh(kernel_h), kw(kernel_w), stride(stride_) {
  weight = ad::parameter(Tensor(out, 1, in * kh * kw));
  bias = ad::parameter(Tensor(out, 1, 1));
}

void Conv2d::collect(ParameterList& list, const std::string& prefix) const {
  list.push_back({prefix + ".weight", weight});
  list.push_back({prefix + ".bias", bias});
}

ConvGRU::ConvGRU(int hidden_channels, int input_channels, int kernel_h, int kernel_w)
    : convz(hidden_channels + input_channels, hidden_channels, kernel_h, kernel_w, 1),
      convr(hidden_channels + input_channels, hidden_channels, kernel_h, kernel_w, 1),
      convq(hidden_channels + input_channels, hidden_channels, kernel_h, kernel_w, 1),
      hidden(hidden_channels) {}

ad::Var ConvGRU::operator()(const ad::Var& h, const ad::Var& x) const {
  const ad::Var hx = ad::concat({h, x});
  const ad::Var z = ad::sigmoid(convz(hx));
  const ad::Var r = ad::sigmoid(convr(hx));
  const ad::Var q = ad::tanh(convq(ad::concat({ad::mul(r, h), x})));
  return ad::add(ad::mul(ad::oneMinus(z), h), ad::mul(z, q));
}

void ConvGRU::collect(ParameterList& list, const std::string& prefix) const {
  convz.collect(list, prefix + ".convz");
  convr.collect(list, prefix + ".convr");
  convq.collect(list, prefix + ".convq");
}

void initialize(const ParameterList& params, std::uint64_t seed, double gain) {
  std::mt19937_64 rng(seed);
  for (const auto& p : params) {
    auto& t = p.var->value;
    if (p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0) {
      t.data.setZero();
      continue;
    }
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(t.width));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = dist(rng);
  }
}

void zeroAll(const ParameterList& params) {
  for (const auto& p : params) p.var->value.data.setZero();
}

std::size_t parameterCount(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.var->value.data.size());
  return n;
}

}  // namespace dod::nn
