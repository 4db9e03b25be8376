#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dod/autodiff.hpp"

namespace dod::nn {

struct NamedParameter {
  std::string name;
  ad::Var var;
};
using ParameterList = std::vector<NamedParameter>;

/// Same-padded convolution with bias.
struct Conv2d {
  int in = 0;
  int out = 0;
  int kh = 1;
  int kw = 1;
  int stride = 1;
  ad::Var weight;
  ad::Var bias;

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel_h, int kernel_w, int stride_);
  Conv2d(int in_channels, int out_channels, int kernel) : Conv2d(in_channels, out_channels, kernel, kernel, 1) {}

  ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, weight, bias, kh, kw, stride); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Convolutional GRU cell:
///   z = sigmoid(Wz [h, x]), r = sigmoid(Wr [h, x]),
///   q = tanh(Wq [r * h, x]), h' = (1 - z) * h + z * q.
struct ConvGRU {
  Conv2d convz;
  Conv2d convr;
  Conv2d convq;
  int hidden = 0;

  ConvGRU() = default;
  ConvGRU(int hidden_channels, int input_channels, int kernel_h, int kernel_w);

  ad::Var operator()(const ad::Var& h, const ad::Var& x) const;
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// He-uniform weights scaled by `gain`, zero biases. Deterministic per seed
/// and parameter order.
void initialize(const ParameterList& params, std::uint64_t seed, double gain = 1.0);
void zeroAll(const ParameterList& params);
std::size_t parameterCount(const ParameterList& params);

}  // namespace dod::nn
