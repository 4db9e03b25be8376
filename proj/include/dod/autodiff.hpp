#pragma once

#include <Eigen/Core>

#include <functional>
#include <memory>
#include <vector>

#include "dod/core.hpp"

/// Minimal tape-free reverse-mode differentiation over Tensor values.
///
/// Every op returns a Var (shared node). Nodes that depend on a trainable
/// leaf keep their inputs and a backward closure; everything else is a plain
/// value, so inference through the same code path does not retain a graph.
namespace dod::ad {

struct Node;
using Var = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Tensor value;
  Eigen::MatrixXd grad;  // empty until something flows in
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;

  void accumulate(const Eigen::MatrixXd& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  bool hasGrad() const { return grad.size() != 0; }
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Creates an op node. `backward` is dropped when no input requires grad.
Var makeNode(Tensor value, std::vector<Var> inputs, BackwardFn backward);

/// Runs reverse accumulation from a scalar root (seed 1).
void backward(const Var& root);
void zeroGrad(const std::vector<Var>& params);

double scalarValue(const Var& v);

// Elementwise and structural ops. Shapes must match where elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var oneMinus(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var clampMin(const Var& a, double lo);
Var concat(const std::vector<Var>& parts);
Var sliceChannels(const Var& x, int begin, int count);
Var upsampleNearest2(const Var& x);

/// Same-padded 2D convolution. `weight` is (cout, 1, cin*kh*kw) with rows
/// laid out as (c, ky, kx); `bias` is (cout, 1, 1). Output size is
/// ceil(H / stride) x ceil(W / stride).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int kh, int kw, int stride);

/// Mean of |pred - gt| over pixels where gt > 0. Throws EmptyValidSet.
Var maskedL1Mean(const Var& pred, const DepthMap& gt);

/// Sum of the elementwise product with a constant tensor of the same shape.
Var dot(const Var& a, const Tensor& w);

/// Sum_i w_i * s_i over scalar Vars.
Var weightedSum(const std::vector<Var>& scalars, const std::vector<double>& weights);

// Plain (non-differentiable) convolution helpers shared with tests.
Eigen::MatrixXd im2col(const Tensor& x, int kh, int kw, int stride, int out_h, int out_w);
void col2imAccumulate(const Eigen::MatrixXd& cols, int channels, int height, int width, int kh, int kw, int stride,
                      int out_h, int out_w, Eigen::MatrixXd& dx);

}  // namespace dod::ad
