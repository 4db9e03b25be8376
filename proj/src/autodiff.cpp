#include "dod/autodiff.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace dod::ad {

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var makeNode(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return n;
}

void backward(const Var& root) {
  if (root->value.data.size() != 1) throw DimensionMismatch("backward() needs a scalar root");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Eigen::MatrixXd::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->hasGrad()) n->backward(*n);
  }
  // Free intermediate gradients; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

void zeroGrad(const std::vector<Var>& params) {
  for (const auto& p : params) p->grad.resize(0, 0);
}

double scalarValue(const Var& v) { return v->value.data(0, 0); }

namespace {

void checkSame(const Var& a, const Var& b, const char* op) {
  if (!a->value.sameShape(b->value)) throw DimensionMismatch(std::string(op) + ": shape mismatch");
}

Tensor like(const Tensor& t, Eigen::MatrixXd data) {
  Tensor out;
  out.channels = t.channels;
  out.height = t.height;
  out.width = t.width;
  out.data = std::move(data);
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  checkSame(a, b, "add");
  return makeNode(like(a->value, a->value.data + b->value.data), {a, b}, [](Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) in->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  checkSame(a, b, "sub");
  return makeNode(like(a->value, a->value.data - b->value.data), {a, b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  checkSame(a, b, "mul");
  return makeNode(like(a->value, a->value.data.cwiseProduct(b->value.data)), {a, b}, [](Node& self) {
    const auto& x = self.inputs[0];
    const auto& y = self.inputs[1];
    if (x->requires_grad) x->accumulate(self.grad.cwiseProduct(y->value.data));
    if (y->requires_grad) y->accumulate(self.grad.cwiseProduct(x->value.data));
  });
}

Var scale(const Var& a, double s) {
  return makeNode(like(a->value, a->value.data * s), {a}, [s](Node& self) { self.inputs[0]->accumulate(self.grad * s); });
}

Var oneMinus(const Var& a) {
  return makeNode(like(a->value, (1.0 - a->value.data.array()).matrix()), {a},
                  [](Node& self) { self.inputs[0]->accumulate(-self.grad); });
}

Var relu(const Var& a) {
  return makeNode(like(a->value, a->value.data.cwiseMax(0.0)), {a}, [](Node& self) {
    const auto& x = self.inputs[0]->value.data;
    self.inputs[0]->accumulate((x.array() > 0.0).select(self.grad, 0.0));
  });
}

Var tanh(const Var& a) {
  Tensor out = like(a->value, a->value.data.array().tanh().matrix());
  return makeNode(std::move(out), {a}, [](Node& self) {
    const auto y = self.value.data.array();
    self.inputs[0]->accumulate((self.grad.array() * (1.0 - y * y)).matrix());
  });
}

Var sigmoid(const Var& a) {
  Tensor out = like(a->value, (1.0 / (1.0 + (-a->value.data.array()).exp())).matrix());
  return makeNode(std::move(out), {a}, [](Node& self) {
    const auto y = self.value.data.array();
    self.inputs[0]->accumulate((self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Var clampMin(const Var& a, double lo) {
  return makeNode(like(a->value, a->value.data.cwiseMax(lo)), {a}, [lo](Node& self) {
    const auto& x = self.inputs[0]->value.data;
    self.inputs[0]->accumulate((x.array() > lo).select(self.grad, 0.0));
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionMismatch("concat of nothing");
  const auto& first = parts.front()->value;
  int channels = 0;
  for (const auto& p : parts) {
    if (p->value.height != first.height || p->value.width != first.width)
      throw DimensionMismatch("concat: spatial size mismatch");
    channels += p->value.channels;
  }
  Tensor out(channels, first.height, first.width);
  int row = 0;
  for (const auto& p : parts) {
    out.data.middleRows(row, p->value.channels) = p->value.data;
    row += p->value.channels;
  }
  return makeNode(std::move(out), parts, [](Node& self) {
    int r = 0;
    for (auto& in : self.inputs) {
      const int c = in->value.channels;
      if (in->requires_grad) in->accumulate(self.grad.middleRows(r, c));
      r += c;
    }
  });
}

Var sliceChannels(const Var& x, int begin, int count) {
  const auto& v = x->value;
  if (begin < 0 || begin + count > v.channels) throw DimensionMismatch("sliceChannels out of range");
  Tensor out(count, v.height, v.width);
  out.data = v.data.middleRows(begin, count);
  return makeNode(std::move(out), {x}, [begin, count](Node& self) {
    auto& in = self.inputs[0];
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(in->value.channels, in->value.pixels());
    g.middleRows(begin, count) = self.grad;
    in->accumulate(g);
  });
}

Var upsampleNearest2(const Var& x) {
  const auto& v = x->value;
  Tensor out(v.channels, v.height * 2, v.width * 2);
  for (int y = 0; y < out.height; ++y)
    for (int xx = 0; xx < out.width; ++xx) out.data.col(out.index(xx, y)) = v.data.col(v.index(xx / 2, y / 2));
  return makeNode(std::move(out), {x}, [](Node& self) {
    auto& in = self.inputs[0];
    const int w = self.value.width;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(in->value.channels, in->value.pixels());
    for (int y = 0; y < self.value.height; ++y)
      for (int xx = 0; xx < w; ++xx) g.col(in->value.index(xx / 2, y / 2)) += self.grad.col(y * w + xx);
    in->accumulate(g);
  });
}

Eigen::MatrixXd im2col(const Tensor& x, int kh, int kw, int stride, int out_h, int out_w) {
  const int ph = kh / 2;
  const int pw = kw / 2;
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(x.channels * kh * kw, out_h * out_w);
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (c * kh + ky) * kw + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - ph;
          if (iy < 0 || iy >= x.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pw;
            if (ix < 0 || ix >= x.width) continue;
            cols(row, oy * out_w + ox) = x.data(c, iy * x.width + ix);
          }
        }
      }
    }
  }
  return cols;
}

void col2imAccumulate(const Eigen::MatrixXd& cols, int channels, int height, int width, int kh, int kw, int stride,
                      int out_h, int out_w, Eigen::MatrixXd& dx) {
  const int ph = kh / 2;
  const int pw = kw / 2;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int row = (c * kh + ky) * kw + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - ph;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pw;
            if (ix < 0 || ix >= width) continue;
            dx(c, iy * width + ix) += cols(row, oy * out_w + ox);
          }
        }
      }
    }
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int kh, int kw, int stride) {
  const auto& in = x->value;
  const auto& w = weight->value;
  if (w.width != in.channels * kh * kw) throw DimensionMismatch("conv2d: weight does not match input channels");
  const int out_h = (in.height + stride - 1) / stride;
  const int out_w = (in.width + stride - 1) / stride;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1;

  Tensor out(w.channels, out_h, out_w);
  if (pointwise) {
    out.data.noalias() = w.data * in.data;
  } else {
    out.data.noalias() = w.data * im2col(in, kh, kw, stride, out_h, out_w);
  }
  out.data.colwise() += bias->value.data.col(0);

  return makeNode(std::move(out), {x, weight, bias}, [kh, kw, stride, pointwise](Node& self) {
    auto& xin = self.inputs[0];
    auto& wt = self.inputs[1];
    auto& b = self.inputs[2];
    const auto& xv = xin->value;
    const int oh = self.value.height;
    const int ow = self.value.width;
    Eigen::MatrixXd cols = pointwise ? xv.data : im2col(xv, kh, kw, stride, oh, ow);
    if (wt->requires_grad) wt->accumulate(self.grad * cols.transpose());
    if (b->requires_grad) b->accumulate(self.grad.rowwise().sum());
    if (xin->requires_grad) {
      Eigen::MatrixXd dcols = wt->value.data.transpose() * self.grad;
      if (pointwise) {
        xin->accumulate(dcols);
      } else {
        Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(xv.channels, xv.pixels());
        col2imAccumulate(dcols, xv.channels, xv.height, xv.width, kh, kw, stride, oh, ow, dx);
        xin->accumulate(dx);
      }
    }
  });
}

Var maskedL1Mean(const Var& pred, const DepthMap& gt) {
  const auto& p = pred->value;
  if (p.channels != 1 || p.width != gt.width || p.height != gt.height)
    throw DimensionMismatch("maskedL1Mean: prediction and ground truth differ in shape");
  const auto mask = gt.validMask();
  const double n = static_cast<double>(mask.count());
  if (n == 0) throw EmptyValidSet("ground truth has no valid pixels");
  const Eigen::ArrayXd diff = p.data.row(0).transpose().array() - gt.values;
  const double loss = mask.select(diff.abs(), 0.0).sum() / n;
  Tensor out(1, 1, 1, loss);
  return makeNode(std::move(out), {pred}, [mask, diff, n](Node& self) {
    const double g = self.grad(0, 0) / n;
    Eigen::ArrayXd sign = mask.select(diff.sign(), 0.0);
    self.inputs[0]->accumulate((g * sign).matrix().transpose());
  });
}

Var dot(const Var& a, const Tensor& w) {
  if (!a->value.sameShape(w)) throw DimensionMismatch("dot: shapes differ");
  Tensor out(1, 1, 1, a->value.data.cwiseProduct(w.data).sum());
  return makeNode(std::move(out), {a}, [w = w.data](Node& self) { self.inputs[0]->accumulate(self.grad(0, 0) * w); });
}

Var weightedSum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size()) throw DimensionMismatch("weightedSum: sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) total += weights[i] * scalarValue(scalars[i]);
  return makeNode(Tensor(1, 1, 1, total), scalars, [weights](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (self.inputs[i]->requires_grad) self.inputs[i]->accumulate(self.grad * weights[i]);
  });
}

}  // namespace dod::ad
