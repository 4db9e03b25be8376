#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace dod {

// Error hierarchy. Format errors map to CLI exit code 2, numeric errors to 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};
class MissingPose : public FormatError {
 public:
  using FormatError::FormatError;
};
class MissingIntrinsics : public FormatError {
 public:
  using FormatError::FormatError;
};

class NumericError : public Error {
 public:
  using Error::Error;
};
class NonPositiveSourceDepth : public NumericError {
 public:
  using NumericError::NumericError;
};
class NonFiniteGradient : public NumericError {
 public:
  using NumericError::NumericError;
};
class DivergedLoss : public NumericError {
 public:
  using NumericError::NumericError;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};
class InvalidTau : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class BadDimensions : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class OutOfBounds : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class EmptyValidSet : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class EmptyPointSet : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};
class EmptySurface : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Smallest depth any hypothesis or iterate may take (meters).
inline constexpr double kMinDepth = 0.05;

/// Channel-major dense tensor. Column `y * width + x` holds the feature
/// vector of pixel (x, y), so a per-pixel feature is one contiguous column.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  Eigen::MatrixXd data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(Eigen::MatrixXd::Constant(c, h * w, fill)) {}

  int pixels() const { return height * width; }
  int index(int x, int y) const { return y * width + x; }
  double& operator()(int c, int x, int y) { return data(c, y * width + x); }
  double operator()(int c, int x, int y) const { return data(c, y * width + x); }
  bool sameShape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

/// A grid of per-pixel feature vectors (F^t, F^s, monocular levels, hidden state).
using FeatureGrid = Tensor;

/// RGB image with channels in [0, 1].
using ColorImage = Tensor;

/// Per-pixel depth in meters. Invalid pixels carry the sentinel 0.
struct DepthMap {
  int width = 0;
  int height = 0;
  Eigen::ArrayXd values;  // row-major pixel order, index y * width + x

  DepthMap() = default;
  DepthMap(int w, int h, double fill = 0.0) : width(w), height(h), values(Eigen::ArrayXd::Constant(w * h, fill)) {}

  double& operator()(int x, int y) { return values(y * width + x); }
  double operator()(int x, int y) const { return values(y * width + x); }
  bool valid(int x, int y) const { return values(y * width + x) > 0.0; }
  Eigen::Array<bool, Eigen::Dynamic, 1> validMask() const { return values > 0.0; }
  Eigen::Index validCount() const { return (values > 0.0).count(); }
  bool sameShape(const DepthMap& o) const { return width == o.width && height == o.height; }

  Tensor toTensor() const {
    Tensor t(1, height, width);
    t.data.row(0) = values.matrix().transpose();
    return t;
  }
  static DepthMap fromTensor(const Tensor& t) {
    if (t.channels != 1) throw DimensionMismatch("depth tensor must have one channel");
    DepthMap d(t.width, t.height);
    d.values = t.data.row(0).transpose().array();
    return d;
  }
};

}  // namespace dod
