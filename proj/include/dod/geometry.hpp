#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstddef>
#include <vector>

#include "dod/core.hpp"

namespace dod {

/// Sub-pixel image coordinate: u is the column, v the row. Pixel centers
/// sit at integer coordinates, origin at the top-left pixel center.
template <typename Scalar>
struct PixelCoord {
  Scalar u = 0;
  Scalar v = 0;
};

/// Pinhole intrinsics K.
template <typename Scalar>
struct CameraIntrinsics {
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

  Scalar fx = 1;
  Scalar fy = 1;
  Scalar cx = 0;
  Scalar cy = 0;
  int width = 1;
  int height = 1;

  bool isValid() const {
    return fx > 0 && fy > 0 && cx >= 0 && cx < width && cy >= 0 && cy < height;
  }

  Matrix3 matrix() const {
    Matrix3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  /// Intrinsics of pyramid level `scale`: the four parameters are divided by
  /// `scale`, the image size is rounded up.
  CameraIntrinsics scaled(int scale) const {
    const Scalar s = static_cast<Scalar>(scale);
    return {fx / s, fy / s, cx / s, cy / s, (width + scale - 1) / scale, (height + scale - 1) / scale};
  }
};

/// Rigid transform x' = R x + t.
template <typename Scalar>
class RigidPose {
 public:
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  using Matrix4 = Eigen::Matrix<Scalar, 4, 4>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

  RigidPose() : rotation_(Matrix3::Identity()), translation_(Vector3::Zero()) {}
  RigidPose(const Matrix3& r, const Vector3& t) : rotation_(r), translation_(t) {}

  static RigidPose identity() { return {}; }
  static RigidPose translation(const Vector3& t) { return {Matrix3::Identity(), t}; }
  static RigidPose fromMatrix(const Matrix4& m) {
    return {m.template topLeftCorner<3, 3>(), m.template topRightCorner<3, 1>()};
  }

  const Matrix3& rotation() const { return rotation_; }
  const Vector3& translation() const { return translation_; }

  Vector3 operator*(const Vector3& p) const { return rotation_ * p + translation_; }
  RigidPose operator*(const RigidPose& o) const {
    return {rotation_ * o.rotation_, rotation_ * o.translation_ + translation_};
  }
  RigidPose inverse() const {
    const Matrix3 rt = rotation_.transpose();
    return {rt, -(rt * translation_)};
  }

  Matrix4 matrix() const {
    Matrix4 m = Matrix4::Identity();
    m.template topLeftCorner<3, 3>() = rotation_;
    m.template topRightCorner<3, 1>() = translation_;
    return m;
  }

  bool isValid(Scalar tol = Scalar(1e-9)) const {
    const Matrix3 rtr = rotation_.transpose() * rotation_;
    return (rtr - Matrix3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation_.determinant() - Scalar(1)) <= tol && translation_.allFinite();
  }

 private:
  Matrix3 rotation_;
  Vector3 translation_;
};

template <typename Scalar>
struct Projection {
  PixelCoord<Scalar> pixel;
  Scalar depth;  // z in the destination camera frame
};

/// K^-1 q scaled by depth: the camera-frame point seen at pixel q.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> backproject(const PixelCoord<Scalar>& q, Scalar depth, const CameraIntrinsics<Scalar>& k) {
  return {(q.u - k.cx) / k.fx * depth, (q.v - k.cy) / k.fy * depth, depth};
}

/// Perspective projection of a camera-frame point.
template <typename Scalar>
Projection<Scalar> projectCameraPoint(const Eigen::Matrix<Scalar, 3, 1>& p, const CameraIntrinsics<Scalar>& k) {
  if (!(p.z() > Scalar(1e-9))) throw NonPositiveSourceDepth("point lies behind the destination camera");
  return {{k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy}, p.z()};
}

/// q_s ~ K_s P (depth K_t^-1 q_t). `target_to_source` maps target-camera
/// coordinates to source-camera coordinates.
template <typename Scalar>
Projection<Scalar> projectPoint(const PixelCoord<Scalar>& qt, Scalar depth, const CameraIntrinsics<Scalar>& kt,
                                const RigidPose<Scalar>& target_to_source, const CameraIntrinsics<Scalar>& ks) {
  return projectCameraPoint<Scalar>(target_to_source * backproject(qt, depth, kt), ks);
}

template <typename Scalar>
Projection<Scalar> projectPoint(const PixelCoord<Scalar>& qt, Scalar depth, const CameraIntrinsics<Scalar>& k,
                                const RigidPose<Scalar>& target_to_source) {
  return projectPoint(qt, depth, k, target_to_source, k);
}

/// Intrinsic XYZ Euler angles: R = Rx(a) * Ry(b) * Rz(c).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> rotationFromEuler(const Eigen::Matrix<Scalar, 3, 1>& abc) {
  using Axis = Eigen::AngleAxis<Scalar>;
  using V = Eigen::Matrix<Scalar, 3, 1>;
  return (Axis(abc.x(), V::UnitX()) * Axis(abc.y(), V::UnitY()) * Axis(abc.z(), V::UnitZ())).toRotationMatrix();
}

template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> eulerFromRotation(const Eigen::Matrix<Scalar, 3, 3>& r) {
  using std::asin, std::atan2, std::clamp;
  const Scalar b = asin(clamp(r(0, 2), Scalar(-1), Scalar(1)));
  return {atan2(-r(1, 2), r(2, 2)), b, atan2(-r(0, 1), r(0, 0))};
}

/// 6-DoF vector (tx, ty, tz, a, b, c) of a pose.
using PoseVector = Eigen::Matrix<double, 6, 1>;

template <typename Scalar>
Eigen::Matrix<Scalar, 6, 1> poseToVector(const RigidPose<Scalar>& p) {
  Eigen::Matrix<Scalar, 6, 1> q;
  q << p.translation(), eulerFromRotation<Scalar>(p.rotation());
  return q;
}

template <typename Scalar>
RigidPose<Scalar> poseFromVector(const Eigen::Matrix<Scalar, 6, 1>& q) {
  return {rotationFromEuler<Scalar>(q.template tail<3>()), q.template head<3>()};
}

// Double-precision aliases used throughout the pipeline.
using Intrinsics = CameraIntrinsics<double>;
using Pose = RigidPose<double>;
using Pixel = PixelCoord<double>;

struct SparseSample {
  Pixel pixel;
  double depth = 0;
};

/// Sparse depth measurements with sub-pixel image coordinates.
struct SparseDepthMap {
  int width = 0;
  int height = 0;
  std::vector<SparseSample> samples;

  /// Rasterize at pyramid level `scale`: each sample goes to the nearest
  /// cell center (u / scale rounded, clamped to the grid) and collisions keep
  /// the minimum depth.
  DepthMap rasterize(int scale = 1) const;
};

struct ReprojectionResult {
  SparseDepthMap map;
  std::size_t dropped = 0;
};

/// Moves sparse samples from the source view into the target view, keeping
/// sub-pixel coordinates. Samples out of bounds or behind the target camera
/// are dropped. `source_to_target` maps source-camera to target-camera
/// coordinates.
ReprojectionResult reprojectSparseDepth(const SparseDepthMap& src, const Pose& source_to_target, const Intrinsics& k);
ReprojectionResult reprojectSparseDepth(const SparseDepthMap& src, const Pose& source_to_target,
                                        const Intrinsics& k_source, const Intrinsics& k_target);

/// Continuous coordinate inside the pixel-area image domain [-0.5, size - 0.5).
inline bool insideImage(const Pixel& q, int width, int height) {
  return q.u >= -0.5 && q.u < width - 0.5 && q.v >= -0.5 && q.v < height - 0.5;
}

}  // namespace dod
