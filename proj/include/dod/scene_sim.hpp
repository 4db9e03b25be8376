#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dod/core.hpp"
#include "dod/geometry.hpp"
#include "dod/sequence.hpp"

namespace dod {

/// World-anchored multi-octave value noise modulating an albedo.
struct TextureSpec {
  std::uint64_t seed = 1;
  Eigen::Vector3d albedo{0.8, 0.8, 0.8};
  double frequency = 4.0;  // lattice cells per meter at the base octave
  int octaves = 3;
};

struct Plane {
  Eigen::Vector3d point{0, 0, 0};
  Eigen::Vector3d normal{0, 0, -1};
  int texture = 0;
};

struct Sphere {
  Eigen::Vector3d center{0, 0, 5};
  double radius = 1.0;
  int texture = 0;
};

using Primitive = std::variant<Plane, Sphere>;

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::vector<TextureSpec> textures;

  /// Throws InvalidArgument on non-unit normals, radius <= 0 or dangling texture ids.
  void validate() const;
};

struct TrajectoryFrame {
  double timestamp = 0;
  Pose camera_to_world;
};

struct Trajectory {
  std::vector<TrajectoryFrame> frames;
  void validate() const;
};

struct NoiseConfig {
  double lambda = 0;
  std::uint64_t seed = 0;
};

struct RayHit {
  double depth;  // camera z of the hit
  Eigen::Vector3d point;
  int primitive;
};

/// Nearest positive intersection of the viewing ray through `q`.
std::optional<RayHit> castRay(const SceneSpec& scene, const Pose& camera_to_world, const Intrinsics& k, const Pixel& q);

Eigen::Vector3d textureColor(const TextureSpec& tex, const Eigen::Vector3d& world_point);

DepthMap renderDepth(const SceneSpec& scene, const Pose& camera_to_world, const Intrinsics& k);
ColorImage renderColor(const SceneSpec& scene, const Pose& camera_to_world, const Intrinsics& k);

/// Uniform sample without replacement among valid pixels, placed at pixel
/// centers. Returns every valid pixel when n exceeds the valid count.
SparseDepthMap sampleSparse(const DepthMap& depth, std::size_t n, std::uint64_t seed);

/// q_hat ~ N(q, lambda^2 diag(q)^2) over (t, Euler XYZ), rebuilt into a pose.
Pose perturbPose(const PoseVector& q, double lambda, std::uint64_t seed);
Pose perturbPose(const Pose& pose, double lambda, std::uint64_t seed);

/// Renders every frame; every round(1/tau)-th frame, starting at 0, also
/// receives dense sensor depth and `n_points` sparse samples.
Sequence generateSequence(const SceneSpec& scene, const Trajectory& traj, const Intrinsics& k, double tau,
                          std::size_t n_points, std::uint64_t seed);

/// One entry of the committed synthetic evaluation suite.
struct SuiteCase {
  std::string name;
  SceneSpec scene;
  Trajectory trajectory;
  Intrinsics intrinsics;
  std::uint64_t seed;
};

/// The eight-scene suite (64x64 to 256x256, fixed seeds) used by the
/// experiment harness and the acceptance tests.
std::vector<SuiteCase> syntheticSuite();

/// A single suite case by index, built with an arbitrary frame count.
SuiteCase makeSuiteCase(int index, int frames);

}  // namespace dod
