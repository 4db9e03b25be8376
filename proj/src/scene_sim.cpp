#include "dod/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace dod {

// ---------------------------------------------------------------------------
// Sequence helpers

int tauPeriod(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidTau(fmt::format("tau must lie in (0, 1], got {}", tau));
  const double inv = 1.0 / tau;
  const long m = std::lround(inv);
  if (std::abs(inv - static_cast<double>(m)) > 1e-6 * inv)
    throw InvalidTau(fmt::format("tau must be 1/m for an integer m, got {}", tau));
  return static_cast<int>(m);
}

int sourceIndex(const Sequence& seq, int target, int period) {
  for (int i = target; i >= 0; --i) {
    if (i % period == 0 && seq.frames[i].hasDepth()) return i;
  }
  return -1;
}

std::uint64_t frameSeed(std::uint64_t seed, int index, std::uint64_t stream) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(index) + 1) +
                    0xBF58476D1CE4E5B9ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Scene description

void SceneSpec::validate() const {
  const auto check_tex = [&](int id) {
    if (id < 0 || id >= static_cast<int>(textures.size())) throw InvalidArgument("primitive references missing texture");
  };
  for (const auto& p : primitives) {
    if (const auto* plane = std::get_if<Plane>(&p)) {
      if (std::abs(plane->normal.norm() - 1.0) > 1e-9) throw InvalidArgument("plane normal must be unit length");
      check_tex(plane->texture);
    } else {
      const auto& sphere = std::get<Sphere>(p);
      if (!(sphere.radius > 0)) throw InvalidArgument("sphere radius must be positive");
      check_tex(sphere.texture);
    }
  }
}

void Trajectory::validate() const {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].camera_to_world.isValid()) throw InvalidArgument(fmt::format("trajectory pose {} is not rigid", i));
    if (i > 0 && !(frames[i].timestamp > frames[i - 1].timestamp))
      throw InvalidArgument("trajectory timestamps must be strictly increasing");
  }
}

// ---------------------------------------------------------------------------
// Ray casting

namespace {

constexpr double kHitEpsilon = 1e-9;

std::optional<double> intersect(const Plane& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const double denom = p.normal.dot(d);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double s = p.normal.dot(p.point - o) / denom;
  if (s > kHitEpsilon) return s;
  return std::nullopt;
}

std::optional<double> intersect(const Sphere& sp, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  const Eigen::Vector3d oc = o - sp.center;
  const double a = d.squaredNorm();
  const double half_b = d.dot(oc);
  const double c = oc.squaredNorm() - sp.radius * sp.radius;
  const double disc = half_b * half_b - a * c;
  if (disc < 0) return std::nullopt;
  const double root = std::sqrt(disc);
  const double near = (-half_b - root) / a;
  if (near > kHitEpsilon) return near;
  const double far = (-half_b + root) / a;
  if (far > kHitEpsilon) return far;
  return std::nullopt;
}

int textureOf(const Primitive& p) {
  return std::visit([](const auto& prim) { return prim.texture; }, p);
}

double lattice(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
  std::uint64_t h = seed;
  h ^= static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull;
  h = (h ^ (h >> 29)) * 0xBF58476D1CE4E5B9ull;
  h ^= static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full;
  h = (h ^ (h >> 32)) * 0x94D049BB133111EBull;
  h ^= static_cast<std::uint64_t>(z) * 0x165667B19E3779F9ull;
  h = (h ^ (h >> 31)) * 0xD6E8FEB86659FD93ull;
  h ^= h >> 32;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double fade(double t) { return t * t * (3.0 - 2.0 * t); }

double valueNoise(const Eigen::Vector3d& p, std::uint64_t seed) {
  const Eigen::Vector3d f = p.array().floor();
  const auto ix = static_cast<std::int64_t>(f.x());
  const auto iy = static_cast<std::int64_t>(f.y());
  const auto iz = static_cast<std::int64_t>(f.z());
  const double tx = fade(p.x() - f.x());
  const double ty = fade(p.y() - f.y());
  const double tz = fade(p.z() - f.z());
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
    acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
  }
  return acc;
}

double fbm(const Eigen::Vector3d& p, std::uint64_t seed, int octaves) {
  double sum = 0.0, norm = 0.0, amp = 1.0, freq = 1.0;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * valueNoise(p * freq, seed + 1013 * static_cast<std::uint64_t>(o));
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / norm;
}

Eigen::Vector3d rayDirection(const Pose& camera_to_world, const Intrinsics& k, const Pixel& q) {
  return camera_to_world.rotation() * Eigen::Vector3d((q.u - k.cx) / k.fx, (q.v - k.cy) / k.fy, 1.0);
}

}  // namespace

std::optional<RayHit> castRay(const SceneSpec& scene, const Pose& camera_to_world, const Intrinsics& k, const Pixel& q) {
  const Eigen::Vector3d o = camera_to_world.translation();
  const Eigen::Vector3d d = rayDirection(camera_to_world, k, q);
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const auto s = std::visit([&](const auto& prim) { return intersect(prim, o, d); }, scene.primitives[i]);
    // The camera-frame direction has unit z, so the ray parameter is the z-depth.
    if (s && (!best || *s < best->depth)) best = RayHit{*s, o + *s * d, static_cast<int>(i)};
  }
  return best;
}

Eigen::Vector3d textureColor(const TextureSpec& tex, const Eigen::Vector3d& world_point) {
  const Eigen::Vector3d p = world_point * tex.frequency;
  Eigen::Vector3d c;
  for (int ch = 0; ch < 3; ++ch) {
    c[ch] = tex.albedo[ch] * (0.15 + 0.85 * fbm(p, tex.seed * 31 + static_cast<std::uint64_t>(ch), tex.octaves));
  }
  return c;
}

DepthMap renderDepth(const SceneSpec& scene, const Pose& camera_to_world, const Intrinsics& k) {
  DepthMap out(k.width, k.height);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x)
      if (auto hit = castRay(scene, camera_to_world, k, {double(x), double(y)})) out(x, y) = hit->depth;
  return out;
}

ColorImage renderColor(const SceneSpec& scene, const Pose& camera_to_world, const Intrinsics& k) {
  ColorImage out(3, k.height, k.width);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (auto hit = castRay(scene, camera_to_world, k, {double(x), double(y)})) {
        const auto& tex = scene.textures[textureOf(scene.primitives[hit->primitive])];
        out.data.col(out.index(x, y)) = textureColor(tex, hit->point);
      }
    }
  }
  return out;
}

SparseDepthMap sampleSparse(const DepthMap& depth, std::size_t n, std::uint64_t seed) {
  std::vector<int> valid;
  valid.reserve(depth.values.size());
  for (int i = 0; i < depth.values.size(); ++i)
    if (depth.values[i] > 0) valid.push_back(i);

  const std::size_t take = std::min(n, valid.size());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, valid.size() - 1);
    std::swap(valid[i], valid[pick(rng)]);
  }

  SparseDepthMap out;
  out.width = depth.width;
  out.height = depth.height;
  out.samples.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const int idx = valid[i];
    out.samples.push_back({{double(idx % depth.width), double(idx / depth.width)}, depth.values[idx]});
  }
  return out;
}

Pose perturbPose(const PoseVector& q, double lambda, std::uint64_t seed) {
  if (lambda < 0) throw InvalidArgument("pose noise factor must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PoseVector noisy = q;
  for (int i = 0; i < 6; ++i) noisy[i] = q[i] + lambda * std::abs(q[i]) * gauss(rng);
  return poseFromVector<double>(noisy);
}

Pose perturbPose(const Pose& pose, double lambda, std::uint64_t seed) {
  if (lambda == 0) return pose;
  return perturbPose(poseToVector(pose), lambda, seed);
}

Sequence generateSequence(const SceneSpec& scene, const Trajectory& traj, const Intrinsics& k, double tau,
                          std::size_t n_points, std::uint64_t seed) {
  const int period = tauPeriod(tau);
  scene.validate();
  traj.validate();
  Sequence seq;
  seq.intrinsics = k;
  seq.frames.reserve(traj.frames.size());
  for (std::size_t i = 0; i < traj.frames.size(); ++i) {
    Frame f;
    f.timestamp = traj.frames[i].timestamp;
    f.camera_to_world = traj.frames[i].camera_to_world;
    f.color = renderColor(scene, f.camera_to_world, k);
    f.ground_truth = renderDepth(scene, f.camera_to_world, k);
    if (i % period == 0) {
      f.depth = f.ground_truth;
      f.sparse = sampleSparse(*f.depth, n_points, frameSeed(seed, static_cast<int>(i)));
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Committed synthetic suite

namespace {

struct CaseLayout {
  int size;
  double focal_scale;  // focal length in units of image width
  double back_wall;    // meters
  double lateral_step;  // meters per frame
  double forward_step;
  double yaw_rate;  // radians per frame
};

// Steps are per kept frame of a video subsampled tenfold.
constexpr CaseLayout kLayouts[8] = {
    {64, 1.0, 4.0, 0.16, 0.04, 0.060},   {64, 1.1, 4.5, -0.14, 0.06, -0.045},
    {96, 1.0, 4.2, 0.16, 0.00, 0.045},   {96, 1.2, 5.0, -0.16, 0.08, 0.000},
    {128, 1.0, 4.0, 0.12, 0.06, -0.060}, {128, 1.1, 4.6, 0.14, -0.04, 0.045},
    {192, 1.0, 4.4, -0.14, 0.04, 0.030}, {256, 1.0, 4.0, 0.12, 0.04, -0.030},
};

}  // namespace

SuiteCase makeSuiteCase(int index, int frames) {
  const CaseLayout& L = kLayouts[index % 8];
  const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(index);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SuiteCase c;
  c.name = fmt::format("scene{:02d}_{}px", index, L.size);
  c.seed = seed;
  const double f = L.focal_scale * L.size;
  c.intrinsics = {f, f, (L.size - 1) / 2.0, (L.size - 1) / 2.0, L.size, L.size};

  auto& tex = c.scene.textures;
  for (int t = 0; t < 6; ++t) {
    TextureSpec ts;
    ts.seed = seed * 17 + static_cast<std::uint64_t>(t);
    ts.albedo = Eigen::Vector3d(0.5 + 0.5 * unit(rng), 0.5 + 0.5 * unit(rng), 0.5 + 0.5 * unit(rng));
    ts.frequency = 3.0 + 3.0 * unit(rng);
    ts.octaves = 3;
    tex.push_back(ts);
  }

  // World origin is offset from the first camera so absolute pose components
  // are non-zero (the pose-noise model scales with them).
  const Eigen::Vector3d origin(0.4, -0.3, 0.6);
  auto& prims = c.scene.primitives;
  prims.push_back(Plane{origin + Eigen::Vector3d(0, 0, L.back_wall), Eigen::Vector3d(0, 0, -1), 0});
  prims.push_back(Plane{origin + Eigen::Vector3d(0, 1.1, 0), Eigen::Vector3d(0, -1, 0), 1});
  prims.push_back(Plane{origin + Eigen::Vector3d(-2.2, 0, 0), Eigen::Vector3d(1, 0, 0), 2});
  prims.push_back(Plane{origin + Eigen::Vector3d(2.2, 0, 0), Eigen::Vector3d(-1, 0, 0), 2});
  prims.push_back(Plane{origin + Eigen::Vector3d(0, -1.6, 0), Eigen::Vector3d(0, 1, 0), 3});
  const int n_spheres = 3;
  for (int s = 0; s < n_spheres; ++s) {
    const double z = 1.6 + 1.6 * unit(rng);
    const double x = -0.9 + 1.8 * unit(rng);
    const double y = -0.3 + 0.8 * unit(rng);
    const double r = 0.25 + 0.25 * unit(rng);
    prims.push_back(Sphere{origin + Eigen::Vector3d(x, y, z), r, 4 + (s % 2)});
  }

  const Eigen::Vector3d start = origin + Eigen::Vector3d(-L.lateral_step * frames / 2.0, 0.05 * unit(rng), 0);
  for (int i = 0; i < frames; ++i) {
    const Eigen::Vector3d t = start + Eigen::Vector3d(L.lateral_step * i, 0.0, L.forward_step * i);
    const double yaw = L.yaw_rate * (i - 0.5 * frames);
    const Eigen::Vector3d euler(0.01 * std::sin(0.5 * i), yaw, 0.0);
    c.trajectory.frames.push_back({i / 3.0, Pose(rotationFromEuler<double>(euler), t)});
  }
  return c;
}

std::vector<SuiteCase> syntheticSuite() {
  std::vector<SuiteCase> out;
  for (int i = 0; i < 8; ++i) out.push_back(makeSuiteCase(i, 11));
  return out;
}

}  // namespace dod
