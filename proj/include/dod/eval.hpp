#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "dod/core.hpp"
#include "dod/geometry.hpp"

namespace dod {

struct Metrics2D {
  double mae = 0;
  double rmse = 0;
  double abs_rel = 0;
  double sq_rel = 0;
  double delta_105 = 0;
  double delta_125 = 0;
};

/// Over valid gt pixels. Throws DimensionMismatch, EmptyValidSet.
Metrics2D metrics2d(const DepthMap& pred, const DepthMap& gt);

struct Metrics3D {
  double comp = 0;
  double acc = 0;
  double chamfer = 0;
  double prec = 0;
  double recall = 0;
  double fscore = 0;
};

using PointSet = Eigen::Matrix3Xd;

/// Exact nearest distance from every column of `a` to the set `b`.
Eigen::VectorXd bruteForceNN(const PointSet& a, const PointSet& b);

/// Static k-d tree over the columns of a point set. Queries return the
/// same distances as bruteForceNN bit for bit.
class KdTree {
 public:
  explicit KdTree(PointSet points);
  double nearest(const Eigen::Vector3d& q) const;
  Eigen::VectorXd nearest(const PointSet& queries) const;
  const PointSet& points() const { return points_; }

 private:
  struct Node {
    int begin, end;  // range in order_
    int axis = -1;   // -1 for leaves
    double split = 0;
    int left = -1, right = -1;
  };
  int build(int begin, int end, int depth);
  void search(int node, const Eigen::Vector3d& q, double& best) const;

  PointSet points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

Metrics3D metrics3d(const PointSet& pred, const PointSet& gt, double threshold = 0.05);

// ---------------------------------------------------------------------------
// TSDF fusion and meshing

struct TsdfVolume {
  double voxel_size = 0.04;
  double truncation = 0.12;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();  // center of voxel (0, 0, 0)
  Eigen::Vector3i dims = Eigen::Vector3i::Zero();
  std::vector<float> sdf;
  std::vector<float> weight;

  /// Covers [lo, hi] with voxels of `voxel`; truncation defaults to three voxels.
  static TsdfVolume create(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, double voxel,
                           double truncation = -1);

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims.y() + y) * dims.x() + x;
  }
  Eigen::Vector3d center(int x, int y, int z) const { return origin + voxel_size * Eigen::Vector3d(x, y, z); }
};

/// Projective update: each voxel center seen in front of a valid depth
/// sample gets sdf = depth - z truncated to the band (voxels more than the
/// truncation behind the surface are skipped), averaged with weight 1.
void tsdfIntegrate(TsdfVolume& vol, const DepthMap& depth, const Pose& camera_to_world, const Intrinsics& k);

struct Mesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

/// Marching cubes at iso-level 0 over cubes whose 8 corners were observed.
/// Throws EmptySurface when there is no zero crossing.
Mesh extractMesh(const TsdfVolume& vol);

double surfaceArea(const Mesh& mesh);

/// Area-uniform random surface points, round(area * density) of them.
PointSet samplePoints(const Mesh& mesh, double density, std::uint64_t seed);

/// Binary little-endian PLY with float32 xyz vertices and uint32 faces.
void writePly(const std::filesystem::path& path, const Mesh& mesh);
Mesh readPly(const std::filesystem::path& path);

}  // namespace dod
