#pragma once

#include <optional>
#include <vector>

#include "dod/core.hpp"
#include "dod/geometry.hpp"

namespace dod {

/// One RGB frame of a sequence. `depth` and `sparse` exist only on frames
/// where the depth sensor fired; `ground_truth` is evaluation-only.
struct Frame {
  double timestamp = 0;
  Pose camera_to_world;
  ColorImage color;
  std::optional<DepthMap> depth;
  std::optional<SparseDepthMap> sparse;
  std::optional<DepthMap> ground_truth;

  bool hasDepth() const { return depth.has_value() || sparse.has_value(); }
};

struct Sequence {
  Intrinsics intrinsics;
  std::vector<Frame> frames;
};

/// m = 1 / tau for tau in {1, 1/2, 1/3, ...}. Throws InvalidTau otherwise.
int tauPeriod(double tau);

/// Source frame for `target`: the latest depth-bearing frame at or before it
/// whose index is a multiple of `period`. Returns -1 if there is none.
int sourceIndex(const Sequence& seq, int target, int period = 1);

/// Seed derivation shared by every per-frame random draw.
std::uint64_t frameSeed(std::uint64_t seed, int index, std::uint64_t stream = 0);

}  // namespace dod
