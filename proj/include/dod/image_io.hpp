#pragma once

#include <filesystem>

#include "dod/core.hpp"

namespace dod {

/// 8-bit RGB PNG <-> ColorImage in [0, 1].
ColorImage readColorPng(const std::filesystem::path& path);
void writeColorPng(const std::filesystem::path& path, const ColorImage& image);

/// 16-bit grayscale PNG in millimeters <-> DepthMap in meters (0 = invalid).
/// Writing rejects depths that do not fit in 16 bits.
DepthMap readDepthPng(const std::filesystem::path& path);
void writeDepthPng(const std::filesystem::path& path, const DepthMap& depth);

}  // namespace dod
