#include "dod/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <fmt/format.h>

namespace dod {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw FormatError(fmt::format("{}: cannot open", path.string()));
  return f;
}

struct Raster {
  int width = 0;
  int height = 0;
  int channels = 0;
  int depth = 0;  // bits per channel
  std::vector<png_byte> bytes;
};

Raster readPng(const std::filesystem::path& path) {
  File f = open(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(fmt::format("{}: not a PNG file", path.string()));
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw FormatError("libpng initialization failed");
  Raster r;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(fmt::format("{}: corrupt PNG", path.string()));
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  r.width = static_cast<int>(png_get_image_width(png, info));
  r.height = static_cast<int>(png_get_image_height(png, info));
  r.depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (r.depth == 16) png_set_swap(png);  // host order (little-endian)
  png_read_update_info(png, info);
  r.channels = png_get_channels(png, info);
  r.depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  r.bytes.resize(stride * r.height);
  rows.resize(r.height);
  for (int y = 0; y < r.height; ++y) rows[y] = r.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return r;
}

void writePng(const std::filesystem::path& path, const Raster& r) {
  File f = open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) throw FormatError("libpng initialization failed");
  std::vector<png_bytep> rows(r.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError(fmt::format("{}: PNG write failed", path.string()));
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, r.width, r.height, r.depth, r.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (r.depth == 16) png_set_swap(png);
  const std::size_t stride = static_cast<std::size_t>(r.width) * r.channels * (r.depth / 8);
  for (int y = 0; y < r.height; ++y) rows[y] = const_cast<png_bytep>(r.bytes.data() + y * stride);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

ColorImage readColorPng(const std::filesystem::path& path) {
  const Raster r = readPng(path);
  if (r.depth != 8 || (r.channels != 3 && r.channels != 1))
    throw FormatError(fmt::format("{}: expected an 8-bit RGB image", path.string()));
  ColorImage img(3, r.height, r.width);
  for (int p = 0; p < r.width * r.height; ++p)
    for (int c = 0; c < 3; ++c) img.data(c, p) = r.bytes[p * r.channels + (r.channels == 3 ? c : 0)] / 255.0;
  return img;
}

void writeColorPng(const std::filesystem::path& path, const ColorImage& image) {
  if (image.channels != 3) throw DimensionMismatch("color PNG needs three channels");
  Raster r{image.width, image.height, 3, 8, {}};
  r.bytes.resize(static_cast<std::size_t>(image.pixels()) * 3);
  for (int p = 0; p < image.pixels(); ++p)
    for (int c = 0; c < 3; ++c)
      r.bytes[p * 3 + c] = static_cast<png_byte>(std::lround(std::clamp(image.data(c, p), 0.0, 1.0) * 255.0));
  writePng(path, r);
}

DepthMap readDepthPng(const std::filesystem::path& path) {
  const Raster r = readPng(path);
  if (r.depth != 16 || r.channels != 1)
    throw FormatError(fmt::format("{}: expected a 16-bit grayscale image", path.string()));
  DepthMap d(r.width, r.height);
  const auto* v = reinterpret_cast<const std::uint16_t*>(r.bytes.data());
  for (int p = 0; p < r.width * r.height; ++p) d.values(p) = v[p] / 1000.0;
  return d;
}

void writeDepthPng(const std::filesystem::path& path, const DepthMap& depth) {
  Raster r{depth.width, depth.height, 1, 16, {}};
  r.bytes.resize(static_cast<std::size_t>(depth.width) * depth.height * 2);
  auto* v = reinterpret_cast<std::uint16_t*>(r.bytes.data());
  for (int p = 0; p < depth.width * depth.height; ++p) {
    const double mm = depth.values(p) > 0 ? std::round(depth.values(p) * 1000.0) : 0.0;
    if (mm > 65535.0)
      throw FormatError(fmt::format("{}: depth {} m exceeds the 16-bit millimeter range", path.string(),
                                    depth.values(p)));
    v[p] = static_cast<std::uint16_t>(mm);
  }
  writePng(path, r);
}

}  // namespace dod
