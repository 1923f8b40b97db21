#include "mslam/depth_image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>

#include "mslam/errors.hpp"

namespace mslam {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_depth_png(const std::filesystem::path& path, const DepthImage& depth) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::IoError, "cannot open " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng write failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, depth.width, depth.height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  // PNG stores 16-bit samples big-endian.
  std::vector<png_byte> row(static_cast<std::size_t>(depth.width) * 2);
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const double scaled = std::round(depth.at(u, v) * kTumDepthScale);
      const auto raw = static_cast<std::uint16_t>(std::clamp(scaled, 0.0, 65535.0));
      row[2 * u] = static_cast<png_byte>(raw >> 8);
      row[2 * u + 1] = static_cast<png_byte>(raw & 0xFF);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

DepthImage read_depth_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::IoError, "cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoError, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoError, "libpng read failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::IoError, "expected 16-bit grayscale depth PNG");
  }
  DepthImage out(w, h);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 2);
  for (int v = 0; v < h; ++v) {
    png_read_row(png, row.data(), nullptr);
    for (int u = 0; u < w; ++u) {
      const std::uint16_t raw = static_cast<std::uint16_t>((row[2 * u] << 8) | row[2 * u + 1]);
      out.at(u, v) = raw / kTumDepthScale;
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace mslam
