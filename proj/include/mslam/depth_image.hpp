#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace mslam {

/// Row-major metric depth; 0 marks an invalid pixel.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0) {}

  double& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  double at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  bool valid(int u, int v) const { return at(u, v) > 0.0; }
  std::size_t size() const { return data.size(); }
};

// TUM convention: 16-bit unsigned, 5000 units per meter.
inline constexpr double kTumDepthScale = 5000.0;

void write_depth_png(const std::filesystem::path& path, const DepthImage& depth);
DepthImage read_depth_png(const std::filesystem::path& path);

}  // namespace mslam
