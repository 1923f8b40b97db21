#include "mslam/frame.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/QR>

namespace mslam {

int Frame::matched_point_count() const {
  return static_cast<int>(std::count_if(point_matches.begin(), point_matches.end(),
                                        [](const auto& m) { return m.has_value(); }));
}

std::vector<int> Frame::matched_point_ids() const {
  std::vector<int> ids;
  for (const auto& m : point_matches) {
    if (m) ids.push_back(*m);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::optional<Vec3> lift_pixel(const Frame& frame, const CameraIntrinsics& intr, const Vec2& px,
                               double inv_depth_sigma) {
  const DepthImage& depth = frame.depth;
  const int u0 = static_cast<int>(std::floor(px.x()));
  const int v0 = static_cast<int>(std::floor(px.y()));
  if (u0 < 1 || v0 < 1 || u0 + 2 >= depth.width || v0 + 2 >= depth.height) return std::nullopt;
  const Vec3 ray = intr.ray(px.x(), px.y());

  // Whole 2x2 neighbourhood on one extracted plane: intersect the ray with it.
  const std::array<int, 4> block{v0 * depth.width + u0, v0 * depth.width + u0 + 1,
                                 (v0 + 1) * depth.width + u0, (v0 + 1) * depth.width + u0 + 1};
  for (const auto& seg : frame.planes) {
    const auto& mask = seg.pixel_mask;
    if (!std::all_of(block.begin(), block.end(),
                     [&](int i) { return std::binary_search(mask.begin(), mask.end(), i); })) {
      continue;
    }
    const double denom = seg.params.normal.dot(ray);
    if (std::abs(denom) < 1e-9) return std::nullopt;
    const double z = -seg.params.d / denom;
    if (z <= 0.0) return std::nullopt;
    return z * ray;
  }

  // Otherwise inverse depth must be affine over the 4x4 neighbourhood, as it
  // is on any plane; creases and silhouettes fail the fit.
  Eigen::Matrix<double, 16, 3> a;
  Eigen::Matrix<double, 16, 1> b;
  int row = 0;
  for (int v = v0 - 1; v <= v0 + 2; ++v) {
    for (int u = u0 - 1; u <= u0 + 2; ++u) {
      const double z = depth.at(u, v);
      if (z <= 0.0) return std::nullopt;
      a.row(row) << 1.0, u - px.x(), v - px.y();
      b(row) = 1.0 / z;
      ++row;
    }
  }
  const Vec3 coef = a.colPivHouseholderQr().solve(b);
  const double rms = std::sqrt((a * coef - b).squaredNorm() / 16.0);
  if (rms > 3.0 * inv_depth_sigma + 1e-9 * std::abs(coef(0))) return std::nullopt;
  if (coef(0) <= 0.0) return std::nullopt;
  return ray / coef(0);
}

}  // namespace mslam
