#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mslam/depth_image.hpp"
#include "mslam/geometry.hpp"
#include "mslam/plane_extraction.hpp"
#include "mslam/simulator.hpp"

namespace mslam {

/// One camera frame: observations, their map associations and the pose estimate.
struct Frame {
  int id = 0;
  double timestamp = 0.0;
  DepthImage depth;
  std::vector<PointObservation> points;
  std::vector<LineObservation> lines;
  std::vector<PlaneSegment> planes;

  // Map-landmark id per observation, aligned with the vectors above.
  std::vector<std::optional<int>> point_matches;
  std::vector<std::optional<int>> line_matches;
  std::vector<std::optional<int>> plane_matches;

  Pose pose;
  bool has_pose = false;
  bool mf_tracked = false;
  std::string branch;  // "mf", "new-mf", "features" or "init"

  void reset_matches() {
    point_matches.assign(points.size(), std::nullopt);
    line_matches.assign(lines.size(), std::nullopt);
    plane_matches.assign(planes.size(), std::nullopt);
  }
  int matched_point_count() const;
  std::vector<int> matched_point_ids() const;
};

/// Camera-frame 3D position of a (sub)pixel: ray-plane intersection when an
/// extracted plane covers it, else a local affine fit of inverse depth.
/// `inv_depth_sigma` is the expected inverse-depth noise (1/m).
std::optional<Vec3> lift_pixel(const Frame& frame, const CameraIntrinsics& intr, const Vec2& px,
                               double inv_depth_sigma = 0.0);

}  // namespace mslam
