#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mslam/depth_image.hpp"
#include "mslam/geometry.hpp"

namespace mslam {

/// Bounded rectangular surface: center + half extents along two in-plane axes.
struct RectPatch {
  int id = 0;
  PlaneParams plane;
  Vec3 center = Vec3::Zero();
  Vec3 axis_u = Vec3::UnitX();
  Vec3 axis_v = Vec3::UnitY();
  double half_u = 1.0;
  double half_v = 1.0;
  bool manhattan = true;

  std::array<Vec3, 4> corners() const;
  bool contains(const Vec3& p, double margin = 0.0) const;
  double distance(const Vec3& p) const;
};

struct SphereObject {
  Vec3 center = Vec3::Zero();
  double radius = 0.5;

  double distance(const Vec3& p) const { return std::abs((p - center).norm() - radius); }
};

struct PointLandmark {
  int id = 0;
  Vec3 position = Vec3::Zero();
  int descriptor = 0;
};

struct LineLandmark {
  int id = 0;
  Line3D line;
  int descriptor = 0;
};

struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() > min.array()).all() && (p.array() < max.array()).all();
  }
};

/// Region a camera may occupy: inside `outer` (if set), on the positive
/// side of every half-space, outside every hole.
struct FreeSpace {
  std::optional<Box> outer;
  std::vector<Box> holes;
  std::vector<PlaneParams> halfspaces;

  bool contains(const Vec3& p) const;
};

struct WorldModel {
  std::string template_name;
  std::vector<RectPatch> planes;
  std::vector<SphereObject> spheres;
  std::vector<PointLandmark> points;
  std::vector<LineLandmark> lines;
  FreeSpace free_space;

  // Template-provided anchors for the built-in trajectories.
  Vec3 orbit_center = Vec3::Zero();
  double orbit_radius = 0.5;
  double orbit_start_angle = 0.0;
  Vec3 look_target = Vec3::UnitX();
  std::vector<Vec3> loop_corners;  // counter-clockwise rectangle
  double loop_corner_radius = 0.5;
  double loop_pitch = 0.0;  // downward camera tilt along the loop, radians

  /// Distance from `p` to the nearest ground-truth surface.
  double surface_distance(const Vec3& p) const;
};

struct SceneConfig {
  std::string template_name = "mw_room";
  std::uint64_t seed = 1;
  bool sphere = false;
  double point_density = 12.0;  // landmarks per square meter of visible surface
  int line_count = 40;
};

enum class TrajectoryKind { Orbit, CorridorLoop, HandheldJitter };

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Orbit;
  int frame_count = 200;
  double speed = 0.0;          // m/frame (jitter amplitude for handheld-jitter)
  double angular_speed = 0.005;  // rad/frame
  std::uint64_t seed = 1;
};

struct NoiseSpec {
  double depth_sigma = 0.0;  // sigma(z) = depth_sigma * (z / 1m)^2
  double pixel_sigma = 0.0;
  double outlier_rate = 0.0;
  double dropout_rate = 0.0;
  std::uint64_t seed = 1;
  double max_range = 8.0;  // sensor range; farther returns are invalid
};

struct PointObservation {
  int landmark_id = 0;
  Vec2 pixel = Vec2::Zero();
  int descriptor = 0;
};

struct LineObservation {
  int landmark_id = 0;
  Vec2 p_start = Vec2::Zero();
  Vec2 p_end = Vec2::Zero();
  int descriptor = 0;
};

struct FrameObservation {
  int index = 0;
  double timestamp = 0.0;
  DepthImage depth;
  std::vector<PointObservation> points;
  std::vector<LineObservation> lines;
  Pose gt_pose;
};

struct RayHit {
  double t = 0.0;
  int patch_id = -1;  // -1 for spheres
};

TrajectoryKind parse_trajectory_kind(const std::string& name);
std::string to_string(TrajectoryKind kind);

WorldModel build_world(const SceneConfig& config);
std::vector<Pose> sample_trajectory(const TrajectorySpec& spec, const WorldModel& world);

/// Nearest intersection along origin + t * dir, t > 0.
std::optional<RayHit> raycast(const WorldModel& world, const Vec3& origin, const Vec3& dir);

DepthImage render_depth(const WorldModel& world, const Pose& pose, const CameraIntrinsics& intr);

FrameObservation observe_features(const WorldModel& world, const Pose& pose,
                                  const CameraIntrinsics& intr, const NoiseSpec& noise,
                                  int frame_index = 0, double timestamp = 0.0);

/// Frame timestamps used by the simulator, 30 Hz.
inline double frame_timestamp(int index) { return index / 30.0; }

}  // namespace mslam
