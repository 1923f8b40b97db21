#include "mslam/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mslam/errors.hpp"
#include "mslam/random.hpp"

namespace mslam {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kMinDepth = 0.1;
constexpr double kMaxDepth = 20.0;

double deg(double d) { return d * kPi / 180.0; }

RectPatch make_patch(int id, const Vec3& center, const Vec3& normal, const Vec3& axis_u,
                     double half_u, double half_v, bool manhattan) {
  RectPatch p;
  p.id = id;
  p.center = center;
  p.plane.normal = normal.normalized();
  p.plane.d = -p.plane.normal.dot(center);
  p.axis_u = (axis_u - axis_u.dot(p.plane.normal) * p.plane.normal).normalized();
  p.axis_v = p.plane.normal.cross(p.axis_u);
  p.half_u = half_u;
  p.half_v = half_v;
  p.manhattan = manhattan;
  return p;
}

double patch_area(const RectPatch& p) { return 4.0 * p.half_u * p.half_v; }

bool surface_point_visible(const WorldModel& w, const RectPatch& patch, const Vec3& p) {
  if (!w.free_space.contains(p + 0.02 * patch.plane.normal)) return false;
  for (const auto& s : w.spheres) {
    if ((p - s.center).norm() < s.radius + 0.05) return false;
  }
  return true;
}

void sample_points(WorldModel& w, const SceneConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  int next_id = 0;
  for (const auto& patch : w.planes) {
    const int count = static_cast<int>(std::lround(cfg.point_density * patch_area(patch)));
    for (int i = 0; i < count; ++i) {
      const double a = uni(rng) * (patch.half_u - 0.05);
      const double b = uni(rng) * (patch.half_v - 0.05);
      const Vec3 p = patch.center + a * patch.axis_u + b * patch.axis_v;
      if (!surface_point_visible(w, patch, p)) continue;
      w.points.push_back({next_id, p, next_id});
      ++next_id;
    }
  }
}

void sample_lines(WorldModel& w, const SceneConfig& cfg, std::mt19937_64& rng) {
  std::vector<double> weights;
  for (const auto& p : w.planes) weights.push_back(patch_area(p));
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::uniform_real_distribution<double> len_dist(0.4, 1.0);
  std::bernoulli_distribution coin(0.5);

  int next_id = 0;
  int attempts = 0;
  while (next_id < cfg.line_count && attempts < 100 * std::max(cfg.line_count, 1)) {
    ++attempts;
    const RectPatch& patch = w.planes[pick(rng)];
    const Vec3 c = patch.center + uni(rng) * patch.half_u * patch.axis_u +
                   uni(rng) * patch.half_v * patch.axis_v;
    const Vec3 dir = coin(rng) ? patch.axis_u : patch.axis_v;
    const double half_len = 0.5 * len_dist(rng);
    const Vec3 a = c - half_len * dir;
    const Vec3 b = c + half_len * dir;
    if (!patch.contains(a, 0.1) || !patch.contains(b, 0.1)) continue;
    if (!surface_point_visible(w, patch, a) || !surface_point_visible(w, patch, b) ||
        !surface_point_visible(w, patch, c)) {
      continue;
    }
    w.lines.push_back({next_id, {a, b}, next_id});
    ++next_id;
  }
}

WorldModel mw_room(const SceneConfig& cfg) {
  WorldModel w;
  const double hx = 2.0, hy = 2.0, h = 2.6;
  w.planes.push_back(make_patch(0, {0, 0, 0}, Vec3::UnitZ(), Vec3::UnitX(), hx, hy, true));
  w.planes.push_back(make_patch(1, {0, 0, h}, -Vec3::UnitZ(), Vec3::UnitX(), hx, hy, true));
  w.planes.push_back(make_patch(2, {-hx, 0, h / 2}, Vec3::UnitX(), Vec3::UnitY(), hy, h / 2, true));
  w.planes.push_back(make_patch(3, {hx, 0, h / 2}, -Vec3::UnitX(), Vec3::UnitY(), hy, h / 2, true));
  w.planes.push_back(make_patch(4, {0, -hy, h / 2}, Vec3::UnitY(), Vec3::UnitX(), hx, h / 2, true));
  w.planes.push_back(make_patch(5, {0, hy, h / 2}, -Vec3::UnitY(), Vec3::UnitX(), hx, h / 2, true));
  w.free_space.outer = Box{{-hx, -hy, 0.0}, {hx, hy, h}};
  if (cfg.sphere) w.spheres.push_back({{1.0, 0.0, 0.5}, 0.5});

  w.orbit_center = Vec3(0.0, 0.0, 1.3);
  w.orbit_radius = 0.6;
  w.orbit_start_angle = deg(-135.0);
  w.look_target = Vec3(hx, hy, 0.8);
  return w;
}

WorldModel mw_corridor_loop(const SceneConfig&) {
  WorldModel w;
  const double ox = 5.0, oy = 4.0, ix = 3.0, iy = 2.0, h = 2.5;
  int id = 0;
  w.planes.push_back(make_patch(id++, {0, 0, 0}, Vec3::UnitZ(), Vec3::UnitX(), ox, oy, true));
  w.planes.push_back(make_patch(id++, {0, 0, h}, -Vec3::UnitZ(), Vec3::UnitX(), ox, oy, true));
  // Outer walls face inward.
  w.planes.push_back(make_patch(id++, {-ox, 0, h / 2}, Vec3::UnitX(), Vec3::UnitY(), oy, h / 2, true));
  w.planes.push_back(make_patch(id++, {ox, 0, h / 2}, -Vec3::UnitX(), Vec3::UnitY(), oy, h / 2, true));
  w.planes.push_back(make_patch(id++, {0, -oy, h / 2}, Vec3::UnitY(), Vec3::UnitX(), ox, h / 2, true));
  w.planes.push_back(make_patch(id++, {0, oy, h / 2}, -Vec3::UnitY(), Vec3::UnitX(), ox, h / 2, true));
  // Central block faces outward into the corridor.
  w.planes.push_back(make_patch(id++, {-ix, 0, h / 2}, -Vec3::UnitX(), Vec3::UnitY(), iy, h / 2, true));
  w.planes.push_back(make_patch(id++, {ix, 0, h / 2}, Vec3::UnitX(), Vec3::UnitY(), iy, h / 2, true));
  w.planes.push_back(make_patch(id++, {0, -iy, h / 2}, -Vec3::UnitY(), Vec3::UnitX(), ix, h / 2, true));
  w.planes.push_back(make_patch(id++, {0, iy, h / 2}, Vec3::UnitY(), Vec3::UnitX(), ix, h / 2, true));
  w.free_space.outer = Box{{-ox, -oy, 0.0}, {ox, oy, h}};
  w.free_space.holes.push_back(Box{{-ix, -iy, -1.0}, {ix, iy, h + 1.0}});

  const double cx = 0.5 * (ox + ix), cy = 0.5 * (oy + iy), z = 1.25;
  w.loop_corners = {{-cx, -cy, z}, {cx, -cy, z}, {cx, cy, z}, {-cx, cy, z}};
  w.loop_corner_radius = 0.6;
  w.loop_pitch = 20.0 * kPi / 180.0;
  w.orbit_center = Vec3(0.0, -cy, z);
  w.orbit_radius = 0.3;
  w.look_target = Vec3(ox, -cy, z);
  return w;
}

WorldModel cluttered_nonmw(const SceneConfig& cfg) {
  // Tent-like convex room: floor, ceiling and inward-leaning walls; rejection
  // sampled until no two normals are within 5 degrees of perpendicular.
  auto rng = make_rng(cfg.seed, 17);
  std::uniform_real_distribution<double> jitter(-deg(10.0), deg(10.0));
  std::uniform_real_distribution<double> tilt(deg(12.0), deg(25.0));
  std::uniform_real_distribution<double> dist(2.0, 2.5);
  constexpr int kWalls = 5;
  const double h = 2.8;

  for (int attempt = 0; attempt < 10000; ++attempt) {
    WorldModel w;
    int id = 0;
    w.planes.push_back(make_patch(id++, {0, 0, 0}, Vec3::UnitZ(), Vec3::UnitX(), 4.0, 4.0, false));
    w.planes.push_back(make_patch(id++, {0, 0, h}, -Vec3::UnitZ(), Vec3::UnitX(), 4.0, 4.0, false));
    for (int k = 0; k < kWalls; ++k) {
      const double alpha = 2.0 * kPi * k / kWalls + jitter(rng);
      const double tau = tilt(rng);
      const double r = dist(rng);
      const Vec3 n(-std::cos(alpha) * std::cos(tau), -std::sin(alpha) * std::cos(tau),
                   -std::sin(tau));
      const Vec3 base(r * std::cos(alpha), r * std::sin(alpha), 0.0);
      const Vec3 tangent(-std::sin(alpha), std::cos(alpha), 0.0);
      Vec3 up = n.cross(tangent).normalized();
      if (up.z() < 0) up = -up;
      w.planes.push_back(make_patch(id++, base + 1.4 * up, n, tangent, 3.5, 1.8, false));
    }
    bool ok = true;
    for (std::size_t i = 0; i < w.planes.size() && ok; ++i) {
      for (std::size_t j = i + 1; j < w.planes.size(); ++j) {
        const double a = angle_between(w.planes[i].plane.normal, w.planes[j].plane.normal);
        if (a >= deg(85.0) && a <= deg(95.0)) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    for (const auto& p : w.planes) w.free_space.halfspaces.push_back(p.plane);
    w.orbit_center = Vec3(0.0, 0.0, 1.3);
    w.orbit_radius = 0.4;
    w.orbit_start_angle = kPi;
    const RectPatch& target_wall = w.planes[2];
    w.look_target = target_wall.center - 0.4 * target_wall.axis_v;
    return w;
  }
  throw Error(ErrorCode::UnknownTemplate, "cluttered_nonmw rejection sampling failed");
}

WorldModel single_wall(const SceneConfig&) {
  WorldModel w;
  w.planes.push_back(make_patch(0, {0, 3, 1.5}, -Vec3::UnitY(), Vec3::UnitX(), 4.0, 2.5, false));
  w.free_space.halfspaces.push_back(w.planes[0].plane);
  w.orbit_center = Vec3(0.0, 0.0, 1.3);
  w.orbit_radius = 0.3;
  w.orbit_start_angle = -kPi / 2;
  w.look_target = Vec3(0.0, 3.0, 1.3);
  return w;
}

Mat3 look_rotation(const Vec3& forward, const Vec3& up = Vec3::UnitZ()) {
  const Vec3 z = forward.normalized();
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r_wc;
  r_wc.col(0) = x;
  r_wc.col(1) = y;
  r_wc.col(2) = z;
  return r_wc.transpose();
}

struct LoopPose {
  Vec3 position;
  double heading;
};

// Rounded rectangle through `corners` (counter-clockwise), starting at the
// middle of the first edge and heading toward corners[1].
class RoundedLoop {
 public:
  RoundedLoop(std::vector<Vec3> corners, double radius)
      : corners_(std::move(corners)), radius_(radius) {
    for (std::size_t i = 0; i < corners_.size(); ++i) {
      const Vec3& a = corners_[i];
      const Vec3& b = corners_[(i + 1) % corners_.size()];
      straight_.push_back((b - a).norm() - 2.0 * radius_);
    }
    arc_ = 0.5 * kPi * radius_;
    length_ = 0.0;
    for (double s : straight_) length_ += s + arc_;
  }

  double length() const { return length_; }

  LoopPose at(double s) const {
    // Shift so that s = 0 is the middle of the first straight.
    s = std::fmod(s + 0.5 * straight_[0], length_);
    if (s < 0) s += length_;
    const std::size_t n = corners_.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3& a = corners_[i];
      const Vec3& b = corners_[(i + 1) % n];
      const Vec3 dir = (b - a).normalized();
      const double heading = std::atan2(dir.y(), dir.x());
      if (s <= straight_[i]) return {a + (radius_ + s) * dir, heading};
      s -= straight_[i];
      if (s <= arc_ || i + 1 == n) {
        const double turn = std::min(s, arc_) / radius_;
        const Vec3 left(-dir.y(), dir.x(), 0.0);
        const Vec3 center = b - radius_ * dir + radius_ * left;
        const double start = heading - kPi / 2;
        const Vec3 pos = center + radius_ * Vec3(std::cos(start + turn), std::sin(start + turn), 0.0);
        return {Vec3(pos.x(), pos.y(), a.z()), heading + turn};
      }
      s -= arc_;
    }
    return {corners_[0], 0.0};
  }

 private:
  std::vector<Vec3> corners_;
  double radius_;
  std::vector<double> straight_;
  double arc_ = 0.0;
  double length_ = 0.0;
};

void check_clearance(const WorldModel& w, const std::vector<Pose>& poses) {
  constexpr double kClearance = 0.3;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Vec3 c = poses[i].camera_center();
    if (!w.free_space.contains(c)) {
      throw Error(ErrorCode::InfeasibleTrajectory,
                  "camera leaves the world at frame " + std::to_string(i));
    }
    for (const auto& p : w.planes) {
      if (p.distance(c) < kClearance) {
        throw Error(ErrorCode::InfeasibleTrajectory,
                    "clearance below 0.3 m at frame " + std::to_string(i));
      }
    }
    for (const auto& s : w.spheres) {
      if ((c - s.center).norm() - s.radius < kClearance) {
        throw Error(ErrorCode::InfeasibleTrajectory,
                    "clearance below 0.3 m at frame " + std::to_string(i));
      }
    }
  }
}

}  // namespace

std::array<Vec3, 4> RectPatch::corners() const {
  return {center - half_u * axis_u - half_v * axis_v, center + half_u * axis_u - half_v * axis_v,
          center + half_u * axis_u + half_v * axis_v, center - half_u * axis_u + half_v * axis_v};
}

bool RectPatch::contains(const Vec3& p, double margin) const {
  const Vec3 r = p - center;
  return std::abs(r.dot(axis_u)) <= half_u - margin && std::abs(r.dot(axis_v)) <= half_v - margin;
}

double RectPatch::distance(const Vec3& p) const {
  const Vec3 r = p - center;
  const double a = std::clamp(r.dot(axis_u), -half_u, half_u);
  const double b = std::clamp(r.dot(axis_v), -half_v, half_v);
  return (p - (center + a * axis_u + b * axis_v)).norm();
}

bool FreeSpace::contains(const Vec3& p) const {
  if (outer && !outer->contains(p)) return false;
  for (const auto& h : halfspaces) {
    if (h.signed_distance(p) <= 0.0) return false;
  }
  for (const auto& hole : holes) {
    if (hole.contains(p)) return false;
  }
  return true;
}

double WorldModel::surface_distance(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& patch : planes) best = std::min(best, patch.distance(p));
  for (const auto& s : spheres) best = std::min(best, s.distance(p));
  return best;
}

TrajectoryKind parse_trajectory_kind(const std::string& name) {
  if (name == "orbit") return TrajectoryKind::Orbit;
  if (name == "corridor-loop") return TrajectoryKind::CorridorLoop;
  if (name == "handheld-jitter") return TrajectoryKind::HandheldJitter;
  throw Error(ErrorCode::ConfigError, "unknown trajectory kind '" + name + "'");
}

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::Orbit: return "orbit";
    case TrajectoryKind::CorridorLoop: return "corridor-loop";
    case TrajectoryKind::HandheldJitter: return "handheld-jitter";
  }
  return "orbit";
}

WorldModel build_world(const SceneConfig& config) {
  WorldModel w;
  if (config.template_name == "mw_room") {
    w = mw_room(config);
  } else if (config.template_name == "mw_corridor_loop") {
    w = mw_corridor_loop(config);
  } else if (config.template_name == "cluttered_nonmw") {
    w = cluttered_nonmw(config);
  } else if (config.template_name == "single_wall") {
    w = single_wall(config);
  } else {
    throw Error(ErrorCode::UnknownTemplate, "no scene template '" + config.template_name + "'");
  }
  w.template_name = config.template_name;
  auto rng = make_rng(config.seed, 1);
  sample_points(w, config, rng);
  sample_lines(w, config, rng);
  return w;
}

std::vector<Pose> sample_trajectory(const TrajectorySpec& spec, const WorldModel& world) {
  if (spec.frame_count < 2) {
    throw Error(ErrorCode::InfeasibleTrajectory, "frame_count must be at least 2");
  }
  std::vector<Pose> poses;
  poses.reserve(spec.frame_count);

  switch (spec.kind) {
    case TrajectoryKind::Orbit:
    case TrajectoryKind::HandheldJitter: {
      const bool jitter = spec.kind == TrajectoryKind::HandheldJitter;
      auto rng = make_rng(spec.seed, 2);
      std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
      std::uniform_real_distribution<double> freq(0.02, 0.12);
      // Three sinusoids per axis give smooth, hand-like wobble.
      std::array<std::array<double, 3>, 6> ph{}, fr{};
      for (auto& axis : ph) for (double& p : axis) p = phase(rng);
      for (auto& axis : fr) for (double& f : axis) f = freq(rng);
      auto wobble = [&](int axis, int i) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += std::sin(fr[axis][k] * i + ph[axis][k]) / 3.0;
        return s;
      };
      const double pos_amp = jitter ? std::max(spec.speed, 0.0) : 0.0;
      const double rot_amp = jitter ? 0.02 : 0.0;
      for (int i = 0; i < spec.frame_count; ++i) {
        const double theta = world.orbit_start_angle + spec.angular_speed * i;
        Vec3 pos = world.orbit_center +
                   world.orbit_radius * Vec3(std::cos(theta), std::sin(theta), 0.0) +
                   Vec3(0.0, 0.0, 0.05 * std::sin(3.0 * spec.angular_speed * i));
        pos += pos_amp * Vec3(wobble(0, i), wobble(1, i), wobble(2, i));
        Mat3 r_cw = look_rotation(world.look_target - pos);
        if (jitter) {
          r_cw = so3_exp(rot_amp * Vec3(wobble(3, i), wobble(4, i), wobble(5, i))) * r_cw;
        }
        poses.push_back(Pose::from_camera_center(r_cw, pos));
      }
      break;
    }
    case TrajectoryKind::CorridorLoop: {
      if (world.loop_corners.size() < 3) {
        throw Error(ErrorCode::InfeasibleTrajectory, "world has no loop for corridor-loop");
      }
      const RoundedLoop loop(world.loop_corners, world.loop_corner_radius);
      const double step = loop.length() / (spec.frame_count - 1);
      for (int i = 0; i < spec.frame_count; ++i) {
        // Last frame closes the loop exactly onto the first.
        const double s = (i == spec.frame_count - 1) ? 0.0 : step * i;
        const LoopPose lp = loop.at(s);
        const double cp = std::cos(world.loop_pitch);
        const Vec3 fwd(cp * std::cos(lp.heading), cp * std::sin(lp.heading), -std::sin(world.loop_pitch));
        poses.push_back(Pose::from_camera_center(look_rotation(fwd), lp.position));
      }
      break;
    }
  }
  check_clearance(world, poses);
  return poses;
}

std::optional<RayHit> raycast(const WorldModel& world, const Vec3& origin, const Vec3& dir) {
  std::optional<RayHit> best;
  for (const auto& p : world.planes) {
    const double denom = p.plane.normal.dot(dir);
    if (std::abs(denom) < 1e-12) continue;
    const double t = -p.plane.signed_distance(origin) / denom;
    if (t <= 0.0 || (best && t >= best->t)) continue;
    const Vec3 hit = origin + t * dir;
    const Vec3 r = hit - p.center;
    if (std::abs(r.dot(p.axis_u)) > p.half_u + 1e-12 || std::abs(r.dot(p.axis_v)) > p.half_v + 1e-12) {
      continue;
    }
    best = RayHit{t, p.id};
  }
  for (const auto& s : world.spheres) {
    const Vec3 oc = origin - s.center;
    const double a = dir.squaredNorm();
    const double b = oc.dot(dir);
    const double c = oc.squaredNorm() - s.radius * s.radius;
    const double disc = b * b - a * c;
    if (disc < 0.0) continue;
    const double sq = std::sqrt(disc);
    double t = (-b - sq) / a;
    if (t <= 0.0) t = (-b + sq) / a;
    if (t <= 0.0 || (best && t >= best->t)) continue;
    best = RayHit{t, -1};
  }
  return best;
}

DepthImage render_depth(const WorldModel& world, const Pose& pose, const CameraIntrinsics& intr) {
  DepthImage depth(intr.width, intr.height);
  const Vec3 origin = pose.camera_center();
  const Mat3 r_wc = pose.rotation.transpose();
  for (int v = 0; v < intr.height; ++v) {
    for (int u = 0; u < intr.width; ++u) {
      // Ray with unit z in the camera frame, so the hit parameter is the depth.
      const Vec3 dir = r_wc * intr.ray(u, v);
      const auto hit = raycast(world, origin, dir);
      if (hit && hit->t >= kMinDepth && hit->t <= kMaxDepth) depth.at(u, v) = hit->t;
    }
  }
  return depth;
}

namespace {

bool unoccluded(const WorldModel& world, const Vec3& origin, const Vec3& target) {
  const auto hit = raycast(world, origin, target - origin);
  return !hit || hit->t >= 1.0 - 1e-6;
}

}  // namespace

FrameObservation observe_features(const WorldModel& world, const Pose& pose,
                                  const CameraIntrinsics& intr, const NoiseSpec& noise,
                                  int frame_index, double timestamp) {
  FrameObservation obs;
  obs.index = frame_index;
  obs.timestamp = timestamp;
  obs.gt_pose = pose;
  obs.depth = render_depth(world, pose, intr);

  auto rng = make_rng(noise.seed, 1000 + static_cast<std::uint64_t>(frame_index));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  if (noise.depth_sigma > 0.0 || noise.max_range < kMaxDepth) {
    for (double& z : obs.depth.data) {
      if (z <= 0.0) continue;
      if (noise.depth_sigma > 0.0) z += noise.depth_sigma * z * z * gauss(rng);
      if (z < kMinDepth || z > std::min(noise.max_range, kMaxDepth)) z = 0.0;
    }
  }

  const Vec3 origin = pose.camera_center();
  auto visible_pixel = [&](const Vec3& p_w, Vec2& px) {
    const Vec3 p_c = pose.transform(p_w);
    if (p_c.z() < kMinDepth) return false;
    px = project(intr, p_c);
    return intr.in_image(px) && unoccluded(world, origin, p_w);
  };

  const int n_points = static_cast<int>(world.points.size());
  for (const auto& lm : world.points) {
    Vec2 px;
    if (!visible_pixel(lm.position, px)) continue;
    if (noise.dropout_rate > 0.0 && uni(rng) < noise.dropout_rate) continue;
    if (noise.pixel_sigma > 0.0) px += noise.pixel_sigma * Vec2(gauss(rng), gauss(rng));
    if (!intr.in_image(px)) continue;
    PointObservation po{lm.id, px, lm.descriptor};
    if (noise.outlier_rate > 0.0 && n_points > 1 && uni(rng) < noise.outlier_rate) {
      std::uniform_int_distribution<int> other(0, n_points - 2);
      int k = other(rng);
      if (k >= lm.id) ++k;
      po.landmark_id = world.points[k].id;
      po.descriptor = world.points[k].descriptor;
    }
    obs.points.push_back(po);
  }

  for (const auto& lm : world.lines) {
    Vec2 a, b, m;
    if (!visible_pixel(lm.line.p_start, a) || !visible_pixel(lm.line.p_end, b) ||
        !visible_pixel(0.5 * (lm.line.p_start + lm.line.p_end), m)) {
      continue;
    }
    if ((a - b).norm() < 5.0) continue;
    if (noise.dropout_rate > 0.0 && uni(rng) < noise.dropout_rate) continue;
    if (noise.pixel_sigma > 0.0) {
      a += noise.pixel_sigma * Vec2(gauss(rng), gauss(rng));
      b += noise.pixel_sigma * Vec2(gauss(rng), gauss(rng));
    }
    if (!intr.in_image(a) || !intr.in_image(b)) continue;
    obs.lines.push_back({lm.id, a, b, lm.descriptor});
  }
  return obs;
}

}  // namespace mslam
