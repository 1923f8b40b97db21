#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "mslam/errors.hpp"
#include "mslam/simulator.hpp"
#include "mslam/tracking.hpp"

using namespace mslam;

namespace {

WorldModel world(const std::string& name, std::uint64_t seed = 1, bool sphere = false) {
  SceneConfig c;
  c.template_name = name;
  c.seed = seed;
  c.sphere = sphere;
  return build_world(c);
}

double normal_angle_deg(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(std::abs(a.dot(b)), 0.0, 1.0)) * 180.0 / std::numbers::pi;
}

bool same(const FrameObservation& a, const FrameObservation& b) {
  if (a.depth.data != b.depth.data || a.points.size() != b.points.size() || a.lines.size() != b.lines.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (a.points[i].landmark_id != b.points[i].landmark_id || a.points[i].pixel != b.points[i].pixel) return false;
  }
  for (std::size_t i = 0; i < a.lines.size(); ++i) {
    if (a.lines[i].p_start != b.lines[i].p_start || a.lines[i].p_end != b.lines[i].p_end) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mw_room template") {
  const auto w = world("mw_room");
  REQUIRE(w.planes.size() == 6);
  for (const auto& p : w.planes) {
    CHECK(p.plane.normal.cwiseAbs().maxCoeff() == doctest::Approx(1.0));
    for (const auto& c : p.corners()) CHECK(std::abs(p.plane.signed_distance(c)) < 1e-9);
  }
  int perpendicular_pairs = 0;
  for (std::size_t i = 0; i < w.planes.size(); ++i)
    for (std::size_t j = i + 1; j < w.planes.size(); ++j)
      perpendicular_pairs += std::abs(w.planes[i].plane.normal.dot(w.planes[j].plane.normal)) < 1e-12;
  CHECK(perpendicular_pairs >= 2);
  CHECK(w.points.size() >= 200);
  CHECK(w.lines.size() >= 30);
  std::set<int> ids;
  for (const auto& p : w.points) ids.insert(p.id);
  CHECK(ids.size() == w.points.size());
}

TEST_CASE("cluttered_nonmw has no near-perpendicular planes") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto w = world("cluttered_nonmw", seed);
    REQUIRE(w.planes.size() >= 2);
    for (std::size_t i = 0; i < w.planes.size(); ++i) {
      for (std::size_t j = i + 1; j < w.planes.size(); ++j) {
        const double a = normal_angle_deg(w.planes[i].plane.normal, w.planes[j].plane.normal);
        CHECK_FALSE((a >= 85.0 && a <= 95.0));
      }
    }
  }
}

TEST_CASE("build_world is deterministic and validates the template") {
  const auto a = world("mw_corridor_loop", 4), b = world("mw_corridor_loop", 4);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) CHECK(a.points[i].position == b.points[i].position);
  CHECK_THROWS_AS(world("atrium"), Error);
  try {
    world("atrium");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownTemplate);
  }
}

TEST_CASE("corridor loop closes and keeps clearance") {
  const auto w = world("mw_corridor_loop");
  TrajectorySpec spec;
  spec.kind = TrajectoryKind::CorridorLoop;
  spec.frame_count = 400;
  const auto poses = sample_trajectory(spec, w);
  REQUIRE(poses.size() == 400);
  CHECK((poses.front().camera_center() - poses.back().camera_center()).norm() < 1e-9);
  for (const auto& p : poses) {
    CHECK(p.is_valid());
    for (const auto& patch : w.planes) CHECK(patch.distance(p.camera_center()) >= 0.3);
  }
}

TEST_CASE("trajectory edge cases") {
  const auto w = world("mw_room");
  TrajectorySpec spec;
  spec.frame_count = 2;
  CHECK(sample_trajectory(spec, w).size() == 2);
  spec.frame_count = 1;
  CHECK_THROWS_AS(sample_trajectory(spec, w), Error);

  TrajectorySpec jitter;
  jitter.kind = TrajectoryKind::HandheldJitter;
  jitter.speed = 0.02;
  jitter.seed = 9;
  const auto a = sample_trajectory(jitter, w), b = sample_trajectory(jitter, w);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].rotation == b[i].rotation);
    CHECK(a[i].translation == b[i].translation);
  }

  auto far = w;
  far.orbit_radius = 10.0;
  try {
    sample_trajectory({}, far);
    FAIL("expected InfeasibleTrajectory");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InfeasibleTrajectory);
  }
}

TEST_CASE("render_depth") {
  const CameraIntrinsics intr;
  SUBCASE("frontal wall") {
    const auto w = world("single_wall");
    // The wall is y = 3 facing -y; camera at y = 1 looking along +y.
    Mat3 r_wc;
    r_wc.col(0) = Vec3(1, 0, 0);
    r_wc.col(1) = Vec3(0, 0, -1);
    r_wc.col(2) = Vec3(0, 1, 0);
    const Pose pose = Pose::from_camera_center(r_wc.transpose(), {0, 1, 1.5});
    const auto depth = render_depth(w, pose, intr);
    // 160x120 has no center pixel; the four around the axis straddle it symmetrically.
    for (int u : {79, 80})
      for (int v : {59, 60}) CHECK(depth.at(u, v) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(depth.at(0, 0) - 2.0) < 1e-9);  // frontal: depth along z is constant
  }
  SUBCASE("empty world") {
    const auto depth = render_depth(WorldModel{}, Pose::identity(), intr);
    for (double z : depth.data) CHECK(z == 0.0);
  }
  SUBCASE("wall at 45 degrees") {
    WorldModel w;
    RectPatch p;
    p.plane.normal = Vec3(1, 0, -1).normalized();
    p.plane.d = std::sqrt(2.0);  // through (0, 0, 2)
    p.center = Vec3(0, 0, 2);
    p.axis_u = Vec3(1, 0, 1).normalized();
    p.axis_v = Vec3::UnitY();
    p.half_u = p.half_v = 50.0;
    w.planes.push_back(p);
    const auto depth = render_depth(w, Pose::identity(), intr);
    for (int u = 1; u < intr.width; ++u) CHECK(depth.at(u, 60) > depth.at(u - 1, 60));
  }
}

TEST_CASE("planar patch depth back-projects onto the plane") {
  const auto w = world("mw_room");
  const CameraIntrinsics intr;
  const auto pose = sample_trajectory({}, w)[10];
  const auto depth = render_depth(w, pose, intr);
  const Pose t_wc = pose.inverse();
  int checked = 0;
  for (int v = 0; v < intr.height; v += 3) {
    for (int u = 0; u < intr.width; u += 3) {
      const auto hit = raycast(w, pose.camera_center(), t_wc.rotation * intr.ray(u, v));
      if (!hit || hit->patch_id < 0) continue;
      const Vec3 x = t_wc.transform(intr.back_project(u, v, depth.at(u, v)));
      CHECK(std::abs(w.planes[hit->patch_id].plane.signed_distance(x)) < 1e-9);
      ++checked;
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("noise-free observations are exact") {
  const auto w = world("mw_room");
  const CameraIntrinsics intr;
  const auto poses = sample_trajectory({}, w);
  const auto obs = observe_features(w, poses[5], intr, {}, 5);
  REQUIRE(obs.points.size() > 50);
  REQUIRE(obs.lines.size() > 3);
  for (const auto& p : obs.points) {
    const Vec3 pc = poses[5].transform(w.points[p.landmark_id].position);
    CHECK(pc.z() > 0.0);
    CHECK((project(intr, pc) - p.pixel).norm() < 1e-9);
    CHECK(intr.in_image(p.pixel));
    PointMatch m{p.pixel, w.points[p.landmark_id].position};
    CHECK(point_residual(poses[5], intr, m).norm() < 1e-9);
  }
  for (const auto& l : obs.lines) {
    const auto& line = w.lines[l.landmark_id].line;
    CHECK((project(intr, poses[5].transform(line.p_start)) - l.p_start).norm() < 1e-9);
    LineMatch m{line_function(l.p_start, l.p_end), line};
    CHECK(line_residual(poses[5], intr, m).norm() < 1e-9);
  }
}

TEST_CASE("points behind the camera are not observed") {
  WorldModel w;
  w.points.push_back({0, {0, 0, -2}, 0});
  w.points.push_back({1, {0, 0, 2}, 1});
  const auto obs = observe_features(w, Pose::identity(), CameraIntrinsics{}, {});
  REQUIRE(obs.points.size() == 1);
  CHECK(obs.points[0].landmark_id == 1);
}

TEST_CASE("outlier rate follows binomial statistics") {
  SceneConfig sc;
  sc.point_density = 40.0;
  const auto w = build_world(sc);
  const CameraIntrinsics intr;
  const auto pose = sample_trajectory({}, w)[0];
  double total_rate = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    NoiseSpec n;
    n.outlier_rate = 0.1;
    n.seed = seed;
    const auto obs = observe_features(w, pose, intr, n);
    int corrupted = 0;
    for (const auto& p : obs.points) {
      const Vec3 pc = pose.transform(w.points[p.landmark_id].position);
      corrupted += pc.z() <= 0.0 || (project(intr, pc) - p.pixel).norm() > 1e-9;
    }
    const double n_vis = static_cast<double>(obs.points.size());
    REQUIRE(n_vis >= 200);
    // Binomial 3 sigma band for the visible count.
    CHECK(std::abs(corrupted - 0.1 * n_vis) <= 3.0 * std::sqrt(n_vis * 0.1 * 0.9));
    total_rate += corrupted / n_vis;
  }
  CHECK(total_rate / 100.0 == doctest::Approx(0.1).epsilon(0.1));
}

TEST_CASE("observation streams are deterministic") {
  const auto w = world("mw_room");
  const CameraIntrinsics intr;
  NoiseSpec n;
  n.depth_sigma = 0.01;
  n.pixel_sigma = 1.0;
  n.outlier_rate = 0.05;
  n.dropout_rate = 0.1;
  n.seed = 42;
  const auto poses = sample_trajectory({}, w);
  for (int i : {0, 7, 100}) CHECK(same(observe_features(w, poses[i], intr, n, i), observe_features(w, poses[i], intr, n, i)));
}

TEST_CASE("depth noise grows with the square of depth") {
  const auto w = world("single_wall");
  const CameraIntrinsics intr;
  const auto pose = sample_trajectory({}, w)[0];
  const auto clean = render_depth(w, pose, intr);
  NoiseSpec n;
  n.depth_sigma = 0.01;
  const auto noisy = observe_features(w, pose, intr, n).depth;
  double s2 = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < clean.data.size(); ++i) {
    if (clean.data[i] <= 0.0 || noisy.data[i] <= 0.0) continue;
    const double z = clean.data[i];
    const double r = (noisy.data[i] - z) / (n.depth_sigma * z * z);
    s2 += r * r;
    ++count;
  }
  REQUIRE(count > 10000);
  CHECK(std::sqrt(s2 / count) == doctest::Approx(1.0).epsilon(0.03));
  for (double z : noisy.data) CHECK((z == 0.0 || (z >= 0.1 && z <= 20.0)));
}

TEST_CASE("depth PNG round trip at TUM scale") {
  const auto w = world("mw_room");
  const CameraIntrinsics intr;
  const auto depth = render_depth(w, sample_trajectory({}, w)[0], intr);
  const auto path = std::filesystem::temp_directory_path() / "mslam_depth_test.png";
  write_depth_png(path, depth);
  const auto back = read_depth_png(path);
  REQUIRE(back.width == depth.width);
  REQUIRE(back.height == depth.height);
  for (std::size_t i = 0; i < depth.data.size(); ++i) CHECK(std::abs(back.data[i] - depth.data[i]) <= 0.5 / kTumDepthScale + 1e-12);
  std::filesystem::remove(path);
}

TEST_CASE("sphere surface distance") {
  const auto w = world("mw_room", 1, true);
  REQUIRE(w.spheres.size() == 1);
  const auto& s = w.spheres[0];
  CHECK(w.surface_distance(s.center + s.radius * Vec3::UnitX()) < 1e-12);
  const auto hit = raycast(w, s.center + Vec3(0, 0, 2), -Vec3::UnitZ());
  REQUIRE(hit);
  CHECK(hit->patch_id == -1);
  CHECK(hit->t == doctest::Approx(2.0 - s.radius));
}
