#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>

#include "mslam/config.hpp"
#include "mslam/errors.hpp"

using namespace mslam;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(MSLAM_SOURCE_DIR) / "configs";

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("empty config gives defaults") {
  const auto c = parse_config("");
  CHECK(c.scene.template_name == "mw_room");
  CHECK(c.trajectory.frame_count == 200);
  CHECK(c.tracker.use_mf);
  CHECK(c.noise.depth_sigma == 0.0);
  CHECK(c.map.keyframe_ratio == 0.90);
  CHECK(c.dense.fuse_angle == doctest::Approx(20.0 * std::numbers::pi / 180.0));
}

TEST_CASE("reference config matches the built-in defaults") {
  const auto a = load_config(kConfigs / "full_reference.toml");
  const ExperimentConfig b;
  CHECK(a.scene.point_density == b.scene.point_density);
  CHECK(a.scene.line_count == b.scene.line_count);
  CHECK(a.trajectory.frame_count == b.trajectory.frame_count);
  CHECK(a.trajectory.angular_speed == b.trajectory.angular_speed);
  CHECK(a.noise.max_range == b.noise.max_range);
  CHECK(a.intrinsics.fx == b.intrinsics.fx);
  CHECK(a.intrinsics.cy == b.intrinsics.cy);
  CHECK(a.tracker.noise.huber_delta == b.tracker.noise.huber_delta);
  CHECK(a.tracker.matching.radius == b.tracker.matching.radius);
  CHECK(a.tracker.matching.plane.max_normal_angle == doctest::Approx(b.tracker.matching.plane.max_normal_angle));
  CHECK(a.tracker.mf.perpendicular_tol == doctest::Approx(b.tracker.mf.perpendicular_tol));
  CHECK(a.tracker.mf.sigma_gate == b.tracker.mf.sigma_gate);
  CHECK(a.tracker.optimizer.max_iterations == b.tracker.optimizer.max_iterations);
  CHECK(a.tracker.extraction.stability_threshold == b.tracker.extraction.stability_threshold);
  CHECK(a.tracker.extraction.voxel == b.tracker.extraction.voxel);
  CHECK(a.tracker.extraction.min_support == b.tracker.extraction.min_support);
  CHECK(a.tracker.extraction.merge_angle == doctest::Approx(b.tracker.extraction.merge_angle));
  CHECK(a.map.covisibility_threshold == b.map.covisibility_threshold);
  CHECK(a.map.cull_min_observers == b.map.cull_min_observers);
  CHECK(a.dense.grid == b.dense.grid);
  CHECK(a.dense.fuse_distance == b.dense.fuse_distance);
  CHECK(a.dense.fuse_angle == doctest::Approx(b.dense.fuse_angle));
  CHECK(a.output.dir == "out/default");
}

TEST_CASE("shipped configs load") {
  for (const char* name : {"mw_room.toml", "mw_room_noisy.toml", "corridor_loop.toml", "cluttered_nonmw.toml"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_config(kConfigs / name));
  }
  const auto corridor = load_config(kConfigs / "corridor_loop.toml");
  CHECK(corridor.trajectory.kind == TrajectoryKind::CorridorLoop);
  CHECK(corridor.trajectory.frame_count == 400);
  CHECK(corridor.noise.depth_sigma == 0.01);
  CHECK(corridor.noise.pixel_sigma == 1.0);
}

TEST_CASE("template defaults") {
  const auto c = parse_config("[scene]\ntemplate = \"mw_corridor_loop\"\n");
  CHECK(c.trajectory.kind == TrajectoryKind::CorridorLoop);
  CHECK(c.trajectory.frame_count == 400);
  const auto d = parse_config("[scene]\ntemplate = \"mw_corridor_loop\"\n[trajectory]\nframes = 50\n");
  CHECK(d.trajectory.frame_count == 50);
}

TEST_CASE("values and unit conversion") {
  const auto c = parse_config(R"(
[scene]
seed = 7
sphere = true
[trajectory]
kind = "handheld-jitter"
[tracker]
use_mf = false
huber_delta = [1.0, 2.0, 3.0, 4.0, 5.0]
parallel_angle_deg = 5.0
[dense]
fuse_angle_deg = 30
[output]
dir = "somewhere"
align = true
)");
  CHECK(c.scene.seed == 7);
  CHECK(c.trajectory.seed == 7);
  CHECK(c.noise.seed == 7);
  CHECK(c.scene.sphere);
  CHECK(c.trajectory.kind == TrajectoryKind::HandheldJitter);
  CHECK_FALSE(c.tracker.use_mf);
  CHECK(c.tracker.noise.huber_delta == std::array<double, 5>{1, 2, 3, 4, 5});
  CHECK(c.tracker.matching.parallel_angle == doctest::Approx(5.0 * std::numbers::pi / 180.0));
  CHECK(c.dense.fuse_angle == doctest::Approx(30.0 * std::numbers::pi / 180.0));
  CHECK(c.output.dir == "somewhere");
  CHECK(c.output.align);
}

TEST_CASE("set_seed reseeds every random stream") {
  auto c = parse_config("[trajectory]\nseed = 3\n[noise]\nseed = 4\n");
  c.set_seed(99);
  CHECK(c.scene.seed == 99);
  CHECK(c.trajectory.seed == 99);
  CHECK(c.noise.seed == 99);
}

TEST_CASE("config errors") {
  CHECK(code_of([] { parse_config("[bogus]\nx = 1\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[scene]\nsphere_count = 1\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[scene]\nsphere = 3\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[trajectory]\nframes = \"many\"\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[trajectory]\nkind = \"spiral\"\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[tracker]\nhuber_delta = [1.0, 2.0]\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[intrinsics]\nfx = -1.0\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("scene = 1\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { parse_config("[scene\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([] { load_config("/nonexistent/config.toml"); }) == ErrorCode::ConfigError);
}

TEST_CASE("error messages name the offending key") {
  try {
    parse_config("[noise]\ndepth_sigmaa = 0.1\n", "test.toml");
    FAIL("no error");
  } catch (const Error& e) {
    const std::string what = e.what();
    CHECK(what.find("test.toml") != std::string::npos);
    CHECK(what.find("depth_sigmaa") != std::string::npos);
  }
}
