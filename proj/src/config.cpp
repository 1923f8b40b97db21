#include "mslam/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "toml.hpp"

#include "mslam/errors.hpp"

namespace mslam {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Reads typed values out of one table and remembers which keys it saw, so
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const toml::table* table, std::string name, std::string source)
      : table_(table), name_(std::move(name)), source_(std::move(source)) {}

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node->value_exact<bool>()) {
        out = *v;
        return;
      }
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = node->value_exact<std::int64_t>(); v && *v >= 0) {
        out = static_cast<T>(*v);
        return;
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = node->value<double>()) {
        out = *v;
        return;
      }
    } else {
      if (auto v = node->value_exact<std::string>()) {
        out = *v;
        return;
      }
    }
    fail(std::string("bad value for '") + key + "'");
  }

  void read_deg(const char* key, double& radians) {
    double deg = radians / kDeg;
    read(key, deg);
    radians = deg * kDeg;
  }

  template <std::size_t N>
  void read_array(const char* key, std::array<double, N>& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    const toml::array* arr = node->as_array();
    if (!arr || arr->size() != N) fail(std::string("'") + key + "' needs " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) {
      auto v = (*arr)[i].value<double>();
      if (!v) fail(std::string("'") + key + "' needs " + std::to_string(N) + " numbers");
      out[i] = *v;
    }
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, value] : *table_) {
      if (!seen_.count(std::string(key.str()))) fail("unknown key '" + std::string(key.str()) + "'");
    }
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::ConfigError, source_ + ": [" + name_ + "] " + what);
  }

 private:
  const toml::table* table_;
  std::string name_;
  std::string source_;
  std::set<std::string, std::less<>> seen_;
};

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t seed) {
  scene.seed = seed;
  trajectory.seed = seed;
  noise.seed = seed;
}

ExperimentConfig default_config(const std::string& template_name) {
  ExperimentConfig c;
  c.scene.template_name = template_name;
  if (template_name == "mw_corridor_loop") {
    c.trajectory.kind = TrajectoryKind::CorridorLoop;
    c.trajectory.frame_count = 400;
  }
  return c;
}

ExperimentConfig parse_config(const std::string& toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    throw Error(ErrorCode::ConfigError, msg.str());
  }
  const std::set<std::string> known{"scene", "trajectory", "noise", "intrinsics", "tracker",
                                    "extraction", "map", "dense", "output"};
  for (const auto& [key, value] : root) {
    if (!known.count(std::string(key.str()))) {
      throw Error(ErrorCode::ConfigError, source + ": unknown table [" + std::string(key.str()) + "]");
    }
    if (!value.is_table()) {
      throw Error(ErrorCode::ConfigError, source + ": '" + std::string(key.str()) + "' must be a table");
    }
  }
  auto section = [&](const char* name) { return Section(root[name].as_table(), name, source); };

  Section scene = section("scene");
  std::string tmpl = "mw_room";
  scene.read("template", tmpl);
  ExperimentConfig c = default_config(tmpl);
  scene.read("seed", c.scene.seed);
  scene.read("sphere", c.scene.sphere);
  scene.read("point_density", c.scene.point_density);
  scene.read("line_count", c.scene.line_count);
  scene.finish();
  c.trajectory.seed = c.scene.seed;
  c.noise.seed = c.scene.seed;

  Section traj = section("trajectory");
  std::string kind = to_string(c.trajectory.kind);
  traj.read("kind", kind);
  try {
    c.trajectory.kind = parse_trajectory_kind(kind);
  } catch (const Error& e) {
    traj.fail(e.what());
  }
  traj.read("frames", c.trajectory.frame_count);
  traj.read("speed", c.trajectory.speed);
  traj.read("angular_speed", c.trajectory.angular_speed);
  traj.read("seed", c.trajectory.seed);
  traj.finish();

  Section noise = section("noise");
  noise.read("depth_sigma", c.noise.depth_sigma);
  noise.read("pixel_sigma", c.noise.pixel_sigma);
  noise.read("outlier_rate", c.noise.outlier_rate);
  noise.read("dropout_rate", c.noise.dropout_rate);
  noise.read("max_range", c.noise.max_range);
  noise.read("seed", c.noise.seed);
  noise.finish();

  Section intr = section("intrinsics");
  intr.read("fx", c.intrinsics.fx);
  intr.read("fy", c.intrinsics.fy);
  intr.read("cx", c.intrinsics.cx);
  intr.read("cy", c.intrinsics.cy);
  intr.read("width", c.intrinsics.width);
  intr.read("height", c.intrinsics.height);
  intr.finish();
  if (!c.intrinsics.is_valid()) intr.fail("invalid intrinsics");

  Section tr = section("tracker");
  TrackerConfig& t = c.tracker;
  tr.read("use_mf", t.use_mf);
  tr.read("min_inliers", t.min_inliers);
  tr.read_array("huber_delta", t.noise.huber_delta);
  tr.read("match_radius", t.matching.radius);
  tr.read_deg("plane_match_angle_deg", t.matching.plane.max_normal_angle);
  tr.read("plane_match_distance", t.matching.plane.max_point_plane_dist);
  tr.read_deg("parallel_angle_deg", t.matching.parallel_angle);
  tr.read_deg("perpendicular_match_deg", t.matching.perpendicular_tol);
  tr.read_deg("mf_perpendicular_deg", t.mf.perpendicular_tol);
  tr.read("mf_sigma_gate", t.mf.sigma_gate);
  tr.read("mf_max_plane_noise", t.mf.max_plane_noise);
  tr.read_deg("mf_orientation_match_deg", t.mf.orientation_match_tol);
  tr.read("max_iterations", t.optimizer.max_iterations);
  tr.read("relative_tolerance", t.optimizer.relative_tolerance);
  tr.read("initial_lambda", t.optimizer.initial_lambda);
  tr.finish();

  Section ex = section("extraction");
  ExtractionConfig& e = t.extraction;
  ex.read("cell_size", e.cell_size);
  ex.read("stride", e.stride);
  ex.read("min_support", e.min_support);
  ex.read_deg("merge_angle_deg", e.merge_angle);
  ex.read("merge_dist", e.merge_dist);
  ex.read("sigma_floor", e.sigma_floor);
  ex.read("max_depth", e.max_depth);
  ex.read("voxel", e.voxel);
  ex.read("min_voxel_points", e.min_voxel_points);
  ex.read("stability_threshold", e.stability_threshold);
  ex.read("max_normal_sigma", e.max_normal_sigma);
  ex.finish();

  Section map = section("map");
  map.read("voxel", c.map.voxel);
  map.read("plane_inlier_dist", c.map.plane_inlier_dist);
  map.read("keyframe_ratio", c.map.keyframe_ratio);
  map.read("cull_min_observers", c.map.cull_min_observers);
  map.read("cull_grace_keyframes", c.map.cull_grace_keyframes);
  map.read("redundancy_ratio", c.map.redundancy_ratio);
  map.read("covisibility_threshold", c.map.covisibility_threshold);
  map.finish();

  Section dense = section("dense");
  dense.read("grid", c.dense.grid);
  dense.read("iterations", c.dense.iterations);
  dense.read("min_pixels", c.dense.min_pixels);
  dense.read("depth_scale", c.dense.depth_scale);
  dense.read("max_depth", c.dense.max_depth);
  dense.read("voxel", c.dense.voxel);
  dense.read("fuse_distance", c.dense.fuse_distance);
  dense.read_deg("fuse_angle_deg", c.dense.fuse_angle);
  dense.finish();

  Section out = section("output");
  std::string dir = c.output.dir.string();
  out.read("dir", dir);
  c.output.dir = dir;
  out.read("depth_png", c.output.depth_png);
  out.read("align", c.output.align);
  out.finish();

  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

}  // namespace mslam
