#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mslam/dense_map.hpp"
#include "mslam/simulator.hpp"
#include "mslam/sparse_map.hpp"
#include "mslam/tracking.hpp"

namespace mslam {

struct OutputConfig {
  std::filesystem::path dir = "out";
  bool depth_png = false;  // dump every frame's depth as 16-bit PNG
  bool align = false;      // rigidly align before ATE
};

struct ExperimentConfig {
  SceneConfig scene;
  TrajectorySpec trajectory;
  NoiseSpec noise;
  CameraIntrinsics intrinsics;
  TrackerConfig tracker;
  SparseMapConfig map;
  DenseConfig dense;
  OutputConfig output;

  /// One seed for scene, trajectory and noise.
  void set_seed(std::uint64_t seed);
};

/// Unknown tables or keys and ill-typed values raise ConfigError.
ExperimentConfig parse_config(const std::string& toml_text, const std::string& source = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Defaults suited to a scene template (trajectory kind and length).
ExperimentConfig default_config(const std::string& template_name);

}  // namespace mslam
