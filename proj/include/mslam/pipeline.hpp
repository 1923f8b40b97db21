#pragma once

#include <filesystem>
#include <vector>

#include "mslam/config.hpp"
#include "mslam/dense_map.hpp"
#include "mslam/evaluation.hpp"
#include "mslam/tracking.hpp"

namespace mslam {

struct ExperimentResult {
  MetricsReport metrics;
  ReconstructionError recon;
  Trajectory estimate;
  Trajectory ground_truth;
  std::vector<TrackingLogRow> log;
  std::vector<Surfel> surfels;
  SparseMap map;
  int keyframes = 0;
  long long keyframe_pixels = 0;  // total pixel count over keyframes
};

/// Simulates, tracks every frame and maps keyframes densely. Throws
/// TrackingLost; on other errors the partial state is discarded.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// est.tum, gt.tum, surfels.ply, tracking.csv, metrics.json.
void write_artifacts(const ExperimentResult& result, const std::filesystem::path& dir);

/// Ground-truth trajectory (gt.tum) and, optionally, 16-bit depth PNGs.
void write_simulation(const ExperimentConfig& config, const std::filesystem::path& dir, bool depth_png);

/// Per-frame geodesic rotation error of the estimate, radians.
std::vector<double> rotation_errors(const Trajectory& est, const Trajectory& gt);

/// Least-squares slope of y over the given x.
double regression_slope(std::span<const double> x, std::span<const double> y);

}  // namespace mslam
