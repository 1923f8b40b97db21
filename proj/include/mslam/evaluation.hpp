#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mslam/dense_map.hpp"
#include "mslam/geometry.hpp"
#include "mslam/simulator.hpp"

namespace mslam {

struct Stamped {
  double timestamp = 0.0;
  Pose pose;  // world-to-camera
};

class Trajectory {
 public:
  Trajectory() = default;
  /// Throws TimestampMismatch unless timestamps strictly increase.
  explicit Trajectory(std::vector<Stamped> poses);

  /// Throws TimestampMismatch if `t` does not follow the last timestamp.
  void push_back(double t, const Pose& pose);
  const std::vector<Stamped>& poses() const { return poses_; }
  std::size_t size() const { return poses_.size(); }
  bool empty() const { return poses_.empty(); }
  const Stamped& operator[](std::size_t i) const { return poses_[i]; }

 private:
  std::vector<Stamped> poses_;
};

/// Rigid (R, t) minimizing sum |dst_i - (R src_i + t)|^2.
Pose align_rigid(std::span<const Vec3> src, std::span<const Vec3> dst);

/// RMSE of camera-center differences; timestamps must agree within `time_tol`.
double ate_rmse(const Trajectory& est, const Trajectory& gt, bool align = false, double time_tol = 0.01);

/// Distance between the first and last camera centers.
double loop_drift(const Trajectory& est);

struct ReconstructionError {
  double mean = 0.0;
  std::size_t inliers = 0;
  std::size_t outliers = 0;  // farther than the cutoff, excluded from the mean
};

ReconstructionError reconstruction_error(std::span<const Surfel> surfels, const WorldModel& world,
                                         double outlier_cutoff = 0.5);

/// TUM RGB-D text format: `timestamp tx ty tz qx qy qz qw`, camera-to-world.
void write_tum(const std::filesystem::path& path, const Trajectory& trajectory);
Trajectory read_tum(const std::filesystem::path& path);

struct MetricsReport {
  double ate_rmse_m = 0.0;
  double drift_m = 0.0;
  double recon_error_mean_m = 0.0;
  int frames_total = 0;
  int frames_mf = 0;
  std::map<std::string, double> runtime_ms;  // per stage

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

void write_metrics(const std::filesystem::path& path, const MetricsReport& report);

}  // namespace mslam
