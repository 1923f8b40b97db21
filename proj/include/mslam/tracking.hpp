#pragma once

#include <array>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mslam/frame.hpp"
#include "mslam/geometry.hpp"
#include "mslam/manhattan.hpp"
#include "mslam/plane_extraction.hpp"
#include "mslam/sparse_map.hpp"

namespace mslam {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

enum class ResidualClass { Point = 0, Line = 1, Plane = 2, Parallel = 3, Perpendicular = 4 };
inline constexpr int kResidualClasses = 5;

/// Inverse covariances and Huber thresholds per residual class.
struct NoiseModel {
  Eigen::Matrix2d inv_cov_point = Eigen::Matrix2d::Identity();
  double inv_cov_line = 1.0;
  Mat3 inv_cov_plane = Eigen::Vector3d(100.0, 100.0, 25.0).asDiagonal();
  Eigen::Matrix2d inv_cov_parallel = Eigen::Vector2d(100.0, 100.0).asDiagonal();
  Eigen::Matrix2d inv_cov_perp = Eigen::Vector2d(100.0, 100.0).asDiagonal();
  std::array<double, kResidualClasses> huber_delta{2.45, 1.96, 2.8, 2.8, 2.8};
};

struct PointMatch {
  Vec2 pixel = Vec2::Zero();
  Vec3 world = Vec3::Zero();
  int obs_index = -1;
  int landmark_id = -1;
};

struct LineMatch {
  Line2DFunction line;
  Line3D world;
  int obs_index = -1;
  int landmark_id = -1;
};

struct PlaneMatch {
  PlaneParams obs;    // camera coordinates
  PlaneParams world;
  int obs_index = -1;
  int landmark_id = -1;
};

/// Structural constraint between an observed normal and a map plane normal.
struct NormalMatch {
  Vec3 obs_normal = Vec3::UnitZ();    // camera coordinates
  Vec3 world_normal = Vec3::UnitZ();
  int obs_index = -1;
  int landmark_id = -1;
};

struct MatchSet {
  std::vector<PointMatch> points;
  std::vector<LineMatch> lines;
  std::vector<PlaneMatch> planes;
  std::vector<NormalMatch> parallels;
  std::vector<NormalMatch> perpendiculars;

  std::size_t size() const {
    return points.size() + lines.size() + planes.size() + parallels.size() + perpendiculars.size();
  }
};

// Residuals; Jacobians are with respect to the left perturbation
// R <- Exp(omega) R, t <- t + upsilon, columns ordered (omega, upsilon).
Vec2 point_residual(const Pose& pose, const CameraIntrinsics& intr, const PointMatch& m,
                    Eigen::Matrix<double, 2, 6>* jac = nullptr);
/// Start- and end-point residuals of one line match.
Vec2 line_residual(const Pose& pose, const CameraIntrinsics& intr, const LineMatch& m,
                   Eigen::Matrix<double, 2, 6>* jac = nullptr);
Vec3 plane_residual(const Pose& pose, const PlaneMatch& m, Eigen::Matrix<double, 3, 6>* jac = nullptr);
Vec2 parallel_residual(const Pose& pose, const NormalMatch& m, Eigen::Matrix<double, 2, 6>* jac = nullptr);
/// Empty when the two normals are already parallel (rotation axis undefined).
std::optional<Vec2> perpendicular_residual(const Pose& pose, const NormalMatch& m,
                                           Eigen::Matrix<double, 2, 6>* jac = nullptr);

double huber(double s, double delta);

struct ResidualReport {
  Eigen::VectorXd stacked;
  double cost = 0.0;
  std::array<int, kResidualClasses> inliers{};
};

ResidualReport residuals(const Pose& pose, const MatchSet& matches, const NoiseModel& noise,
                         const CameraIntrinsics& intr);

struct OptimizerConfig {
  int max_iterations = 20;
  double relative_tolerance = 1e-6;
  double initial_lambda = 1e-3;
};

struct OptimizationResult {
  Pose pose;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::array<int, kResidualClasses> inliers{};
  bool converged = false;
  std::vector<double> cost_trace;  // initial cost, then every accepted step

  int inlier_total() const;
};

OptimizationResult optimize_full_pose(const Pose& init, const MatchSet& matches, const NoiseModel& noise,
                                      const CameraIntrinsics& intr, const OptimizerConfig& config = {});

/// Translation-only solve over point, line and plane terms; rotation is
/// returned untouched.
OptimizationResult optimize_translation(const Mat3& r_fixed, const Vec3& init_t, const MatchSet& matches,
                                        const NoiseModel& noise, const CameraIntrinsics& intr,
                                        const OptimizerConfig& config = {});

/// Constant-velocity prediction; falls back to `prev` without `prev_prev`.
Pose predict_pose(const Pose& prev, const std::optional<Pose>& prev_prev);

struct MatchingConfig {
  double radius = 15.0;  // pixels
  MatchThresholds plane;
  double parallel_angle = 10.0 * std::numbers::pi / 180.0;
  double perpendicular_tol = 10.0 * std::numbers::pi / 180.0;
};

/// Guided search from `last` (points, lines) and global plane association,
/// using `frame.pose` as the prediction. Writes the frame's match vectors.
void match_features(Frame& frame, const Frame& last, const SparseMap& map, const CameraIntrinsics& intr,
                    const MatchingConfig& config = {});

/// Projection search of local-map landmarks for still-unmatched observations.
int match_local_map(Frame& frame, const LocalMap& local, const SparseMap& map, const CameraIntrinsics& intr,
                    const MatchingConfig& config = {});

/// Geometry of the frame's matches plus parallel/perpendicular candidates
/// gated with the frame's current pose.
MatchSet build_match_set(const Frame& frame, const SparseMap& map, const MatchingConfig& config = {});

/// Drops matches whose robust-weighted error exceeds the inlier gate.
int remove_outliers(Frame& frame, const MatchSet& matches, const NoiseModel& noise,
                    const CameraIntrinsics& intr);

struct TrackerConfig {
  NoiseModel noise;
  MatchingConfig matching;
  MfConfig mf;
  ExtractionConfig extraction;
  OptimizerConfig optimizer;
  bool use_mf = true;
  int min_inliers = 10;
};

struct TrackingLogRow {
  int frame_id = 0;
  std::string branch;
  bool mf_tracked = false;
  std::array<int, kResidualClasses> inliers{};
  double final_cost = 0.0;
  Pose pose;
  std::optional<int> mf_id;
  bool keyframe = false;
  double keyframe_ratio = 0.0;     // vs. the last keyframe
  double previous_ratio = 0.0;     // vs. the literal previous frame
  int new_landmarks = 0;
};

void write_tracking_csv(const std::filesystem::path& path, const std::vector<TrackingLogRow>& rows);

struct TrackResult {
  Frame frame;
  TrackingLogRow log;
  std::optional<KeyframeInsertion> keyframe;
  CullReport culled;  // filled only on keyframes
};

/// Sequential per-frame estimator; owns the last-frame state, mutates the
/// sparse and Manhattan maps it was given.
class Tracker {
 public:
  Tracker(const CameraIntrinsics& intr, TrackerConfig config, SparseMap& map, ManhattanMap& manhattan);

  /// `initial_pose` anchors the first frame in the world; later frames ignore it.
  TrackResult track(const FrameObservation& obs, const Pose& initial_pose = Pose::identity());

  /// Fills `frame.pose`; throws TrackingLost.
  void estimate_pose(Frame& frame, TrackingLogRow& log, bool& force_keyframe,
                     std::optional<ManhattanFrameObservation>& new_mf);

  Frame make_frame(const FrameObservation& obs) const;
  const TrackerConfig& config() const { return config_; }

 private:
  OptimizationResult solve(Frame& frame, const MatchSet& ms, bool translation_only);
  std::optional<Pose> frame_pose(int frame_id) const;

  CameraIntrinsics intr_;
  TrackerConfig config_;
  SparseMap& map_;
  ManhattanMap& manhattan_;
  std::optional<Frame> last_;
  std::optional<Pose> prev_last_pose_;
};

}  // namespace mslam
