#include "mslam/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/SVD>

#include "mslam/errors.hpp"

namespace mslam {

Trajectory::Trajectory(std::vector<Stamped> poses) {
  poses_.reserve(poses.size());
  for (const auto& s : poses) push_back(s.timestamp, s.pose);
}

void Trajectory::push_back(double t, const Pose& pose) {
  if (!poses_.empty() && !(t > poses_.back().timestamp)) {
    std::ostringstream msg;
    msg << "timestamp " << t << " does not follow " << poses_.back().timestamp;
    throw Error(ErrorCode::TimestampMismatch, msg.str());
  }
  poses_.push_back({t, pose});
}

Pose align_rigid(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw Error(ErrorCode::LengthMismatch, "point sets differ in size");
  if (src.empty()) return Pose::identity();
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= double(src.size());
  cd /= double(dst.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) s(2, 2) = -1.0;
  const Mat3 r = svd.matrixV() * s * svd.matrixU().transpose();
  return {r, cd - r * cs};
}

double ate_rmse(const Trajectory& est, const Trajectory& gt, bool align, double time_tol) {
  if (est.size() != gt.size()) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(est.size()) + " estimated vs " + std::to_string(gt.size()) + " reference poses");
  }
  if (est.empty()) return 0.0;
  std::vector<Vec3> pe, pg;
  pe.reserve(est.size());
  pg.reserve(gt.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (std::abs(est[i].timestamp - gt[i].timestamp) > time_tol) {
      std::ostringstream msg;
      msg << "pose " << i << ": " << est[i].timestamp << " vs " << gt[i].timestamp;
      throw Error(ErrorCode::TimestampMismatch, msg.str());
    }
    pe.push_back(est[i].pose.camera_center());
    pg.push_back(gt[i].pose.camera_center());
  }
  const Pose t = align ? align_rigid(pe, pg) : Pose::identity();
  double se = 0.0;
  for (std::size_t i = 0; i < pe.size(); ++i) se += (pg[i] - t.transform(pe[i])).squaredNorm();
  return std::sqrt(se / double(pe.size()));
}

double loop_drift(const Trajectory& est) {
  if (est.empty()) return 0.0;
  return (est.poses().front().pose.camera_center() - est.poses().back().pose.camera_center()).norm();
}

ReconstructionError reconstruction_error(std::span<const Surfel> surfels, const WorldModel& world,
                                         double outlier_cutoff) {
  if (surfels.empty()) throw Error(ErrorCode::EmptyReconstruction, "no surfels");
  ReconstructionError out;
  double sum = 0.0;
  for (const auto& s : surfels) {
    const double d = world.surface_distance(s.position);
    if (d > outlier_cutoff) {
      ++out.outliers;
      continue;
    }
    sum += d;
    ++out.inliers;
  }
  if (out.inliers == 0) throw Error(ErrorCode::EmptyReconstruction, "every surfel is an outlier");
  out.mean = sum / double(out.inliers);
  return out;
}

void write_tum(const std::filesystem::path& path, const Trajectory& trajectory) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& s : trajectory.poses()) {
    const Pose t_wc = s.pose.inverse();
    const Eigen::Quaterniond q(t_wc.rotation);
    const Vec3& p = t_wc.translation;
    out << s.timestamp << ' ' << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << q.x() << ' ' << q.y() << ' '
        << q.z() << ' ' << q.w() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

Trajectory read_tum(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorCode::IoError, path.string() + ":" + std::to_string(line_no) + ": expected 8 numbers");
    }
    const Eigen::Quaterniond q(qw, qx, qy, qz);
    if (q.norm() < 1e-12) throw Error(ErrorCode::IoError, path.string() + ":" + std::to_string(line_no) + ": zero quaternion");
    const Pose t_wc{q.normalized().toRotationMatrix(), Vec3(tx, ty, tz)};
    traj.push_back(t, t_wc.inverse());
  }
  return traj;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json runtime = nlohmann::json::object();
  for (const auto& [stage, ms] : runtime_ms) runtime[stage] = ms;
  return {{"ate_rmse_m", ate_rmse_m},         {"drift_m", drift_m},     {"recon_error_mean_m", recon_error_mean_m},
          {"frames_total", frames_total},     {"frames_mf", frames_mf}, {"runtime_ms", runtime}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.ate_rmse_m = j.at("ate_rmse_m").get<double>();
  r.drift_m = j.at("drift_m").get<double>();
  r.recon_error_mean_m = j.at("recon_error_mean_m").get<double>();
  r.frames_total = j.at("frames_total").get<int>();
  r.frames_mf = j.at("frames_mf").get<int>();
  r.runtime_ms = j.at("runtime_ms").get<std::map<std::string, double>>();
  return r;
}

void write_metrics(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << report.to_json().dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

}  // namespace mslam
