#include "mslam/pipeline.hpp"

#include <chrono>
#include <cstdio>

#include "mslam/errors.hpp"
#include "mslam/simulator.hpp"

namespace mslam {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

DenseJob make_job(const TrackResult& r, const SparseMap& map) {
  DenseJob job;
  job.keyframe_id = r.frame.id;
  job.pose = r.frame.pose;
  job.depth = r.frame.depth;
  job.planar_mask.assign(job.depth.data.size(), 0);
  for (const auto& p : r.frame.planes) {
    for (int k : p.pixel_mask) job.planar_mask[k] = 1;
  }
  for (int id : r.keyframe->touched_planes) {
    if (const MapPlane* p = map.plane(id)) job.planes.push_back(*p);
  }
  job.removed_planes = r.culled.planes;
  return job;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.tracker.extraction.depth_sigma = cfg.noise.depth_sigma;
  cfg.map.inv_depth_sigma = cfg.noise.depth_sigma;

  const auto t_total = Clock::now();
  ExperimentResult res;
  res.map = SparseMap(cfg.map);
  auto t0 = Clock::now();
  const WorldModel world = build_world(cfg.scene);
  const std::vector<Pose> poses = sample_trajectory(cfg.trajectory, world);
  double sim_ms = ms_since(t0);
  double track_ms = 0.0;

  ManhattanMap manhattan;
  Tracker tracker(cfg.intrinsics, cfg.tracker, res.map, manhattan);
  DenseMapper dense(cfg.intrinsics, cfg.dense);

  for (std::size_t i = 0; i < poses.size(); ++i) {
    const double stamp = frame_timestamp(static_cast<int>(i));
    t0 = Clock::now();
    const FrameObservation obs = observe_features(world, poses[i], cfg.intrinsics, cfg.noise, static_cast<int>(i), stamp);
    sim_ms += ms_since(t0);

    t0 = Clock::now();
    TrackResult r = tracker.track(obs, poses.front());
    track_ms += ms_since(t0);

    res.estimate.push_back(stamp, r.frame.pose);
    res.ground_truth.push_back(stamp, poses[i]);
    res.metrics.frames_mf += r.frame.mf_tracked ? 1 : 0;
    if (r.keyframe) {
      dense.push(make_job(r, res.map));
      ++res.keyframes;
      res.keyframe_pixels += static_cast<long long>(cfg.intrinsics.width) * cfg.intrinsics.height;
    }
    res.log.push_back(std::move(r.log));
  }

  t0 = Clock::now();
  dense.finish();
  const double wait_ms = ms_since(t0);
  res.surfels = dense.map().surfels();

  t0 = Clock::now();
  res.metrics.frames_total = static_cast<int>(poses.size());
  res.metrics.ate_rmse_m = ate_rmse(res.estimate, res.ground_truth, cfg.output.align);
  res.metrics.drift_m = loop_drift(res.estimate);
  res.recon = reconstruction_error(res.surfels, world);
  res.metrics.recon_error_mean_m = res.recon.mean;
  res.metrics.runtime_ms = {{"simulate", sim_ms},
                            {"track", track_ms},
                            {"dense", dense.busy_ms()},
                            {"dense_wait", wait_ms},
                            {"metrics", ms_since(t0)}};
  res.metrics.runtime_ms["total"] = ms_since(t_total);
  return res;
}

void write_artifacts(const ExperimentResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  write_tum(dir / "est.tum", result.estimate);
  write_tum(dir / "gt.tum", result.ground_truth);
  export_ply(result.surfels, dir / "surfels.ply");
  write_tracking_csv(dir / "tracking.csv", result.log);
  write_metrics(dir / "metrics.json", result.metrics);
}

void write_simulation(const ExperimentConfig& cfg, const std::filesystem::path& dir, bool depth_png) {
  std::error_code ec;
  std::filesystem::create_directories(depth_png ? dir / "depth" : dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  const WorldModel world = build_world(cfg.scene);
  const std::vector<Pose> poses = sample_trajectory(cfg.trajectory, world);
  Trajectory gt;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    gt.push_back(frame_timestamp(static_cast<int>(i)), poses[i]);
    if (!depth_png) continue;
    const FrameObservation obs = observe_features(world, poses[i], cfg.intrinsics, cfg.noise, static_cast<int>(i),
                                                  frame_timestamp(static_cast<int>(i)));
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    write_depth_png(dir / "depth" / name, obs.depth);
  }
  write_tum(dir / "gt.tum", gt);
}

std::vector<double> rotation_errors(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size()) throw Error(ErrorCode::LengthMismatch, "trajectories differ in length");
  std::vector<double> out(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) out[i] = rotation_angle(est[i].pose.rotation, gt[i].pose.rotation);
  return out;
}

double regression_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "x and y differ in length");
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0.0) throw Error(ErrorCode::DegenerateSystem, "slope needs two distinct x values");
  return sxy / sxx;
}

}  // namespace mslam
