#include "mslam/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "mslam/errors.hpp"

namespace mslam {

namespace {

using Mat36 = Eigen::Matrix<double, 3, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;

Mat23 projection_jacobian(const CameraIntrinsics& intr, const Vec3& p) {
  const double iz = 1.0 / p.z();
  Mat23 j;
  j << intr.fx * iz, 0.0, -intr.fx * p.x() * iz * iz, 0.0, intr.fy * iz, -intr.fy * p.y() * iz * iz;
  return j;
}

// d(R Pw + t) / d(omega, upsilon).
Mat36 point_motion_jacobian(const Pose& pose, const Vec3& p_w) {
  Mat36 j;
  j.leftCols<3>() = -skew(pose.rotation * p_w);
  j.rightCols<3>() = Mat3::Identity();
  return j;
}

// d(phi, psi) / dn for a unit normal.
Mat23 angles_jacobian(const Vec3& n) {
  const double rho2 = std::max(n.x() * n.x() + n.y() * n.y(), 1e-300);
  Mat23 j;
  j.row(0) << -n.y() / rho2, n.x() / rho2, 0.0;
  j.row(1) << 0.0, 0.0, 1.0 / std::sqrt(rho2);
  return j;
}

Vec2 angle_difference(const Vec3& obs, const Vec3& pred) {
  const Vec2 a = normal_angles(obs);
  const Vec2 b = normal_angles(pred);
  return {wrap_angle(a.x() - b.x()), a.y() - b.y()};
}

double robust_weight(double s, double delta) { return s <= delta * delta ? 1.0 : delta / std::sqrt(s); }

struct Accumulator {
  Mat6 h = Mat6::Zero();
  Vec6 g = Vec6::Zero();
  double cost = 0.0;
  std::array<int, kResidualClasses> inliers{};

  template <int N>
  void add(const Eigen::Matrix<double, N, 1>& e, const Eigen::Matrix<double, N, N>& info,
           const Eigen::Matrix<double, N, 6>* jac, double delta, ResidualClass cls, bool count = true) {
    const double s = e.dot(info * e);
    cost += huber(s, delta);
    if (count && s <= delta * delta) ++inliers[static_cast<int>(cls)];
    if (jac) {
      const double w = robust_weight(s, delta);
      h += w * jac->transpose() * info * *jac;
      g += w * jac->transpose() * info * e;
    }
  }
};

constexpr double kMinProjectDepth = 1e-3;

// Robust cost (and optionally normal equations) over the selected classes.
Accumulator accumulate(const Pose& pose, const MatchSet& ms, const NoiseModel& noise,
                       const CameraIntrinsics& intr, bool with_jac, bool structural) {
  Accumulator acc;
  // Matches whose landmark falls behind the camera have no projection; they
  // are left out like any other gross outlier.
  auto in_front = [&](const Vec3& p_w) { return pose.transform(p_w).z() > kMinProjectDepth; };
  for (const auto& m : ms.points) {
    if (!in_front(m.world)) continue;
    Eigen::Matrix<double, 2, 6> j;
    const Vec2 e = point_residual(pose, intr, m, with_jac ? &j : nullptr);
    acc.add<2>(e, noise.inv_cov_point, with_jac ? &j : nullptr, noise.huber_delta[0], ResidualClass::Point);
  }
  const Eigen::Matrix<double, 1, 1> line_info(noise.inv_cov_line);
  for (const auto& m : ms.lines) {
    if (!in_front(m.world.p_start) || !in_front(m.world.p_end)) continue;
    Eigen::Matrix<double, 2, 6> j;
    const Vec2 e = line_residual(pose, intr, m, with_jac ? &j : nullptr);
    bool both = true;
    for (int k = 0; k < 2; ++k) {
      const Eigen::Matrix<double, 1, 1> ek(e(k));
      const Eigen::Matrix<double, 1, 6> jk = j.row(k);
      acc.add<1>(ek, line_info, with_jac ? &jk : nullptr, noise.huber_delta[1], ResidualClass::Line, false);
      both = both && e(k) * e(k) * noise.inv_cov_line <= noise.huber_delta[1] * noise.huber_delta[1];
    }
    if (both) ++acc.inliers[1];
  }
  for (const auto& m : ms.planes) {
    Eigen::Matrix<double, 3, 6> j;
    const Vec3 e = plane_residual(pose, m, with_jac ? &j : nullptr);
    acc.add<3>(e, noise.inv_cov_plane, with_jac ? &j : nullptr, noise.huber_delta[2], ResidualClass::Plane);
  }
  if (!structural) return acc;
  for (const auto& m : ms.parallels) {
    Eigen::Matrix<double, 2, 6> j;
    const Vec2 e = parallel_residual(pose, m, with_jac ? &j : nullptr);
    acc.add<2>(e, noise.inv_cov_parallel, with_jac ? &j : nullptr, noise.huber_delta[3],
               ResidualClass::Parallel);
  }
  for (const auto& m : ms.perpendiculars) {
    Eigen::Matrix<double, 2, 6> j;
    const auto e = perpendicular_residual(pose, m, with_jac ? &j : nullptr);
    if (!e) continue;
    acc.add<2>(*e, noise.inv_cov_perp, with_jac ? &j : nullptr, noise.huber_delta[4],
               ResidualClass::Perpendicular);
  }
  return acc;
}

template <int N>
bool full_rank(const Eigen::Matrix<double, N, N>& h) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es(h);
  const auto ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  return top > 0.0 && ev.minCoeff() > 1e-12 * top;
}

// Levenberg-Marquardt with Marquardt (diagonal) damping on the first N
// parameters of the 6-vector, or the last 3 for translation-only.
OptimizationResult run_lm(const Pose& init, const MatchSet& ms, const NoiseModel& noise,
                          const CameraIntrinsics& intr, const OptimizerConfig& cfg, bool translation_only) {
  const bool structural = !translation_only;
  OptimizationResult res;
  res.pose = init;
  Accumulator acc = accumulate(res.pose, ms, noise, intr, true, structural);
  res.initial_cost = acc.cost;
  res.cost_trace.push_back(acc.cost);

  auto rank_ok = [&](const Accumulator& a) {
    if (translation_only) return full_rank<3>(a.h.bottomRightCorner<3, 3>().eval());
    return full_rank<6>(a.h);
  };
  if (!rank_ok(acc)) {
    throw Error(ErrorCode::DegenerateSystem, translation_only ? "translation is under-constrained"
                                                              : "pose is under-constrained");
  }

  double lambda = cfg.initial_lambda;
  while (res.iterations < cfg.max_iterations) {
    if (acc.cost <= 0.0) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    Pose candidate;
    Accumulator next;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      Vec6 step = Vec6::Zero();
      if (translation_only) {
        Mat3 a = acc.h.bottomRightCorner<3, 3>();
        a.diagonal() *= 1.0 + lambda;
        step.tail<3>() = a.ldlt().solve(-acc.g.tail<3>());
      } else {
        Mat6 a = acc.h;
        a.diagonal() *= 1.0 + lambda;
        step = a.ldlt().solve(-acc.g);
      }
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      candidate = res.pose;
      if (!translation_only) candidate.rotation = so3_exp(step.head<3>()) * res.pose.rotation;
      candidate.translation = res.pose.translation + step.tail<3>();
      next = accumulate(candidate, ms, noise, intr, true, structural);
      if (next.cost < acc.cost) {
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    ++res.iterations;
    if (!accepted) {
      res.converged = true;
      break;
    }
    const double rel = (acc.cost - next.cost) / acc.cost;
    res.pose = candidate;
    acc = next;
    res.cost_trace.push_back(acc.cost);
    lambda = std::max(lambda / 10.0, 1e-12);
    if (rel < cfg.relative_tolerance) {
      res.converged = true;
      break;
    }
  }
  if (!translation_only) res.pose.rotation = closest_rotation(res.pose.rotation);
  const Accumulator fin = accumulate(res.pose, ms, noise, intr, false, structural);
  res.final_cost = fin.cost;
  res.inliers = fin.inliers;
  return res;
}

}  // namespace

double huber(double s, double delta) {
  return s <= delta * delta ? s : 2.0 * delta * std::sqrt(s) - delta * delta;
}

Vec2 point_residual(const Pose& pose, const CameraIntrinsics& intr, const PointMatch& m,
                    Eigen::Matrix<double, 2, 6>* jac) {
  const Vec3 p_c = pose.transform(m.world);
  const Vec2 e = m.pixel - project(intr, p_c);
  if (jac) *jac = -projection_jacobian(intr, p_c) * point_motion_jacobian(pose, m.world);
  return e;
}

Vec2 line_residual(const Pose& pose, const CameraIntrinsics& intr, const LineMatch& m,
                   Eigen::Matrix<double, 2, 6>* jac) {
  Vec2 e;
  const Eigen::RowVector2d ab(m.line.a, m.line.b);
  int row = 0;
  for (const Vec3* x : {&m.world.p_start, &m.world.p_end}) {
    const Vec3 p_c = pose.transform(*x);
    e(row) = m.line.eval(project(intr, p_c));
    if (jac) jac->row(row) = ab * projection_jacobian(intr, p_c) * point_motion_jacobian(pose, *x);
    ++row;
  }
  return e;
}

Vec3 plane_residual(const Pose& pose, const PlaneMatch& m, Eigen::Matrix<double, 3, 6>* jac) {
  const PlaneParams pred = transform_plane(pose, m.world);
  const MinimalPlane qo = plane_minimal(m.obs);
  const MinimalPlane qp = plane_minimal(pred);
  const Vec3 e(wrap_angle(qo.phi - qp.phi), qo.psi - qp.psi, qo.d - qp.d);
  if (jac) {
    const Vec3& n = pred.normal;
    const Mat3 dn_dw = -skew(n);
    Eigen::Matrix<double, 3, 6> dq = Eigen::Matrix<double, 3, 6>::Zero();
    dq.block<2, 3>(0, 0) = angles_jacobian(n) * dn_dw;
    dq.block<1, 3>(2, 0) = pose.translation.transpose() * skew(n);
    dq.block<1, 3>(2, 3) = -n.transpose();
    *jac = -dq;
  }
  return e;
}

Vec2 parallel_residual(const Pose& pose, const NormalMatch& m, Eigen::Matrix<double, 2, 6>* jac) {
  const Vec3 pred = pose.rotation * m.world_normal;
  const Vec2 e = angle_difference(m.obs_normal, pred);
  if (jac) {
    jac->setZero();
    jac->leftCols<3>() = angles_jacobian(pred) * skew(pred);
  }
  return e;
}

std::optional<Vec2> perpendicular_residual(const Pose& pose, const NormalMatch& m,
                                           Eigen::Matrix<double, 2, 6>* jac) {
  const Vec3 pred = pose.rotation * m.world_normal;
  const Vec3& n = m.obs_normal;
  const Vec3 axis = n.cross(pred);
  if (axis.norm() < 1e-6) return std::nullopt;
  const Mat3 r_perp = Eigen::AngleAxisd(std::numbers::pi / 2.0, axis.normalized()).toRotationMatrix();
  const Vec3 rotated = r_perp * n;
  const Vec2 e = angle_difference(rotated, pred);
  if (jac) {
    // r_perp * n is the unit projection of pred onto the plane orthogonal to n.
    const Vec3 w = pred - n.dot(pred) * n;
    const double wn = w.norm();
    const Vec3 p = w / wn;
    const Mat3 dp_dm = (Mat3::Identity() - p * p.transpose()) / wn * (Mat3::Identity() - n * n.transpose());
    const Eigen::Matrix<double, 2, 3> de_dm = angles_jacobian(p) * dp_dm - angles_jacobian(pred);
    jac->setZero();
    jac->leftCols<3>() = de_dm * (-skew(pred));
  }
  return e;
}

ResidualReport residuals(const Pose& pose, const MatchSet& ms, const NoiseModel& noise,
                         const CameraIntrinsics& intr) {
  ResidualReport rep;
  std::vector<double> stacked;
  auto in_front = [&](const Vec3& p_w) { return pose.transform(p_w).z() > kMinProjectDepth; };
  for (const auto& m : ms.points) {
    if (!in_front(m.world)) continue;
    const Vec2 e = point_residual(pose, intr, m);
    stacked.insert(stacked.end(), {e.x(), e.y()});
  }
  for (const auto& m : ms.lines) {
    if (!in_front(m.world.p_start) || !in_front(m.world.p_end)) continue;
    const Vec2 e = line_residual(pose, intr, m);
    stacked.insert(stacked.end(), {e.x(), e.y()});
  }
  for (const auto& m : ms.planes) {
    const Vec3 e = plane_residual(pose, m);
    stacked.insert(stacked.end(), {e.x(), e.y(), e.z()});
  }
  for (const auto& m : ms.parallels) {
    const Vec2 e = parallel_residual(pose, m);
    stacked.insert(stacked.end(), {e.x(), e.y()});
  }
  for (const auto& m : ms.perpendiculars) {
    if (const auto e = perpendicular_residual(pose, m)) stacked.insert(stacked.end(), {e->x(), e->y()});
  }
  rep.stacked = Eigen::Map<Eigen::VectorXd>(stacked.data(), static_cast<Eigen::Index>(stacked.size()));
  const Accumulator acc = accumulate(pose, ms, noise, intr, false, true);
  rep.cost = acc.cost;
  rep.inliers = acc.inliers;
  return rep;
}

int OptimizationResult::inlier_total() const {
  int n = 0;
  for (int c : inliers) n += c;
  return n;
}

OptimizationResult optimize_full_pose(const Pose& init, const MatchSet& matches, const NoiseModel& noise,
                                      const CameraIntrinsics& intr, const OptimizerConfig& config) {
  return run_lm(init, matches, noise, intr, config, false);
}

OptimizationResult optimize_translation(const Mat3& r_fixed, const Vec3& init_t, const MatchSet& matches,
                                        const NoiseModel& noise, const CameraIntrinsics& intr,
                                        const OptimizerConfig& config) {
  OptimizationResult res = run_lm(Pose{r_fixed, init_t}, matches, noise, intr, config, true);
  res.pose.rotation = r_fixed;
  return res;
}

Pose predict_pose(const Pose& prev, const std::optional<Pose>& prev_prev) {
  if (!prev_prev) return prev;
  const Pose velocity = prev * prev_prev->inverse();
  Pose out = velocity * prev;
  out.rotation = closest_rotation(out.rotation);
  return out;
}

namespace {

std::unordered_multimap<int, int> descriptor_index(const std::vector<PointObservation>& obs) {
  std::unordered_multimap<int, int> idx;
  for (int i = 0; i < static_cast<int>(obs.size()); ++i) idx.emplace(obs[i].descriptor, i);
  return idx;
}

std::unordered_multimap<int, int> descriptor_index(const std::vector<LineObservation>& obs) {
  std::unordered_multimap<int, int> idx;
  for (int i = 0; i < static_cast<int>(obs.size()); ++i) idx.emplace(obs[i].descriptor, i);
  return idx;
}

std::optional<Vec2> project_visible(const Pose& pose, const CameraIntrinsics& intr, const Vec3& p_w) {
  const Vec3 p_c = pose.transform(p_w);
  if (p_c.z() <= 0.05) return std::nullopt;
  const Vec2 px = project(intr, p_c);
  if (!intr.in_image(px)) return std::nullopt;
  return px;
}

// Nearest unmatched observation with the landmark's descriptor within radius.
std::optional<int> search_point(const Frame& frame, const std::unordered_multimap<int, int>& index,
                                const MapPoint& mp, const Vec2& px, double radius) {
  std::optional<int> best;
  double best_d = radius;
  const auto [lo, hi] = index.equal_range(mp.descriptor);
  for (auto it = lo; it != hi; ++it) {
    if (frame.point_matches[it->second]) continue;
    const double d = (frame.points[it->second].pixel - px).norm();
    if (d <= best_d) {
      best_d = d;
      best = it->second;
    }
  }
  return best;
}

std::optional<int> search_line(const Frame& frame, const std::unordered_multimap<int, int>& index,
                               const MapLine& ml, const Vec2& a, const Vec2& b, double radius) {
  std::optional<int> best;
  double best_d = radius;
  const auto [lo, hi] = index.equal_range(ml.descriptor);
  for (auto it = lo; it != hi; ++it) {
    if (frame.line_matches[it->second]) continue;
    const auto& o = frame.lines[it->second];
    const double d = std::min(std::max((o.p_start - a).norm(), (o.p_end - b).norm()),
                              std::max((o.p_start - b).norm(), (o.p_end - a).norm()));
    if (d <= best_d) {
      best_d = d;
      best = it->second;
    }
  }
  return best;
}

void match_planes(Frame& frame, const SparseMap& map, const MatchingConfig& config) {
  const auto views = map.plane_views();
  std::vector<bool> taken;
  for (std::size_t i = 0; i < frame.planes.size(); ++i) {
    frame.plane_matches[i] = match_plane(frame.planes[i], frame.pose, views, config.plane);
  }
  // One observation per map plane: keep the best-supported.
  for (std::size_t i = 0; i < frame.planes.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (frame.plane_matches[i] && frame.plane_matches[i] == frame.plane_matches[j]) {
        frame.plane_matches[i].reset();
        break;
      }
    }
  }
}

}  // namespace

void match_features(Frame& frame, const Frame& last, const SparseMap& map, const CameraIntrinsics& intr,
                    const MatchingConfig& config) {
  frame.reset_matches();
  const auto pidx = descriptor_index(frame.points);
  for (const auto& m : last.point_matches) {
    if (!m) continue;
    const MapPoint* mp = map.point(*m);
    if (!mp) continue;
    const auto px = project_visible(frame.pose, intr, mp->position);
    if (!px) continue;
    if (const auto hit = search_point(frame, pidx, *mp, *px, config.radius)) frame.point_matches[*hit] = mp->id;
  }
  const auto lidx = descriptor_index(frame.lines);
  for (const auto& m : last.line_matches) {
    if (!m) continue;
    const MapLine* ml = map.line(*m);
    if (!ml) continue;
    const auto a = project_visible(frame.pose, intr, ml->line.p_start);
    const auto b = project_visible(frame.pose, intr, ml->line.p_end);
    if (!a || !b) continue;
    if (const auto hit = search_line(frame, lidx, *ml, *a, *b, config.radius)) frame.line_matches[*hit] = ml->id;
  }
  match_planes(frame, map, config);
}

int match_local_map(Frame& frame, const LocalMap& local, const SparseMap& map, const CameraIntrinsics& intr,
                    const MatchingConfig& config) {
  int added = 0;
  std::vector<int> have;
  for (const auto& m : frame.point_matches) {
    if (m) have.push_back(*m);
  }
  std::sort(have.begin(), have.end());
  const auto pidx = descriptor_index(frame.points);
  for (int id : local.point_ids) {
    if (std::binary_search(have.begin(), have.end(), id)) continue;
    const MapPoint* mp = map.point(id);
    const auto px = project_visible(frame.pose, intr, mp->position);
    if (!px) continue;
    if (const auto hit = search_point(frame, pidx, *mp, *px, config.radius)) {
      frame.point_matches[*hit] = id;
      ++added;
    }
  }
  have.clear();
  for (const auto& m : frame.line_matches) {
    if (m) have.push_back(*m);
  }
  std::sort(have.begin(), have.end());
  const auto lidx = descriptor_index(frame.lines);
  for (int id : local.line_ids) {
    if (std::binary_search(have.begin(), have.end(), id)) continue;
    const MapLine* ml = map.line(id);
    const auto a = project_visible(frame.pose, intr, ml->line.p_start);
    const auto b = project_visible(frame.pose, intr, ml->line.p_end);
    if (!a || !b) continue;
    if (const auto hit = search_line(frame, lidx, *ml, *a, *b, config.radius)) {
      frame.line_matches[*hit] = id;
      ++added;
    }
  }
  match_planes(frame, map, config);
  return added;
}

MatchSet build_match_set(const Frame& frame, const SparseMap& map, const MatchingConfig& config) {
  MatchSet ms;
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto& m = frame.point_matches[i];
    if (!m) continue;
    if (const MapPoint* mp = map.point(*m)) {
      ms.points.push_back({frame.points[i].pixel, mp->position, static_cast<int>(i), *m});
    }
  }
  for (std::size_t i = 0; i < frame.lines.size(); ++i) {
    const auto& m = frame.line_matches[i];
    if (!m) continue;
    const MapLine* ml = map.line(*m);
    if (!ml) continue;
    const auto& o = frame.lines[i];
    if ((o.p_start - o.p_end).norm() < 1e-6) continue;
    ms.lines.push_back({line_function(o.p_start, o.p_end), ml->line, static_cast<int>(i), *m});
  }
  for (std::size_t i = 0; i < frame.planes.size(); ++i) {
    const auto& m = frame.plane_matches[i];
    if (m) {
      if (const MapPlane* mp = map.plane(*m)) {
        ms.planes.push_back({frame.planes[i].params, mp->plane, static_cast<int>(i), *m});
      }
    }
    const Vec3& n_c = frame.planes[i].params.normal;
    for (const auto& [id, mp] : map.planes()) {
      if (m && *m == id) continue;
      const Vec3 pred = frame.pose.rotation * mp.plane.normal;
      const double angle = angle_between(n_c, pred);
      if (angle < config.parallel_angle) {
        ms.parallels.push_back({n_c, mp.plane.normal, static_cast<int>(i), id});
      } else if (angle > std::numbers::pi - config.parallel_angle) {
        // Opposite-facing parallel plane: compare against the flipped normal.
        ms.parallels.push_back({n_c, -mp.plane.normal, static_cast<int>(i), id});
      } else if (std::abs(angle - std::numbers::pi / 2.0) < config.perpendicular_tol) {
        ms.perpendiculars.push_back({n_c, mp.plane.normal, static_cast<int>(i), id});
      }
    }
  }
  return ms;
}

int remove_outliers(Frame& frame, const MatchSet& ms, const NoiseModel& noise, const CameraIntrinsics& intr) {
  int removed = 0;
  auto behind = [&](const Vec3& p_w) { return frame.pose.transform(p_w).z() <= kMinProjectDepth; };
  for (const auto& m : ms.points) {
    const double d = noise.huber_delta[0];
    if (behind(m.world)) {
      frame.point_matches[m.obs_index].reset();
      ++removed;
      continue;
    }
    const Vec2 e = point_residual(frame.pose, intr, m);
    if (e.dot(noise.inv_cov_point * e) > d * d) {
      frame.point_matches[m.obs_index].reset();
      ++removed;
    }
  }
  for (const auto& m : ms.lines) {
    const double d = noise.huber_delta[1];
    if (behind(m.world.p_start) || behind(m.world.p_end)) {
      frame.line_matches[m.obs_index].reset();
      ++removed;
      continue;
    }
    const Vec2 e = line_residual(frame.pose, intr, m);
    if (noise.inv_cov_line * e.squaredNorm() > 2.0 * d * d) {
      frame.line_matches[m.obs_index].reset();
      ++removed;
    }
  }
  for (const auto& m : ms.planes) {
    const Vec3 e = plane_residual(frame.pose, m);
    const double d = noise.huber_delta[2];
    if (e.dot(noise.inv_cov_plane * e) > d * d) {
      frame.plane_matches[m.obs_index].reset();
      ++removed;
    }
  }
  return removed;
}

void write_tracking_csv(const std::filesystem::path& path, const std::vector<TrackingLogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "frame_id,branch,mf_tracked,mf_id,inliers_point,inliers_line,inliers_plane,inliers_parallel,"
         "inliers_perpendicular,final_cost,keyframe,keyframe_ratio,previous_ratio,new_landmarks,"
         "tx,ty,tz,qx,qy,qz,qw\n";
  out.precision(9);
  for (const auto& r : rows) {
    const Eigen::Quaterniond q(r.pose.rotation);
    out << r.frame_id << ',' << r.branch << ',' << (r.mf_tracked ? 1 : 0) << ','
        << (r.mf_id ? std::to_string(*r.mf_id) : "") << ',';
    for (int c : r.inliers) out << c << ',';
    out << r.final_cost << ',' << (r.keyframe ? 1 : 0) << ',' << r.keyframe_ratio << ',' << r.previous_ratio
        << ',' << r.new_landmarks << ',' << r.pose.translation.x() << ',' << r.pose.translation.y() << ','
        << r.pose.translation.z() << ',' << q.x() << ',' << q.y() << ',' << q.z() << ',' << q.w() << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

Tracker::Tracker(const CameraIntrinsics& intr, TrackerConfig config, SparseMap& map, ManhattanMap& manhattan)
    : intr_(intr), config_(std::move(config)), map_(map), manhattan_(manhattan) {}

Frame Tracker::make_frame(const FrameObservation& obs) const {
  Frame f;
  f.id = obs.index;
  f.timestamp = obs.timestamp;
  f.depth = obs.depth;
  f.points = obs.points;
  f.lines = obs.lines;
  f.planes = extract_planes(obs.depth, intr_, config_.extraction);
  f.reset_matches();
  return f;
}

std::optional<Pose> Tracker::frame_pose(int frame_id) const {
  if (const Keyframe* kf = map_.keyframe(frame_id)) return kf->pose;
  return std::nullopt;
}

OptimizationResult Tracker::solve(Frame& frame, const MatchSet& ms, bool translation_only) {
  try {
    const OptimizationResult res =
        translation_only
            ? optimize_translation(frame.pose.rotation, frame.pose.translation, ms, config_.noise, intr_,
                                   config_.optimizer)
            : optimize_full_pose(frame.pose, ms, config_.noise, intr_, config_.optimizer);
    frame.pose = res.pose;
    return res;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateSystem) {
      throw Error(ErrorCode::TrackingLost, "frame " + std::to_string(frame.id) + ": " + e.what());
    }
    throw;
  }
}

void Tracker::estimate_pose(Frame& frame, TrackingLogRow& log, bool& force_keyframe,
                            std::optional<ManhattanFrameObservation>& new_mf) {
  match_features(frame, *last_, map_, intr_, config_.matching);

  bool mf_tracked = false;
  frame.branch = "features";
  if (config_.use_mf) {
    auto mfs = detect_mfs(frame.planes, frame.plane_matches, config_.mf);
    std::vector<ManhattanFrameObservation> matched;
    for (auto& obs : mfs) {
      obs.mf_id = match_mf(obs, manhattan_);
      if (!obs.mf_id) {
        obs.mf_id = match_mf_by_orientation(obs, frame.pose.rotation, manhattan_,
                                            [this](int id) { return frame_pose(id); },
                                            config_.mf.orientation_match_tol);
      }
      if (obs.mf_id && frame_pose(manhattan_.find(*obs.mf_id)->reference_frame)) matched.push_back(obs);
    }
    if (!matched.empty()) {
      // The best-supported matched MF, even when a larger unmatched one exists.
      ManhattanFrameObservation obs = select_dominant(matched);
      const ManhattanEntry* entry = manhattan_.find(*obs.mf_id);
      const Pose ref = *frame_pose(entry->reference_frame);
      const Mat3 predicted_cm = frame.pose.rotation * ref.rotation.transpose() * entry->reference_rotation;
      obs.rotation = canonicalize_axes(obs.rotation, predicted_cm);
      frame.pose.rotation =
          drift_free_rotation(obs, *obs.mf_id, manhattan_, [this](int id) { return frame_pose(id); });
      manhattan_.extend(*obs.mf_id, obs.plane_map_ids);
      mf_tracked = true;
      frame.branch = "mf";
      log.mf_id = obs.mf_id;
    } else if (!mfs.empty()) {
      new_mf = select_dominant(mfs);
      force_keyframe = true;
      frame.branch = "new-mf";
    }
  }

  MatchSet ms = build_match_set(frame, map_, config_.matching);
  solve(frame, ms, mf_tracked);
  remove_outliers(frame, ms, config_.noise, intr_);

  // Local-map refinement.
  const LocalMap local = map_.local_map(frame);
  match_local_map(frame, local, map_, intr_, config_.matching);
  ms = build_match_set(frame, map_, config_.matching);
  OptimizationResult res = solve(frame, ms, mf_tracked);
  remove_outliers(frame, ms, config_.noise, intr_);

  frame.mf_tracked = mf_tracked;
  frame.has_pose = true;
  log.inliers = res.inliers;
  log.final_cost = res.final_cost;
  const int inliers = res.inliers[0] + res.inliers[1] + res.inliers[2];
  if (inliers < config_.min_inliers) {
    throw Error(ErrorCode::TrackingLost, "frame " + std::to_string(frame.id) + ": only " +
                                             std::to_string(inliers) + " inliers");
  }
}

TrackResult Tracker::track(const FrameObservation& obs, const Pose& initial_pose) {
  TrackResult out;
  Frame frame = make_frame(obs);
  TrackingLogRow& log = out.log;
  log.frame_id = frame.id;

  bool force_keyframe = false;
  std::optional<ManhattanFrameObservation> new_mf;
  if (!last_) {
    frame.pose = initial_pose;
    frame.has_pose = true;
    frame.branch = "init";
    force_keyframe = true;
    if (config_.use_mf) {
      const auto mfs = detect_mfs(frame.planes, frame.plane_matches, config_.mf);
      if (!mfs.empty()) new_mf = select_dominant(mfs);
    }
  } else {
    frame.pose = predict_pose(last_->pose, prev_last_pose_);
    estimate_pose(frame, log, force_keyframe, new_mf);
  }

  const std::optional<int> last_kf = map_.last_keyframe();
  const auto current_ids = frame.matched_point_ids();
  if (last_kf) log.keyframe_ratio = tracked_ratio(current_ids, map_.keyframe(*last_kf)->point_ids);
  if (last_) log.previous_ratio = tracked_ratio(current_ids, last_->matched_point_ids());
  const bool want_kf = force_keyframe || !last_kf ||
                       needs_keyframe(current_ids, map_.keyframe(*last_kf)->point_ids,
                                      map_.config().keyframe_ratio);
  if (want_kf) {
    KeyframeInsertion ins = map_.insert_keyframe(frame, intr_);
    log.keyframe = true;
    log.new_landmarks = ins.new_points + ins.new_lines + ins.new_planes;
    if (new_mf) {
      // Resolve the constituent planes now that they all have map ids.
      new_mf->plane_map_ids.clear();
      for (int s : new_mf->segment_indices) {
        if (frame.plane_matches[s]) new_mf->plane_map_ids.push_back(*frame.plane_matches[s]);
      }
      if (new_mf->plane_map_ids.size() >= 2) new_mf->mf_id = insert_mf(*new_mf, frame.id, manhattan_);
    }
    out.culled = map_.cull(manhattan_, frame.id);
    out.keyframe = std::move(ins);
  }

  log.branch = frame.branch;
  log.mf_tracked = frame.mf_tracked;
  log.pose = frame.pose;

  prev_last_pose_ = last_ ? std::optional<Pose>(last_->pose) : std::nullopt;
  out.frame = frame;
  last_ = std::move(frame);
  last_->depth = DepthImage();
  return out;
}

}  // namespace mslam
