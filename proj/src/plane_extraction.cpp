#include "mslam/plane_extraction.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <tuple>

#include <Eigen/Eigenvalues>

namespace mslam {

namespace {

// Weighted normal equations of inverse depth as an affine function of the
// normalized image coordinates. Exact for a plane: 1/z = -(n . r) / d with
// r = (x, y, 1).
struct Moments {
  Mat3 ata = Mat3::Zero();
  Vec3 atb = Vec3::Zero();
  double btb = 0.0;
  double weight = 0.0;
  int count = 0;
  Vec3 point_sum = Vec3::Zero();

  void add(const Vec3& r, double inv_z, double w) {
    ata += w * r * r.transpose();
    atb += w * inv_z * r;
    btb += w * inv_z * inv_z;
    weight += w;
    ++count;
    point_sum += r / inv_z;
  }
  void merge(const Moments& o) {
    ata += o.ata;
    atb += o.atb;
    btb += o.btb;
    weight += o.weight;
    count += o.count;
    point_sum += o.point_sum;
  }
  Vec3 centroid() const { return point_sum / count; }
  // Per-point chi2 of these samples under the model 1/z = g . r.
  double chi2_at(const Vec3& g) const {
    return std::max(btb - 2.0 * g.dot(atb) + g.dot(ata * g), 0.0) / count;
  }

  struct Fit {
    PlaneParams plane;
    Vec3 g = Vec3::Zero();      // 1/z = g . r
    double chi2 = 0.0;          // per point; weights are inverse variances
    double normal_sigma = 0.0;  // radians
  };
  Fit fit() const {
    const Eigen::LDLT<Mat3> ldlt(ata);
    const Vec3 g = ldlt.solve(atb);
    const double gn = g.norm();
    const double chi2 = chi2_at(g);
    const Vec3 n = -g / gn;
    const Mat3 proj = Mat3::Identity() - n * n.transpose();
    const Mat3 cov = proj * ldlt.solve(Mat3::Identity()) * proj / (gn * gn);
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    return {{n, 1.0 / gn}, g, chi2, std::sqrt(std::max(es.eigenvalues()(2), 0.0))};
  }
};

struct Region {
  Moments moments;
  PlaneParams plane;
  Vec3 g = Vec3::Zero();
  double chi2 = 0.0;
  double normal_sigma = 0.0;
  int parent = -1;
  std::vector<int> cells;

  void refit() {
    const auto f = moments.fit();
    plane = f.plane;
    g = f.g;
    chi2 = f.chi2;
    normal_sigma = f.normal_sigma;
  }
};

int find_root(std::vector<Region>& regions, int i) {
  while (regions[i].parent >= 0) {
    if (regions[regions[i].parent].parent >= 0) regions[i].parent = regions[regions[i].parent].parent;
    i = regions[i].parent;
  }
  return i;
}

double abs_angle(const Vec3& a, const Vec3& b) {
  // Fitted normals carry arbitrary sign.
  return std::min(angle_between(a, b), angle_between(a, -b));
}

}  // namespace

double PlaneSegment::max_cloud_distance() const {
  double m = 0.0;
  for (const auto& p : cloud) m = std::max(m, std::abs(params.signed_distance(p)));
  return m;
}

PlaneParams fit_plane(std::span<const Vec3> points, std::span<const double> weights) {
  // Two-pass: centroid first, then the centered scatter, for precision.
  double wsum = 0.0;
  Vec3 c = Vec3::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    wsum += w;
    c += w * points[i];
  }
  c /= wsum;
  Mat3 scatter = Mat3::Zero();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const Vec3 r = points[i] - c;
    scatter += w * r * r.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(scatter);
  const Vec3 n = es.eigenvectors().col(0).normalized();
  return {n, -n.dot(c)};
}

namespace {

std::vector<Vec3> downsample(std::span<const Vec3> cloud, double voxel, int min_points, const PlaneParams* plane) {
  std::map<std::array<long long, 3>, std::pair<Vec3, int>> cells;
  for (const auto& p : cloud) {
    const Vec3 q = plane ? Vec3(p - plane->signed_distance(p) * plane->normal) : p;
    const std::array<long long, 3> key{static_cast<long long>(std::floor(q.x() / voxel)),
                                       static_cast<long long>(std::floor(q.y() / voxel)),
                                       static_cast<long long>(std::floor(q.z() / voxel))};
    auto& [sum, n] = cells.try_emplace(key, Vec3::Zero(), 0).first->second;
    sum += p;
    ++n;
  }
  std::vector<Vec3> out;
  out.reserve(cells.size());
  for (const auto& [key, acc] : cells) {
    if (acc.second >= min_points) out.push_back(acc.first / acc.second);
  }
  return out;
}

}  // namespace

std::vector<Vec3> voxel_downsample(std::span<const Vec3> cloud, double voxel, int min_points) {
  return downsample(cloud, voxel, min_points, nullptr);
}

std::vector<Vec3> voxel_downsample_on_plane(std::span<const Vec3> cloud, const PlaneParams& plane, double voxel,
                                            int min_points) {
  return downsample(cloud, voxel, min_points, &plane);
}

bool stability_check(const PlaneSegment& segment, double threshold) {
  return segment.max_cloud_distance() <= threshold;
}

std::vector<PlaneSegment> extract_planes(const DepthImage& depth, const CameraIntrinsics& intr,
                                         const ExtractionConfig& cfg) {
  const int w = depth.width;
  const int h = depth.height;
  const int cs = cfg.cell_size;
  const int ncx = w / cs;
  const int ncy = h / cs;
  if (ncx == 0 || ncy == 0) return {};

  auto sigma = [&](double z) { return std::max(cfg.sigma_floor, cfg.depth_sigma * z * z); };
  auto usable = [&](int u, int v) {
    const double z = depth.at(u, v);
    return z > 0.0 && z <= cfg.max_depth;
  };
  auto point_at = [&](int u, int v) { return intr.back_project(u, v, depth.at(u, v)); };
  auto ray_at = [&](int u, int v) { return intr.ray(u, v); };
  // Inverse-depth weight; sigma(1/z) = sigma(z) / z^2.
  auto inv_weight = [&](double z) {
    const double s = sigma(z) / (z * z);
    return 1.0 / (s * s);
  };
  constexpr double kChi2Gate = 1.6 * 1.6;

  // Per-cell fits on the decimated cloud.
  const int samples_per_cell = ((cs + cfg.stride - 1) / cfg.stride) * ((cs + cfg.stride - 1) / cfg.stride);
  std::vector<Region> regions(static_cast<std::size_t>(ncx) * ncy);
  std::vector<bool> cell_ok(regions.size(), false);
  for (int cy = 0; cy < ncy; ++cy) {
    for (int cx = 0; cx < ncx; ++cx) {
      const int ci = cy * ncx + cx;
      Region& r = regions[ci];
      r.cells = {ci};
      for (int v = cy * cs; v < (cy + 1) * cs; v += cfg.stride) {
        for (int u = cx * cs; u < (cx + 1) * cs; u += cfg.stride) {
          if (!usable(u, v)) continue;
          const double z = depth.at(u, v);
          r.moments.add(ray_at(u, v), 1.0 / z, inv_weight(z));
        }
      }
      if (r.moments.count < (3 * samples_per_cell) / 4) continue;
      r.refit();
      cell_ok[ci] = r.chi2 <= kChi2Gate;
    }
  }

  // Agglomerative merging of adjacent regions, most similar normals first.
  auto merge_ok = [&](int a, int b) {
    const Region& ra = regions[a];
    const Region& rb = regions[b];
    const Region& big = ra.moments.weight >= rb.moments.weight ? ra : rb;
    const Region& small = ra.moments.weight >= rb.moments.weight ? rb : ra;
    Moments merged = ra.moments;
    merged.merge(rb.moments);
    const double merged_chi2 = merged.fit().chi2;
    if (merged_chi2 > kChi2Gate) return false;
    const Vec3 c = small.moments.centroid();
    const double centroid_sigma = sigma(c.z()) / std::sqrt(static_cast<double>(small.moments.count));
    const double dist_gate = std::max(cfg.merge_dist, 3.0 * centroid_sigma);
    const double angle_gate =
        std::max(cfg.merge_angle, 3.0 * std::hypot(ra.normal_sigma, rb.normal_sigma));
    const bool geometric = abs_angle(ra.plane.normal, rb.plane.normal) < angle_gate &&
                           std::abs(big.plane.signed_distance(c)) < dist_gate;
    // A small noisy region whose points already sit on the big plane also joins.
    const bool absorbed = small.cells.size() == 1 && big.cells.size() > 1;
    return geometric || absorbed;
  };

  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::tuple<double, int, int>> pairs;
    for (int cy = 0; cy < ncy; ++cy) {
      for (int cx = 0; cx < ncx; ++cx) {
        const int ci = cy * ncx + cx;
        if (!cell_ok[ci]) continue;
        for (const auto& [dx, dy] : {std::pair{1, 0}, std::pair{0, 1}}) {
          if (cx + dx >= ncx || cy + dy >= ncy) continue;
          const int cj = (cy + dy) * ncx + cx + dx;
          if (!cell_ok[cj]) continue;
          const int a = find_root(regions, ci);
          const int b = find_root(regions, cj);
          if (a == b) continue;
          pairs.emplace_back(abs_angle(regions[a].plane.normal, regions[b].plane.normal),
                             std::min(a, b), std::max(a, b));
        }
      }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    for (const auto& [angle, a0, b0] : pairs) {
      const int a = find_root(regions, a0);
      const int b = find_root(regions, b0);
      if (a == b || !merge_ok(a, b)) continue;
      const int keep = std::min(a, b);
      const int drop = std::max(a, b);
      regions[keep].moments.merge(regions[drop].moments);
      regions[keep].cells.insert(regions[keep].cells.end(), regions[drop].cells.begin(),
                                 regions[drop].cells.end());
      regions[drop].parent = keep;
      regions[drop].cells.clear();
      regions[keep].refit();
      changed = true;
    }
  }

  // Candidate regions: at least two cells.
  std::vector<int> roots;
  for (int i = 0; i < static_cast<int>(regions.size()); ++i) {
    if (cell_ok[i] && regions[i].parent < 0 && regions[i].cells.size() >= 2) roots.push_back(i);
  }
  std::vector<int> cell_label(regions.size(), -1);
  for (std::size_t k = 0; k < roots.size(); ++k) {
    for (int c : regions[roots[k]].cells) cell_label[c] = static_cast<int>(k);
  }

  // Pixel-level assignment: each pixel goes to the plane among its own and
  // neighbouring cells' regions that best explains its inverse depth.
  constexpr double kPixelGate = 3.0;  // normalized residual
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!usable(u, v)) continue;
      const int cx = std::min(u / cs, ncx - 1);
      const int cy = std::min(v / cs, ncy - 1);
      const double z = depth.at(u, v);
      const Vec3 r = ray_at(u, v);
      const double sw = std::sqrt(inv_weight(z));
      int best = -1;
      double best_res = kPixelGate;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const int nx = cx + dx, ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= ncx || ny >= ncy) continue;
          const int k = cell_label[ny * ncx + nx];
          if (k < 0) continue;
          const double res = std::abs(1.0 / z - regions[roots[k]].g.dot(r)) * sw;
          if (res < best_res) {
            best_res = res;
            best = k;
          }
        }
      }
      label[v * w + u] = best;
    }
  }

  struct Candidate {
    std::vector<int> mask;
    std::vector<Vec3> rays;
    std::vector<double> inv_z;
    std::vector<double> wts;
    Moments moments;
    Moments::Fit fit;

    void refit() {
      moments = Moments();
      for (std::size_t i = 0; i < rays.size(); ++i) moments.add(rays[i], inv_z[i], wts[i]);
      fit = moments.fit();
    }
    double chi2() const { return fit.chi2 * moments.count; }
    double normalized_residual(std::size_t i) const {
      return std::abs(inv_z[i] - fit.g.dot(rays[i])) * std::sqrt(wts[i]);
    }
    void append(const Candidate& o) {
      mask.insert(mask.end(), o.mask.begin(), o.mask.end());
      rays.insert(rays.end(), o.rays.begin(), o.rays.end());
      inv_z.insert(inv_z.end(), o.inv_z.begin(), o.inv_z.end());
      wts.insert(wts.end(), o.wts.begin(), o.wts.end());
    }
  };
  auto collect = [&](const std::vector<int>& labels, int k) -> std::optional<Candidate> {
    Candidate c;
    for (int i = 0; i < w * h; ++i) {
      if (labels[i] != k) continue;
      const double z = depth.at(i % w, i / w);
      c.mask.push_back(i);
      c.rays.push_back(ray_at(i % w, i / w));
      c.inv_z.push_back(1.0 / z);
      c.wts.push_back(inv_weight(z));
    }
    if (static_cast<int>(c.mask.size()) < cfg.min_support) return std::nullopt;
    c.refit();
    // Trim pixels that are outliers relative to the robust residual scale,
    // e.g. a neighbouring surface grazing the plane, then refit.
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<double> norm_res(c.mask.size());
      for (std::size_t i = 0; i < c.mask.size(); ++i) norm_res[i] = c.normalized_residual(i);
      std::vector<double> sorted = norm_res;
      std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
      const double scale = std::max(1.4826 * sorted[sorted.size() / 2], 1e-6);
      std::size_t keep = 0;
      for (std::size_t i = 0; i < c.mask.size(); ++i) {
        if (norm_res[i] > 3.0 * scale) continue;
        c.mask[keep] = c.mask[i];
        c.rays[keep] = c.rays[i];
        c.inv_z[keep] = c.inv_z[i];
        c.wts[keep] = c.wts[i];
        ++keep;
      }
      if (keep == c.mask.size()) break;
      c.mask.resize(keep);
      c.rays.resize(keep);
      c.inv_z.resize(keep);
      c.wts.resize(keep);
      if (static_cast<int>(keep) < cfg.min_support) return std::nullopt;
      c.refit();
    }
    return c;
  };

  std::vector<Candidate> cands;
  for (std::size_t k = 0; k < roots.size(); ++k) {
    if (auto c = collect(label, static_cast<int>(k))) cands.push_back(std::move(*c));
  }

  // Fragments of one surface: merge while the joint fit explains both as
  // well as the separate fits do, or when the smaller one's pixels already
  // sit on the larger one's plane.
  constexpr double kMergeChi2 = 25.0;
  constexpr double kAbsorbChi2 = 2.0;  // per pixel
  while (cands.size() > 1) {
    double best = 1.0;
    std::pair<std::size_t, std::size_t> best_pair{0, 0};
    for (std::size_t i = 0; i < cands.size(); ++i) {
      for (std::size_t j = i + 1; j < cands.size(); ++j) {
        Moments m = cands[i].moments;
        m.merge(cands[j].moments);
        const double delta = m.fit().chi2 * m.count - cands[i].chi2() - cands[j].chi2();
        const bool i_big = cands[i].moments.count >= cands[j].moments.count;
        const Candidate& big = i_big ? cands[i] : cands[j];
        const Candidate& small = i_big ? cands[j] : cands[i];
        const double score =
            std::min(delta / kMergeChi2, small.moments.chi2_at(big.fit.g) / kAbsorbChi2);
        if (score < best) {
          best = score;
          best_pair = {i, j};
        }
      }
    }
    if (best >= 1.0) break;
    const auto [i, j] = best_pair;
    Candidate& a = cands[i];
    a.append(cands[j]);
    a.refit();
    cands.erase(cands.begin() + static_cast<std::ptrdiff_t>(j));
  }

  // Re-assign pixels against the merged planes, each considered only near
  // where it was found, then refit.
  {
    const int nc = static_cast<int>(cands.size());
    std::vector<std::vector<char>> near(nc, std::vector<char>(static_cast<std::size_t>(ncx) * ncy, 0));
    for (int k = 0; k < nc; ++k) {
      for (int i : cands[k].mask) {
        const int cx = std::min((i % w) / cs, ncx - 1);
        const int cy = std::min((i / w) / cs, ncy - 1);
        for (int dy = -2; dy <= 2; ++dy) {
          for (int dx = -2; dx <= 2; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (nx >= 0 && ny >= 0 && nx < ncx && ny < ncy) near[k][ny * ncx + nx] = 1;
          }
        }
      }
    }
    std::fill(label.begin(), label.end(), -1);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        if (!usable(u, v)) continue;
        const int cell = std::min(v / cs, ncy - 1) * ncx + std::min(u / cs, ncx - 1);
        const double z = depth.at(u, v);
        const Vec3 r = ray_at(u, v);
        const double sw = std::sqrt(inv_weight(z));
        // Where two planes predict nearly the same depth, typically along a
        // crease, the pixel is left out of both. The test uses the models
        // only, so the kept pixels are not selected by their noise.
        int best = -1;
        double best_res = kPixelGate;
        for (int k = 0; k < nc; ++k) {
          if (!near[k][cell]) continue;
          const double res = std::abs(1.0 / z - cands[k].fit.g.dot(r)) * sw;
          if (res < best_res) {
            best_res = res;
            best = k;
          }
        }
        if (best < 0) continue;
        const double pred = cands[best].fit.g.dot(r);
        bool ambiguous = false;
        for (int k = 0; k < nc && !ambiguous; ++k) {
          if (k == best || !near[k][cell]) continue;
          ambiguous = std::abs(pred - cands[k].fit.g.dot(r)) * sw < 2.0 * kPixelGate;
        }
        if (!ambiguous) label[v * w + u] = best;
      }
    }
    std::vector<Candidate> refined;
    for (int k = 0; k < nc; ++k) {
      if (auto c = collect(label, k)) refined.push_back(std::move(*c));
    }
    cands = std::move(refined);
  }

  std::vector<PlaneSegment> out;
  for (auto& c : cands) {
    if (c.fit.normal_sigma > cfg.max_normal_sigma) continue;
    PlaneSegment seg;
    seg.params = c.fit.plane.oriented_toward(Vec3::Zero());
    seg.normal_sigma = c.fit.normal_sigma;
    seg.inlier_count_raw = static_cast<int>(c.mask.size());
    seg.pixel_mask = std::move(c.mask);
    std::sort(seg.pixel_mask.begin(), seg.pixel_mask.end());
    std::vector<Vec3> pts;
    pts.reserve(seg.pixel_mask.size());
    for (int i : seg.pixel_mask) pts.push_back(point_at(i % w, i / w));
    seg.cloud = voxel_downsample_on_plane(pts, seg.params, cfg.voxel, cfg.min_voxel_points);
    if (seg.cloud.empty()) continue;
    if (!stability_check(seg, cfg.stability_threshold)) continue;
    out.push_back(std::move(seg));
  }
  std::stable_sort(out.begin(), out.end(), [](const PlaneSegment& a, const PlaneSegment& b) {
    return a.inlier_count_raw > b.inlier_count_raw;
  });
  return out;
}

std::optional<int> match_plane(const PlaneSegment& obs, const Pose& pose,
                               std::span<const MapPlaneView> map_planes, const MatchThresholds& th) {
  const Pose t_wc = pose.inverse();
  const PlaneParams obs_w = transform_plane(t_wc, obs.params);
  std::vector<Vec3> cloud_w;
  cloud_w.reserve(obs.cloud.size());
  for (const auto& p : obs.cloud) cloud_w.push_back(t_wc.transform(p));
  Vec3 obs_center = Vec3::Zero();
  for (const auto& p : cloud_w) obs_center += p;
  if (!cloud_w.empty()) obs_center /= static_cast<double>(cloud_w.size());
  double obs_radius = 0.0;
  for (const auto& p : cloud_w) obs_radius = std::max(obs_radius, (p - obs_center).norm());

  std::optional<int> best;
  double best_angle = std::numeric_limits<double>::infinity();
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& mp : map_planes) {
    const double angle = angle_between(obs_w.normal, mp.plane.normal);
    if (angle >= th.max_normal_angle) continue;
    // Mutual mean point-plane distance between the two supports.
    double d_obs = std::abs(mp.plane.d - obs_w.d);
    if (!cloud_w.empty()) {
      d_obs = 0.0;
      for (const auto& p : cloud_w) d_obs += std::abs(mp.plane.signed_distance(p));
      d_obs /= static_cast<double>(cloud_w.size());
    }
    // Only the part of the map support overlapping the observation counts.
    double d_map = 0.0;
    int n_map = 0;
    for (const auto& p : mp.cloud) {
      if ((p - obs_center).norm() > obs_radius + 0.5) continue;
      d_map += std::abs(obs_w.signed_distance(p));
      ++n_map;
    }
    if (n_map > 0) d_map /= n_map;
    const double dist = std::max(d_obs, d_map);
    if (dist >= th.max_point_plane_dist) continue;
    if (angle < best_angle || (angle == best_angle && dist < best_dist)) {
      best = mp.id;
      best_angle = angle;
      best_dist = dist;
    }
  }
  return best;
}

std::vector<std::uint8_t> planar_mask(std::span<const PlaneSegment> segments, int width, int height) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height, 0);
  for (const auto& s : segments) {
    for (int i : s.pixel_mask) mask[i] = 1;
  }
  return mask;
}

}  // namespace mslam
