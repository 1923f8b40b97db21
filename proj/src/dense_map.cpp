#include "mslam/dense_map.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/QR>

#include "mslam/errors.hpp"
#include "mslam/plane_extraction.hpp"

namespace mslam {

namespace {

struct Center {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
};

// Surface point at pixel (uc, vc): inverse depth is fitted as a quadratic in
// the pixel offsets, which is exact on planes and close on smooth curved
// surfaces, then back-projected.
std::optional<Vec3> surface_point(const DepthImage& depth, const CameraIntrinsics& intr,
                                  std::span<const int> pixels, double uc, double vc) {
  const int n = static_cast<int>(pixels.size());
  Eigen::MatrixXd a(n, 6);
  Eigen::VectorXd b(n);
  for (int k = 0; k < n; ++k) {
    const int u = pixels[k] % depth.width, v = pixels[k] / depth.width;
    const double du = u - uc, dv = v - vc;
    a.row(k) << 1.0, du, dv, du * du, du * dv, dv * dv;
    b(k) = 1.0 / depth.at(u, v);
  }
  for (int cols : {6, 3}) {
    const auto qr = a.leftCols(cols).colPivHouseholderQr();
    if (qr.rank() < cols) continue;
    const double inv_z = qr.solve(b)(0);
    if (inv_z > 0.0) return intr.back_project(uc, vc, 1.0 / inv_z);
  }
  return std::nullopt;
}

}  // namespace

std::vector<SuperpixelSegment> segment_nonplanar(const DepthImage& depth,
                                                 const std::vector<std::uint8_t>& planar_mask,
                                                 const CameraIntrinsics& intr, const DenseConfig& cfg) {
  const int w = depth.width, h = depth.height;
  const int total = w * h;
  auto valid = [&](int i) {
    const double z = depth.data[i];
    return z > 0.0 && z <= cfg.max_depth && !(i < static_cast<int>(planar_mask.size()) && planar_mask[i]);
  };
  const int s = cfg.grid;

  // Seeds at grid-cell centers, moved to the nearest valid pixel of the cell.
  std::vector<Center> centers;
  for (int gy = 0; gy * s < h; ++gy) {
    for (int gx = 0; gx * s < w; ++gx) {
      const int cu = std::min(gx * s + s / 2, w - 1), cv = std::min(gy * s + s / 2, h - 1);
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int v = gy * s; v < std::min((gy + 1) * s, h); ++v) {
        for (int u = gx * s; u < std::min((gx + 1) * s, w); ++u) {
          if (!valid(v * w + u)) continue;
          const double d = std::hypot(u - cu, v - cv);
          if (d < best_d) {
            best_d = d;
            best = v * w + u;
          }
        }
      }
      if (best >= 0) centers.push_back({double(best % w), double(best / w), depth.data[best]});
    }
  }
  if (centers.empty()) return {};

  std::vector<int> label(total, -1);
  std::vector<double> dist(total);
  const double inv_s2 = 1.0 / (s * s);
  const double inv_z2 = 1.0 / (cfg.depth_scale * cfg.depth_scale);
  for (int it = 0; it < cfg.iterations; ++it) {
    std::fill(label.begin(), label.end(), -1);
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (int k = 0; k < static_cast<int>(centers.size()); ++k) {
      const Center& c = centers[k];
      const int u0 = std::max(0, int(c.u) - s), u1 = std::min(w - 1, int(c.u) + s);
      const int v0 = std::max(0, int(c.v) - s), v1 = std::min(h - 1, int(c.v) + s);
      for (int v = v0; v <= v1; ++v) {
        for (int u = u0; u <= u1; ++u) {
          const int i = v * w + u;
          if (!valid(i)) continue;
          const double dz = depth.data[i] - c.z;
          const double d = ((u - c.u) * (u - c.u) + (v - c.v) * (v - c.v)) * inv_s2 + dz * dz * inv_z2;
          if (d < dist[i]) {
            dist[i] = d;
            label[i] = k;
          }
        }
      }
    }
    std::vector<Center> sums(centers.size());
    std::vector<int> counts(centers.size(), 0);
    for (int i = 0; i < total; ++i) {
      if (label[i] < 0) continue;
      sums[label[i]].u += i % w;
      sums[label[i]].v += i / w;
      sums[label[i]].z += depth.data[i];
      ++counts[label[i]];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      centers[k] = {sums[k].u / counts[k], sums[k].v / counts[k], sums[k].z / counts[k]};
    }
  }

  // Valid pixels outside every search window join a labeled neighbour.
  std::vector<int> frontier;
  for (int i = 0; i < total; ++i) {
    if (label[i] >= 0) frontier.push_back(i);
  }
  const int du[4] = {1, -1, 0, 0}, dv[4] = {0, 0, 1, -1};
  for (std::size_t f = 0; f < frontier.size(); ++f) {
    const int i = frontier[f];
    for (int d = 0; d < 4; ++d) {
      const int u = i % w + du[d], v = i / w + dv[d];
      if (u < 0 || v < 0 || u >= w || v >= h) continue;
      const int j = v * w + u;
      if (label[j] < 0 && valid(j)) {
        label[j] = label[i];
        frontier.push_back(j);
      }
    }
  }

  // Connectivity: every 4-connected component becomes its own segment; small
  // ones are absorbed by an adjacent segment when there is one.
  std::vector<int> comp(total, -1);
  std::vector<std::vector<int>> comps;
  for (int i = 0; i < total; ++i) {
    if (label[i] < 0 || comp[i] >= 0) continue;
    const int id = static_cast<int>(comps.size());
    std::vector<int> members{i};
    comp[i] = id;
    for (std::size_t f = 0; f < members.size(); ++f) {
      const int p = members[f];
      for (int d = 0; d < 4; ++d) {
        const int u = p % w + du[d], v = p / w + dv[d];
        if (u < 0 || v < 0 || u >= w || v >= h) continue;
        const int j = v * w + u;
        if (comp[j] < 0 && label[j] == label[i]) {
          comp[j] = id;
          members.push_back(j);
        }
      }
    }
    comps.push_back(std::move(members));
  }
  std::vector<int> target(comps.size());
  for (std::size_t c = 0; c < comps.size(); ++c) target[c] = static_cast<int>(c);
  auto resolve = [&](int c) {
    while (target[c] != c) c = target[c];
    return c;
  };
  for (std::size_t c = 0; c < comps.size(); ++c) {
    if (static_cast<int>(comps[c].size()) >= cfg.min_pixels) continue;
    int neighbour = -1;
    for (int p : comps[c]) {
      for (int d = 0; d < 4 && neighbour < 0; ++d) {
        const int u = p % w + du[d], v = p / w + dv[d];
        if (u < 0 || v < 0 || u >= w || v >= h) continue;
        const int j = v * w + u;
        if (comp[j] >= 0 && resolve(comp[j]) != resolve(static_cast<int>(c))) neighbour = resolve(comp[j]);
      }
      if (neighbour >= 0) break;
    }
    if (neighbour >= 0) target[c] = neighbour;
  }
  std::map<int, std::vector<int>> groups;
  for (std::size_t c = 0; c < comps.size(); ++c) {
    auto& g = groups[resolve(static_cast<int>(c))];
    g.insert(g.end(), comps[c].begin(), comps[c].end());
  }

  std::vector<SuperpixelSegment> out;
  for (auto& [root, pixels] : groups) {
    if (static_cast<int>(pixels.size()) < cfg.min_pixels) continue;
    std::sort(pixels.begin(), pixels.end());
    SuperpixelSegment seg;
    std::vector<Vec3> pts;
    pts.reserve(pixels.size());
    double su = 0.0, sv = 0.0, sz = 0.0;
    for (int i : pixels) {
      const int u = i % w, v = i / w;
      pts.push_back(intr.back_project(u, v, depth.data[i]));
      su += u;
      sv += v;
      sz += depth.data[i];
    }
    const double n = static_cast<double>(pixels.size());
    const auto center = surface_point(depth, intr, pixels, su / n, sv / n);
    if (!center) continue;
    seg.mean_position = *center;
    seg.mean_depth = sz / n;
    seg.pixel_radius = std::sqrt(n / std::numbers::pi);
    seg.mean_normal = fit_plane(pts).normal;
    if (seg.mean_normal.dot(seg.mean_position) > 0.0) seg.mean_normal = -seg.mean_normal;
    seg.pixels = std::move(pixels);
    out.push_back(std::move(seg));
  }
  return out;
}

std::vector<Surfel> planar_surfels(const MapPlane& plane, double voxel, int keyframe_id) {
  std::vector<Surfel> out;
  out.reserve(plane.cloud.size());
  const double radius = voxel * std::sqrt(2.0) / 2.0;
  for (const auto& p : plane.cloud) {
    out.push_back({p, plane.plane.normal, radius, 1.0, keyframe_id, SurfelOrigin::Planar, plane.id});
  }
  return out;
}

std::vector<Surfel> superpixel_surfels(std::span<const SuperpixelSegment> segments, const Pose& pose,
                                       const CameraIntrinsics& intr, int keyframe_id) {
  const Pose t_wc = pose.inverse();
  std::vector<Surfel> out;
  out.reserve(segments.size());
  for (const auto& seg : segments) {
    Surfel s;
    s.position = t_wc.transform(seg.mean_position);
    s.normal = (t_wc.rotation * seg.mean_normal).normalized();
    s.radius = seg.pixel_radius * seg.mean_depth / intr.fx;
    s.last_update = keyframe_id;
    s.origin = SurfelOrigin::Superpixel;
    out.push_back(s);
  }
  return out;
}

SurfelMap::SurfelMap(double fuse_distance, double fuse_angle)
    : fuse_distance_(fuse_distance), cos_fuse_angle_(std::cos(fuse_angle)) {}

SurfelMap::Key SurfelMap::key(const Vec3& p) const {
  return {static_cast<long long>(std::floor(p.x() / fuse_distance_)),
          static_cast<long long>(std::floor(p.y() / fuse_distance_)),
          static_cast<long long>(std::floor(p.z() / fuse_distance_))};
}

void SurfelMap::fuse(std::span<const Surfel> incoming) {
  for (const Surfel& s : incoming) {
    const Key k = key(s.position);
    std::optional<std::size_t> best;
    double best_d = fuse_distance_;
    for (long long dx = -1; dx <= 1; ++dx) {
      for (long long dy = -1; dy <= 1; ++dy) {
        for (long long dz = -1; dz <= 1; ++dz) {
          const auto it = grid_.find({k[0] + dx, k[1] + dy, k[2] + dz});
          if (it == grid_.end()) continue;
          for (std::size_t idx : it->second) {
            const Surfel& e = free_[idx];
            const double d = (e.position - s.position).norm();
            if (d < best_d && e.normal.dot(s.normal) > cos_fuse_angle_) {
              best_d = d;
              best = idx;
            }
          }
        }
      }
    }
    if (!best) {
      grid_[k].push_back(free_.size());
      free_.push_back(s);
      continue;
    }
    Surfel& e = free_[*best];
    const Key old_key = key(e.position);
    const double we = e.confidence, wn = s.confidence;
    e.position = (we * e.position + wn * s.position) / (we + wn);
    e.normal = (we * e.normal + wn * s.normal).normalized();
    e.radius = std::min(e.radius, s.radius);
    e.confidence += 1.0;
    e.last_update = std::max(e.last_update, s.last_update);
    const Key new_key = key(e.position);
    if (new_key != old_key) {
      auto& cell = grid_[old_key];
      cell.erase(std::find(cell.begin(), cell.end(), *best));
      grid_[new_key].push_back(*best);
    }
  }
}

void SurfelMap::replace_plane(int plane_id, std::span<const Surfel> surfels) {
  planar_[plane_id].assign(surfels.begin(), surfels.end());
}

void SurfelMap::remove_plane(int plane_id) { planar_.erase(plane_id); }

std::vector<Surfel> SurfelMap::surfels() const {
  std::vector<Surfel> out;
  out.reserve(size());
  for (const auto& [id, list] : planar_) out.insert(out.end(), list.begin(), list.end());
  out.insert(out.end(), free_.begin(), free_.end());
  return out;
}

std::size_t SurfelMap::size() const {
  std::size_t n = free_.size();
  for (const auto& [id, list] : planar_) n += list.size();
  return n;
}

void export_ply(std::span<const Surfel> surfels, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << surfels.size() << "\n";
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz", "radius", "confidence"}) {
    out << "property double " << p << "\n";
  }
  out << "end_header\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& s : surfels) {
    out << s.position.x() << ' ' << s.position.y() << ' ' << s.position.z() << ' ' << s.normal.x() << ' '
        << s.normal.y() << ' ' << s.normal.z() << ' ' << s.radius << ' ' << s.confidence << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

std::vector<Surfel> read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::string line;
  std::size_t count = 0;
  std::vector<std::string> props;
  bool header_done = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "element") {
      std::string kind;
      ls >> kind >> count;
      if (kind != "vertex") throw Error(ErrorCode::IoError, "unexpected element '" + kind + "'");
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (word == "end_header") {
      header_done = true;
      break;
    }
  }
  const std::vector<std::string> expected{"x", "y", "z", "nx", "ny", "nz", "radius", "confidence"};
  if (!header_done || props != expected) throw Error(ErrorCode::IoError, "unsupported PLY layout in " + path.string());
  std::vector<Surfel> out(count);
  for (auto& s : out) {
    if (!(in >> s.position.x() >> s.position.y() >> s.position.z() >> s.normal.x() >> s.normal.y() >>
          s.normal.z() >> s.radius >> s.confidence)) {
      throw Error(ErrorCode::IoError, "truncated vertex list in " + path.string());
    }
  }
  return out;
}

void integrate(const DenseJob& job, const CameraIntrinsics& intr, const DenseConfig& config, SurfelMap& map) {
  for (int id : job.removed_planes) map.remove_plane(id);
  for (const auto& plane : job.planes) map.replace_plane(plane.id, planar_surfels(plane, config.voxel, job.keyframe_id));
  const auto segments = segment_nonplanar(job.depth, job.planar_mask, intr, config);
  map.fuse(superpixel_surfels(segments, job.pose, intr, job.keyframe_id));
}

DenseMapper::DenseMapper(const CameraIntrinsics& intr, DenseConfig config)
    : intr_(intr), config_(config), map_(config.fuse_distance, config.fuse_angle), worker_([this] { run(); }) {}

DenseMapper::~DenseMapper() { finish(); }

void DenseMapper::push(DenseJob job) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(std::move(job));
  }
  cv_.notify_one();
}

void DenseMapper::finish() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_one();
  if (worker_.joinable()) worker_.join();
}

void DenseMapper::run() {
  for (;;) {
    DenseJob job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    const auto t0 = std::chrono::steady_clock::now();
    integrate(job, intr_, config_, map_);
    busy_ms_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    ++processed_;
  }
}

}  // namespace mslam
