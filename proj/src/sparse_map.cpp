#include "mslam/sparse_map.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mslam/errors.hpp"

namespace mslam {

namespace {

template <class T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

int count_shared(const std::vector<int>& a, const std::vector<int>& b) {
  int n = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++n;
      ++ia;
      ++ib;
    }
  }
  return n;
}

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

void CovisibilityGraph::set_weight(int a, int b, int weight) {
  if (a == b) return;
  if (weight >= threshold_) {
    adj_[a][b] = weight;
    adj_[b][a] = weight;
  } else {
    if (auto it = adj_.find(a); it != adj_.end()) it->second.erase(b);
    if (auto it = adj_.find(b); it != adj_.end()) it->second.erase(a);
  }
}

int CovisibilityGraph::weight(int a, int b) const {
  const auto it = adj_.find(a);
  if (it == adj_.end()) return 0;
  const auto jt = it->second.find(b);
  return jt == it->second.end() ? 0 : jt->second;
}

std::vector<int> CovisibilityGraph::neighbors(int kf) const {
  std::vector<int> out;
  if (const auto it = adj_.find(kf); it != adj_.end()) {
    for (const auto& [other, w] : it->second) out.push_back(other);
  }
  return out;
}

void CovisibilityGraph::remove(int kf) {
  adj_.erase(kf);
  for (auto& [id, edges] : adj_) edges.erase(kf);
}

bool CovisibilityGraph::is_symmetric() const {
  for (const auto& [a, edges] : adj_) {
    for (const auto& [b, w] : edges) {
      if (weight(b, a) != w) return false;
    }
  }
  return true;
}

double tracked_ratio(std::span<const int> current_ids, std::span<const int> reference_ids) {
  if (reference_ids.empty()) return 0.0;
  const std::set<int> cur(current_ids.begin(), current_ids.end());
  const std::set<int> ref(reference_ids.begin(), reference_ids.end());
  int both = 0;
  for (int id : ref) both += cur.count(id) ? 1 : 0;
  return static_cast<double>(both) / static_cast<double>(ref.size());
}

bool needs_keyframe(std::span<const int> current_ids, std::span<const int> reference_ids, double ratio) {
  return tracked_ratio(current_ids, reference_ids) < ratio;
}

bool needs_keyframe(const Frame& current, const Keyframe& reference, double ratio) {
  const auto ids = current.matched_point_ids();
  return needs_keyframe(ids, reference.point_ids, ratio);
}

SparseMap::SparseMap(SparseMapConfig config)
    : config_(config), graph_(config.covisibility_threshold) {}

const MapPoint* SparseMap::point(int id) const {
  const auto it = points_.find(id);
  return it == points_.end() ? nullptr : &it->second;
}
const MapLine* SparseMap::line(int id) const {
  const auto it = lines_.find(id);
  return it == lines_.end() ? nullptr : &it->second;
}
const MapPlane* SparseMap::plane(int id) const {
  const auto it = planes_.find(id);
  return it == planes_.end() ? nullptr : &it->second;
}
const Keyframe* SparseMap::keyframe(int id) const {
  const auto it = keyframes_.find(id);
  return it == keyframes_.end() ? nullptr : &it->second;
}

std::optional<int> SparseMap::last_keyframe() const {
  std::optional<int> best;
  int best_seq = -1;
  for (const auto& [id, kf] : keyframes_) {
    if (kf.seq > best_seq) {
      best_seq = kf.seq;
      best = id;
    }
  }
  return best;
}

KeyframeInsertion SparseMap::insert_keyframe(Frame& frame, const CameraIntrinsics& intr) {
  if (frame.point_matches.size() != frame.points.size() || frame.line_matches.size() != frame.lines.size() ||
      frame.plane_matches.size() != frame.planes.size()) {
    frame.reset_matches();
  }
  const Pose t_wc = frame.pose.inverse();
  const int seq = kf_seq_++;
  Keyframe kf;
  kf.id = frame.id;
  kf.seq = seq;
  kf.timestamp = frame.timestamp;
  kf.pose = frame.pose;
  KeyframeInsertion report;
  report.keyframe_id = kf.id;

  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    auto& match = frame.point_matches[i];
    if (match && points_.count(*match)) {
      MapPoint& mp = points_[*match];
      mp.observers.insert(kf.id);
      kf.point_ids.push_back(*match);
      // Running mean over the keyframes' independent depth readings.
      if (const auto p_c = lift_pixel(frame, intr, frame.points[i].pixel, config_.inv_depth_sigma)) {
        ++mp.estimates;
        mp.position += (t_wc.transform(*p_c) - mp.position) / mp.estimates;
      }
      continue;
    }
    match.reset();
    const auto p_c = lift_pixel(frame, intr, frame.points[i].pixel, config_.inv_depth_sigma);
    if (!p_c) continue;
    MapPoint mp;
    mp.id = next_point_++;
    mp.position = t_wc.transform(*p_c);
    mp.descriptor = frame.points[i].descriptor;
    mp.observers = {kf.id};
    mp.created_seq = seq;
    match = mp.id;
    kf.point_ids.push_back(mp.id);
    points_.emplace(mp.id, std::move(mp));
    ++report.new_points;
  }

  for (std::size_t i = 0; i < frame.lines.size(); ++i) {
    auto& match = frame.line_matches[i];
    if (match && lines_.count(*match)) {
      lines_[*match].observers.insert(kf.id);
      kf.line_ids.push_back(*match);
      continue;
    }
    match.reset();
    const auto a = lift_pixel(frame, intr, frame.lines[i].p_start, config_.inv_depth_sigma);
    const auto b = lift_pixel(frame, intr, frame.lines[i].p_end, config_.inv_depth_sigma);
    if (!a || !b || (*a - *b).norm() < 1e-3) continue;
    MapLine ml;
    ml.id = next_line_++;
    ml.line = {t_wc.transform(*a), t_wc.transform(*b)};
    ml.descriptor = frame.lines[i].descriptor;
    ml.observers = {kf.id};
    ml.created_seq = seq;
    match = ml.id;
    kf.line_ids.push_back(ml.id);
    lines_.emplace(ml.id, std::move(ml));
    ++report.new_lines;
  }

  for (std::size_t i = 0; i < frame.planes.size(); ++i) {
    auto& match = frame.plane_matches[i];
    const PlaneSegment& seg = frame.planes[i];
    std::vector<Vec3> cloud_w;
    cloud_w.reserve(seg.cloud.size());
    for (const auto& p : seg.cloud) cloud_w.push_back(t_wc.transform(p));
    if (match && planes_.count(*match)) {
      MapPlane& mp = planes_[*match];
      mp.observers.insert(kf.id);
      std::vector<Vec3> merged = mp.cloud;
      for (const auto& p : cloud_w) {
        if (std::abs(mp.plane.signed_distance(p)) <= config_.plane_inlier_dist) merged.push_back(p);
      }
      mp.cloud = voxel_downsample_on_plane(merged, mp.plane, config_.voxel);
      std::erase_if(mp.cloud, [&](const Vec3& p) {
        return std::abs(mp.plane.signed_distance(p)) > config_.plane_inlier_dist;
      });
      ++mp.version;
      kf.plane_ids.push_back(mp.id);
      report.touched_planes.push_back(mp.id);
      continue;
    }
    match.reset();
    MapPlane mp;
    mp.id = next_plane_++;
    mp.plane = transform_plane(t_wc, seg.params);
    mp.cloud = voxel_downsample_on_plane(cloud_w, mp.plane, config_.voxel);
    std::erase_if(mp.cloud, [&](const Vec3& p) {
      return std::abs(mp.plane.signed_distance(p)) > config_.plane_inlier_dist;
    });
    mp.observers = {kf.id};
    mp.created_seq = seq;
    match = mp.id;
    kf.plane_ids.push_back(mp.id);
    report.touched_planes.push_back(mp.id);
    planes_.emplace(mp.id, std::move(mp));
    ++report.new_planes;
  }

  kf.point_ids = sorted_unique(std::move(kf.point_ids));
  kf.line_ids = sorted_unique(std::move(kf.line_ids));
  kf.plane_ids = sorted_unique(std::move(kf.plane_ids));
  for (const auto& [id, other] : keyframes_) graph_.set_weight(kf.id, id, shared_landmarks(kf, other));
  keyframes_[kf.id] = std::move(kf);
  return report;
}

int SparseMap::shared_landmarks(const Keyframe& a, const Keyframe& b) const {
  return count_shared(a.point_ids, b.point_ids) + count_shared(a.line_ids, b.line_ids) +
         count_shared(a.plane_ids, b.plane_ids);
}

void SparseMap::rebuild_covisibility() {
  graph_.clear();
  for (auto it = keyframes_.begin(); it != keyframes_.end(); ++it) {
    for (auto jt = std::next(it); jt != keyframes_.end(); ++jt) {
      graph_.set_weight(it->first, jt->first, shared_landmarks(it->second, jt->second));
    }
  }
}

LocalMap SparseMap::local_map(const Frame& frame) const {
  LocalMap out;
  // Keyframe sharing the most landmarks with the frame's matches.
  std::map<int, int> votes;
  auto vote = [&](const std::set<int>& observers) {
    for (int kf : observers) ++votes[kf];
  };
  for (const auto& m : frame.point_matches) {
    if (m) {
      if (const auto* p = point(*m)) vote(p->observers);
    }
  }
  for (const auto& m : frame.line_matches) {
    if (m) {
      if (const auto* l = line(*m)) vote(l->observers);
    }
  }
  for (const auto& m : frame.plane_matches) {
    if (m) {
      if (const auto* p = plane(*m)) vote(p->observers);
    }
  }
  if (votes.empty()) return out;
  int best = votes.begin()->first;
  for (const auto& [kf, n] : votes) {
    if (n > votes[best]) best = kf;
  }
  out.keyframes.push_back(best);
  for (int n : graph_.neighbors(best)) out.keyframes.push_back(n);

  for (int id : out.keyframes) {
    const Keyframe& kf = keyframes_.at(id);
    out.point_ids.insert(out.point_ids.end(), kf.point_ids.begin(), kf.point_ids.end());
    out.line_ids.insert(out.line_ids.end(), kf.line_ids.begin(), kf.line_ids.end());
    out.plane_ids.insert(out.plane_ids.end(), kf.plane_ids.begin(), kf.plane_ids.end());
  }
  // Landmarks may have been culled since the keyframe was made.
  out.point_ids = sorted_unique(std::move(out.point_ids));
  std::erase_if(out.point_ids, [&](int id) { return !points_.count(id); });
  out.line_ids = sorted_unique(std::move(out.line_ids));
  std::erase_if(out.line_ids, [&](int id) { return !lines_.count(id); });
  out.plane_ids = sorted_unique(std::move(out.plane_ids));
  std::erase_if(out.plane_ids, [&](int id) { return !planes_.count(id); });
  return out;
}

CullReport SparseMap::cull(const ManhattanMap& manhattan, std::optional<int> keep_keyframe) {
  CullReport report;
  const int newest_seq = kf_seq_ - 1;
  auto unreliable = [&](const auto& lm) {
    return newest_seq - lm.created_seq >= config_.cull_grace_keyframes &&
           static_cast<int>(lm.observers.size()) < config_.cull_min_observers;
  };

  for (auto it = points_.begin(); it != points_.end();) {
    if (unreliable(it->second)) {
      report.points.push_back(it->first);
      it = points_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto it = lines_.begin(); it != lines_.end();) {
    if (unreliable(it->second)) {
      report.lines.push_back(it->first);
      it = lines_.erase(it);
    } else {
      ++it;
    }
  }
  for (auto it = planes_.begin(); it != planes_.end();) {
    if (unreliable(it->second) && !manhattan.references_plane(it->first)) {
      report.planes.push_back(it->first);
      it = planes_.erase(it);
    } else {
      ++it;
    }
  }

  // Redundant keyframes: most of their landmarks are seen by >= 3 others.
  const std::optional<int> newest = last_keyframe();
  std::vector<int> kf_ids;
  for (const auto& [id, kf] : keyframes_) kf_ids.push_back(id);
  for (int id : kf_ids) {
    if (id == newest || id == keep_keyframe || manhattan.references_frame(id)) continue;
    const Keyframe& kf = keyframes_.at(id);
    int total = 0, redundant = 0;
    auto count = [&](const std::vector<int>& ids, const auto& store) {
      for (int lid : ids) {
        const auto it = store.find(lid);
        if (it == store.end()) continue;
        ++total;
        const int others = static_cast<int>(it->second.observers.size()) -
                           (it->second.observers.count(id) ? 1 : 0);
        if (others >= config_.cull_min_observers) ++redundant;
      }
    };
    count(kf.point_ids, points_);
    count(kf.line_ids, lines_);
    count(kf.plane_ids, planes_);
    if (total == 0 || redundant < config_.redundancy_ratio * total) continue;
    for (auto& [lid, p] : points_) p.observers.erase(id);
    for (auto& [lid, l] : lines_) l.observers.erase(id);
    for (auto& [lid, p] : planes_) p.observers.erase(id);
    keyframes_.erase(id);
    report.keyframes.push_back(id);
  }

  // Landmarks nobody observes any more.
  std::erase_if(points_, [&](const auto& kv) {
    if (!kv.second.observers.empty()) return false;
    report.points.push_back(kv.first);
    return true;
  });
  std::erase_if(lines_, [&](const auto& kv) {
    if (!kv.second.observers.empty()) return false;
    report.lines.push_back(kv.first);
    return true;
  });
  std::erase_if(planes_, [&](const auto& kv) {
    if (!kv.second.observers.empty() || manhattan.references_plane(kv.first)) return false;
    report.planes.push_back(kv.first);
    return true;
  });

  if (!report.empty()) {
    auto alive = [](const auto& store) { return [&store](int id) { return !store.count(id); }; };
    for (auto& [id, kf] : keyframes_) {
      std::erase_if(kf.point_ids, alive(points_));
      std::erase_if(kf.line_ids, alive(lines_));
      std::erase_if(kf.plane_ids, alive(planes_));
    }
    rebuild_covisibility();
  }
  return report;
}

std::vector<MapPlaneView> SparseMap::plane_views() const {
  std::vector<MapPlaneView> out;
  out.reserve(planes_.size());
  for (const auto& [id, p] : planes_) out.push_back({id, p.plane, p.cloud});
  return out;
}

nlohmann::json SparseMap::to_json() const {
  nlohmann::json j;
  j["points"] = nlohmann::json::array();
  for (const auto& [id, p] : points_) {
    j["points"].push_back({{"id", id}, {"position", vec_json(p.position)}, {"descriptor", p.descriptor},
                           {"observers", p.observers}});
  }
  j["lines"] = nlohmann::json::array();
  for (const auto& [id, l] : lines_) {
    j["lines"].push_back({{"id", id},
                          {"start", vec_json(l.line.p_start)},
                          {"end", vec_json(l.line.p_end)},
                          {"descriptor", l.descriptor},
                          {"observers", l.observers}});
  }
  j["planes"] = nlohmann::json::array();
  for (const auto& [id, p] : planes_) {
    j["planes"].push_back({{"id", id},
                           {"normal", vec_json(p.plane.normal)},
                           {"d", p.plane.d},
                           {"cloud_size", p.cloud.size()},
                           {"observers", p.observers}});
  }
  j["keyframes"] = nlohmann::json::array();
  for (const auto& [id, kf] : keyframes_) {
    const Eigen::Quaterniond q(kf.pose.rotation);
    j["keyframes"].push_back({{"id", id},
                              {"timestamp", kf.timestamp},
                              {"rotation_xyzw", {q.x(), q.y(), q.z(), q.w()}},
                              {"translation", vec_json(kf.pose.translation)}});
  }
  return j;
}

void SparseMap::export_plane_ply(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::size_t n = 0;
  for (const auto& [id, p] : planes_) n += p.cloud.size();
  out << "ply\nformat ascii 1.0\nelement vertex " << n
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property float nx\nproperty float ny\nproperty float nz\nproperty int plane_id\nend_header\n";
  for (const auto& [id, p] : planes_) {
    for (const auto& x : p.cloud) {
      out << x.x() << ' ' << x.y() << ' ' << x.z() << ' ' << p.plane.normal.x() << ' '
          << p.plane.normal.y() << ' ' << p.plane.normal.z() << ' ' << id << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace mslam
