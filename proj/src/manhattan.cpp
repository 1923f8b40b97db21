#include "mslam/manhattan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mslam/errors.hpp"

namespace mslam {

const ManhattanEntry* ManhattanMap::find(int mf_id) const {
  const auto it = entries_.find(mf_id);
  return it == entries_.end() ? nullptr : &it->second;
}

int ManhattanMap::insert(const ManhattanEntry& entry) {
  ManhattanEntry e = entry;
  e.mf_id = next_id_++;
  entries_.emplace(e.mf_id, std::move(e));
  return next_id_ - 1;
}

void ManhattanMap::extend(int mf_id, std::span<const int> plane_ids) {
  auto it = entries_.find(mf_id);
  if (it == entries_.end()) return;
  for (int id : plane_ids) {
    auto& ids = it->second.plane_ids;
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
}

void ManhattanMap::remove_plane(int plane_id) {
  for (auto& [id, e] : entries_) std::erase(e.plane_ids, plane_id);
}

bool ManhattanMap::references_frame(int frame_id) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& kv) { return kv.second.reference_frame == frame_id; });
}

bool ManhattanMap::references_plane(int plane_id) const {
  for (const auto& [id, e] : entries_) {
    if (std::find(e.plane_ids.begin(), e.plane_ids.end(), plane_id) != e.plane_ids.end()) return true;
  }
  return false;
}

nlohmann::json ManhattanMap::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [id, e] : entries_) {
    nlohmann::json rot = nlohmann::json::array();
    for (int r = 0; r < 3; ++r) {
      rot.push_back({e.reference_rotation(r, 0), e.reference_rotation(r, 1), e.reference_rotation(r, 2)});
    }
    out.push_back({{"mf_id", id},
                   {"reference_frame", e.reference_frame},
                   {"plane_ids", e.plane_ids},
                   {"full", e.full},
                   {"rotation", rot}});
  }
  return out;
}

std::vector<ManhattanFrameObservation> detect_mfs(std::span<const PlaneSegment> segments,
                                                  std::span<const std::optional<int>> matched_ids,
                                                  const MfConfig& config) {
  const double max_dot = std::sin(config.perpendicular_tol);
  std::vector<int> usable;
  for (int i = 0; i < static_cast<int>(segments.size()); ++i) {
    if (segments[i].max_cloud_distance() <= config.max_plane_noise) usable.push_back(i);
  }
  // Axes ordered by descending support.
  std::stable_sort(usable.begin(), usable.end(), [&](int a, int b) {
    return segments[a].inlier_count_raw > segments[b].inlier_count_raw;
  });

  auto same_map_plane = [&](int a, int b) {
    return a < static_cast<int>(matched_ids.size()) && b < static_cast<int>(matched_ids.size()) &&
           matched_ids[a] && matched_ids[b] && *matched_ids[a] == *matched_ids[b];
  };
  // Tolerance tightens to what the two normals' uncertainties allow, when known.
  auto perpendicular = [&](int a, int b) {
    if (same_map_plane(a, b)) return false;
    const double dot = std::abs(segments[a].params.normal.dot(segments[b].params.normal));
    const double sa = segments[a].normal_sigma, sb = segments[b].normal_sigma;
    if (sa <= 0.0 && sb <= 0.0) return dot <= max_dot;
    return dot <= std::sin(std::min(config.perpendicular_tol, config.sigma_gate * std::hypot(sa, sb)));
  };
  auto make_obs = [&](std::vector<int> idx, const Mat3& axes) {
    ManhattanFrameObservation obs;
    obs.rotation = closest_rotation(axes);
    obs.full = idx.size() == 3;
    for (int i : idx) {
      obs.support += segments[i].inlier_count_raw;
      if (i < static_cast<int>(matched_ids.size()) && matched_ids[i]) {
        obs.plane_map_ids.push_back(*matched_ids[i]);
      }
    }
    obs.segment_indices = std::move(idx);
    return obs;
  };

  std::vector<ManhattanFrameObservation> out;
  std::set<std::pair<int, int>> covered;
  const int n = static_cast<int>(usable.size());
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      if (!perpendicular(usable[a], usable[b])) continue;
      for (int c = b + 1; c < n; ++c) {
        const int i = usable[a], j = usable[b], k = usable[c];
        if (!perpendicular(i, k) || !perpendicular(j, k)) continue;
        Mat3 axes;
        axes.col(0) = segments[i].params.normal;
        axes.col(1) = segments[j].params.normal;
        axes.col(2) = segments[k].params.normal;
        if (axes.determinant() < 0.0) axes.col(2) = -axes.col(2);
        out.push_back(make_obs({i, j, k}, axes));
        covered.insert({i, j});
        covered.insert({i, k});
        covered.insert({j, k});
      }
    }
  }
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      const int i = usable[a], j = usable[b];
      if (!perpendicular(i, j) || covered.count({i, j})) continue;
      Mat3 axes;
      axes.col(0) = segments[i].params.normal;
      axes.col(1) = segments[j].params.normal;
      axes.col(2) = axes.col(0).cross(axes.col(1)).normalized();
      out.push_back(make_obs({i, j}, axes));
    }
  }
  return out;
}

Mat3 canonicalize_axes(const Mat3& r_cm, const Mat3& r_ref_cm) {
  const auto& syms = cube_symmetries();
  double best = -std::numeric_limits<double>::infinity();
  Mat3 out = r_cm;
  for (const auto& s : syms) {
    const Mat3 cand = r_cm * s;
    const double score = (r_ref_cm.transpose() * cand).trace();
    if (score > best) {
      best = score;
      out = cand;
    }
  }
  return out;
}

std::optional<int> match_mf(const ManhattanFrameObservation& obs, const ManhattanMap& map) {
  std::optional<int> best;
  std::size_t best_overlap = 1;
  for (const auto& [id, e] : map.entries()) {
    std::size_t overlap = 0;
    for (int pid : obs.plane_map_ids) {
      if (std::find(e.plane_ids.begin(), e.plane_ids.end(), pid) != e.plane_ids.end()) ++overlap;
    }
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best = id;
    }
  }
  return best;
}

std::optional<int> match_mf_by_orientation(const ManhattanFrameObservation& obs, const Mat3& r_cw,
                                           const ManhattanMap& map, const FramePoseLookup& frames,
                                           double tol) {
  const Mat3 r_wm = r_cw.transpose() * obs.rotation;
  std::optional<int> best;
  double best_angle = tol;
  for (const auto& [id, e] : map.entries()) {
    const std::optional<Pose> ref = frames ? frames(e.reference_frame) : std::nullopt;
    if (!ref) continue;
    const Mat3 entry_wm = ref->rotation.transpose() * e.reference_rotation;
    const double angle = rotation_angle(canonicalize_axes(r_wm, entry_wm), entry_wm);
    if (angle < best_angle) {
      best_angle = angle;
      best = id;
    }
  }
  return best;
}

Mat3 drift_free_rotation(const ManhattanFrameObservation& obs, int mf_id, const ManhattanMap& map,
                         const FramePoseLookup& frames) {
  const ManhattanEntry* entry = map.find(mf_id);
  if (!entry) throw Error(ErrorCode::MissingReference, "no MF with id " + std::to_string(mf_id));
  const std::optional<Pose> ref = frames ? frames(entry->reference_frame) : std::nullopt;
  if (!ref) {
    throw Error(ErrorCode::MissingReference,
                "reference frame " + std::to_string(entry->reference_frame) + " not available");
  }
  const Mat3 r_cj_ci = entry->reference_rotation * obs.rotation.transpose();
  const Mat3 r_w_ci = ref->rotation.transpose() * r_cj_ci;
  // Product of rotations drifts off SO(3) only at rounding level; re-project.
  return closest_rotation(r_w_ci.transpose());
}

const ManhattanFrameObservation& select_dominant(std::span<const ManhattanFrameObservation> mfs) {
  if (mfs.empty()) throw Error(ErrorCode::EmptyList, "select_dominant on empty list");
  auto key = [](const ManhattanFrameObservation& m) {
    return std::tuple(m.support, -static_cast<long long>(m.mf_id.value_or(std::numeric_limits<int>::max())),
                      m.full ? 1 : 0);
  };
  const ManhattanFrameObservation* best = &mfs.front();
  for (const auto& m : mfs) {
    if (key(m) > key(*best)) best = &m;
  }
  return *best;
}

int insert_mf(const ManhattanFrameObservation& obs, int frame_id, ManhattanMap& map) {
  ManhattanEntry e;
  e.reference_frame = frame_id;
  e.reference_rotation = obs.rotation;
  e.plane_ids = obs.plane_map_ids;
  e.full = obs.full;
  return map.insert(e);
}

}  // namespace mslam
