#pragma once

#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "mslam/geometry.hpp"
#include "mslam/plane_extraction.hpp"

namespace mslam {

/// One Manhattan Frame seen in one camera frame. Columns of `rotation` are the
/// MF axes expressed in camera coordinates (R_cm).
struct ManhattanFrameObservation {
  Mat3 rotation = Mat3::Identity();
  std::vector<int> segment_indices;  // planes in the current frame backing the axes
  std::vector<int> plane_map_ids;    // map ids of those planes that are already mapped
  bool full = false;
  int support = 0;
  std::optional<int> mf_id;  // set once matched against the Manhattan map
};

struct MfConfig {
  double perpendicular_tol = 3.0 * std::numbers::pi / 180.0;
  double sigma_gate = 3.0;  // perpendicularity within this many normal sigmas, when known
  double max_plane_noise = 0.02;  // planes noisier than this never form an MF
  double orientation_match_tol = 10.0 * std::numbers::pi / 180.0;
};

struct ManhattanEntry {
  int mf_id = 0;
  int reference_frame = 0;
  Mat3 reference_rotation = Mat3::Identity();  // R_{c_j m}
  std::vector<int> plane_ids;
  bool full = false;
};

/// Global store of MFs, each anchored to the frame that first observed it.
class ManhattanMap {
 public:
  const ManhattanEntry* find(int mf_id) const;
  const std::map<int, ManhattanEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }

  int insert(const ManhattanEntry& entry);
  /// Adds plane ids newly seen as axes of an existing MF.
  void extend(int mf_id, std::span<const int> plane_ids);
  /// Drops a culled plane from every entry.
  void remove_plane(int plane_id);
  bool references_frame(int frame_id) const;
  bool references_plane(int plane_id) const;

  nlohmann::json to_json() const;

 private:
  std::map<int, ManhattanEntry> entries_;
  int next_id_ = 0;
};

using FramePoseLookup = std::function<std::optional<Pose>(int frame_id)>;

std::vector<ManhattanFrameObservation> detect_mfs(std::span<const PlaneSegment> segments,
                                                  std::span<const std::optional<int>> matched_ids,
                                                  const MfConfig& config = {});

/// Reorders/re-signs the columns of `r_cm` (one of the 24 proper cube
/// symmetries) to best agree with `r_ref_cm`, both in the same camera frame.
Mat3 canonicalize_axes(const Mat3& r_cm, const Mat3& r_ref_cm);

std::optional<int> match_mf(const ManhattanFrameObservation& obs, const ManhattanMap& map);

/// Fallback when no MF shares planes with `obs`: the MF whose world
/// orientation, up to axis relabeling, is within `tol` of the one implied by
/// the predicted camera rotation `r_cw`. Closest wins.
std::optional<int> match_mf_by_orientation(const ManhattanFrameObservation& obs, const Mat3& r_cw,
                                           const ManhattanMap& map, const FramePoseLookup& frames,
                                           double tol);

/// Rotation R_{c_i w} of the current camera from the stored reference.
Mat3 drift_free_rotation(const ManhattanFrameObservation& obs, int mf_id, const ManhattanMap& map,
                         const FramePoseLookup& frames);

const ManhattanFrameObservation& select_dominant(std::span<const ManhattanFrameObservation> mfs);

int insert_mf(const ManhattanFrameObservation& obs, int frame_id, ManhattanMap& map);

}  // namespace mslam
