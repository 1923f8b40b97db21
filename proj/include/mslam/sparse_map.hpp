#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "json.hpp"

#include "mslam/frame.hpp"
#include "mslam/geometry.hpp"
#include "mslam/manhattan.hpp"

namespace mslam {

struct MapPoint {
  int id = 0;
  Vec3 position = Vec3::Zero();
  int descriptor = 0;
  std::set<int> observers;  // keyframe ids
  int created_seq = 0;      // keyframe sequence number at creation
  int estimates = 1;        // position is the mean of this many keyframe readings
};

struct MapLine {
  int id = 0;
  Line3D line;
  int descriptor = 0;
  std::set<int> observers;
  int created_seq = 0;
};

struct MapPlane {
  int id = 0;
  PlaneParams plane;         // world coordinates
  std::vector<Vec3> cloud;   // one point per 0.2 m voxel, world coordinates
  std::set<int> observers;
  int created_seq = 0;
  int version = 0;           // bumped whenever the cloud changes
};

struct Keyframe {
  int id = 0;  // id of the frame it was made from
  int seq = 0;
  double timestamp = 0.0;
  Pose pose;
  std::vector<int> point_ids;
  std::vector<int> line_ids;
  std::vector<int> plane_ids;
};

/// Symmetric keyframe graph; an edge exists only when its weight reaches the
/// threshold.
class CovisibilityGraph {
 public:
  explicit CovisibilityGraph(int threshold = 15) : threshold_(threshold) {}

  void set_weight(int a, int b, int weight);
  int weight(int a, int b) const;
  std::vector<int> neighbors(int kf) const;
  void remove(int kf);
  void clear() { adj_.clear(); }
  bool is_symmetric() const;
  int threshold() const { return threshold_; }
  const std::map<int, std::map<int, int>>& adjacency() const { return adj_; }

 private:
  int threshold_;
  std::map<int, std::map<int, int>> adj_;
};

struct SparseMapConfig {
  double voxel = 0.2;
  double plane_inlier_dist = 0.04;
  double keyframe_ratio = 0.90;
  int cull_min_observers = 3;
  int cull_grace_keyframes = 3;
  double redundancy_ratio = 0.90;
  int covisibility_threshold = 15;
  double inv_depth_sigma = 0.0;  // expected inverse-depth noise used when lifting features, 1/m
};

struct LocalMap {
  std::vector<int> keyframes;
  std::vector<int> point_ids;
  std::vector<int> line_ids;
  std::vector<int> plane_ids;
};

struct CullReport {
  std::vector<int> points;
  std::vector<int> lines;
  std::vector<int> planes;
  std::vector<int> keyframes;

  bool empty() const { return points.empty() && lines.empty() && planes.empty() && keyframes.empty(); }
};

/// Result of inserting a keyframe, including what changed for the dense map.
struct KeyframeInsertion {
  int keyframe_id = 0;
  int new_points = 0;
  int new_lines = 0;
  int new_planes = 0;
  std::vector<int> touched_planes;  // created or merged
};

class SparseMap {
 public:
  explicit SparseMap(SparseMapConfig config = {});

  const SparseMapConfig& config() const { return config_; }
  const std::map<int, MapPoint>& points() const { return points_; }
  const std::map<int, MapLine>& lines() const { return lines_; }
  const std::map<int, MapPlane>& planes() const { return planes_; }
  const std::map<int, Keyframe>& keyframes() const { return keyframes_; }
  const CovisibilityGraph& covisibility() const { return graph_; }

  const MapPoint* point(int id) const;
  const MapLine* line(int id) const;
  const MapPlane* plane(int id) const;
  const Keyframe* keyframe(int id) const;
  std::optional<int> last_keyframe() const;

  /// Unmatched observations with usable depth become landmarks; the frame's
  /// match vectors are updated with the new ids.
  KeyframeInsertion insert_keyframe(Frame& frame, const CameraIntrinsics& intr);

  LocalMap local_map(const Frame& frame) const;

  /// Keyframes referenced by `manhattan` and planes backing its MFs are kept.
  CullReport cull(const ManhattanMap& manhattan, std::optional<int> keep_keyframe = std::nullopt);

  std::vector<MapPlaneView> plane_views() const;

  nlohmann::json to_json() const;
  void export_plane_ply(const std::filesystem::path& path) const;

 private:
  void rebuild_covisibility();
  int shared_landmarks(const Keyframe& a, const Keyframe& b) const;

  SparseMapConfig config_;
  std::map<int, MapPoint> points_;
  std::map<int, MapLine> lines_;
  std::map<int, MapPlane> planes_;
  std::map<int, Keyframe> keyframes_;
  CovisibilityGraph graph_;
  int next_point_ = 0;
  int next_line_ = 0;
  int next_plane_ = 0;
  int kf_seq_ = 0;
};

/// Fraction of the reference's points re-observed by `current_ids`.
double tracked_ratio(std::span<const int> current_ids, std::span<const int> reference_ids);
bool needs_keyframe(std::span<const int> current_ids, std::span<const int> reference_ids,
                    double ratio = 0.90);
bool needs_keyframe(const Frame& current, const Keyframe& reference, double ratio = 0.90);

}  // namespace mslam
