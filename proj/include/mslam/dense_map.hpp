#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <numbers>
#include <span>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mslam/depth_image.hpp"
#include "mslam/geometry.hpp"
#include "mslam/sparse_map.hpp"

namespace mslam {

enum class SurfelOrigin { Planar, Superpixel };

struct Surfel {
  Vec3 position = Vec3::Zero();  // world
  Vec3 normal = Vec3::UnitZ();
  double radius = 0.0;
  double confidence = 1.0;
  int last_update = 0;  // keyframe id
  SurfelOrigin origin = SurfelOrigin::Superpixel;
  int source_plane = -1;  // map plane id for planar surfels
};

struct SuperpixelSegment {
  std::vector<int> pixels;  // row-major indices, sorted
  Vec3 mean_position = Vec3::Zero();  // camera
  Vec3 mean_normal = Vec3::UnitZ();   // camera, facing the camera
  double mean_depth = 0.0;
  double pixel_radius = 0.0;  // radius of the disk with the segment's area
};

struct DenseConfig {
  int grid = 12;  // superpixel seed spacing, pixels
  int iterations = 5;
  int min_pixels = 16;
  double depth_scale = 0.05;  // meters of depth difference worth one grid step
  double max_depth = 4.0;
  double voxel = 0.2;
  double fuse_distance = 0.05;
  double fuse_angle = 20.0 * std::numbers::pi / 180.0;
};

/// SLIC-style local k-means over (u, v, depth) on pixels outside
/// `planar_mask` (one byte per pixel, nonzero = planar).
std::vector<SuperpixelSegment> segment_nonplanar(const DepthImage& depth,
                                                 const std::vector<std::uint8_t>& planar_mask,
                                                 const CameraIntrinsics& intr, const DenseConfig& config = {});

/// One surfel per cloud point, radius voxel * sqrt(2) / 2.
std::vector<Surfel> planar_surfels(const MapPlane& plane, double voxel, int keyframe_id = 0);

std::vector<Surfel> superpixel_surfels(std::span<const SuperpixelSegment> segments, const Pose& pose,
                                       const CameraIntrinsics& intr, int keyframe_id = 0);

class SurfelMap {
 public:
  explicit SurfelMap(double fuse_distance = 0.05,
                     double fuse_angle = 20.0 * std::numbers::pi / 180.0);

  /// Merges each new surfel into a close, similarly oriented superpixel
  /// surfel, else appends it.
  void fuse(std::span<const Surfel> incoming);
  /// Drops the plane's planar surfels and inserts `surfels` in their place.
  void replace_plane(int plane_id, std::span<const Surfel> surfels);
  void remove_plane(int plane_id);

  std::vector<Surfel> surfels() const;
  std::size_t size() const;

 private:
  using Key = std::array<long long, 3>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return static_cast<std::size_t>(k[0] * 73856093LL ^ k[1] * 19349663LL ^ k[2] * 83492791LL);
    }
  };
  Key key(const Vec3& p) const;

  double fuse_distance_;
  double cos_fuse_angle_;
  std::vector<Surfel> free_;  // superpixel surfels
  std::unordered_map<Key, std::vector<std::size_t>, KeyHash> grid_;
  std::map<int, std::vector<Surfel>> planar_;
};

void export_ply(std::span<const Surfel> surfels, const std::filesystem::path& path);
std::vector<Surfel> read_ply(const std::filesystem::path& path);

/// What the dense mapper needs from one keyframe; a self-contained copy.
struct DenseJob {
  int keyframe_id = 0;
  Pose pose;
  DepthImage depth;
  std::vector<std::uint8_t> planar_mask;
  std::vector<MapPlane> planes;  // planes created or updated by this keyframe
  std::vector<int> removed_planes;
};

/// Applies one job to `map`; the work the mapping thread does per keyframe.
void integrate(const DenseJob& job, const CameraIntrinsics& intr, const DenseConfig& config, SurfelMap& map);

/// Consumes keyframe jobs on its own thread.
class DenseMapper {
 public:
  DenseMapper(const CameraIntrinsics& intr, DenseConfig config);
  ~DenseMapper();
  DenseMapper(const DenseMapper&) = delete;
  DenseMapper& operator=(const DenseMapper&) = delete;

  void push(DenseJob job);
  /// Drains the queue and stops the thread; the map is final afterwards.
  void finish();
  const SurfelMap& map() const { return map_; }
  std::size_t processed() const { return processed_; }
  double busy_ms() const { return busy_ms_; }

 private:
  void run();

  CameraIntrinsics intr_;
  DenseConfig config_;
  SurfelMap map_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<DenseJob> queue_;
  bool stopping_ = false;
  std::size_t processed_ = 0;
  double busy_ms_ = 0.0;
  std::thread worker_;
};

}  // namespace mslam
