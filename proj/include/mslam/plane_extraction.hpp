#pragma once

#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "mslam/depth_image.hpp"
#include "mslam/geometry.hpp"

namespace mslam {

/// A plane observed in one depth image, in camera coordinates.
struct PlaneSegment {
  PlaneParams params;
  std::vector<Vec3> cloud;       // voxel-downsampled inliers
  std::vector<int> pixel_mask;   // row-major pixel indices
  int inlier_count_raw = 0;
  double normal_sigma = 0.0;     // radians, 1-sigma uncertainty of the fitted normal

  /// Largest |n.X + d| over the downsampled cloud.
  double max_cloud_distance() const;
};

struct MatchThresholds {
  double max_normal_angle = 10.0 * std::numbers::pi / 180.0;
  double max_point_plane_dist = 0.10;
};

struct ExtractionConfig {
  int cell_size = 10;
  int stride = 2;  // decimation inside each cell
  int min_support = 400;
  double merge_angle = 5.0 * std::numbers::pi / 180.0;
  double merge_dist = 0.02;
  double depth_sigma = 0.0;    // expected sensor noise coefficient, sigma(z) = k z^2
  double sigma_floor = 0.002;  // meters
  double max_depth = 3.5;
  double voxel = 0.2;
  int min_voxel_points = 30;  // sparser voxels are edge slivers and stay out of the cloud
  double stability_threshold = 0.04;
  double max_normal_sigma = 1.0;  // radians; segments with vaguer normals are dropped
};

/// Weighted total-least-squares plane through `points`.
PlaneParams fit_plane(std::span<const Vec3> points, std::span<const double> weights = {});

std::vector<PlaneSegment> extract_planes(const DepthImage& depth, const CameraIntrinsics& intr,
                                         const ExtractionConfig& config = {});

/// One centroid per occupied cell of an origin-anchored grid, cells ordered
/// lexicographically by integer coordinates. Cells with fewer than
/// `min_points` members are dropped.
std::vector<Vec3> voxel_downsample(std::span<const Vec3> cloud, double voxel, int min_points = 1);
/// As above, but a point's cell is that of its projection onto `plane`, so
/// noise across the plane cannot split one patch between two cells.
std::vector<Vec3> voxel_downsample_on_plane(std::span<const Vec3> cloud, const PlaneParams& plane, double voxel,
                                            int min_points = 1);

bool stability_check(const PlaneSegment& segment, double threshold = 0.04);

/// Read-only view of a map plane for association.
struct MapPlaneView {
  int id = 0;
  PlaneParams plane;  // world coordinates
  std::span<const Vec3> cloud;
};

std::optional<int> match_plane(const PlaneSegment& obs, const Pose& pose,
                               std::span<const MapPlaneView> map_planes,
                               const MatchThresholds& th = {});

/// Union of segment masks as a per-pixel 0/1 image.
std::vector<std::uint8_t> planar_mask(std::span<const PlaneSegment> segments, int width, int height);

}  // namespace mslam
