#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid world-to-camera transform: X_c = rotation * X_w + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_camera_center(const Mat3& r_cw, const Vec3& center_w) {
    return {r_cw, -r_cw * center_w};
  }

  Vec3 transform(const Vec3& p_w) const { return rotation * p_w + translation; }
  Pose inverse() const { return {rotation.transpose(), -rotation.transpose() * translation}; }
  Vec3 camera_center() const { return -rotation.transpose() * translation; }

  // Orthonormality and determinant checks, Frobenius tolerance.
  bool is_valid(double tol = 1e-9) const;
};

inline Pose operator*(const Pose& a, const Pose& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

struct CameraIntrinsics {
  double fx = 120.0;
  double fy = 120.0;
  double cx = 79.5;
  double cy = 59.5;
  int width = 160;
  int height = 120;

  bool is_valid() const;
  bool in_image(const Vec2& px) const;
  /// Camera-frame point at pixel (u, v) with depth z along the optical axis.
  Vec3 back_project(double u, double v, double z) const;
  /// Unit-z ray direction (X/Z, Y/Z, 1) through pixel (u, v).
  Vec3 ray(double u, double v) const;
};

/// Plane n.X + d = 0 with unit normal.
struct PlaneParams {
  Vec3 normal = Vec3::UnitZ();
  double d = 0.0;

  double signed_distance(const Vec3& x) const { return normal.dot(x) + d; }
  /// Flip so that `viewpoint` lies on the positive side.
  PlaneParams oriented_toward(const Vec3& viewpoint) const;
};

struct MinimalPlane {
  double phi = 0.0;  // azimuth, (-pi, pi]
  double psi = 0.0;  // elevation, [-pi/2, pi/2]
  double d = 0.0;
};

struct Line3D {
  Vec3 p_start;
  Vec3 p_end;
};

/// Residual of homogeneous pixel (u, v, 1) is a*u + b*v + c.
struct Line2DFunction {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double eval(const Vec2& px) const { return a * px.x() + b * px.y() + c; }
  Vec3 coeffs() const { return {a, b, c}; }
};

Vec2 project(const CameraIntrinsics& intr, const Vec3& p_c);

/// Plane in camera coordinates, n_c = R n_w and d_c = d_w - n_c . t.
PlaneParams transform_plane(const Pose& pose, const PlaneParams& plane_w);

MinimalPlane plane_minimal(const PlaneParams& plane);
/// (phi, psi) of a unit direction.
Vec2 normal_angles(const Vec3& n);
Vec3 normal_from_angles(double phi, double psi);

/// Nearest rotation in Frobenius norm, forced into SO(3).
Mat3 closest_rotation(const Mat3& m);

Line2DFunction line_function(const Vec2& p_start, const Vec2& p_end);

Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& r);
/// Geodesic angle between two rotations, radians.
double rotation_angle(const Mat3& a, const Mat3& b);
double wrap_angle(double a);
double angle_between(const Vec3& a, const Vec3& b);

Mat3 rot_x(double a);
Mat3 rot_y(double a);
Mat3 rot_z(double a);

/// The 24 orientation-preserving symmetries of the cube (signed permutation
/// matrices with determinant +1).
const std::array<Mat3, 24>& cube_symmetries();

}  // namespace mslam
