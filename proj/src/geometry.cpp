#include "mslam/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "mslam/errors.hpp"

namespace mslam {

bool Pose::is_valid(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol &&
         translation.allFinite();
}

bool CameraIntrinsics::is_valid() const {
  return fx > 0 && fy > 0 && cx > 0 && cx < width && cy > 0 && cy < height;
}

bool CameraIntrinsics::in_image(const Vec2& px) const {
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1.0 && px.y() <= height - 1.0;
}

Vec3 CameraIntrinsics::back_project(double u, double v, double z) const {
  return {(u - cx) / fx * z, (v - cy) / fy * z, z};
}

Vec3 CameraIntrinsics::ray(double u, double v) const {
  return {(u - cx) / fx, (v - cy) / fy, 1.0};
}

PlaneParams PlaneParams::oriented_toward(const Vec3& viewpoint) const {
  if (signed_distance(viewpoint) < 0.0) return {-normal, -d};
  return *this;
}

Vec2 project(const CameraIntrinsics& intr, const Vec3& p_c) {
  if (p_c.z() <= 1e-6) throw Error(ErrorCode::NonPositiveDepth, "point behind camera");
  return {intr.fx * p_c.x() / p_c.z() + intr.cx, intr.fy * p_c.y() / p_c.z() + intr.cy};
}

PlaneParams transform_plane(const Pose& pose, const PlaneParams& plane_w) {
  // Inverse-transpose action on (n, d): [R 0; -t^T R 1] (n, d).
  Vec3 n = pose.rotation * plane_w.normal;
  double d = plane_w.d - n.dot(pose.translation);
  const double len = n.norm();
  return {n / len, d / len};
}

Vec2 normal_angles(const Vec3& n) {
  const double phi = (n.x() == 0.0 && n.y() == 0.0) ? 0.0 : std::atan2(n.y(), n.x());
  const double psi = std::asin(std::clamp(n.z(), -1.0, 1.0));
  return {phi, psi};
}

MinimalPlane plane_minimal(const PlaneParams& plane) {
  const Vec2 a = normal_angles(plane.normal);
  return {a.x(), a.y(), plane.d};
}

Vec3 normal_from_angles(double phi, double psi) {
  return {std::cos(psi) * std::cos(phi), std::cos(psi) * std::sin(phi), std::sin(psi)};
}

Mat3 closest_rotation(const Mat3& m) {
  if (!(std::abs(m.determinant()) > 1e-12)) {
    throw Error(ErrorCode::SingularInput, "closest_rotation needs a nonsingular matrix");
  }
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 s = Mat3::Identity();
  s(2, 2) = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return u * s * v.transpose();
}

Line2DFunction line_function(const Vec2& p_start, const Vec2& p_end) {
  if ((p_start - p_end).norm() <= 1e-9) {
    throw Error(ErrorCode::DegenerateLine, "line endpoints coincide");
  }
  const Vec3 hs(p_start.x(), p_start.y(), 1.0);
  const Vec3 he(p_end.x(), p_end.y(), 1.0);
  const Vec3 l = hs.cross(he) / (hs.norm() * he.norm());
  return {l.x(), l.y(), l.z()};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-10) return Mat3::Identity() + k + 0.5 * k * k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

Vec3 so3_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

double rotation_angle(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  // atan2 form keeps precision near zero, where acos((tr - 1) / 2) loses it.
  const Vec3 w(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * w.norm(), 0.5 * (rel.trace() - 1.0));
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

const std::array<Mat3, 24>& cube_symmetries() {
  static const std::array<Mat3, 24> table = [] {
    std::array<Mat3, 24> out{};
    std::array<int, 3> perm{0, 1, 2};
    std::size_t k = 0;
    do {
      for (int signs = 0; signs < 8; ++signs) {
        Mat3 m = Mat3::Zero();
        for (int c = 0; c < 3; ++c) m(perm[c], c) = (signs >> c) & 1 ? -1.0 : 1.0;
        if (m.determinant() > 0.0) out[k++] = m;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }();
  return table;
}

}  // namespace mslam
