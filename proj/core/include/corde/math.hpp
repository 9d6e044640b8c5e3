#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace corde {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Quaternion-space vector with components ordered (w, x, y, z).
using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

inline Vec4 to_vec4(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
inline Quat to_quat(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }

/// Third director d3 = R(q) e_z.
inline Vec3 director3(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  return {2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)};
}

/// Jacobian of director3 with respect to (w, x, y, z).
inline Eigen::Matrix<double, 3, 4> director3_jacobian(const Quat& q) {
  const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
  Eigen::Matrix<double, 3, 4> j;
  j << 2 * y, 2 * z, 2 * w, 2 * x,
      -2 * x, -2 * w, 2 * z, 2 * y,
      0.0, -4 * x, -4 * y, 0.0;
  return j;
}

/// Angle of the relative rotation between two unit quaternions, in [0, pi].
inline double rotation_angle_between(const Quat& a, const Quat& b) {
  const double d = std::abs(a.coeffs().dot(b.coeffs()));
  return 2.0 * std::acos(std::min(1.0, d));
}

}  // namespace corde
