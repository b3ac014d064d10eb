// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <cmath>

namespace nff {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Quaternion from (w, x, y, z), normalized. A zero quaternion maps to identity;
/// inputs already unit length to rounding are kept bit-exact.
inline Quat quat_from_wxyz(const std::array<double, 4>& q) {
  Quat out(q[0], q[1], q[2], q[3]);
  const double n = out.norm();
  if (n == 0.0) return Quat::Identity();
  if (std::abs(n - 1.0) > 4e-16) out.coeffs() /= n;
  return out;
}

inline std::array<double, 4> quat_to_wxyz(const Quat& q) {
  return {q.w(), q.x(), q.y(), q.z()};
}

/// Rotation of `degrees` about a principal axis (0 = x, 1 = y, 2 = z).
inline Quat axis_rotation(int axis, double degrees) {
  Vec3 a = Vec3::Zero();
  a[axis] = 1.0;
  return Quat(Eigen::AngleAxisd(degrees * M_PI / 180.0, a));
}

/// Camera-to-world rotation for a camera at the origin looking along `forward`
/// with image "down" (+v) as close to `down` as possible.
inline Quat look_rotation(const Vec3& forward, const Vec3& down) {
  const Vec3 z = forward.normalized();
  Vec3 x = down.cross(z);
  if (x.norm() < 1e-12) x = Vec3::UnitX().cross(z);
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return Quat(r).normalized();
}

}  // namespace nff
