#pragma once

// Shared generators for the test suites. These build inputs directly from
// random numbers and never call the code under test.

#include <cmath>
#include <numbers>

#include "hand3d/geometry.hpp"
#include "hand3d/rng.hpp"

namespace hand3d::test {

/// Uniform rotation from a normalized Gaussian quaternion.
inline Rot3 random_rotation(Rng& rng) {
  double w = rng.normal(), x = rng.normal(), y = rng.normal(), z = rng.normal();
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n, x /= n, y /= n, z /= n;
  return Rot3{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w), 2 * (x * y + z * w),
               1 - 2 * (x * x + z * z), 2 * (y * z - x * w), 2 * (x * z - y * w), 2 * (y * z + x * w),
               1 - 2 * (x * x + y * y)}};
}

inline Vec3 random_unit(Rng& rng) {
  const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
  return v / norm(v);
}

/// Axis-angle with angle in [0, pi]; every third draw lands within 1e-6 of
/// 0 or pi.
inline AxisAngle random_axis_angle(Rng& rng, int draw) {
  double angle;
  switch (draw % 6) {
    case 0: angle = rng.uniform(0.0, 1e-6); break;
    case 3: angle = std::numbers::pi - rng.uniform(0.0, 1e-6); break;
    default: angle = rng.uniform(0.0, std::numbers::pi); break;
  }
  return angle * random_unit(rng);
}

/// Generic 21-point hand-sized configuration in millimeters.
inline HandPose random_hand_pose(Rng& rng) {
  HandPose p;
  const Vec3 offset{rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(300, 700)};
  for (Vec3& v : p.keypoints) v = offset + Vec3{rng.uniform(-90, 90), rng.uniform(-90, 90), rng.uniform(-90, 90)};
  p.handedness = rng.uniform() < 0.5 ? Handedness::Left : Handedness::Right;
  p.visibility.fill(true);
  return p;
}

}  // namespace hand3d::test
