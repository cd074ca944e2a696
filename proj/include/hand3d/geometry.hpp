#pragma once

// Hand pose representation: scale and translation normalization, the
// canonical frame (alignment rotation plus handedness flip) and axis-angle
// conversions. Everything here is a pure function on value types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>

#include "hand3d/error.hpp"
#include "hand3d/jet.hpp"

namespace hand3d {

inline constexpr std::size_t kNumKeypoints = 21;

/// Keypoint layout: 0 is the wrist root, then four keypoints per finger in
/// the order thumb, index, middle, ring, pinky, each running palm end to tip.
namespace keypoint {
inline constexpr std::size_t kRoot = 0;
inline constexpr std::size_t kThumbBase = 1;
inline constexpr std::size_t kIndexBase = 5;
inline constexpr std::size_t kMiddleBase = 9;
inline constexpr std::size_t kRingBase = 13;
inline constexpr std::size_t kPinkyBase = 17;
inline constexpr std::size_t kPerFinger = 4;
inline constexpr std::size_t kNumFingers = 5;

/// First bone of the index finger; its length is the normalization scale.
inline constexpr std::size_t kScaleBone = kIndexBase;
/// Keypoint aligned with the canonical +y axis.
inline constexpr std::size_t kAlign = kMiddleBase;
/// Keypoint placed in the canonical x-y half-plane with x >= 0.
inline constexpr std::size_t kPlane = kPinkyBase;

constexpr std::size_t finger_base(std::size_t finger) { return 1 + finger * kPerFinger; }
}  // namespace keypoint

inline constexpr double kGeometryTolerance = 1e-9;
inline constexpr double kRotationCheckTolerance = 1e-6;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return s * a; }
  friend constexpr Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
  constexpr Vec3& operator+=(Vec3 o) { return *this = *this + o; }
  constexpr Vec3& operator-=(Vec3 o) { return *this = *this - o; }
  friend constexpr bool operator==(Vec3 a, Vec3 b) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline double distance(Vec3 a, Vec3 b) { return norm(a - b); }
inline bool is_finite(Vec3 a) { return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z); }

/// Closed interval [lo, hi].
struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  friend bool operator==(const Range&, const Range&) = default;
};

/// Image-plane position in pixels; u grows right, v grows down.
struct Point2 {
  double u = 0.0;
  double v = 0.0;
  friend constexpr bool operator==(Point2, Point2) = default;
};

using Keypoints2 = std::array<Point2, 21>;

/// Row-major 3x3 matrix. Used for rotations; see is_rotation().
struct Rot3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static constexpr Rot3 identity() { return {}; }

  constexpr double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
  constexpr double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }

  constexpr Rot3 transposed() const {
    Rot3 t;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
    return t;
  }

  friend constexpr Vec3 operator*(const Rot3& a, Vec3 v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z, a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
  }
  friend constexpr Rot3 operator*(const Rot3& a, const Rot3& b) {
    Rot3 r;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
        r(i, j) = s;
      }
    return r;
  }
  friend constexpr bool operator==(const Rot3&, const Rot3&) = default;
};

inline double determinant(const Rot3& r) {
  return r(0, 0) * (r(1, 1) * r(2, 2) - r(1, 2) * r(2, 1)) - r(0, 1) * (r(1, 0) * r(2, 2) - r(1, 2) * r(2, 0)) +
         r(0, 2) * (r(1, 0) * r(2, 1) - r(1, 1) * r(2, 0));
}

/// Largest absolute deviation of RᵀR from I and of det R from 1.
inline double rotation_defect(const Rot3& r) {
  const Rot3 rtr = r.transposed() * r;
  double worst = std::abs(determinant(r) - 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) worst = std::max(worst, std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)));
  return std::isfinite(worst) ? worst : INFINITY;
}

inline bool is_rotation(const Rot3& r, double tolerance = kRotationCheckTolerance) {
  return rotation_defect(r) <= tolerance;
}

inline void require_rotation(const Rot3& r, const char* what) {
  if (!is_rotation(r)) throw Error(ErrorCode::NotARotation, what);
}

inline Rot3 rotation_x(double c, double s) { return {{1, 0, 0, 0, c, -s, 0, s, c}}; }
inline Rot3 rotation_y(double c, double s) { return {{c, 0, s, 0, 1, 0, -s, 0, c}}; }
inline Rot3 rotation_z(double c, double s) { return {{c, -s, 0, s, c, 0, 0, 0, 1}}; }

/// Rotation vector: direction is the axis, magnitude the angle in radians.
using AxisAngle = Vec3;

/// Rodrigues map, generic over the scalar so it can be differentiated.
/// Returns the row-major 3x3 matrix.
template <typename S>
std::array<S, 9> rodrigues(const std::array<S, 3>& aa) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S theta_sq = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
  S a;  // sin(t)/t
  S b;  // (1 - cos(t))/t^2
  if (value_of(theta_sq) < 1e-8) {
    const S t4 = theta_sq * theta_sq;
    a = S(1.0) - theta_sq * S(1.0 / 6.0) + t4 * S(1.0 / 120.0);
    b = S(0.5) - theta_sq * S(1.0 / 24.0) + t4 * S(1.0 / 720.0);
  } else {
    const S theta = sqrt(theta_sq);
    const S half_sin = sin(theta * S(0.5));
    a = sin(theta) / theta;
    b = S(2.0) * half_sin * half_sin / theta_sq;
  }
  // R = I + a K + b (aa aaᵀ - t² I)
  std::array<S, 9> r;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) r[i * 3 + j] = b * aa[i] * aa[j];
  for (std::size_t i = 0; i < 3; ++i) r[i * 3 + i] = r[i * 3 + i] + S(1.0) - b * theta_sq;
  r[0 * 3 + 1] = r[0 * 3 + 1] - a * aa[2];
  r[0 * 3 + 2] = r[0 * 3 + 2] + a * aa[1];
  r[1 * 3 + 0] = r[1 * 3 + 0] + a * aa[2];
  r[1 * 3 + 2] = r[1 * 3 + 2] - a * aa[0];
  r[2 * 3 + 0] = r[2 * 3 + 0] - a * aa[1];
  r[2 * 3 + 1] = r[2 * 3 + 1] + a * aa[0];
  return r;
}

inline Rot3 axis_angle_to_matrix(AxisAngle aa) {
  return Rot3{rodrigues<double>({aa.x, aa.y, aa.z})};
}

/// Inverse of the Rodrigues map with angle in [0, pi]. At exactly pi the
/// axis comes from the column of (R + Rᵀ)/2 - cos(t) I with the largest
/// diagonal entry, sign chosen so the first nonzero component is positive.
inline AxisAngle matrix_to_axis_angle(const Rot3& r) {
  require_rotation(r, "matrix_to_axis_angle input");
  const Vec3 v{0.5 * (r(2, 1) - r(1, 2)), 0.5 * (r(0, 2) - r(2, 0)), 0.5 * (r(1, 0) - r(0, 1))};
  const double c = std::clamp(0.5 * (r(0, 0) + r(1, 1) + r(2, 2) - 1.0), -1.0, 1.0);
  const double s = norm(v);
  const double theta = std::atan2(s, c);
  if (theta == 0.0) return {};
  if (c > -0.5) {
    const double factor = s < 1e-6 ? 1.0 + theta * theta / 6.0 : theta / s;
    return factor * v;
  }
  // Near pi: v is small; take the axis from the symmetric part instead.
  Rot3 sym;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) sym(i, j) = 0.5 * (r(i, j) + r(j, i)) - (i == j ? c : 0.0);
  std::size_t col = 0;
  for (std::size_t k = 1; k < 3; ++k)
    if (sym(k, k) > sym(col, col)) col = k;
  Vec3 axis{sym(0, col), sym(1, col), sym(2, col)};
  axis = axis / norm(axis);
  const double alignment = dot(axis, v);
  if (alignment < 0.0) {
    axis = -axis;
  } else if (alignment == 0.0) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (axis[k] != 0.0) {
        if (axis[k] < 0.0) axis = -axis;
        break;
      }
    }
  }
  return theta * axis;
}

enum class Handedness { Left, Right };

using Keypoints3 = std::array<Vec3, kNumKeypoints>;

struct HandPose {
  Keypoints3 keypoints{};
  Handedness handedness = Handedness::Left;
  std::array<bool, kNumKeypoints> visibility{};
};

struct NormalizedPose {
  Keypoints3 coords{};
  double scale = 1.0;  // millimeters
};

/// Normalized coordinates with the root keypoint at the origin.
struct RelativePose {
  static constexpr std::size_t root_index = keypoint::kRoot;
  Keypoints3 coords{};
};

struct CanonicalRotation {
  Rot3 rotation;
  /// The plane keypoint landed on the y axis after alignment, so the
  /// second rotation was left at identity.
  bool degenerate_secondary = false;
};

struct CanonicalPose {
  Keypoints3 coords{};
  Rot3 rotation;
  bool degenerate_secondary = false;
};

struct CanonicalDecomposition {
  Keypoints3 canonical{};
  Rot3 rotation;
  Handedness handedness = Handedness::Left;
  double scale = 1.0;
  Vec3 root_world;
};

/// Divides all coordinates by the length of the first index-finger bone.
inline NormalizedPose normalize_scale(const HandPose& pose) {
  const double s = distance(pose.keypoints[keypoint::kScaleBone + 1], pose.keypoints[keypoint::kScaleBone]);
  if (!(s > kGeometryTolerance)) throw Error(ErrorCode::DegenerateBone, "index-finger bone has zero length");
  NormalizedPose out;
  out.scale = s;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) out.coords[i] = pose.keypoints[i] / s;
  return out;
}

inline RelativePose to_relative(const NormalizedPose& norm_pose) {
  RelativePose out;
  const Vec3 root = norm_pose.coords[RelativePose::root_index];
  for (std::size_t i = 0; i < kNumKeypoints; ++i) out.coords[i] = norm_pose.coords[i] - root;
  out.coords[RelativePose::root_index] = Vec3{};
  return out;
}

/// R = R_y * R_xz where R_xz takes the alignment keypoint onto +y and R_y
/// spins about y until the plane keypoint has z = 0 and x >= 0.
inline CanonicalRotation compute_canonical_rotation(const RelativePose& rel) {
  const Vec3 a = rel.coords[keypoint::kAlign];
  if (!(norm(a) > kGeometryTolerance))
    throw Error(ErrorCode::DegenerateAlignment, "alignment keypoint coincides with the root");

  // About x: move a into the x-y plane with y >= 0.
  const double yz = std::hypot(a.y, a.z);
  const Rot3 rx = yz > 0.0 ? rotation_x(a.y / yz, -a.z / yz) : Rot3::identity();
  // About z: zero the x component.
  const double r = std::hypot(a.x, yz);
  const Rot3 rz = rotation_z(yz / r, a.x / r);
  const Rot3 rxz = rz * rx;

  const Vec3 o = rxz * rel.coords[keypoint::kPlane];
  const double rho = std::hypot(o.x, o.z);
  CanonicalRotation out;
  if (rho <= kGeometryTolerance) {
    out.rotation = rxz;
    out.degenerate_secondary = true;
    return out;
  }
  out.rotation = rotation_y(o.x / rho, o.z / rho) * rxz;
  return out;
}

inline Vec3 apply_flip(Vec3 v, Handedness h) { return h == Handedness::Right ? Vec3{v.x, v.y, -v.z} : v; }

inline CanonicalPose to_canonical(const RelativePose& rel, Handedness handedness) {
  const CanonicalRotation cr = compute_canonical_rotation(rel);
  CanonicalPose out;
  out.rotation = cr.rotation;
  out.degenerate_secondary = cr.degenerate_secondary;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) out.coords[i] = apply_flip(cr.rotation * rel.coords[i], handedness);
  return out;
}

inline RelativePose from_canonical(const Keypoints3& canonical, const Rot3& rotation, Handedness handedness) {
  require_rotation(rotation, "from_canonical rotation");
  const Rot3 inv = rotation.transposed();
  RelativePose out;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) out.coords[i] = inv * apply_flip(canonical[i], handedness);
  return out;
}

inline CanonicalDecomposition decompose(const HandPose& pose) {
  const NormalizedPose np = normalize_scale(pose);
  const CanonicalPose cp = to_canonical(to_relative(np), pose.handedness);
  return {cp.coords, cp.rotation, pose.handedness, np.scale, pose.keypoints[keypoint::kRoot]};
}

inline Keypoints3 recompose(const CanonicalDecomposition& d) {
  const RelativePose rel = from_canonical(d.canonical, d.rotation, d.handedness);
  Keypoints3 out;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) out[i] = d.root_world + d.scale * rel.coords[i];
  return out;
}

}  // namespace hand3d
