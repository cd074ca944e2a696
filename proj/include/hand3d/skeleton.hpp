#pragma once

// Procedural 21-keypoint hand: forward kinematics, seeded pose and camera
// sampling, pinhole projection and the in-image visibility test.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hand3d/error.hpp"
#include "hand3d/geometry.hpp"
#include "hand3d/parallel.hpp"
#include "hand3d/rng.hpp"

namespace hand3d {

/// Articulation of one finger: two degrees of freedom at the palm joint,
/// one at each distal joint.
struct FingerAngles {
  double base_flex = 0.0;
  double base_abduct = 0.0;
  double mid_flex = 0.0;
  double tip_flex = 0.0;
  friend bool operator==(const FingerAngles&, const FingerAngles&) = default;
};

struct FingerLimits {
  Range base_flex;
  Range base_abduct;
  Range mid_flex;
  Range tip_flex;
};

struct JointAngles {
  std::array<FingerAngles, keypoint::kNumFingers> fingers{};
  AxisAngle global_orientation;
  Vec3 global_position;  // wrist, millimeters
  friend bool operator==(const JointAngles&, const JointAngles&) = default;
};

/// Parent of keypoint i in the kinematic tree (i >= 1).
constexpr std::size_t parent_of(std::size_t i) { return (i - 1) % keypoint::kPerFinger == 0 ? keypoint::kRoot : i - 1; }

struct HandModel {
  /// Length of the bone ending at keypoint i is bone_lengths[i - 1] (mm).
  std::array<double, kNumKeypoints - 1> bone_lengths{
      // thumb: wrist->CMC, CMC->MCP, MCP->IP, IP->tip
      38.0, 42.0, 32.0, 28.0,
      // index
      88.0, 40.0, 24.0, 20.0,
      // middle
      85.0, 44.0, 28.0, 21.0,
      // ring
      80.0, 41.0, 27.0, 20.0,
      // pinky
      75.0, 33.0, 20.0, 18.0};
  /// Direction of each palm bone in the palm plane, radians from +y toward
  /// the thumb side.
  std::array<double, keypoint::kNumFingers> palm_angles{0.85, 0.22, 0.0, -0.2, -0.4};
  /// Rest direction of each finger chain (same convention).
  std::array<double, keypoint::kNumFingers> finger_splay{0.75, 0.1, 0.0, -0.1, -0.22};
  /// Rotation of the thumb chain about its own long axis, taking its flexion
  /// out of the palm plane.
  double thumb_twist = 1.0;
  std::array<FingerLimits, keypoint::kNumFingers> limits{
      FingerLimits{{-0.3, 0.8}, {-0.4, 0.6}, {0.0, 1.0}, {0.0, 1.3}},
      FingerLimits{{-0.2, 1.6}, {-0.3, 0.3}, {0.0, 1.9}, {0.0, 1.4}},
      FingerLimits{{-0.2, 1.6}, {-0.25, 0.25}, {0.0, 1.9}, {0.0, 1.4}},
      FingerLimits{{-0.2, 1.6}, {-0.25, 0.25}, {0.0, 1.9}, {0.0, 1.4}},
      FingerLimits{{-0.2, 1.6}, {-0.35, 0.3}, {0.0, 1.9}, {0.0, 1.4}}};
  /// Sampling box for the wrist position (mm).
  std::array<Range, 3> position_limits{Range{-100, 100}, Range{-100, 100}, Range{-100, 100}};
  /// Per-sample multiplicative jitter on all bone lengths.
  Range scale_jitter{0.85, 1.15};

  HandModel scaled(double factor) const {
    HandModel m = *this;
    for (double& l : m.bone_lengths) l *= factor;
    return m;
  }

  void validate() const {
    for (double l : bone_lengths)
      if (!(l > 0.0) || !std::isfinite(l)) throw Error(ErrorCode::InvalidConfig, "bone lengths must be positive");
    auto check = [](const Range& r, double bound) {
      if (!(r.lo <= r.hi) || r.lo < -bound || r.hi > bound)
        throw Error(ErrorCode::InvalidConfig, "joint range empty or outside anatomical bounds");
    };
    for (const FingerLimits& f : limits) {
      check(f.base_flex, 2.0);
      check(f.base_abduct, 1.0);
      check(f.mid_flex, 2.2);
      check(f.tip_flex, 2.0);
    }
    for (const Range& r : position_limits)
      if (!(r.lo <= r.hi)) throw Error(ErrorCode::InvalidConfig, "position range empty");
    if (!(scale_jitter.lo > 0.0 && scale_jitter.lo <= scale_jitter.hi))
      throw Error(ErrorCode::InvalidConfig, "scale jitter range invalid");
  }
};

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }
inline void from_json(const nlohmann::json& j, Range& r) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::InvalidConfig, "range must be [lo, hi]");
  r = {j[0].get<double>(), j[1].get<double>()};
}

inline nlohmann::json model_to_json(const HandModel& m) {
  nlohmann::json limits = nlohmann::json::array();
  for (const FingerLimits& f : m.limits)
    limits.push_back({{"base_flex", f.base_flex}, {"base_abduct", f.base_abduct}, {"mid_flex", f.mid_flex},
                      {"tip_flex", f.tip_flex}});
  return {{"bone_lengths", m.bone_lengths}, {"palm_angles", m.palm_angles},     {"finger_splay", m.finger_splay},
          {"thumb_twist", m.thumb_twist},   {"joint_limits", limits},          {"position_limits", m.position_limits},
          {"scale_jitter", m.scale_jitter}};
}

/// Missing keys keep their defaults.
inline HandModel model_from_json(const nlohmann::json& j) {
  HandModel m;
  try {
    if (j.contains("bone_lengths")) m.bone_lengths = j.at("bone_lengths").get<decltype(m.bone_lengths)>();
    if (j.contains("palm_angles")) m.palm_angles = j.at("palm_angles").get<decltype(m.palm_angles)>();
    if (j.contains("finger_splay")) m.finger_splay = j.at("finger_splay").get<decltype(m.finger_splay)>();
    if (j.contains("thumb_twist")) m.thumb_twist = j.at("thumb_twist").get<double>();
    if (j.contains("joint_limits")) {
      const auto& arr = j.at("joint_limits");
      if (arr.size() != keypoint::kNumFingers) throw Error(ErrorCode::InvalidConfig, "joint_limits needs 5 fingers");
      for (std::size_t f = 0; f < keypoint::kNumFingers; ++f) {
        m.limits[f].base_flex = arr[f].at("base_flex").get<Range>();
        m.limits[f].base_abduct = arr[f].at("base_abduct").get<Range>();
        m.limits[f].mid_flex = arr[f].at("mid_flex").get<Range>();
        m.limits[f].tip_flex = arr[f].at("tip_flex").get<Range>();
      }
    }
    if (j.contains("position_limits")) m.position_limits = j.at("position_limits").get<decltype(m.position_limits)>();
    if (j.contains("scale_jitter")) m.scale_jitter = j.at("scale_jitter").get<Range>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("hand model config: ") + e.what());
  }
  m.validate();
  return m;
}

inline void check_joint_limits(const HandModel& model, const JointAngles& angles) {
  for (std::size_t f = 0; f < keypoint::kNumFingers; ++f) {
    const FingerLimits& l = model.limits[f];
    const FingerAngles& a = angles.fingers[f];
    if (!l.base_flex.contains(a.base_flex) || !l.base_abduct.contains(a.base_abduct) ||
        !l.mid_flex.contains(a.mid_flex) || !l.tip_flex.contains(a.tip_flex))
      throw Error(ErrorCode::JointLimitViolation, "finger " + std::to_string(f) + " outside its joint limits");
  }
}

/// Keypoints of the hand in world millimeters. Right hands are the mirror
/// image (x -> -x in the hand frame) of left hands.
inline Keypoints3 forward_kinematics(const HandModel& model, const JointAngles& angles,
                                     Handedness handedness = Handedness::Left) {
  check_joint_limits(model, angles);
  Keypoints3 local{};
  for (std::size_t f = 0; f < keypoint::kNumFingers; ++f) {
    const std::size_t base = keypoint::finger_base(f);
    const double phi = model.palm_angles[f];
    local[base] = model.bone_lengths[base - 1] * Vec3{std::sin(phi), std::cos(phi), 0.0};

    const FingerAngles& a = angles.fingers[f];
    const double yaw = model.finger_splay[f] + a.base_abduct;
    Rot3 frame = rotation_z(std::cos(-yaw), std::sin(-yaw));
    if (f == 0) frame = frame * rotation_y(std::cos(model.thumb_twist), std::sin(model.thumb_twist));
    const std::array<double, 3> flex{a.base_flex, a.mid_flex, a.tip_flex};
    for (std::size_t k = 0; k < 3; ++k) {
      frame = frame * rotation_x(std::cos(-flex[k]), std::sin(-flex[k]));
      const std::size_t child = base + k + 1;
      local[child] = local[child - 1] + frame * Vec3{0.0, model.bone_lengths[child - 1], 0.0};
    }
  }
  const Rot3 orientation = axis_angle_to_matrix(angles.global_orientation);
  Keypoints3 world;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    Vec3 p = local[i];
    if (handedness == Handedness::Right) p.x = -p.x;
    world[i] = orientation * p + angles.global_position;
  }
  return world;
}

/// Uniform rotation from a normalized Gaussian quaternion, as axis-angle.
inline AxisAngle sample_orientation(Rng& rng) {
  double w = rng.normal(), x = rng.normal(), y = rng.normal(), z = rng.normal();
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n, x /= n, y /= n, z /= n;
  if (w < 0) w = -w, x = -x, y = -y, z = -z;
  const double s = std::sqrt(x * x + y * y + z * z);
  if (s == 0.0) return {};
  const double angle = 2.0 * std::atan2(s, w);
  return (angle / s) * Vec3{x, y, z};
}

inline double sample_in(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : rng.uniform(r.lo, r.hi); }

/// Angles uniform within the model's limits; orientation uniform on SO(3).
inline JointAngles sample_pose(const HandModel& model, std::uint64_t seed) {
  Rng rng(seed);
  JointAngles a;
  for (std::size_t f = 0; f < keypoint::kNumFingers; ++f) {
    const FingerLimits& l = model.limits[f];
    a.fingers[f] = {sample_in(rng, l.base_flex), sample_in(rng, l.base_abduct), sample_in(rng, l.mid_flex),
                    sample_in(rng, l.tip_flex)};
  }
  a.global_orientation = sample_orientation(rng);
  for (std::size_t k = 0; k < 3; ++k) a.global_position[k] = sample_in(rng, model.position_limits[k]);
  return a;
}

/// Pinhole camera; camera-frame point = rotation * world + translation.
struct Camera {
  double fx = 320.0;
  double fy = 320.0;
  double cx = 160.0;
  double cy = 120.0;
  Rot3 rotation;
  Vec3 translation;
  int width = 320;
  int height = 240;

  Vec3 to_camera(Vec3 world) const { return rotation * world + translation; }
  Vec3 center() const { return -(rotation.transposed() * translation); }
  friend bool operator==(const Camera&, const Camera&) = default;
};

struct CameraOptions {
  Range distance_mm{400.0, 650.0};
  /// Radius of the random offset applied to the aim point (mm).
  double aim_jitter_mm = 30.0;
  Camera intrinsics;  // rotation/translation ignored
};

inline bool projects_inside(const Camera& cam, Vec3 world) {
  const Vec3 c = cam.to_camera(world);
  if (c.z <= 1e-6) return false;
  const double u = cam.fx * c.x / c.z + cam.cx;
  const double v = cam.fy * c.y / c.z + cam.cy;
  return u >= 0.0 && u < cam.width && v >= 0.0 && v < cam.height;
}

/// Camera on a random sphere of radius in [400, 650] mm around hand_center,
/// looking at aim (default hand_center) plus jitter with random roll. If the
/// jittered aim would push hand_center out of frame it aims at hand_center.
inline Camera sample_camera(Vec3 hand_center, std::uint64_t seed, const CameraOptions& options = {},
                            std::optional<Vec3> aim = std::nullopt) {
  Rng rng(seed);
  Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
  dir = dir / norm(dir);
  const double d = sample_in(rng, options.distance_mm);
  const Vec3 center = hand_center + d * dir;

  Vec3 jitter{rng.normal(), rng.normal(), rng.normal()};
  jitter = (options.aim_jitter_mm * std::cbrt(rng.uniform()) / norm(jitter)) * jitter;
  const double roll = rng.uniform(0.0, 2.0 * std::numbers::pi);

  auto look_at = [&](Vec3 target) {
    const Vec3 z = (target - center) / norm(target - center);
    const Vec3 helper = std::abs(z.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    const Vec3 e1 = cross(z, helper) / norm(cross(z, helper));
    const Vec3 e2 = cross(z, e1);
    const Vec3 x = std::cos(roll) * e1 + std::sin(roll) * e2;
    const Vec3 y = cross(z, x);
    Camera cam = options.intrinsics;
    cam.rotation = Rot3{{x.x, x.y, x.z, y.x, y.y, y.z, z.x, z.y, z.z}};
    cam.translation = -(cam.rotation * center);
    return cam;
  };

  Camera cam = look_at(aim.value_or(hand_center) + jitter);
  if (!projects_inside(cam, hand_center)) cam = look_at(hand_center);
  return cam;
}

struct Projection {
  Keypoints2 pixels{};
  Keypoints3 camera_points{};
};

inline Point2 project_point(const Camera& cam, Vec3 camera_point) {
  return {cam.fx * camera_point.x / camera_point.z + cam.cx, cam.fy * camera_point.y / camera_point.z + cam.cy};
}

inline Projection project(const Camera& cam, const Keypoints3& world) {
  Projection out;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const Vec3 c = cam.to_camera(world[i]);
    if (c.z <= 1e-6) throw Error(ErrorCode::BehindCamera, "keypoint " + std::to_string(i) + " has non-positive depth");
    out.camera_points[i] = c;
    out.pixels[i] = project_point(cam, c);
  }
  return out;
}

/// Half-open image bounds: [0, width) x [0, height).
inline bool in_image(Point2 p, int width, int height) {
  return p.u >= 0.0 && p.u < width && p.v >= 0.0 && p.v < height;
}

inline std::array<bool, kNumKeypoints> compute_visibility(const Camera& cam, const Keypoints2& pixels) {
  std::array<bool, kNumKeypoints> vis{};
  for (std::size_t i = 0; i < kNumKeypoints; ++i) vis[i] = in_image(pixels[i], cam.width, cam.height);
  return vis;
}

struct Intrinsics {
  double fx = 320.0;
  double fy = 320.0;
  double cx = 160.0;
  double cy = 120.0;
  int width = 320;
  int height = 240;
  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

struct SampleRecord {
  std::int64_t id = 0;
  Handedness handedness = Handedness::Left;
  Intrinsics intrinsics;
  Keypoints3 keypoints_3d{};  // camera frame, mm
  Keypoints2 keypoints_2d{};  // pixels
  std::array<bool, kNumKeypoints> visibility{};
  std::optional<int> label;
  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct GeneratorOptions {
  CameraOptions camera;
  /// Minimum camera-frame depth for every keypoint; draws violating it are
  /// re-sampled from the same child stream.
  double min_depth_mm = 50.0;
};

inline SampleRecord make_record(std::int64_t id, Handedness handedness, const Camera& cam, const Projection& proj) {
  SampleRecord r;
  r.id = id;
  r.handedness = handedness;
  r.intrinsics = {cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height};
  r.keypoints_3d = proj.camera_points;
  r.keypoints_2d = proj.pixels;
  r.visibility = compute_visibility(cam, proj.pixels);
  return r;
}

inline Vec3 centroid(const Keypoints3& k) {
  Vec3 c;
  for (const Vec3& p : k) c += p;
  return c / double(kNumKeypoints);
}

/// Places a camera around a posed hand and projects it.
inline SampleRecord photograph(std::int64_t id, const Keypoints3& world, Handedness handedness, Rng& rng,
                               const GeneratorOptions& options) {
  for (;;) {
    const Camera cam = sample_camera(world[keypoint::kRoot], rng.bits(), options.camera, centroid(world));
    bool ok = true;
    for (const Vec3& p : world) ok = ok && cam.to_camera(p).z > options.min_depth_mm;
    if (ok) return make_record(id, handedness, cam, project(cam, world));
  }
}

/// Sample i depends only on (seed, i), so any worker split gives the same data.
inline SampleRecord generate_sample(const HandModel& model, std::uint64_t seed, std::int64_t index,
                                    const GeneratorOptions& options = {}) {
  Rng rng(child_seed(seed, {static_cast<std::uint64_t>(index)}));
  const Handedness h = rng.uniform() < 0.5 ? Handedness::Left : Handedness::Right;
  const HandModel m = model.scaled(sample_in(rng, model.scale_jitter));
  const JointAngles angles = sample_pose(m, rng.bits());
  return photograph(index, forward_kinematics(m, angles, h), h, rng, options);
}

inline std::vector<SampleRecord> generate_samples(const HandModel& model, std::size_t n, std::uint64_t seed,
                                                  const GeneratorOptions& options = {}) {
  model.validate();
  std::vector<SampleRecord> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = generate_sample(model, seed, static_cast<std::int64_t>(i), options); });
  return out;
}

struct GestureOptions {
  std::size_t num_classes = 35;
  /// Per-joint Gaussian spread around each class prototype (radians).
  double angle_noise = 0.05;
  /// When false every sample keeps the identity global orientation.
  bool random_orientation = true;
};

/// Labelled poses: each class has a prototype articulation sampled from the
/// model limits; members perturb it. Labels cycle so classes are balanced.
inline std::vector<SampleRecord> generate_gesture_samples(const HandModel& model, std::size_t n, std::uint64_t seed,
                                                          const GestureOptions& gesture = {},
                                                          const GeneratorOptions& options = {}) {
  model.validate();
  if (gesture.num_classes == 0) throw Error(ErrorCode::InvalidConfig, "num_classes must be positive");
  std::vector<JointAngles> prototypes;
  for (std::size_t c = 0; c < gesture.num_classes; ++c)
    prototypes.push_back(sample_pose(model, child_seed(seed, {0x70726f746fULL, c})));

  std::vector<SampleRecord> out(n);
  parallel_for(n, [&](std::size_t i) {
    Rng rng(child_seed(seed, {i}));
    const std::size_t label = i % gesture.num_classes;
    const Handedness h = rng.uniform() < 0.5 ? Handedness::Left : Handedness::Right;
    JointAngles a = prototypes[label];
    auto perturb = [&](double& x, const Range& r) { x = std::clamp(x + gesture.angle_noise * rng.normal(), r.lo, r.hi); };
    for (std::size_t f = 0; f < keypoint::kNumFingers; ++f) {
      perturb(a.fingers[f].base_flex, model.limits[f].base_flex);
      perturb(a.fingers[f].base_abduct, model.limits[f].base_abduct);
      perturb(a.fingers[f].mid_flex, model.limits[f].mid_flex);
      perturb(a.fingers[f].tip_flex, model.limits[f].tip_flex);
    }
    if (gesture.random_orientation) {
      a.global_orientation = sample_orientation(rng);
      out[i] = photograph(static_cast<std::int64_t>(i), forward_kinematics(model, a, h), h, rng, options);
    } else {
      // Fixed frontal camera so camera-frame coordinates keep the hand frame.
      a.global_orientation = AxisAngle{};
      const Keypoints3 world = forward_kinematics(model, a, h);
      Camera cam = options.camera.intrinsics;
      cam.rotation = Rot3::identity();
      cam.translation = Vec3{0.0, 0.0, 500.0} - centroid(world);
      out[i] = make_record(static_cast<std::int64_t>(i), h, cam, project(cam, world));
    }
    out[i].label = static_cast<int>(label);
  });
  return out;
}

}  // namespace hand3d
