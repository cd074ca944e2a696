#pragma once

// Score maps: Gaussian ground truth, argmax decoding, hand crops and the
// augmentations applied before rendering.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "hand3d/error.hpp"
#include "hand3d/geometry.hpp"
#include "hand3d/rng.hpp"

namespace hand3d {

inline constexpr double kScoreMapVariance = 25.0;    // px^2
inline constexpr double kCropCenterVariance = 10.0;  // px^2
inline constexpr double kKeypointNoiseVariance = 1.5;  // px^2
inline constexpr Range kContrastRange{0.5, 1.0};
/// Hue augmentation amplitude used for segmentation training; recorded for
/// completeness, no image pipeline consumes it.
inline constexpr double kHueAugmentation = 0.1;

/// J maps of height x width, stored map-major (J, H, W). Grid point (c, r)
/// sits at pixel coordinate (u, v) = (c, r).
struct ScoreMapStack {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  ScoreMapStack() = default;
  ScoreMapStack(std::size_t h, std::size_t w) : height(h), width(w), data(kNumKeypoints * h * w, 0.0) {}

  double& at(std::size_t j, std::size_t r, std::size_t c) { return data[(j * height + r) * width + c]; }
  double at(std::size_t j, std::size_t r, std::size_t c) const { return data[(j * height + r) * width + c]; }
};

/// Peak-normalized Gaussians; invisible keypoints get an all-zero map.
inline ScoreMapStack render_scoremaps(const Keypoints2& keypoints, const std::array<bool, kNumKeypoints>& visibility,
                                      std::size_t height, std::size_t width, double variance = kScoreMapVariance) {
  if (height == 0 || width == 0) throw Error(ErrorCode::ShapeMismatch, "score map size must be positive");
  ScoreMapStack s(height, width);
  const double inv = 1.0 / (2.0 * variance);
  for (std::size_t j = 0; j < kNumKeypoints; ++j) {
    if (!visibility[j]) continue;
    double peak = 0.0;
    for (std::size_t r = 0; r < height; ++r) {
      const double dv = double(r) - keypoints[j].v;
      for (std::size_t c = 0; c < width; ++c) {
        const double du = double(c) - keypoints[j].u;
        const double g = std::exp(-(du * du + dv * dv) * inv);
        s.at(j, r, c) = g;
        peak = std::max(peak, g);
      }
    }
    if (peak > 0.0) {
      // Division (not multiplication by 1/peak) makes the peak exactly 1.
      for (std::size_t k = 0; k < height * width; ++k) s.data[j * height * width + k] /= peak;
    }
  }
  return s;
}

struct DecodedKeypoint {
  Point2 location;
  double confidence = 0.0;
};

/// Global maximum per map; ties resolve to the first in row-major order.
inline std::array<DecodedKeypoint, kNumKeypoints> decode_scoremaps(const ScoreMapStack& s) {
  std::array<DecodedKeypoint, kNumKeypoints> out{};
  for (std::size_t j = 0; j < kNumKeypoints; ++j) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t br = 0, bc = 0;
    for (std::size_t r = 0; r < s.height; ++r)
      for (std::size_t c = 0; c < s.width; ++c)
        if (s.at(j, r, c) > best) best = s.at(j, r, c), br = r, bc = c;
    out[j] = {{double(bc), double(br)}, best};
  }
  return out;
}

/// Axis-aligned square in pixels; (u0, v0) is the top-left corner.
struct SquareBox {
  double u0 = 0.0;
  double v0 = 0.0;
  double size = 0.0;

  Point2 center() const { return {u0 + 0.5 * size, v0 + 0.5 * size}; }
  bool contains(Point2 p, double tol = 1e-9) const {
    return p.u >= u0 - tol && p.u <= u0 + size + tol && p.v >= v0 - tol && p.v <= v0 + size + tol;
  }
};

struct BoxOptions {
  /// Fractional growth of the tight square side.
  double margin = 0.25;
  /// Lower bound on the side (px), so a single keypoint still gets a crop.
  double min_size = 16.0;
};

inline SquareBox hand_bbox_from_keypoints(const Keypoints2& keypoints, const std::array<bool, kNumKeypoints>& visibility,
                                          const BoxOptions& options = {}) {
  double umin = INFINITY, umax = -INFINITY, vmin = INFINITY, vmax = -INFINITY;
  for (std::size_t j = 0; j < kNumKeypoints; ++j) {
    if (!visibility[j]) continue;
    umin = std::min(umin, keypoints[j].u);
    umax = std::max(umax, keypoints[j].u);
    vmin = std::min(vmin, keypoints[j].v);
    vmax = std::max(vmax, keypoints[j].v);
  }
  if (!(umin <= umax)) throw Error(ErrorCode::NoVisibleKeypoints, "cannot crop a hand with no visible keypoints");
  const double tight = std::max(umax - umin, vmax - vmin);
  const double side = std::max(tight * (1.0 + options.margin), options.min_size);
  const Point2 c{0.5 * (umin + umax), 0.5 * (vmin + vmax)};
  return {c.u - 0.5 * side, c.v - 0.5 * side, side};
}

/// Maps a square source box onto a target x target grid.
struct CropTransform {
  SquareBox box;
  double target = 256.0;

  double scale() const { return target / box.size; }

  static CropTransform identity(double size) { return {{0.0, 0.0, size}, size}; }

  /// Crop applied after this one: first *this, then next.
  CropTransform then(const CropTransform& next) const {
    // x -> (x - u0) s1 -> ((x - u0) s1 - u0') s2 = (x - (u0 + u0'/s1)) s1 s2
    const double s1 = scale();
    const double combined = s1 * next.scale();
    CropTransform c;
    c.box = {box.u0 + next.box.u0 / s1, box.v0 + next.box.v0 / s1, 1.0};
    c.box.size = next.target / combined;
    c.target = next.target;
    return c;
  }
};

inline Point2 apply_crop(const CropTransform& t, Point2 p) {
  const double s = t.scale();
  return {(p.u - t.box.u0) * s, (p.v - t.box.v0) * s};
}

inline Point2 invert_crop(const CropTransform& t, Point2 p) {
  const double s = t.scale();
  return {p.u / s + t.box.u0, p.v / s + t.box.v0};
}

inline Keypoints2 apply_crop(const CropTransform& t, const Keypoints2& k) {
  Keypoints2 out;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) out[i] = apply_crop(t, k[i]);
  return out;
}

inline Keypoints2 invert_crop(const CropTransform& t, const Keypoints2& k) {
  Keypoints2 out;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) out[i] = invert_crop(t, k[i]);
  return out;
}

/// Jitters the box center by N(0, variance) per axis and grows the side by
/// twice the larger shift, so the original box (and its keypoints) stays
/// inside.
inline CropTransform augment_crop(const SquareBox& box, std::uint64_t seed, double target = 256.0,
                                  double variance = kCropCenterVariance) {
  Rng rng(seed);
  const double sd = std::sqrt(variance);
  const double du = sd * rng.normal();
  const double dv = sd * rng.normal();
  const double side = box.size + 2.0 * std::max(std::abs(du), std::abs(dv));
  const Point2 c = box.center();
  return {{c.u + du - 0.5 * side, c.v + dv - 0.5 * side, side}, target};
}

/// Independent N(0, variance) offset on every coordinate.
inline Keypoints2 jitter_keypoints(const Keypoints2& keypoints, std::uint64_t seed,
                                   double variance = kKeypointNoiseVariance) {
  Rng rng(seed);
  const double sd = std::sqrt(variance);
  Keypoints2 out = keypoints;
  for (Point2& p : out) {
    p.u += sd * rng.normal();
    p.v += sd * rng.normal();
  }
  return out;
}

/// out = mean + factor * (in - mean), clamped to [0, 1].
inline std::vector<double> apply_contrast(const std::vector<double>& image, double factor) {
  if (image.empty()) return {};
  double mean = 0.0;
  for (double x : image) mean += x;
  mean /= double(image.size());
  std::vector<double> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = std::clamp(mean + factor * (image[i] - mean), 0.0, 1.0);
  return out;
}

inline double sample_contrast_factor(std::uint64_t seed) {
  Rng rng(seed);
  return rng.uniform(kContrastRange.lo, kContrastRange.hi);
}

inline std::vector<double> contrast_augment(const std::vector<double>& image, std::uint64_t seed) {
  return apply_contrast(image, sample_contrast_factor(seed));
}

}  // namespace hand3d
