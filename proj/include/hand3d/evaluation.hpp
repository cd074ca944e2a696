#pragma once

// Keypoint metrics (end-point error, PCK, AUC) and the side-by-side report
// used to compare pose prior variants.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "hand3d/error.hpp"
#include "hand3d/geometry.hpp"
#include "hand3d/parallel.hpp"
#include "hand3d/skeleton.hpp"

namespace hand3d::evaluation {

struct EpeStats {
  double mean = 0.0;
  double median = 0.0;
  std::size_t count = 0;
  bool operator==(const EpeStats&) const = default;
};

inline double point_error(Vec3 a, Vec3 b) { return distance(a, b); }
inline double point_error(Point2 a, Point2 b) { return std::hypot(a.u - b.u, a.v - b.v); }

/// Mean and median of a set of errors; the median of an even count is the
/// average of the middle pair.
inline EpeStats summarize(std::vector<double> errors) {
  if (errors.empty()) throw Error(ErrorCode::EmptyMask, "no keypoints selected for evaluation");
  EpeStats s;
  s.count = errors.size();
  double sum = 0.0;
  for (double e : errors) sum += e;
  s.mean = sum / double(errors.size());
  const std::size_t mid = errors.size() / 2;
  std::nth_element(errors.begin(), errors.begin() + std::ptrdiff_t(mid), errors.end());
  s.median = errors[mid];
  if (errors.size() % 2 == 0) {
    const double below = *std::max_element(errors.begin(), errors.begin() + std::ptrdiff_t(mid));
    s.median = 0.5 * (s.median + below);
  }
  return s;
}

/// Per-keypoint errors over the masked-in keypoints.
template <class P, std::size_t N>
std::vector<double> keypoint_errors(const std::array<P, N>& pred, const std::array<P, N>& gt,
                                    const std::array<bool, N>& mask) {
  std::vector<double> out;
  for (std::size_t i = 0; i < N; ++i)
    if (mask[i]) out.push_back(point_error(pred[i], gt[i]));
  return out;
}

template <class P, std::size_t N>
EpeStats epe(const std::array<P, N>& pred, const std::array<P, N>& gt, const std::array<bool, N>& mask) {
  return summarize(keypoint_errors(pred, gt, mask));
}

struct PckCurve {
  std::vector<double> thresholds;
  std::vector<double> fractions;
  bool operator==(const PckCurve&) const = default;
};

/// 0 to 50 mm in 1 mm steps.
inline std::vector<double> default_thresholds_mm() {
  std::vector<double> t(51);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = double(i);
  return t;
}

inline PckCurve pck_curve(std::vector<double> errors, const std::vector<double>& thresholds) {
  if (errors.empty()) throw Error(ErrorCode::EmptyMask, "no errors to build a PCK curve from");
  if (thresholds.empty()) throw Error(ErrorCode::InvalidConfig, "PCK needs at least one threshold");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw Error(ErrorCode::InvalidConfig, "PCK thresholds must ascend");
  std::sort(errors.begin(), errors.end());
  PckCurve c{thresholds, {}};
  for (double t : thresholds) {
    const auto within = std::upper_bound(errors.begin(), errors.end(), t) - errors.begin();
    c.fractions.push_back(double(within) / double(errors.size()));
  }
  return c;
}

/// Trapezoidal area under the curve divided by the threshold span.
inline double auc(const PckCurve& c) {
  if (c.thresholds.size() < 2 || c.thresholds.size() != c.fractions.size() ||
      !(c.thresholds.back() > c.thresholds.front()))
    throw Error(ErrorCode::DegenerateSpan, "AUC needs a curve spanning a positive threshold range");
  double area = 0.0;
  for (std::size_t i = 1; i < c.thresholds.size(); ++i)
    area += 0.5 * (c.fractions[i] + c.fractions[i - 1]) * (c.thresholds[i] - c.thresholds[i - 1]);
  return area / (c.thresholds.back() - c.thresholds.front());
}

/// Normalized relative ground truth of a record and its scale.
struct RelativeTruth {
  RelativePose rel;
  double scale = 1.0;
};

inline RelativeTruth relative_truth(const SampleRecord& r) {
  HandPose p;
  p.keypoints = r.keypoints_3d;
  p.handedness = r.handedness;
  p.visibility = r.visibility;
  const NormalizedPose n = normalize_scale(p);
  return {to_relative(n), n.scale};
}

struct ModelMetrics {
  std::string name;
  EpeStats normalized;
  EpeStats mm;
  PckCurve pck;
  double auc = 0.0;
};

/// 3D errors of predicted relative poses against the records, in normalized
/// units and in millimeters (each sample rescaled by its own bone length).
inline ModelMetrics evaluate_relative(const std::string& name, const std::vector<RelativePose>& pred,
                                      const std::vector<SampleRecord>& records,
                                      const std::vector<double>& thresholds_mm = default_thresholds_mm()) {
  if (pred.size() != records.size())
    throw Error(ErrorCode::ShapeMismatch, name + ": " + std::to_string(pred.size()) + " predictions for " +
                                              std::to_string(records.size()) + " records");
  std::vector<std::vector<double>> per(records.size());
  std::vector<double> scales(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const RelativeTruth t = relative_truth(records[i]);
    per[i] = keypoint_errors(pred[i].coords, t.rel.coords, records[i].visibility);
    scales[i] = t.scale;
  });
  std::vector<double> norm_errors, mm_errors;
  for (std::size_t i = 0; i < per.size(); ++i)
    for (double e : per[i]) {
      norm_errors.push_back(e);
      mm_errors.push_back(e * scales[i]);
    }
  ModelMetrics m;
  m.name = name;
  m.normalized = summarize(norm_errors);
  m.mm = summarize(mm_errors);
  m.pck = pck_curve(mm_errors, thresholds_mm);
  m.auc = auc(m.pck);
  return m;
}

/// Ground-truth predictions; the reference row of a comparison.
inline std::vector<RelativePose> oracle_predictions(const std::vector<SampleRecord>& records) {
  std::vector<RelativePose> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) out[i] = relative_truth(records[i]).rel;
  return out;
}

inline std::string metrics_header() {
  return "model,keypoints,epe_mean,epe_median,epe_mm_mean,epe_mm_median,auc\n";
}

inline std::string metrics_row(const ModelMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", m.name.c_str(), m.normalized.count,
                m.normalized.mean, m.normalized.median, m.mm.mean, m.mm.median, m.auc);
  return buf;
}

inline std::string metrics_csv(const std::vector<ModelMetrics>& rows) {
  std::string out = metrics_header();
  for (const auto& r : rows) out += metrics_row(r);
  return out;
}

inline std::string pck_csv(const PckCurve& c) {
  std::string out = "threshold_mm,fraction\n";
  char buf[96];
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", c.thresholds[i], c.fractions[i]);
    out += buf;
  }
  return out;
}

}  // namespace hand3d::evaluation
