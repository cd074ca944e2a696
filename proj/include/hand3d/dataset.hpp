#pragma once

// Line-delimited JSON dataset files. One object per line:
//   {"v":1,"id":0,"handedness":"left","intrinsics":[fx,fy,cx,cy],
//    "image_size":[w,h],"kp3d":[63 reals],"kp2d":[42 reals],"vis":[21 bools]}
// plus an optional integer "label" for gesture data. kp3d is camera-frame
// millimeters, keypoint-major (x0,y0,z0,x1,...); kp2d is pixels (u0,v0,...).

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hand3d/error.hpp"
#include "hand3d/io.hpp"
#include "hand3d/skeleton.hpp"

namespace hand3d {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr double kReprojectionTolerance = 1e-6;

inline std::string to_string(Handedness h) { return h == Handedness::Left ? "left" : "right"; }

inline Handedness parse_handedness(const std::string& s) {
  if (s == "left") return Handedness::Left;
  if (s == "right") return Handedness::Right;
  throw Error(ErrorCode::SchemaViolation, "handedness must be \"left\" or \"right\", got \"" + s + "\"");
}

inline nlohmann::json record_to_json(const SampleRecord& r) {
  std::vector<double> kp3d, kp2d;
  kp3d.reserve(63);
  kp2d.reserve(42);
  for (const Vec3& p : r.keypoints_3d) kp3d.insert(kp3d.end(), {p.x, p.y, p.z});
  for (const Point2& p : r.keypoints_2d) kp2d.insert(kp2d.end(), {p.u, p.v});
  const auto& in = r.intrinsics;
  nlohmann::json j = {{"v", kDatasetFormatVersion},
                      {"id", r.id},
                      {"handedness", to_string(r.handedness)},
                      {"intrinsics", {in.fx, in.fy, in.cx, in.cy}},
                      {"image_size", {in.width, in.height}},
                      {"kp3d", kp3d},
                      {"kp2d", kp2d},
                      {"vis", r.visibility}};
  if (r.label) j["label"] = *r.label;
  return j;
}

/// Reprojection residual of the stored 2D keypoints (pixels).
inline double reprojection_error(const SampleRecord& r) {
  double worst = 0.0;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const Vec3& p = r.keypoints_3d[i];
    if (!(p.z > 1e-6)) return INFINITY;
    const double u = r.intrinsics.fx * p.x / p.z + r.intrinsics.cx;
    const double v = r.intrinsics.fy * p.y / p.z + r.intrinsics.cy;
    worst = std::max({worst, std::abs(u - r.keypoints_2d[i].u), std::abs(v - r.keypoints_2d[i].v)});
  }
  return worst;
}

inline SampleRecord record_from_json(const nlohmann::json& j) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::SchemaViolation, what); };
  if (!j.is_object()) fail("record is not an object");
  SampleRecord r;
  try {
    const int version = j.at("v").get<int>();
    if (version != kDatasetFormatVersion)
      throw Error(ErrorCode::UnsupportedVersion, "dataset record version " + std::to_string(version));
    r.id = j.at("id").get<std::int64_t>();
    r.handedness = parse_handedness(j.at("handedness").get<std::string>());
    const auto intr = j.at("intrinsics").get<std::vector<double>>();
    const auto size = j.at("image_size").get<std::vector<int>>();
    const auto kp3d = j.at("kp3d").get<std::vector<double>>();
    const auto kp2d = j.at("kp2d").get<std::vector<double>>();
    const auto vis = j.at("vis").get<std::vector<bool>>();
    if (intr.size() != 4) fail("intrinsics must have 4 entries");
    if (size.size() != 2 || size[0] <= 0 || size[1] <= 0) fail("image_size must be 2 positive integers");
    if (kp3d.size() != 63) fail("kp3d must have 63 entries");
    if (kp2d.size() != 42) fail("kp2d must have 42 entries");
    if (vis.size() != kNumKeypoints) fail("vis must have 21 entries");
    if (!(intr[0] > 0 && intr[1] > 0)) fail("focal lengths must be positive");
    r.intrinsics = {intr[0], intr[1], intr[2], intr[3], size[0], size[1]};
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      r.keypoints_3d[i] = {kp3d[3 * i], kp3d[3 * i + 1], kp3d[3 * i + 2]};
      r.keypoints_2d[i] = {kp2d[2 * i], kp2d[2 * i + 1]};
      r.visibility[i] = vis[i];
    }
    if (j.contains("label")) r.label = j.at("label").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed record: ") + e.what());
  }
  if (!(reprojection_error(r) <= kReprojectionTolerance)) fail("kp2d inconsistent with projection of kp3d");
  for (std::size_t i = 0; i < kNumKeypoints; ++i)
    if (r.visibility[i] != in_image(r.keypoints_2d[i], r.intrinsics.width, r.intrinsics.height))
      fail("vis inconsistent with image bounds at keypoint " + std::to_string(i));
  return r;
}

inline std::string serialize_records(const std::vector<SampleRecord>& records) {
  std::string out;
  for (const SampleRecord& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  atomic_write(path, serialize_records(records));
}

/// Parses every non-empty line; the error names the offending line.
inline std::vector<SampleRecord> read_dataset(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaViolation, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Generates n samples from (model, seed) and writes them to path.
inline void generate_dataset(const HandModel& model, std::size_t n, std::uint64_t seed,
                             const std::filesystem::path& path, const GeneratorOptions& options = {}) {
  if (n == 0) throw Error(ErrorCode::InvalidConfig, "dataset needs at least one sample");
  write_dataset(path, generate_samples(model, n, seed, options));
}

}  // namespace hand3d
