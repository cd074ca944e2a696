#pragma once

// Schedules, supervision assembly and the training loops for the pose prior
// (two-stream or direct) and the gesture classifier.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hand3d/error.hpp"
#include "hand3d/geometry.hpp"
#include "hand3d/heatmap.hpp"
#include "hand3d/jet.hpp"
#include "hand3d/models.hpp"
#include "hand3d/nn/adam.hpp"
#include "hand3d/nn/loss.hpp"
#include "hand3d/parallel.hpp"
#include "hand3d/rng.hpp"
#include "hand3d/skeleton.hpp"

namespace hand3d::training {

using models::Arch;
using models::ModelBundle;

inline constexpr int kConfigFormatVersion = 1;
inline constexpr std::size_t kBatchSize = 8;
inline constexpr std::size_t kDeskBatchSize = 32;
inline constexpr double kDeskRate = 1e-3;

/// Piecewise-constant learning rate: (first iteration, rate) pairs.
struct Schedule {
  std::vector<std::pair<std::uint64_t, double>> steps;

  void validate() const {
    if (steps.empty() || steps.front().first != 0)
      throw Error(ErrorCode::InvalidConfig, "schedule must start at iteration 0");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (!(steps[i].second > 0.0) || !std::isfinite(steps[i].second))
        throw Error(ErrorCode::InvalidConfig, "schedule rates must be positive");
      if (i && steps[i].first <= steps[i - 1].first)
        throw Error(ErrorCode::InvalidConfig, "schedule thresholds must be strictly increasing");
    }
  }

  bool operator==(const Schedule&) const = default;
};

inline double lr_at(const Schedule& s, std::uint64_t iteration) {
  double rate = s.steps.front().second;
  for (const auto& [start, r] : s.steps)
    if (iteration >= start) rate = r;
  return rate;
}

/// Thresholds multiplied by factor (rounded); rates unchanged.
inline Schedule scale_schedule(const Schedule& s, double factor) {
  Schedule out = s;
  for (auto& step : out.steps) step.first = std::uint64_t(std::llround(double(step.first) * factor));
  out.validate();
  return out;
}

/// Supervision options. Augmentation magnitudes are pixel variances: crop
/// center jitter in image pixels, keypoint noise in pixels of the
/// crop_resolution square crop, score map spread in score map cells.
struct SampleOptions {
  bool keypoint_noise = true;
  bool crop_jitter = true;
  double keypoint_variance = kKeypointNoiseVariance;
  double crop_variance = kCropCenterVariance;
  double scoremap_variance = kScoreMapVariance;
  double crop_resolution = 256.0;
  std::size_t map_size = models::kScoreMapSize;

  static SampleOptions clean() {
    SampleOptions o;
    o.keypoint_noise = false;
    o.crop_jitter = false;
    return o;
  }
  bool operator==(const SampleOptions&) const = default;
};

struct TrainConfig {
  Arch arch = Arch::PosePrior;
  std::size_t batch_size = kBatchSize;
  std::uint64_t iterations = 0;
  Schedule schedule{{{0, 1e-4}}};
  std::uint64_t seed = 0;
  double width_scale = 1.0;
  std::uint64_t log_every = 100;
  std::uint64_t checkpoint_every = 0;
  SampleOptions sample{};
  std::size_t classes = models::kGestureClasses;
  std::string train_data;
  std::string eval_data;

  void validate() const {
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be at least 1");
    if (log_every < 1) throw Error(ErrorCode::InvalidConfig, "log interval must be at least 1");
    models::check_width(width_scale);
    schedule.validate();
    if (!(sample.scoremap_variance > 0.0) || sample.keypoint_variance < 0.0 || sample.crop_variance < 0.0 ||
        sample.map_size == 0 || !(sample.crop_resolution > 0.0))
      throw Error(ErrorCode::InvalidConfig, "invalid sample options");
  }
  bool operator==(const TrainConfig&) const = default;
};

inline Schedule handsegnet_schedule() { return {{{0, 1e-5}, {20000, 1e-6}, {30000, 1e-7}}}; }
inline Schedule posenet_schedule() { return {{{0, 1e-4}, {10000, 1e-5}, {20000, 1e-6}}}; }
inline Schedule gesturenet_schedule() { return {{{0, 1e-4}, {15000, 1e-5}, {20000, 1e-6}}}; }

/// Named presets: the three published schedules (batch 8) and a desk-scale
/// pose prior run (quarter width, 2000 iterations of batch 32).
inline TrainConfig preset(const std::string& name) {
  TrainConfig c;
  if (name == "handsegnet-schedule") {
    c.iterations = 40000;
    c.schedule = handsegnet_schedule();
  } else if (name == "posenet-schedule") {
    c.iterations = 30000;
    c.schedule = posenet_schedule();
  } else if (name == "gesturenet-schedule") {
    c.arch = Arch::GestureNet;
    c.iterations = 30000;
    c.schedule = gesturenet_schedule();
  } else if (name == "poseprior-desk") {
    c.iterations = 2000;
    c.batch_size = kDeskBatchSize;
    c.width_scale = 0.25;
    c.log_every = 50;
    c.schedule = {{{0, kDeskRate}}};
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown preset \"" + name + "\"");
  }
  return c;
}

inline nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json schedule = nlohmann::json::array();
  for (const auto& [start, rate] : c.schedule.steps) schedule.push_back({start, rate});
  const SampleOptions& s = c.sample;
  return {{"v", kConfigFormatVersion},
          {"arch", models::to_string(c.arch)},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"schedule", schedule},
          {"seed", c.seed},
          {"width_scale", c.width_scale},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every},
          {"classes", c.classes},
          {"sample",
           {{"keypoint_noise", s.keypoint_noise},
            {"crop_jitter", s.crop_jitter},
            {"keypoint_variance", s.keypoint_variance},
            {"crop_variance", s.crop_variance},
            {"scoremap_variance", s.scoremap_variance},
            {"crop_resolution", s.crop_resolution},
            {"map_size", s.map_size}}},
          {"data", {{"train", c.train_data}, {"eval", c.eval_data}}}};
}

/// Missing keys keep the defaults of base, so partial files work as overrides.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  TrainConfig c = std::move(base);
  try {
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be an object");
    if (j.contains("v") && j.at("v").get<int>() != kConfigFormatVersion)
      throw Error(ErrorCode::UnsupportedVersion, "config version " + j.at("v").dump());
    if (j.contains("arch")) c.arch = models::parse_arch(j.at("arch").get<std::string>());
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations = j.value("iterations", c.iterations);
    if (j.contains("schedule")) {
      c.schedule.steps.clear();
      for (const auto& step : j.at("schedule"))
        c.schedule.steps.emplace_back(step.at(0).get<std::uint64_t>(), step.at(1).get<double>());
    }
    c.seed = j.value("seed", c.seed);
    c.width_scale = j.value("width_scale", c.width_scale);
    c.log_every = j.value("log_every", c.log_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.classes = j.value("classes", c.classes);
    if (j.contains("sample")) {
      const auto& s = j.at("sample");
      SampleOptions& o = c.sample;
      o.keypoint_noise = s.value("keypoint_noise", o.keypoint_noise);
      o.crop_jitter = s.value("crop_jitter", o.crop_jitter);
      o.keypoint_variance = s.value("keypoint_variance", o.keypoint_variance);
      o.crop_variance = s.value("crop_variance", o.crop_variance);
      o.scoremap_variance = s.value("scoremap_variance", o.scoremap_variance);
      o.crop_resolution = s.value("crop_resolution", o.crop_resolution);
      o.map_size = s.value("map_size", o.map_size);
    }
    if (j.contains("data")) {
      c.train_data = j.at("data").value("train", c.train_data);
      c.eval_data = j.at("data").value("eval", c.eval_data);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Network inputs and ground truth for one record.
struct TrainingSample {
  /// Score maps, channels-last [size, size, 21].
  std::vector<float> maps;
  models::HandSideFlag side;
  Keypoints3 gt_wc{};
  Rot3 gt_R;
  RelativePose gt_rel;
  double scale = 1.0;
  CropTransform crop;
  std::array<bool, kNumKeypoints> visibility{};
};

inline HandPose pose_of(const SampleRecord& r) {
  HandPose p;
  p.keypoints = r.keypoints_3d;
  p.handedness = r.handedness;
  p.visibility = r.visibility;
  return p;
}

/// Crops the hand from the visible 2D keypoints, renders score maps and
/// derives canonical supervision from the 3D keypoints.
inline TrainingSample make_training_sample(const SampleRecord& record, std::uint64_t seed,
                                           const SampleOptions& options = {}) {
  TrainingSample s;
  const NormalizedPose np = normalize_scale(pose_of(record));
  s.gt_rel = to_relative(np);
  s.scale = np.scale;
  const CanonicalPose cp = to_canonical(s.gt_rel, record.handedness);
  s.gt_wc = cp.coords;
  s.gt_R = cp.rotation;
  s.side = models::HandSideFlag::of(record.handedness);
  s.visibility = record.visibility;
#ifndef NDEBUG
  require_rotation(s.gt_R, "canonical supervision");
  const Vec3 a = s.gt_wc[keypoint::kAlign];
  if (std::abs(a.x) > 1e-9 || std::abs(a.z) > 1e-9 || a.y <= 0.0)
    throw Error(ErrorCode::DegenerateAlignment, "canonical supervision violates the frame conventions");
#endif

  const SquareBox box = hand_bbox_from_keypoints(record.keypoints_2d, record.visibility);
  s.crop = options.crop_jitter
               ? augment_crop(box, child_seed(seed, {1}), options.crop_resolution, options.crop_variance)
               : CropTransform{box, options.crop_resolution};
  Keypoints2 k = apply_crop(s.crop, record.keypoints_2d);
  if (options.keypoint_noise) k = jitter_keypoints(k, child_seed(seed, {2}), options.keypoint_variance);
  const double f = double(options.map_size) / options.crop_resolution;
  for (Point2& p : k) p = {p.u * f, p.v * f};
  const ScoreMapStack maps =
      render_scoremaps(k, record.visibility, options.map_size, options.map_size, options.scoremap_variance);
  const std::size_t hw = options.map_size * options.map_size;
  s.maps.resize(hw * kNumKeypoints);
  for (std::size_t j = 0; j < kNumKeypoints; ++j)
    for (std::size_t p = 0; p < hw; ++p) s.maps[p * kNumKeypoints + j] = float(maps.data[j * hw + p]);
  return s;
}

/// Crop-grid transform from image pixels to score map cells.
inline CropTransform map_transform(const TrainingSample& s, std::size_t map_size) {
  return {s.crop.box, double(map_size)};
}

struct PosePriorLoss {
  double loss_c = 0.0;
  double loss_r = 0.0;
  double total = 0.0;
  std::array<double, models::kCoordinateOutputs> grad_wc{};
  std::array<double, 3> grad_viewpoint{};
};

/// ||wc - gt_wc||^2 + ||R(viewpoint) - gt_R||_F^2 with gradients; the
/// rotation term is differentiated through the Rodrigues map.
inline PosePriorLoss poseprior_loss(const Keypoints3& wc, AxisAngle viewpoint, const Keypoints3& gt_wc,
                                    const Rot3& gt_R) {
  require_rotation(gt_R, "rotation supervision");
  PosePriorLoss out;
  for (std::size_t i = 0; i < kNumKeypoints; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = wc[i][k] - gt_wc[i][k];
      out.loss_c += d * d;
      out.grad_wc[3 * i + k] = 2.0 * d;
    }
  using J = Jet<3>;
  const std::array<J, 3> aa{J(viewpoint.x, 0), J(viewpoint.y, 1), J(viewpoint.z, 2)};
  const std::array<J, 9> r = rodrigues(aa);
  J lr(0.0);
  for (std::size_t e = 0; e < 9; ++e) {
    const J d = r[e] - J(gt_R.m[e]);
    lr += d * d;
  }
  out.loss_r = lr.v;
  out.grad_viewpoint = lr.d;
  out.total = out.loss_c + out.loss_r;
  return out;
}

inline PosePriorLoss poseprior_loss(const models::PosePriorOutput& pred, const Keypoints3& gt_wc, const Rot3& gt_R) {
  return poseprior_loss(pred.canonical_coords, pred.viewpoint, gt_wc, gt_R);
}

/// Sample index for slot `slot` of iteration `it`: epochs walk a seeded
/// permutation of the dataset.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {
    if (n == 0) throw Error(ErrorCode::InvalidConfig, "training set is empty");
  }

  std::vector<std::size_t> indices(std::uint64_t iteration) {
    std::vector<std::size_t> out(batch_);
    for (std::size_t j = 0; j < batch_; ++j) {
      const std::uint64_t pos = iteration * batch_ + j;
      const std::uint64_t epoch = pos / n_;
      if (epoch != epoch_ || perm_.empty()) shuffle(epoch);
      out[j] = perm_[pos % n_];
    }
    return out;
  }

 private:
  void shuffle(std::uint64_t epoch) {
    perm_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
    Rng rng(child_seed(seed_, {0xE90C, epoch}));
    for (std::size_t i = n_ - 1; i > 0; --i) std::swap(perm_[i], perm_[rng.below(i + 1)]);
    epoch_ = epoch;
  }

  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> perm_;
};

struct LogRow {
  /// Completed updates at the end of the window.
  std::uint64_t iteration = 0;
  double lr = 0.0;
  /// Window means of the per-sample batch losses.
  double loss_c = 0.0;
  double loss_r = 0.0;
  double total = 0.0;
  bool operator==(const LogRow&) const = default;
};

inline std::string log_header() { return "iteration,lr,loss_c,loss_r,total\n"; }

inline std::string format_log_row(const LogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.iteration), r.lr,
                r.loss_c, r.loss_r, r.total);
  return buf;
}

struct BatchTensors {
  nn::Tensor<float> maps;
  nn::Tensor<float> side;
  std::vector<TrainingSample> samples;
};

inline BatchTensors assemble_batch(const std::vector<SampleRecord>& records, const std::vector<std::size_t>& idx,
                                   const std::vector<std::uint64_t>& seeds, const SampleOptions& options) {
  const std::size_t b = idx.size(), m = options.map_size;
  BatchTensors t{nn::Tensor<float>({b, m, m, kNumKeypoints}), nn::Tensor<float>({b, 2}), std::vector<TrainingSample>(b)};
  parallel_for(b, [&](std::size_t j) { t.samples[j] = make_training_sample(records[idx[j]], seeds[j], options); });
  const std::size_t per = m * m * kNumKeypoints;
  for (std::size_t j = 0; j < b; ++j) {
    std::copy(t.samples[j].maps.begin(), t.samples[j].maps.end(), t.maps.data.begin() + std::ptrdiff_t(j * per));
    t.side.data[2 * j] = float(t.samples[j].side.onehot[0]);
    t.side.data[2 * j + 1] = float(t.samples[j].side.onehot[1]);
  }
  return t;
}

/// Relative normalized coordinates flattened keypoint-major.
inline std::array<float, models::kCoordinateOutputs> gesture_features(const SampleRecord& r) {
  const RelativePose rel = to_relative(normalize_scale(pose_of(r)));
  std::array<float, models::kCoordinateOutputs> f{};
  for (std::size_t i = 0; i < kNumKeypoints; ++i)
    for (std::size_t k = 0; k < 3; ++k) f[3 * i + k] = float(rel.coords[i][k]);
  return f;
}

struct StepLosses {
  double loss_c = 0.0;
  double loss_r = 0.0;
};

inline void require_finite(const StepLosses& l, std::uint64_t iteration) {
  if (!std::isfinite(l.loss_c) || !std::isfinite(l.loss_r))
    throw Error(ErrorCode::NumericDivergence, "loss became non-finite at iteration " + std::to_string(iteration) +
                                                  " (loss_c=" + std::to_string(l.loss_c) +
                                                  ", loss_r=" + std::to_string(l.loss_r) + ")");
}

inline nn::RunOptions train_run(const ModelBundle& m, std::size_t stream, std::uint64_t iteration) {
  nn::RunOptions o;
  o.train = true;
  o.seed = child_seed(m.seed, {0xD50F, stream});
  o.step = iteration;
  return o;
}

/// One optimizer step of the pose prior (either head structure). Losses
/// are batch means; gradients are scaled to match.
inline StepLosses poseprior_step(ModelBundle& m, const BatchTensors& batch, std::uint64_t iteration, double lr) {
  const std::size_t b = batch.samples.size();
  const double inv_b = 1.0 / double(b);
  StepLosses out;
  if (m.arch == Arch::PosePrior) {
    const std::vector<float> wc = m.nets[0].forward({batch.maps, batch.side}, train_run(m, 0, iteration))[0]->data;
    const std::vector<float> aa = m.nets[1].forward({batch.maps, batch.side}, train_run(m, 1, iteration))[0]->data;
    nn::Tensor<float> g_wc({b, models::kCoordinateOutputs}), g_aa({b, 3});
    for (std::size_t j = 0; j < b; ++j) {
      Keypoints3 pred;
      for (std::size_t i = 0; i < kNumKeypoints; ++i)
        pred[i] = {wc[j * 63 + 3 * i], wc[j * 63 + 3 * i + 1], wc[j * 63 + 3 * i + 2]};
      const AxisAngle v{aa[3 * j], aa[3 * j + 1], aa[3 * j + 2]};
      const PosePriorLoss l = poseprior_loss(pred, v, batch.samples[j].gt_wc, batch.samples[j].gt_R);
      out.loss_c += l.loss_c * inv_b;
      out.loss_r += l.loss_r * inv_b;
      for (std::size_t k = 0; k < 63; ++k) g_wc.data[j * 63 + k] = float(l.grad_wc[k] * inv_b);
      for (std::size_t k = 0; k < 3; ++k) g_aa.data[j * 3 + k] = float(l.grad_viewpoint[k] * inv_b);
    }
    require_finite(out, iteration);
    m.nets[0].backward({g_wc});
    m.nets[1].backward({g_aa});
  } else {
    const std::vector<float> pred = m.nets[0].forward({batch.maps, batch.side}, train_run(m, 0, iteration))[0]->data;
    nn::Tensor<float> g({b, models::kCoordinateOutputs});
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t i = 0; i < kNumKeypoints; ++i)
        for (std::size_t k = 0; k < 3; ++k) {
          const std::size_t at = j * 63 + 3 * i + k;
          const double d = double(pred[at]) - batch.samples[j].gt_rel.coords[i][k];
          out.loss_c += d * d * inv_b;
          g.data[at] = float(2.0 * d * inv_b);
        }
    require_finite(out, iteration);
    m.nets[0].backward({g});
  }
  for (std::size_t k = 0; k < m.nets.size(); ++k) nn::adam_step(m.nets[k].parameters(), m.optimizers[k], lr);
  return out;
}

inline StepLosses gesture_step(ModelBundle& m, const std::vector<SampleRecord>& records,
                               const std::vector<std::size_t>& idx, std::uint64_t iteration, double lr) {
  const std::size_t b = idx.size();
  nn::Tensor<float> x({b, models::kCoordinateOutputs});
  std::vector<int> labels(b);
  for (std::size_t j = 0; j < b; ++j) {
    const SampleRecord& r = records[idx[j]];
    if (!r.label) throw Error(ErrorCode::LabelOutOfRange, "record " + std::to_string(r.id) + " has no class label");
    labels[j] = *r.label;
    const auto f = gesture_features(r);
    std::copy(f.begin(), f.end(), x.data.begin() + std::ptrdiff_t(j * f.size()));
  }
  const nn::Tensor<float> logits = *m.nets[0].forward({x}, train_run(m, 0, iteration))[0];
  const auto ce = nn::softmax_cross_entropy(logits, std::span<const int>(labels));
  StepLosses out{double(ce.loss), 0.0};
  require_finite(out, iteration);
  m.nets[0].backward({ce.grad});
  nn::adam_step(m.nets[0].parameters(), m.optimizers[0], lr);
  return out;
}

struct TrainCallbacks {
  std::function<void(const LogRow&)> on_log;
  /// Called with the model after every checkpoint_every updates.
  std::function<void(const ModelBundle&)> on_checkpoint;
};

/// Continues m from m.iteration up to config.iterations. Everything random is
/// keyed by (seed, iteration), so a resumed run matches an uninterrupted one.
inline std::vector<LogRow> train(ModelBundle& m, const TrainConfig& config, const std::vector<SampleRecord>& records,
                                 const TrainCallbacks& callbacks = {}) {
  config.validate();
  if (m.arch != config.arch)
    throw Error(ErrorCode::ArchMismatch, "model is " + models::to_string(m.arch) + ", config trains " +
                                             models::to_string(config.arch));
  BatchSampler sampler(records.size(), config.batch_size, config.seed);
  std::vector<LogRow> log;
  LogRow window;
  std::uint64_t in_window = 0;
  for (std::uint64_t it = m.iteration; it < config.iterations; ++it) {
    const double lr = lr_at(config.schedule, it);
    const std::vector<std::size_t> idx = sampler.indices(it);
    StepLosses l;
    if (config.arch == Arch::GestureNet) {
      l = gesture_step(m, records, idx, it, lr);
    } else {
      std::vector<std::uint64_t> seeds(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j) seeds[j] = child_seed(config.seed, {0x5A3E, it, j});
      l = poseprior_step(m, assemble_batch(records, idx, seeds, config.sample), it, lr);
    }
    m.iteration = it + 1;
    window.loss_c += l.loss_c;
    window.loss_r += l.loss_r;
    ++in_window;
    if (m.iteration % config.log_every == 0 || m.iteration == config.iterations) {
      window.iteration = m.iteration;
      window.lr = lr;
      window.loss_c /= double(in_window);
      window.loss_r /= double(in_window);
      window.total = window.loss_c + window.loss_r;
      log.push_back(window);
      if (callbacks.on_log) callbacks.on_log(window);
      window = {};
      in_window = 0;
    }
    if (config.checkpoint_every && m.iteration % config.checkpoint_every == 0 && callbacks.on_checkpoint)
      callbacks.on_checkpoint(m);
  }
  return log;
}


/// Eval-mode pass over records in chunks; fn(first, batch, outputs) sees the
/// network outputs of each chunk.
inline void for_each_chunk(const std::vector<SampleRecord>& records, std::size_t chunk,
                           const std::function<void(std::size_t, const BatchTensors&)>& fn,
                           const SampleOptions& options) {
  for (std::size_t first = 0; first < records.size(); first += chunk) {
    const std::size_t b = std::min(chunk, records.size() - first);
    std::vector<std::size_t> idx(b);
    for (std::size_t j = 0; j < b; ++j) idx[j] = first + j;
    fn(first, assemble_batch(records, idx, std::vector<std::uint64_t>(b, 0), options));
  }
}

/// Predicted relative normalized coordinates, eval mode, no augmentation.
inline std::vector<RelativePose> predict_relative(ModelBundle& m, const std::vector<SampleRecord>& records,
                                                  const SampleOptions& options = SampleOptions::clean(),
                                                  std::size_t chunk = 64) {
  if (m.arch == Arch::GestureNet) throw Error(ErrorCode::ArchMismatch, "gesture models do not predict poses");
  std::vector<RelativePose> out(records.size());
  for_each_chunk(
      records, chunk,
      [&](std::size_t first, const BatchTensors& batch) {
        if (m.arch == Arch::PosePrior) {
          const auto pred = models::poseprior_predict(m.nets[0], m.nets[1], batch.maps, batch.side);
          for (std::size_t j = 0; j < pred.size(); ++j) out[first + j] = pred[j].recombined;
        } else {
          const auto& y = m.nets[0].forward({batch.maps, batch.side})[0]->data;
          for (std::size_t j = 0; j < batch.samples.size(); ++j)
            for (std::size_t i = 0; i < kNumKeypoints; ++i)
              out[first + j].coords[i] = {y[j * 63 + 3 * i], y[j * 63 + 3 * i + 1], y[j * 63 + 3 * i + 2]};
        }
      },
      options);
  return out;
}

/// Gesture features of records as a [n, 63] tensor.
inline nn::Tensor<float> gesture_batch(const std::vector<SampleRecord>& records) {
  nn::Tensor<float> x({records.size(), models::kCoordinateOutputs});
  for (std::size_t j = 0; j < records.size(); ++j) {
    const auto f = gesture_features(records[j]);
    std::copy(f.begin(), f.end(), x.data.begin() + std::ptrdiff_t(j * f.size()));
  }
  return x;
}

inline std::vector<int> predict_labels(ModelBundle& m, const std::vector<SampleRecord>& records) {
  if (m.arch != Arch::GestureNet) throw Error(ErrorCode::ArchMismatch, "pose models do not predict labels");
  if (records.empty()) return {};
  const nn::Tensor<float>& logits = *m.nets[0].forward({gesture_batch(records)})[0];
  const std::size_t c = logits.shape[1];
  std::vector<int> out(records.size());
  for (std::size_t j = 0; j < records.size(); ++j) {
    const auto row = logits.data.begin() + std::ptrdiff_t(j * c);
    out[j] = int(std::max_element(row, row + std::ptrdiff_t(c)) - row);
  }
  return out;
}

/// Mean per-sample training objective in eval mode without augmentation.
inline StepLosses evaluate_loss(ModelBundle& m, const std::vector<SampleRecord>& records,
                                const SampleOptions& options = SampleOptions::clean(), std::size_t chunk = 64) {
  if (records.empty()) throw Error(ErrorCode::InvalidConfig, "cannot evaluate on an empty set");
  StepLosses sum;
  const double inv_n = 1.0 / double(records.size());
  if (m.arch == Arch::GestureNet) {
    std::vector<int> labels;
    for (const SampleRecord& r : records) {
      if (!r.label) throw Error(ErrorCode::LabelOutOfRange, "record " + std::to_string(r.id) + " has no class label");
      labels.push_back(*r.label);
    }
    const nn::Tensor<float>& logits = *m.nets[0].forward({gesture_batch(records)})[0];
    sum.loss_c = double(nn::softmax_cross_entropy(logits, std::span<const int>(labels)).loss);
    return sum;
  }
  for_each_chunk(
      records, chunk,
      [&](std::size_t, const BatchTensors& batch) {
        if (m.arch == Arch::PosePrior) {
          const auto pred = models::poseprior_predict(m.nets[0], m.nets[1], batch.maps, batch.side);
          for (std::size_t j = 0; j < pred.size(); ++j) {
            const PosePriorLoss l = poseprior_loss(pred[j], batch.samples[j].gt_wc, batch.samples[j].gt_R);
            sum.loss_c += l.loss_c * inv_n;
            sum.loss_r += l.loss_r * inv_n;
          }
        } else {
          const auto& y = m.nets[0].forward({batch.maps, batch.side})[0]->data;
          for (std::size_t j = 0; j < batch.samples.size(); ++j)
            for (std::size_t i = 0; i < kNumKeypoints; ++i)
              for (std::size_t k = 0; k < 3; ++k) {
                const double d = double(y[j * 63 + 3 * i + k]) - batch.samples[j].gt_rel.coords[i][k];
                sum.loss_c += d * d * inv_n;
              }
        }
      },
      options);
  return sum;
}

}  // namespace hand3d::training
