#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "hand3d/nn/gradcheck.hpp"
#include "hand3d/training.hpp"
#include "test_support.hpp"

namespace hand3d::training {
namespace {

TEST(Schedule, PublishedPresetsSwitchAtTheirThresholds) {
  const Schedule pose = preset("posenet-schedule").schedule;
  EXPECT_EQ(lr_at(pose, 0), 1e-4);
  EXPECT_EQ(lr_at(pose, 9999), 1e-4);
  EXPECT_EQ(lr_at(pose, 10000), 1e-5);
  EXPECT_EQ(lr_at(pose, 19999), 1e-5);
  EXPECT_EQ(lr_at(pose, 20000), 1e-6);
  EXPECT_EQ(preset("posenet-schedule").iterations, 30000u);

  const TrainConfig seg = preset("handsegnet-schedule");
  EXPECT_EQ(seg.iterations, 40000u);
  EXPECT_EQ(lr_at(seg.schedule, 19999), 1e-5);
  EXPECT_EQ(lr_at(seg.schedule, 20000), 1e-6);
  EXPECT_EQ(lr_at(seg.schedule, 30000), 1e-7);

  const TrainConfig gesture = preset("gesturenet-schedule");
  EXPECT_EQ(gesture.arch, Arch::GestureNet);
  EXPECT_EQ(gesture.iterations, 30000u);
  EXPECT_EQ(lr_at(gesture.schedule, 14999), 1e-4);
  EXPECT_EQ(lr_at(gesture.schedule, 15000), 1e-5);
  EXPECT_EQ(lr_at(gesture.schedule, 20000), 1e-6);
  for (const char* name : {"posenet-schedule", "handsegnet-schedule", "gesturenet-schedule"})
    EXPECT_EQ(preset(name).batch_size, 8u) << name;
  EXPECT_THROW(preset("nope"), Error);
}

TEST(Schedule, RejectsMalformedSchedules) {
  EXPECT_THROW((Schedule{{}}.validate()), Error);
  EXPECT_THROW((Schedule{{{5, 1e-3}}}.validate()), Error);
  EXPECT_THROW((Schedule{{{0, 1e-3}, {0, 1e-4}}}.validate()), Error);
  EXPECT_THROW((Schedule{{{0, 1e-3}, {10, -1.0}}}.validate()), Error);
  EXPECT_NO_THROW((Schedule{{{0, 1e-3}, {10, 1e-4}}}.validate()));
  const Schedule s = scale_schedule(posenet_schedule(), 0.1);
  EXPECT_EQ(s.steps[1].first, 1000u);
  EXPECT_EQ(s.steps[2].second, 1e-6);
}

TEST(Config, JsonRoundTripAndOverrides) {
  TrainConfig c = preset("poseprior-desk");
  c.seed = 42;
  c.sample.keypoint_noise = false;
  c.train_data = "train.jsonl";
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  EXPECT_EQ(config_to_json(c).at("v"), 1);

  const TrainConfig o = config_from_json({{"seed", 9}, {"iterations", 12}}, c);
  EXPECT_EQ(o.seed, 9u);
  EXPECT_EQ(o.iterations, 12u);
  EXPECT_EQ(o.schedule, c.schedule);

  EXPECT_THROW(config_from_json({{"v", 2}}), Error);
  EXPECT_THROW(config_from_json({{"arch", "resnet"}}), Error);
  EXPECT_THROW(config_from_json({{"width_scale", 0.0}}), Error);
  EXPECT_THROW(config_from_json({{"batch_size", "eight"}}), Error);
  try {
    config_from_json({{"v", 7}});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnsupportedVersion);
  }
}

std::vector<SampleRecord> records(std::size_t n, std::uint64_t seed) { return generate_samples(HandModel{}, n, seed); }

TEST(TrainingSample, DecodedMapsReturnToImageKeypoints) {
  const auto recs = records(50, 3);
  for (const SampleRecord& r : recs) {
    const TrainingSample s = make_training_sample(r, 0, SampleOptions::clean());
    const std::size_t m = models::kScoreMapSize;
    ScoreMapStack maps(m, m);
    for (std::size_t j = 0; j < kNumKeypoints; ++j)
      for (std::size_t p = 0; p < m * m; ++p) maps.data[j * m * m + p] = s.maps[p * kNumKeypoints + j];
    const auto decoded = decode_scoremaps(maps);
    const CropTransform back = map_transform(s, m);
    // One map cell in image pixels.
    const double cell = s.crop.box.size / double(m);
    for (std::size_t j = 0; j < kNumKeypoints; ++j) {
      const Point2 p = invert_crop(back, decoded[j].location);
      EXPECT_LE(std::hypot(p.u - r.keypoints_2d[j].u, p.v - r.keypoints_2d[j].v), cell) << "keypoint " << j;
      EXPECT_NEAR(decoded[j].confidence, 1.0, 1e-6);
    }
  }
}

TEST(TrainingSample, InvisibleKeypointsGiveZeroMaps) {
  SampleRecord r = records(1, 4)[0];
  for (std::size_t j : {4u, 8u, 20u}) r.visibility[j] = false;
  const TrainingSample s = make_training_sample(r, 1);
  for (std::size_t p = 0; p < s.maps.size(); ++p) {
    const std::size_t j = p % kNumKeypoints;
    if (!r.visibility[j]) {
      ASSERT_EQ(s.maps[p], 0.0f);
    }
  }
  double peak = 0.0;
  for (std::size_t p = 0; p < s.maps.size(); p += kNumKeypoints) peak = std::max(peak, double(s.maps[p]));
  EXPECT_NEAR(peak, 1.0, 1e-6);
}

TEST(TrainingSample, SupervisionRecombinesToRelativePose) {
  for (const SampleRecord& r : records(200, 5)) {
    const TrainingSample s = make_training_sample(r, 2);
    EXPECT_TRUE(is_rotation(s.gt_R, 1e-9));
    EXPECT_EQ(s.side.handedness(), r.handedness);
    const RelativePose back = from_canonical(s.gt_wc, s.gt_R, r.handedness);
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      ASSERT_LT(distance(back.coords[i], s.gt_rel.coords[i]), 1e-9);
      // Normalized relative coordinates from first principles.
      const Vec3 rel = (r.keypoints_3d[i] - r.keypoints_3d[0]) / s.scale;
      ASSERT_LT(distance(rel, s.gt_rel.coords[i]), 1e-9);
    }
    EXPECT_NEAR(s.scale, distance(r.keypoints_3d[5], r.keypoints_3d[6]), 1e-9);
  }
}

TEST(TrainingSample, NoiseIsSeededAndOptional) {
  const SampleRecord r = records(1, 6)[0];
  EXPECT_EQ(make_training_sample(r, 7).maps, make_training_sample(r, 7).maps);
  EXPECT_NE(make_training_sample(r, 7).maps, make_training_sample(r, 8).maps);
  EXPECT_EQ(make_training_sample(r, 7, SampleOptions::clean()).maps,
            make_training_sample(r, 8, SampleOptions::clean()).maps);
}

TEST(PosePriorLoss, ZeroAtTruthAndClosedFormRotationTerm) {
  Rng rng(11);
  Keypoints3 wc;
  for (Vec3& p : wc) p = test::random_unit(rng);
  const Rot3 r = test::random_rotation(rng);
  const PosePriorLoss at_truth = poseprior_loss(wc, matrix_to_axis_angle(r), wc, r);
  EXPECT_NEAR(at_truth.total, 0.0, 1e-20);

  // ||R(theta z) - I||_F^2 = 4 (1 - cos theta).
  for (double theta : {0.1, 1.0, 2.5, std::numbers::pi}) {
    const PosePriorLoss l = poseprior_loss(wc, {0, 0, theta}, wc, Rot3::identity());
    EXPECT_NEAR(l.loss_r, 4.0 * (1.0 - std::cos(theta)), 1e-12);
    EXPECT_EQ(l.loss_c, 0.0);
  }
  Keypoints3 unit = wc;
  unit[7] = unit[7] + Vec3{0, 0, 1};
  EXPECT_NEAR(poseprior_loss(unit, matrix_to_axis_angle(r), wc, r).total, 1.0, 1e-12);
  Keypoints3 off = wc;
  off[3] = off[3] + Vec3{3, 4, 0};
  EXPECT_NEAR(poseprior_loss(off, matrix_to_axis_angle(r), wc, r).loss_c, 25.0, 1e-12);
}

TEST(PosePriorLoss, GradientsMatchFiniteDifferences) {
  Rng rng(12);
  auto frob = [](AxisAngle v, const Rot3& gt) {
    const Rot3 r = axis_angle_to_matrix(v);
    double s = 0.0;
    for (std::size_t e = 0; e < 9; ++e) s += (r.m[e] - gt.m[e]) * (r.m[e] - gt.m[e]);
    return s;
  };
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Keypoints3 wc, gt;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      wc[i] = test::random_unit(rng);
      gt[i] = test::random_unit(rng);
    }
    const Rot3 gt_r = test::random_rotation(rng);
    const AxisAngle v = test::random_axis_angle(rng, trial + 1) * 0.999 + 0.01 * test::random_unit(rng);
    const PosePriorLoss l = poseprior_loss(wc, v, gt, gt_r);
    for (std::size_t k = 0; k < 3; ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(v[k]));
      AxisAngle hi = v, lo = v;
      hi[k] += h;
      lo[k] -= h;
      const double numeric = (frob(hi, gt_r) - frob(lo, gt_r)) / (2 * h);
      worst = std::max(worst, nn::relative_error(l.grad_viewpoint[k], numeric, 1e-6));
    }
    for (std::size_t i = 0; i < kNumKeypoints; ++i)
      for (std::size_t k = 0; k < 3; ++k) ASSERT_NEAR(l.grad_wc[3 * i + k], 2.0 * (wc[i][k] - gt[i][k]), 1e-12);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(PosePriorLoss, RejectsNonRotationSupervision) {
  Keypoints3 wc{};
  Rot3 bad;
  bad.m[0] = 2.0;
  try {
    poseprior_loss(wc, {}, wc, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotARotation);
  }
}

TEST(BatchSampler, EveryEpochVisitsEachSampleOnce) {
  BatchSampler s(10, 4, 3);
  std::vector<std::size_t> seen;
  for (std::uint64_t it = 0; it < 5; ++it)
    for (std::size_t i : s.indices(it)) seen.push_back(i);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.begin() + 10).size(), 10u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin() + 10, seen.end()).size(), 10u);
  BatchSampler fresh(10, 4, 3);
  EXPECT_EQ(fresh.indices(3), BatchSampler(10, 4, 3).indices(3));
  EXPECT_EQ(fresh.indices(3), std::vector<std::size_t>(seen.begin() + 12, seen.begin() + 16));
  EXPECT_THROW(BatchSampler(0, 4, 1), Error);
}

TrainConfig small_config(Arch arch, std::uint64_t iterations) {
  TrainConfig c;
  c.arch = arch;
  c.iterations = iterations;
  c.width_scale = 0.25;
  c.batch_size = 4;
  c.seed = 5;
  c.log_every = 2;
  c.schedule = {{{0, 1e-3}}};
  return c;
}

std::vector<std::vector<float>> snapshot(ModelBundle& m) {
  std::vector<std::vector<float>> out;
  for (auto& net : m.nets)
    for (const auto& p : net.parameters()) out.push_back(p.data);
  for (auto& opt : m.optimizers) {
    for (const auto& t : opt.m) out.push_back(std::vector<float>(t.begin(), t.end()));
    for (const auto& t : opt.v) out.push_back(std::vector<float>(t.begin(), t.end()));
  }
  return out;
}

TEST(Train, DeterministicAndResumable) {
  const auto data = records(40, 9);
  for (Arch arch : {Arch::PosePrior, Arch::PosePriorDirect}) {
    ModelBundle a = models::make_model(arch, 0.25, 5);
    ModelBundle b = models::make_model(arch, 0.25, 5);
    const auto before = snapshot(a);
    EXPECT_TRUE(train(a, small_config(arch, 0), data).empty());
    EXPECT_EQ(snapshot(a), before);

    const auto log_a = train(a, small_config(arch, 6), data);
    train(b, small_config(arch, 3), data);
    EXPECT_EQ(b.iteration, 3u);
    train(b, small_config(arch, 6), data);
    EXPECT_EQ(a.iteration, 6u);
    EXPECT_EQ(snapshot(a), snapshot(b));
    EXPECT_NE(snapshot(a), before);

    ModelBundle c = models::make_model(arch, 0.25, 5);
    EXPECT_EQ(train(c, small_config(arch, 6), data), log_a);
    ASSERT_EQ(log_a.size(), 3u);
    EXPECT_EQ(log_a.back().iteration, 6u);
    for (const LogRow& row : log_a) {
      EXPECT_TRUE(std::isfinite(row.total));
      EXPECT_EQ(row.total, row.loss_c + row.loss_r);
      if (arch == Arch::PosePriorDirect) {
        EXPECT_EQ(row.loss_r, 0.0);
      }
    }
  }
}

TEST(Train, CheckpointCallbackFiresOnSchedule) {
  const auto data = records(20, 10);
  ModelBundle m = models::make_model(Arch::PosePriorDirect, 0.25, 1);
  TrainConfig c = small_config(Arch::PosePriorDirect, 7);
  c.checkpoint_every = 3;
  std::vector<std::uint64_t> at;
  TrainCallbacks cb;
  cb.on_checkpoint = [&](const ModelBundle& b) { at.push_back(b.iteration); };
  train(m, c, data, cb);
  EXPECT_EQ(at, (std::vector<std::uint64_t>{3, 6}));
}

TEST(Train, DirectRegressionReducesTrainingLoss) {
  const auto data = records(64, 13);
  ModelBundle m = models::make_model(Arch::PosePriorDirect, 0.25, 2);
  const double before = evaluate_loss(m, data).loss_c;
  TrainConfig c = small_config(Arch::PosePriorDirect, 150);
  c.batch_size = 8;
  train(m, c, data);
  EXPECT_LT(evaluate_loss(m, data).loss_c, 0.5 * before);
}

TEST(Train, NonFiniteLossAborts) {
  const auto data = records(8, 14);
  ModelBundle m = models::make_model(Arch::PosePrior, 0.25, 3);
  m.nets[1].parameters().back().data[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(m, small_config(Arch::PosePrior, 2), data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NumericDivergence);
  }
  EXPECT_EQ(m.iteration, 0u);
}

TEST(Train, RejectsMismatchedArchitectureAndMissingLabels) {
  const auto data = records(8, 15);
  ModelBundle m = models::make_model(Arch::PosePrior, 0.25, 3);
  EXPECT_THROW(train(m, small_config(Arch::PosePriorDirect, 1), data), Error);
  ModelBundle g = models::make_model(Arch::GestureNet, 0.25, 3);
  try {
    train(g, small_config(Arch::GestureNet, 1), data);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
  }
}

double accuracy(const std::vector<int>& pred, const std::vector<SampleRecord>& recs) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) hit += pred[i] == *recs[i].label;
  return double(hit) / double(recs.size());
}

TEST(GestureTraining, UntrainedAccuracyIsChance) {
  const auto data = generate_gesture_samples(HandModel{}, 3500, 21);
  ModelBundle m = models::make_model(Arch::GestureNet, 1.0, 4);
  const double acc = accuracy(predict_labels(m, data), data);
  // Balanced labels: any label-blind predictor scores 1/35 in expectation.
  const double p = 1.0 / 35.0, sd = std::sqrt(p * (1 - p) / 3500.0);
  EXPECT_NEAR(acc, p, 4 * sd);
}

/// Least-squares one-vs-rest linear classifier, solved by Gaussian
/// elimination on the normal equations.
double linear_separability(const std::vector<SampleRecord>& recs, std::size_t classes) {
  const std::size_t d = models::kCoordinateOutputs + 1;
  std::vector<std::vector<double>> a(d, std::vector<double>(d + classes, 0.0));
  std::vector<std::array<double, models::kCoordinateOutputs + 1>> xs;
  for (const SampleRecord& r : recs) {
    std::array<double, models::kCoordinateOutputs + 1> x{};
    const RelativePose rel = to_relative(normalize_scale(pose_of(r)));
    for (std::size_t i = 0; i < kNumKeypoints; ++i)
      for (std::size_t k = 0; k < 3; ++k) x[3 * i + k] = rel.coords[i][k];
    x[d - 1] = 1.0;
    xs.push_back(x);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) a[i][j] += x[i] * x[j];
      a[i][d + std::size_t(*r.label)] += x[i];
    }
  }
  for (std::size_t i = 0; i < d; ++i) a[i][i] += 1e-6;
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < d; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < d + classes; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::size_t hit = 0;
  for (std::size_t n = 0; n < recs.size(); ++n) {
    std::size_t best = 0;
    double best_score = -1e300;
    for (std::size_t k = 0; k < classes; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += xs[n][i] * a[i][d + k] / a[i][i];
      if (s > best_score) best_score = s, best = k;
    }
    hit += int(best) == *recs[n].label;
  }
  return double(hit) / double(recs.size());
}

TEST(GestureTraining, LearnsSeparableToyProblem) {
  GestureOptions g;
  g.num_classes = 3;
  g.random_orientation = false;
  const auto all = generate_gesture_samples(HandModel{}, 600, 31, g);
  const std::vector<SampleRecord> train_set(all.begin(), all.begin() + 300), test_set(all.begin() + 300, all.end());
  ASSERT_GT(linear_separability(train_set, 3), 0.99);

  ModelBundle m = models::make_model(Arch::GestureNet, 0.25, 6, {}, 3);
  TrainConfig c = small_config(Arch::GestureNet, 3000);
  c.classes = 3;
  c.batch_size = 8;
  c.log_every = 500;
  const auto log = train(m, c, train_set);
  EXPECT_LT(log.back().loss_c, log.front().loss_c);
  EXPECT_GT(accuracy(predict_labels(m, test_set), test_set), 0.95);
}

}  // namespace
}  // namespace hand3d::training
