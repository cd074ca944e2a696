#include <gtest/gtest.h>

#include <cmath>

#include "hand3d/heatmap.hpp"

namespace hand3d {
namespace {

std::array<bool, kNumKeypoints> all_visible() {
  std::array<bool, kNumKeypoints> v;
  v.fill(true);
  return v;
}

Keypoints2 grid_keypoints(Rng& rng, std::size_t size) {
  Keypoints2 k;
  for (Point2& p : k) p = {double(rng.below(size)), double(rng.below(size))};
  return k;
}

TEST(RenderScoremaps, InvisibleMapIsZero) {
  Rng rng(1);
  auto vis = all_visible();
  vis[4] = false;
  const ScoreMapStack s = render_scoremaps(grid_keypoints(rng, 32), vis, 32, 32);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(s.at(4, r, c), 0.0);
}

TEST(RenderScoremaps, PeakIsOneAndFivePixelValue) {
  Keypoints2 k{};
  for (Point2& p : k) p = {10, 12};
  const ScoreMapStack s = render_scoremaps(k, all_visible(), 32, 32);
  EXPECT_EQ(s.at(0, 12, 10), 1.0);
  // exp(-25 / 50) evaluated directly.
  EXPECT_NEAR(s.at(0, 12, 15), 0.6065306597126334, 1e-15);
  EXPECT_NEAR(s.at(0, 17, 10), 0.6065306597126334, 1e-15);
  EXPECT_NEAR(s.at(0, 15, 14), 0.6065306597126334, 1e-15);  // 3-4-5
}

TEST(RenderScoremaps, ValuesInUnitIntervalWithUnitMax) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Keypoints2 k;
    for (Point2& p : k) p = {rng.uniform(-3, 35), rng.uniform(-3, 35)};
    const ScoreMapStack s = render_scoremaps(k, all_visible(), 32, 32);
    for (std::size_t j = 0; j < kNumKeypoints; ++j) {
      double mx = 0.0;
      for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c) {
          ASSERT_GE(s.at(j, r, c), 0.0);
          ASSERT_LE(s.at(j, r, c), 1.0);
          mx = std::max(mx, s.at(j, r, c));
        }
      EXPECT_EQ(mx, 1.0);
    }
  }
}

TEST(DecodeScoremaps, OnGridRoundTripIsExact) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Keypoints2 k = grid_keypoints(rng, 32);
    const auto d = decode_scoremaps(render_scoremaps(k, all_visible(), 32, 32));
    for (std::size_t j = 0; j < kNumKeypoints; ++j) {
      EXPECT_EQ(d[j].location, k[j]);
      EXPECT_EQ(d[j].confidence, 1.0);
    }
  }
}

TEST(DecodeScoremaps, AllZeroMapDecodesToOrigin) {
  const ScoreMapStack s(32, 32);
  const auto d = decode_scoremaps(s);
  EXPECT_EQ(d[0].location, (Point2{0, 0}));
  EXPECT_EQ(d[0].confidence, 0.0);
}

TEST(DecodeScoremaps, TiesResolveRowMajor) {
  ScoreMapStack s(4, 4);
  s.at(2, 1, 3) = 0.5;
  s.at(2, 2, 0) = 0.5;
  EXPECT_EQ(decode_scoremaps(s)[2].location, (Point2{3, 1}));
}

TEST(DecodeScoremaps, OffGridWithinOnePixel) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Keypoints2 k;
    for (Point2& p : k) p = {rng.uniform(0, 31), rng.uniform(0, 31)};
    const auto d = decode_scoremaps(render_scoremaps(k, all_visible(), 32, 32));
    for (std::size_t j = 0; j < kNumKeypoints; ++j) {
      EXPECT_LE(std::abs(d[j].location.u - k[j].u), 0.5 + 1e-12);
      EXPECT_LE(std::abs(d[j].location.v - k[j].v), 0.5 + 1e-12);
    }
  }
}

TEST(HandBBox, SingleKeypointGetsMinimumSquare) {
  Keypoints2 k{};
  std::array<bool, kNumKeypoints> vis{};
  k[3] = {100, 50};
  vis[3] = true;
  const SquareBox b = hand_bbox_from_keypoints(k, vis);
  EXPECT_EQ(b.size, BoxOptions{}.min_size);
  EXPECT_EQ(b.center(), (Point2{100, 50}));
}

TEST(HandBBox, TightSquareWithZeroMargin) {
  Keypoints2 k{};
  std::array<bool, kNumKeypoints> vis{};
  k[0] = {10, 10};
  k[1] = {50, 30};
  vis[0] = vis[1] = true;
  const SquareBox b = hand_bbox_from_keypoints(k, vis, {.margin = 0.0, .min_size = 0.0});
  EXPECT_EQ(b.size, 40.0);
  EXPECT_TRUE(b.contains(k[0]));
  EXPECT_TRUE(b.contains(k[1]));
}

TEST(HandBBox, NoVisibleKeypointsThrows) {
  try {
    hand_bbox_from_keypoints(Keypoints2{}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoVisibleKeypoints);
  }
}

TEST(HandBBox, ContainsRandomVisibleSets) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    Keypoints2 k;
    std::array<bool, kNumKeypoints> vis{};
    for (std::size_t j = 0; j < kNumKeypoints; ++j) {
      k[j] = {rng.uniform(-50, 400), rng.uniform(-50, 300)};
      vis[j] = rng.uniform() < 0.7;
    }
    vis[0] = true;
    const SquareBox b = hand_bbox_from_keypoints(k, vis);
    for (std::size_t j = 0; j < kNumKeypoints; ++j)
      if (vis[j]) {
        EXPECT_TRUE(b.contains(k[j]));
      }
  }
}

TEST(AugmentCrop, DeterministicAndContaining) {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    Keypoints2 k;
    for (Point2& p : k) p = {rng.uniform(100, 200), rng.uniform(80, 160)};
    const SquareBox box = hand_bbox_from_keypoints(k, all_visible());
    const std::uint64_t seed = rng.bits();
    const CropTransform t = augment_crop(box, seed);
    const CropTransform t2 = augment_crop(box, seed);
    EXPECT_EQ(t.box.u0, t2.box.u0);
    EXPECT_EQ(t.box.size, t2.box.size);
    for (const Point2& p : k) EXPECT_TRUE(t.box.contains(p));
  }
}

TEST(AugmentCrop, CenterVarianceMatchesConstant) {
  const SquareBox box{100, 100, 64};
  double s = 0.0, ss = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double du = augment_crop(box, child_seed(77, {std::uint64_t(i)})).box.center().u - box.center().u;
    s += du;
    ss += du * du;
  }
  const double var = (ss - s * s / n) / (n - 1);
  EXPECT_GE(var, 8.0);
  EXPECT_LE(var, 12.0);
}

TEST(JitterKeypoints, ZeroVarianceIsIdentity) {
  Rng rng(7);
  Keypoints2 k;
  for (Point2& p : k) p = {rng.uniform(0, 300), rng.uniform(0, 200)};
  EXPECT_EQ(jitter_keypoints(k, 123, 0.0), k);
}

TEST(JitterKeypoints, VarianceAndIndependence) {
  const Keypoints2 k{};
  const int n = 10000;
  double s0 = 0, ss0 = 0, s1 = 0, ss1 = 0, s01 = 0;
  for (int i = 0; i < n; ++i) {
    const Keypoints2 j = jitter_keypoints(k, child_seed(5, {std::uint64_t(i)}));
    const double a = j[0].u, b = j[1].u;
    s0 += a, ss0 += a * a, s1 += b, ss1 += b * b, s01 += a * b;
  }
  const double var0 = (ss0 - s0 * s0 / n) / (n - 1);
  const double var1 = (ss1 - s1 * s1 / n) / (n - 1);
  const double cov = (s01 - s0 * s1 / n) / (n - 1);
  EXPECT_GE(var0, 1.2);
  EXPECT_LE(var0, 1.8);
  EXPECT_LT(std::abs(cov / std::sqrt(var0 * var1)), 0.05);
}

TEST(Contrast, FactorOneIsIdentity) {
  const std::vector<double> img{0.1, 0.5, 0.9, 0.3};
  const auto out = apply_contrast(img, 1.0);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out[i], img[i], 1e-15);
}

TEST(Contrast, ConstantImageUnchanged) {
  const std::vector<double> img(16, 0.37);
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(contrast_augment(img, seed), img);
}

TEST(Contrast, FactorRange) {
  double lo = 1e9, hi = -1e9;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const double f = sample_contrast_factor(seed);
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  EXPECT_GE(lo, 0.5);
  EXPECT_LE(hi, 1.0);
  EXPECT_LT(lo, 0.51);
  EXPECT_GT(hi, 0.99);
}

TEST(Crop, IdentityAndAffineExample) {
  const CropTransform id = CropTransform::identity(320);
  EXPECT_EQ(apply_crop(id, Point2{12.5, 7}), (Point2{12.5, 7}));
  const CropTransform t{{100, 100, 128}, 256};
  EXPECT_EQ(apply_crop(t, Point2{100, 100}), (Point2{0, 0}));
  EXPECT_EQ(apply_crop(t, Point2{164, 164}), (Point2{128, 128}));
}

TEST(Crop, RoundTripAndComposition) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const CropTransform a{{rng.uniform(-50, 200), rng.uniform(-50, 200), rng.uniform(10, 300)}, rng.uniform(16, 512)};
    const CropTransform b{{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(10, 300)}, rng.uniform(16, 512)};
    const Point2 p{rng.uniform(-100, 400), rng.uniform(-100, 400)};
    const Point2 back = invert_crop(a, apply_crop(a, p));
    EXPECT_NEAR(back.u, p.u, 1e-9);
    EXPECT_NEAR(back.v, p.v, 1e-9);
    const Point2 seq = apply_crop(b, apply_crop(a, p));
    const Point2 comp = apply_crop(a.then(b), p);
    EXPECT_NEAR(seq.u, comp.u, 1e-9 * std::max(1.0, std::abs(seq.u)));
    EXPECT_NEAR(seq.v, comp.v, 1e-9 * std::max(1.0, std::abs(seq.v)));
  }
}

}  // namespace
}  // namespace hand3d
