#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hand3d/geometry.hpp"
#include "hand3d/rng.hpp"
#include "test_support.hpp"

namespace hand3d {
namespace {

using test::random_hand_pose;
using test::random_rotation;

HandPose pose_with(std::initializer_list<std::pair<std::size_t, Vec3>> points) {
  HandPose p;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) p.keypoints[i] = Vec3{double(i), 2.0 * double(i) + 1.0, -double(i)};
  for (const auto& [i, v] : points) p.keypoints[i] = v;
  return p;
}

RelativePose rel_with(Vec3 align, Vec3 plane) {
  RelativePose r;
  for (std::size_t i = 1; i < kNumKeypoints; ++i) r.coords[i] = Vec3{0.1 * double(i), 0.3, -0.05 * double(i)};
  r.coords[keypoint::kAlign] = align;
  r.coords[keypoint::kPlane] = plane;
  return r;
}

TEST(NormalizeScale, HalvesCoordinatesForTwoMillimeterBone) {
  const HandPose p = pose_with({{5, {0, 0, 0}}, {6, {0, 0, 2}}});
  const NormalizedPose n = normalize_scale(p);
  EXPECT_DOUBLE_EQ(n.scale, 2.0);
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    EXPECT_EQ(n.coords[i], p.keypoints[i] / 2.0);
  }
}

TEST(NormalizeScale, ZeroLengthBoneThrows) {
  const HandPose p = pose_with({{5, {4, 4, 4}}, {6, {4, 4, 4}}});
  try {
    normalize_scale(p);
    FAIL() << "expected DegenerateBone";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateBone);
  }
}

TEST(NormalizeScale, DesignatedBoneHasUnitLength) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const NormalizedPose n = normalize_scale(random_hand_pose(rng));
    EXPECT_NEAR(distance(n.coords[6], n.coords[5]), 1.0, 1e-12);
  }
}

TEST(ToRelative, SubtractsRoot) {
  NormalizedPose n;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) n.coords[i] = Vec3{double(i), 1.0, 2.0 * double(i)};
  n.coords[0] = {1, 2, 3};
  const RelativePose r = to_relative(n);
  EXPECT_EQ(r.coords[0], Vec3{});
  for (std::size_t i = 1; i < kNumKeypoints; ++i) EXPECT_EQ(r.coords[i], n.coords[i] - (Vec3{1, 2, 3}));
}

TEST(ToRelative, IdentityWhenRootAtOrigin) {
  Rng rng(3);
  NormalizedPose n = normalize_scale(random_hand_pose(rng));
  n.coords[0] = {};
  EXPECT_EQ(to_relative(n).coords, n.coords);
}

TEST(ToRelative, Idempotent) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const NormalizedPose n = normalize_scale(random_hand_pose(rng));
    const RelativePose once = to_relative(n);
    const RelativePose twice = to_relative(NormalizedPose{once.coords, n.scale});
    EXPECT_EQ(once.coords, twice.coords);
  }
}

TEST(CanonicalRotation, PreAlignedIsIdentity) {
  const CanonicalRotation cr = compute_canonical_rotation(rel_with({0, 2, 0}, {3, 1, 0}));
  EXPECT_FALSE(cr.degenerate_secondary);
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(cr.rotation.m[k], Rot3::identity().m[k], 1e-15);
}

TEST(CanonicalRotation, AxisPermutation) {
  const CanonicalRotation cr = compute_canonical_rotation(rel_with({1, 0, 0}, {0.3, 0.2, 0.7}));
  const Vec3 mapped = cr.rotation * Vec3{1, 0, 0};
  EXPECT_NEAR(mapped.x, 0.0, 1e-15);
  EXPECT_NEAR(mapped.y, 1.0, 1e-15);
  EXPECT_NEAR(mapped.z, 0.0, 1e-15);
  EXPECT_LT(rotation_defect(cr.rotation), 1e-12);
}

TEST(CanonicalRotation, DegenerateAlignmentThrows) {
  try {
    compute_canonical_rotation(rel_with({0, 0, 0}, {1, 1, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateAlignment);
  }
}

TEST(CanonicalRotation, DegenerateSecondaryFlagged) {
  const CanonicalRotation cr = compute_canonical_rotation(rel_with({0, 1, 0}, {0, 5, 0}));
  EXPECT_TRUE(cr.degenerate_secondary);
  EXPECT_EQ(cr.rotation, Rot3::identity());
}

TEST(CanonicalRotation, ConstraintsHoldOnRandomPoses) {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const RelativePose rel = to_relative(normalize_scale(random_hand_pose(rng)));
    const CanonicalRotation cr = compute_canonical_rotation(rel);
    ASSERT_FALSE(cr.degenerate_secondary);
    const Vec3 a = cr.rotation * rel.coords[keypoint::kAlign];
    const Vec3 o = cr.rotation * rel.coords[keypoint::kPlane];
    EXPECT_NEAR(a.x, 0.0, 1e-9);
    EXPECT_NEAR(a.z, 0.0, 1e-9);
    EXPECT_NEAR(a.y, norm(rel.coords[keypoint::kAlign]), 1e-9);
    EXPECT_NEAR(o.z, 0.0, 1e-9);
    EXPECT_GE(o.x, -1e-9);
    EXPECT_LT(rotation_defect(cr.rotation), 1e-9);
  }
}

TEST(ToCanonical, LeftPreAlignedIsIdentity) {
  const RelativePose rel = rel_with({0, 2, 0}, {3, 1, 0});
  const CanonicalPose cp = to_canonical(rel, Handedness::Left);
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    EXPECT_NEAR(distance(cp.coords[i], rel.coords[i]), 0.0, 1e-15);
  }
}

TEST(ToCanonical, RightHandFlipsZ) {
  RelativePose rel = rel_with({0, 2, 0}, {3, 1, 0});
  rel.coords[4] = {1, 2, 3};
  const CanonicalPose cp = to_canonical(rel, Handedness::Right);
  EXPECT_NEAR(distance(cp.coords[4], Vec3{1, 2, -3}), 0.0, 1e-15);
}

TEST(ToCanonical, MirrorSymmetry) {
  Rng rng(23);
  for (int trial = 0; trial < 500; ++trial) {
    const RelativePose left = to_relative(normalize_scale(random_hand_pose(rng)));
    RelativePose mirrored = left;
    for (Vec3& v : mirrored.coords) v.z = -v.z;
    const CanonicalPose a = to_canonical(left, Handedness::Left);
    const CanonicalPose b = to_canonical(mirrored, Handedness::Right);
    for (std::size_t i = 0; i < kNumKeypoints; ++i) EXPECT_LT(distance(a.coords[i], b.coords[i]), 1e-9);
  }
}

TEST(FromCanonical, IdentityLeftIsNoOp) {
  Rng rng(29);
  const RelativePose rel = to_relative(normalize_scale(random_hand_pose(rng)));
  EXPECT_EQ(from_canonical(rel.coords, Rot3::identity(), Handedness::Left).coords, rel.coords);
}

TEST(FromCanonical, RightFlipInvolution) {
  Keypoints3 wc{};
  wc[3] = {0, 0, 1};
  const RelativePose r = from_canonical(wc, Rot3::identity(), Handedness::Right);
  EXPECT_EQ(r.coords[3], (Vec3{0, 0, -1}));
}

TEST(FromCanonical, RejectsNonRotation) {
  Rot3 bad = Rot3::identity();
  bad(0, 0) = 1.01;
  try {
    from_canonical(Keypoints3{}, bad, Handedness::Left);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotARotation);
  }
}

TEST(FromCanonical, RoundTripBothHands) {
  Rng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const RelativePose rel = to_relative(normalize_scale(random_hand_pose(rng)));
    for (Handedness h : {Handedness::Left, Handedness::Right}) {
      const CanonicalPose cp = to_canonical(rel, h);
      const RelativePose back = from_canonical(cp.coords, cp.rotation, h);
      for (std::size_t i = 0; i < kNumKeypoints; ++i) EXPECT_LT(distance(back.coords[i], rel.coords[i]), 1e-9);
    }
  }
}

TEST(ToCanonical, InvariantUnderGlobalRotation) {
  Rng rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    const RelativePose rel = to_relative(normalize_scale(random_hand_pose(rng)));
    const Rot3 q = random_rotation(rng);
    RelativePose rotated;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) rotated.coords[i] = q * rel.coords[i];
    const CanonicalPose a = to_canonical(rel, Handedness::Right);
    const CanonicalPose b = to_canonical(rotated, Handedness::Right);
    for (std::size_t i = 0; i < kNumKeypoints; ++i) EXPECT_LT(distance(a.coords[i], b.coords[i]), 1e-9);
  }
}

TEST(Decompose, FullChainReconstructs) {
  Rng rng(41);
  for (int trial = 0; trial < 200; ++trial) {
    HandPose p = random_hand_pose(rng);
    p.handedness = trial % 2 ? Handedness::Right : Handedness::Left;
    const Keypoints3 back = recompose(decompose(p));
    for (std::size_t i = 0; i < kNumKeypoints; ++i)
      EXPECT_LT(distance(back[i], p.keypoints[i]), 1e-9 * std::max(1.0, norm(p.keypoints[i])));
  }
}

TEST(AxisAngle, ZeroIsIdentity) { EXPECT_EQ(axis_angle_to_matrix({0, 0, 0}), Rot3::identity()); }

TEST(AxisAngle, QuarterTurnAboutZ) {
  const Rot3 r = axis_angle_to_matrix({0, 0, std::numbers::pi / 2});
  const Rot3 expected{{0, -1, 0, 1, 0, 0, 0, 0, 1}};
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(r.m[k], expected.m[k], 1e-15);
}

TEST(AxisAngle, MatrixToAxisAngleExamples) {
  EXPECT_EQ(matrix_to_axis_angle(Rot3::identity()), (Vec3{0, 0, 0}));
  const AxisAngle aa = matrix_to_axis_angle(Rot3{{0, -1, 0, 1, 0, 0, 0, 0, 1}});
  EXPECT_NEAR(aa.x, 0.0, 1e-15);
  EXPECT_NEAR(aa.y, 0.0, 1e-15);
  EXPECT_NEAR(aa.z, std::numbers::pi / 2, 1e-15);
}

TEST(AxisAngle, HalfTurnAxisConvention) {
  // Exactly pi about -x: the convention returns +x.
  const Rot3 r{{1, 0, 0, 0, -1, 0, 0, 0, -1}};
  const AxisAngle aa = matrix_to_axis_angle(r);
  EXPECT_NEAR(aa.x, std::numbers::pi, 1e-15);
  EXPECT_EQ(aa.y, 0.0);
  EXPECT_EQ(aa.z, 0.0);
}

TEST(AxisAngle, RejectsNonRotation) {
  const Rot3 reflection{{1, 0, 0, 0, 1, 0, 0, 0, -1}};
  EXPECT_THROW(matrix_to_axis_angle(reflection), Error);
}

TEST(AxisAngle, RoundTripWithEdgeAngles) {
  Rng rng(43);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const AxisAngle aa = test::random_axis_angle(rng, trial);
    const AxisAngle back = matrix_to_axis_angle(axis_angle_to_matrix(aa));
    worst = std::max(worst, distance(aa, back));
    EXPECT_LT(rotation_defect(axis_angle_to_matrix(aa)), 1e-12);
  }
  EXPECT_LT(worst, 1e-9);
}

}  // namespace
}  // namespace hand3d
