#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "t6d/losses.hpp"
#include "test_support.hpp"

using namespace t6d;
using t6d::testing::central_difference;
using t6d::testing::cube_corners;
using t6d::testing::relative_error;

namespace {

// GIoU from corner coordinates, written independently of the library's center/size arithmetic.
double giou_from_corners(const BBox& a, const BBox& b) {
  const double a0 = a.cx - a.w / 2, a1 = a.cx + a.w / 2, a2 = a.cy - a.h / 2, a3 = a.cy + a.h / 2;
  const double b0 = b.cx - b.w / 2, b1 = b.cx + b.w / 2, b2 = b.cy - b.h / 2, b3 = b.cy + b.h / 2;
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0)) * std::max(0.0, std::min(a3, b3) - std::max(a2, b2));
  const double uni = (a1 - a0) * (a3 - a2) + (b1 - b0) * (b3 - b2) - inter;
  const double hull = (std::max(a1, b1) - std::min(a0, b0)) * (std::max(a3, b3) - std::min(a2, b2));
  return 1.0 - (inter / uni - (hull - uni) / hull);
}

PredictionTuple perfect_tuple(const GroundTruthObject& gt, int n_classes) {
  PredictionTuple t;
  t.class_logits.assign(static_cast<std::size_t>(n_classes) + 1, -1e3);
  t.class_logits[gt.class_id] = 1e3;
  t.bbox = gt.bbox;
  t.rot6d = matrix_to_rot6d(gt.pose.rotation);
  t.translation = gt.pose.translation;
  return t;
}

PredictionTuple empty_tuple(int n_classes) {
  PredictionTuple t;
  t.class_logits.assign(static_cast<std::size_t>(n_classes) + 1, -1e3);
  t.class_logits[n_classes] = 1e3;
  t.bbox = {0.5, 0.5, 0.2, 0.2};
  t.rot6d = matrix_to_rot6d(Rotation::identity());
  t.translation = Vec3(0, 0, 1);
  return t;
}

std::vector<ModelPoints> points_table(std::mt19937_64& rng) {
  return {ModelPoints(t6d::testing::random_cloud(rng, 40), false), ModelPoints(t6d::testing::ring(24, 0.04), true),
          ModelPoints(t6d::testing::random_cloud(rng, 30, 0.08), false)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Boxes

TEST(Giou, IdenticalBoxesGiveZero) {
  const BBox b{0.3, 0.6, 0.2, 0.4};
  EXPECT_NEAR(giou_loss(b, b), 0.0, 1e-15);
}

TEST(Giou, CornerTouchingBoxes) {
  const double v = giou_loss({0.25, 0.25, 0.5, 0.5}, {0.75, 0.75, 0.5, 0.5});
  EXPECT_NEAR(v, 1.5, 1e-12);
  EXPECT_NEAR(v, giou_from_corners({0.25, 0.25, 0.5, 0.5}, {0.75, 0.75, 0.5, 0.5}), 1e-12);
}

TEST(Giou, FarApartTinyBoxesApproachTwo) {
  EXPECT_GT(giou_loss({0.01, 0.01, 1e-3, 1e-3}, {0.99, 0.99, 1e-3, 1e-3}), 1.999);
}

TEST(Giou, NestedBoxesGiveOneMinusIou) {
  const BBox outer{0.5, 0.5, 0.6, 0.6}, inner{0.45, 0.55, 0.2, 0.3};
  EXPECT_NEAR(giou_loss(outer, inner), 1.0 - iou(outer, inner), 1e-12);
  EXPECT_NEAR(iou(outer, inner), (0.2 * 0.3) / (0.6 * 0.6), 1e-12);
}

TEST(Giou, RangeSymmetryAndOracleOnRandomPairs) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> c(0.0, 1.0), s(0.01, 1.0);
  for (int k = 0; k < 10000; ++k) {
    const BBox a{c(rng), c(rng), s(rng), s(rng)}, b{c(rng), c(rng), s(rng), s(rng)};
    const double v = giou_loss(a, b);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 2.0);
    EXPECT_NEAR(v, giou_loss(b, a), 1e-12);
    EXPECT_NEAR(v, giou_from_corners(a, b), 1e-12);
  }
}

TEST(Giou, DegenerateBoxesThrow) {
  EXPECT_THROW(giou_loss({0.5, 0.5, 0.0, 0.2}, {0.5, 0.5, 0.2, 0.2}), DegenerateBox);
  EXPECT_THROW(giou_loss({0.5, 0.5, 0.2, 0.2}, {0.5, 0.5, 0.2, -0.1}), DegenerateBox);
}

TEST(Giou, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 200; ++k) {
    const BBox gt = t6d::testing::random_box(rng);
    BBox pr = t6d::testing::random_box(rng);
    const auto g = giou_loss_with_grad(gt, pr);
    double* fields[4] = {&pr.cx, &pr.cy, &pr.w, &pr.h};
    for (int i = 0; i < 4; ++i) {
      const double fd = central_difference([&] { return giou_loss(gt, pr); }, *fields[i], 1e-7);
      EXPECT_LT(relative_error(g.d_pred[i], fd, 1e-7), 1e-5) << "component " << i << " case " << k;
    }
  }
}

TEST(BoxLoss, ShiftedBoxOracle) {
  const BBox gt{0.5, 0.5, 0.4, 0.4}, pr{0.6, 0.5, 0.4, 0.4};
  // intersection 0.3 x 0.4, union 0.2, hull 0.5 x 0.4 = union -> giou 0.6
  EXPECT_NEAR(giou_loss(gt, pr), 0.4, 1e-12);
  EXPECT_NEAR(box_loss(gt, pr, 0.0, 5.0), 0.5, 1e-12);
  EXPECT_NEAR(box_loss(gt, pr, 2.0, 5.0), 1.3, 1e-12);
  EXPECT_NEAR(box_loss(gt, pr, 4.0, 5.0) - box_loss(gt, pr, 2.0, 5.0), 2.0 * giou_loss(gt, pr), 1e-12);
  EXPECT_EQ(box_loss(gt, gt, 2.0, 5.0), 0.0);
}

// ---------------------------------------------------------------------------
// Pose terms

TEST(RotationLoss, CubeQuarterTurnEnumeration) {
  const auto corners = cube_corners(0.5);
  const Rotation rz = axis_angle(Vec3::UnitZ(), M_PI / 2);
  double expect = 0.0;
  for (const auto& x : corners) expect += (x - rz.m * x).norm() / 8.0;
  EXPECT_NEAR(expect, 1.0, 1e-12);  // every corner moves by sqrt(2 (x^2 + y^2)) = 1
  EXPECT_NEAR(rotation_loss(Rotation::identity(), rz, ModelPoints(corners, false)), expect, 1e-12);
  // the rotated cube occupies the same corners
  EXPECT_NEAR(rotation_loss(Rotation::identity(), rz, ModelPoints(corners, true)), 0.0, 1e-12);
}

TEST(RotationLoss, SymmetricBranchNeverExceedsAsymmetric) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 1000; ++k) {
    const auto pts = t6d::testing::random_cloud(rng, 20);
    const Rotation R = random_rotation(rng), Rh = random_rotation(rng);
    EXPECT_LE(rotation_loss(R, Rh, ModelPoints(pts, true)), rotation_loss(R, Rh, ModelPoints(pts, false)));
  }
}

TEST(RotationLoss, ZeroOnEqualRotationsAndLeftInvariant) {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 100; ++k) {
    const ModelPoints asym(t6d::testing::random_cloud(rng, 25), false), sym(asym.points(), true);
    const Rotation R = random_rotation(rng), Rh = random_rotation(rng);
    EXPECT_EQ(rotation_loss(R, R, asym), 0.0);
    EXPECT_EQ(rotation_loss(R, R, sym), 0.0);
    EXPECT_NEAR(rotation_loss(R, Rh, asym), rotation_loss(Rotation::identity(), {R.m.transpose() * Rh.m}, asym), 1e-9);
  }
}

TEST(PoseLoss, TranslationOffsetAndAdditivity) {
  std::mt19937_64 rng(5);
  const ModelPoints pts(t6d::testing::random_cloud(rng, 30), false);
  const Rotation R = random_rotation(rng);
  const Vec3 t(0.1, -0.2, 0.8);
  EXPECT_EQ(pose_loss(R, t, R, t, pts), 0.0);
  EXPECT_NEAR(pose_loss(R, t, R, t + Vec3(0.3, 0, 0), pts), 0.3, 1e-12);
  const Rotation Rh = random_rotation(rng);
  const Vec3 th = t + Vec3(0.05, 0.02, -0.1);
  EXPECT_NEAR(pose_loss(R, t, Rh, th, pts) - rotation_loss(R, Rh, pts), (t - th).norm(), 1e-12);
}

TEST(PointMatchingLoss, BasicIdentities) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 200; ++k) {
    const auto cloud = t6d::testing::random_cloud(rng, 25);
    const ModelPoints sym(cloud, true), asym(cloud, false);
    const Rotation R = random_rotation(rng), Rh = random_rotation(rng);
    const Vec3 t = t6d::testing::random_vec(rng, -0.3, 0.3), th = t6d::testing::random_vec(rng, -0.3, 0.3);
    EXPECT_EQ(point_matching_loss(R, t, R, t, sym, PointMatchingMode::full), 0.0);
    const Vec3 delta(0.02, -0.07, 0.01);
    EXPECT_NEAR(point_matching_loss(R, t, R, t + delta, asym, PointMatchingMode::ploss_only), delta.norm(), 1e-12);
    EXPECT_LE(point_matching_loss(R, t, Rh, th, sym, PointMatchingMode::full),
              point_matching_loss(R, t, Rh, th, sym, PointMatchingMode::ploss_only));
    EXPECT_EQ(point_matching_loss(R, t, Rh, th, asym, PointMatchingMode::full),
              point_matching_loss(R, t, Rh, th, asym, PointMatchingMode::ploss_only));
  }
}

TEST(PoseLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (bool symmetric : {false, true}) {
    const ModelPoints pts(t6d::testing::random_cloud(rng, 30), symmetric);
    for (int k = 0; k < 20; ++k) {
      const Rotation R = random_rotation(rng);
      const Vec3 t = t6d::testing::random_vec(rng, -0.2, 0.2);
      Rot6D r6 = matrix_to_rot6d(random_rotation(rng));
      Vec3 th = t6d::testing::random_vec(rng, -0.2, 0.2);
      for (auto kind : {0, 1, 2}) {
        auto eval = [&] {
          const Rotation Rh = rot6d_to_matrix(r6);
          if (kind == 0) return pose_loss(R, t, Rh, th, pts);
          return point_matching_loss(R, t, Rh, th, pts, kind == 1 ? PointMatchingMode::full : PointMatchingMode::ploss_only);
        };
        const Rotation Rh = rot6d_to_matrix(r6);
        const PoseLossGrad g = kind == 0 ? pose_loss_with_grad(R, t, Rh, th, pts)
                                         : point_matching_loss_with_grad(
                                               R, t, Rh, th, pts, kind == 1 ? PointMatchingMode::full : PointMatchingMode::ploss_only);
        EXPECT_NEAR(g.value, eval(), 1e-15);
        const auto d6 = rot6d_backward(r6, g.d_rotation);
        for (int i = 0; i < 3; ++i) {
          EXPECT_LT(relative_error(d6[i], central_difference(eval, r6.a1[i], 1e-6)), 1e-5);
          EXPECT_LT(relative_error(d6[3 + i], central_difference(eval, r6.a2[i], 1e-6)), 1e-5);
          EXPECT_LT(relative_error(g.d_translation[i], central_difference(eval, th[i], 1e-6)), 1e-5);
        }
      }
    }
  }
}

TEST(PoseLossKindNames, ParseAndPrint) {
  for (auto k : {PoseLossKind::disentangled, PoseLossKind::point_matching, PoseLossKind::ploss_only})
    EXPECT_EQ(parse_pose_loss_kind(to_string(k)), k);
  EXPECT_THROW(parse_pose_loss_kind("quaternion"), ConfigError);
}

// ---------------------------------------------------------------------------
// Set-level terms

TEST(ClassLoss, UniformSingleSlot) {
  PredictionSet preds;
  preds.tuples.push_back(empty_tuple(3));
  preds.tuples[0].class_logits = {0.3, 0.3, 0.3, 0.3};
  TargetSet targets;
  targets.objects.push_back({1, {0.5, 0.5, 0.2, 0.2}, {}});
  Assignment a;
  a.pairs = {{0, 0}};
  EXPECT_NEAR(class_loss(preds, targets, a, 0.4), std::log(4.0), 1e-12);
  EXPECT_NEAR(class_loss(preds, targets, a, 0.4), 1.3863, 5e-5);
}

TEST(ClassLoss, ZeroWhenConfidentlyRight) {
  PredictionSet preds;
  for (int j = 0; j < 5; ++j) preds.tuples.push_back(empty_tuple(2));
  EXPECT_EQ(class_loss(preds, {}, {}, 0.4), 0.0);
  TargetSet targets;
  targets.objects.push_back({1, {0.5, 0.5, 0.2, 0.2}, {}});
  preds.tuples[3] = perfect_tuple(targets.objects[0], 2);
  Assignment a;
  a.pairs = {{0, 3}};
  EXPECT_EQ(class_loss(preds, targets, a, 0.4), 0.0);
}

TEST(ClassLoss, EosWeightScalesNoObjectTerms) {
  PredictionSet preds;
  preds.tuples.push_back({{0.0, 0.0, 0.0}, {}, {}, Vec3::Zero()});
  preds.tuples.push_back({{0.0, 0.0, 0.0}, {}, {}, Vec3::Zero()});
  // no targets: both slots pay eos_weight * log 3, averaged over the two slots
  EXPECT_NEAR(class_loss(preds, {}, {}, 0.4), 0.4 * std::log(3.0), 1e-12);
  EXPECT_NEAR(class_loss(preds, {}, {}, 1.0), std::log(3.0), 1e-12);
}

TEST(HungarianLoss, PerfectPredictionsGiveZero) {
  std::mt19937_64 rng(8);
  const auto table = points_table(rng);
  TargetSet targets;
  for (int i = 0; i < 3; ++i) targets.objects.push_back(t6d::testing::random_object(rng, 3));
  PredictionSet preds;
  for (int j = 0; j < 6; ++j) preds.tuples.push_back(empty_tuple(3));
  Assignment a;
  for (int i = 0; i < 3; ++i) {
    preds.tuples[2 * i] = perfect_tuple(targets.objects[i], 3);
    a.pairs.emplace_back(i, 2 * i);
  }
  for (auto kind : {PoseLossKind::disentangled, PoseLossKind::point_matching, PoseLossKind::ploss_only}) {
    const auto b = hungarian_loss(preds, targets, a, {LossWeights{}, kind}, table);
    EXPECT_NEAR(b.total, 0.0, 1e-12);
    EXPECT_NEAR(b.pose_term, 0.0, 1e-12);
  }
}

TEST(HungarianLoss, NoTargetsLeavesOnlyTheClassTerm) {
  std::mt19937_64 rng(9);
  const auto table = points_table(rng);
  PredictionSet preds;
  for (int j = 0; j < 4; ++j) preds.tuples.push_back(t6d::testing::random_tuple(rng, 3));
  const auto b = hungarian_loss(preds, {}, {}, {}, table);
  EXPECT_EQ(b.box_term, 0.0);
  EXPECT_EQ(b.pose_term, 0.0);
  EXPECT_EQ(b.total, b.class_term);
  EXPECT_GT(b.class_term, 0.0);
}

TEST(HungarianLoss, RecomposesFromIndependentTerms) {
  std::mt19937_64 rng(10);
  const auto table = points_table(rng);
  const LossWeights w{2.0, 5.0, 0.05, 0.4};
  for (int k = 0; k < 50; ++k) {
    TargetSet targets;
    for (int i = 0; i < 3; ++i) targets.objects.push_back(t6d::testing::random_object(rng, 3));
    PredictionSet preds;
    for (int j = 0; j < 5; ++j) preds.tuples.push_back(t6d::testing::random_tuple(rng, 3));
    const auto a = hungarian_assign(build_cost_matrix(targets, preds, {}));
    const auto b = hungarian_loss(preds, targets, a, {w, PoseLossKind::disentangled}, table);

    double cls = 0.0;
    const auto slot_gt = a.slot_to_gt(5);
    for (int j = 0; j < 5; ++j) {
      const auto p = softmax(preds.tuples[j].class_logits);
      cls += slot_gt[j] >= 0 ? -std::log(p[targets.objects[slot_gt[j]].class_id]) : -0.4 * std::log(p[3]);
    }
    double box = 0.0, pose = 0.0;
    for (auto [g, s] : a.pairs) {
      const auto& gt = targets.objects[g];
      const auto& pr = preds.tuples[s];
      box += 2.0 * giou_from_corners(gt.bbox, pr.bbox);
      for (int i = 0; i < 4; ++i) box += 5.0 * std::abs(gt.bbox[i] - pr.bbox[i]);
      pose += pose_loss(gt.pose.rotation, gt.pose.translation, pr.rotation(), pr.translation, table[gt.class_id]);
    }
    EXPECT_NEAR(b.class_term, cls / 5.0, 1e-12);
    EXPECT_NEAR(b.box_term, box / 3.0, 1e-12);
    EXPECT_NEAR(b.pose_term, pose / 3.0, 1e-12);
    EXPECT_NEAR(b.total, b.class_term + b.box_term + 0.05 * b.pose_term, 1e-12);
  }
}

TEST(HungarianLoss, OptimalAssignmentMinimizesClassPlusBox) {
  // with lambda_pose = 0 and raw class probabilities in the matching cost the two objectives differ,
  // so compare against the loss' own optimum by enumeration over injective maps (n <= 4)
  std::mt19937_64 rng(11);
  const auto table = points_table(rng);
  LossWeights w;
  w.pose_weight = 0.0;
  for (int k = 0; k < 30; ++k) {
    const int n = 1 + k % 4;
    TargetSet targets;
    for (int i = 0; i < n; ++i) targets.objects.push_back(t6d::testing::random_object(rng, 3));
    PredictionSet preds;
    for (int j = 0; j < 5; ++j) preds.tuples.push_back(t6d::testing::random_tuple(rng, 3));
    // cost matrix of the loss itself: per-pair change in the class+box loss when pairing i with j
    Eigen::MatrixXd c(n, 5);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 5; ++j) {
        const auto p = softmax(preds.tuples[j].class_logits);
        const double matched = -std::log(p[targets.objects[i].class_id]) / 5.0 +
                               box_loss(targets.objects[i].bbox, preds.tuples[j].bbox, 2.0, 5.0) / n;
        c(i, j) = matched - (-0.4 * std::log(p[3]) / 5.0);
      }
    const auto best = hungarian_assign(c);
    const double best_loss = hungarian_loss(preds, targets, best, {w}, table).total;
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      Assignment a;
      for (int i = 0; i < n; ++i) a.pairs.emplace_back(i, perm[i]);
      EXPECT_LE(best_loss, hungarian_loss(preds, targets, a, {w}, table).total + 1e-12);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST(HungarianLoss, InvalidAssignmentThrows) {
  std::mt19937_64 rng(12);
  const auto table = points_table(rng);
  TargetSet targets;
  targets.objects.push_back(t6d::testing::random_object(rng, 3));
  PredictionSet preds;
  for (int j = 0; j < 2; ++j) preds.tuples.push_back(t6d::testing::random_tuple(rng, 3));
  EXPECT_THROW(hungarian_loss(preds, targets, {}, {}, table), CardinalityError);
}

TEST(HungarianLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  const auto table = points_table(rng);
  for (auto kind : {PoseLossKind::disentangled, PoseLossKind::point_matching, PoseLossKind::ploss_only}) {
    for (int k = 0; k < 5; ++k) {
      TargetSet targets;
      for (int i = 0; i < 3; ++i) targets.objects.push_back(t6d::testing::random_object(rng, 3));
      PredictionSet preds;
      for (int j = 0; j < 5; ++j) preds.tuples.push_back(t6d::testing::random_tuple(rng, 3));
      const auto a = hungarian_assign(build_cost_matrix(targets, preds, {}));
      const HungarianLossOptions opts{LossWeights{}, kind};
      std::vector<TupleGrad> grads;
      hungarian_loss(preds, targets, a, opts, table, &grads);
      auto f = [&] { return hungarian_loss(preds, targets, a, opts, table).total; };
      for (int j = 0; j < 5; ++j) {
        auto& t = preds.tuples[j];
        for (int c = 0; c < 4; ++c)
          EXPECT_LT(relative_error(grads[j].class_logits[c], central_difference(f, t.class_logits[c], 1e-6)), 1e-6);
        double* box[4] = {&t.bbox.cx, &t.bbox.cy, &t.bbox.w, &t.bbox.h};
        for (int c = 0; c < 4; ++c) EXPECT_LT(relative_error(grads[j].bbox[c], central_difference(f, *box[c], 1e-7)), 1e-5);
        for (int c = 0; c < 3; ++c) {
          EXPECT_LT(relative_error(grads[j].rot6d[c], central_difference(f, t.rot6d.a1[c], 1e-6)), 1e-5);
          EXPECT_LT(relative_error(grads[j].rot6d[3 + c], central_difference(f, t.rot6d.a2[c], 1e-6)), 1e-5);
          EXPECT_LT(relative_error(grads[j].translation[c], central_difference(f, t.translation[c], 1e-6)), 1e-5);
        }
      }
    }
  }
}

TEST(LossWeightsTest, DefaultsAndValidation) {
  const LossWeights w;
  EXPECT_EQ(w.box_giou_weight, 2.0);
  EXPECT_EQ(w.box_l1_weight, 5.0);
  EXPECT_EQ(w.pose_weight, 0.05);
  EXPECT_EQ(w.eos_weight, 0.4);
  LossWeights bad;
  bad.pose_weight = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}
