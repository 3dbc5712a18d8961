// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "hvnet/head.hpp"
#include "hvnet/metrics.hpp"
#include "support/oracles.hpp"

using namespace hvnet;
using namespace hvnet::testing;

namespace {

const ClassAnchorConfig& car_anchors() {
  static const auto cfg = default_anchor_config().classes[2];
  return cfg;
}

Anchor single_anchor(double cx, double cy, double length, double width, double yaw, double z = -1.0,
                     double h = 1.56) {
  Anchor a;
  a.box = {make_box(cx, cy, length, width, yaw), z, h};
  a.corners = corners_bev(a.box.bev);
  return a;
}

HeadOutput<double> empty_output(std::size_t n_anc, std::size_t rows, std::size_t cols) {
  return {Grid({n_anc, rows, cols}), Grid({8 * n_anc, rows, cols}), Grid({2 * n_anc, rows, cols})};
}

/// Predictions that reproduce the assignment's targets on one anchor.
HeadOutput<double> perfect_output(const TargetAssignment& t, double logit) {
  auto out = empty_output(1, 1, 1);
  out.cls[0] = logit;
  for (std::size_t k = 0; k < 8; ++k) out.loc[k] = t.corner[0][k];
  out.vertical[0] = t.vertical[0][0];
  out.vertical[1] = t.vertical[0][1];
  return out;
}

LabeledBox labeled(double cx, double cy, double score) {
  return {{make_box(cx, cy, 4.0, 2.0, 0.0), -1.0, 1.5}, ObjectClass::car, score};
}

}  // namespace

TEST(Anchors, CountsPerPixel) {
  const MapGeometry geo{0.0, 0.0, 1.0, 1.0, 2, 2};
  ClassAnchorConfig one{ObjectClass::pedestrian, {{0.8, 0.8, 1.7}}, -1.0, 0.35, 0.25};
  AnchorConfig cfg = default_anchor_config();
  EXPECT_EQ(generate_anchors(geo, one, cfg.orientations).size(), 16u);
  EXPECT_EQ(cfg.anchors_per_pixel(2), 8u);
  EXPECT_EQ(generate_anchors(geo, car_anchors(), cfg.orientations).size(), 32u);
}

TEST(Anchors, CentersSitOnPixelCenters) {
  const MapGeometry geo{0.0, -32.0, 0.4, 0.4, 3, 3};
  const auto anchors = generate_anchors(geo, car_anchors(), default_anchor_config().orientations);
  EXPECT_NEAR(anchors[0].box.bev.cx, 0.2, 1e-12);
  EXPECT_NEAR(anchors[0].box.bev.cy, -31.8, 1e-12);
  // pixel (1, 2) starts at anchor (1*3 + 2) * 8
  EXPECT_NEAR(anchors[40].box.bev.cx, 0.6, 1e-12);
  EXPECT_NEAR(anchors[40].box.bev.cy, -31.0, 1e-12);
  EXPECT_EQ(anchors[40].box.bev.yaw, 0.0);
  EXPECT_EQ(anchors[45].box.bev.length, 6.0);
}

TEST(AnchorConfig, RejectsInvertedThresholds) {
  auto cfg = default_anchor_config();
  cfg.classes[0].negative_iou = 0.5;
  EXPECT_THROW(cfg.validate(), ContractViolation);
}

TEST(AssignTargets, IdenticalAnchorIsPositiveWithZeroOffsets) {
  const auto a = single_anchor(1, 2, 3.5, 1.7, 0.3);
  const auto t = assign_targets({a}, {a.box}, car_anchors(), false);
  EXPECT_EQ(t.labels[0], AnchorLabel::positive);
  EXPECT_EQ(t.positives, 1u);
  for (const double d : t.corner[0]) EXPECT_NEAR(d, 0.0, 1e-12);
  EXPECT_EQ(t.vertical[0][0], 0.0);
  EXPECT_EQ(t.vertical[0][1], 0.0);
}

TEST(AssignTargets, TranslatedGtGivesUniformOffsets) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  Box3D gt = a.box;
  gt.bev.cx += 1.0;
  const auto t = assign_targets({a}, {gt}, car_anchors(), true);
  ASSERT_EQ(t.labels[0], AnchorLabel::positive);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(t.corner[0][2 * k], 1.0, 1e-12);
    EXPECT_NEAR(t.corner[0][2 * k + 1], 0.0, 1e-12);
  }
}

TEST(AssignTargets, ThreeBands) {
  const auto gt = single_anchor(0, 0, 4.0, 2.0, 0.0).box;
  const std::vector<Anchor> anchors{single_anchor(0, 0, 4.0, 2.0, 0.0),   // 1.0
                                    single_anchor(1.5, 0, 4.0, 2.0, 0.0), // 2.5/5.5
                                    single_anchor(3.0, 0, 4.0, 2.0, 0.0), // 1/7
                                    single_anchor(20, 0, 4.0, 2.0, 0.0)};
  const auto t = assign_targets(anchors, {gt}, car_anchors(), false);
  EXPECT_EQ(t.labels[0], AnchorLabel::positive);
  EXPECT_EQ(t.labels[1], AnchorLabel::ignore);
  EXPECT_EQ(t.labels[2], AnchorLabel::negative);
  EXPECT_EQ(t.labels[3], AnchorLabel::negative);
  EXPECT_EQ(t.matched_gt[1], -1);
}

TEST(AssignTargets, BestAnchorIsForcedPositive) {
  const auto gt = single_anchor(0, 0, 4.0, 2.0, 0.0).box;
  const std::vector<Anchor> anchors{single_anchor(3.0, 0, 4.0, 2.0, 0.0), single_anchor(2.0, 0, 4.0, 2.0, 0.0)};
  EXPECT_EQ(assign_targets(anchors, {gt}, car_anchors(), false).positives, 0u);
  const auto t = assign_targets(anchors, {gt}, car_anchors(), true);
  EXPECT_EQ(t.labels[0], AnchorLabel::negative);
  EXPECT_EQ(t.labels[1], AnchorLabel::positive);
  EXPECT_EQ(t.matched_gt[1], 0);
}

TEST(AssignTargets, NoGtsMeansAllNegative) {
  const MapGeometry geo{0.0, 0.0, 1.0, 1.0, 3, 3};
  const auto anchors = generate_anchors(geo, car_anchors(), default_anchor_config().orientations);
  const auto t = assign_targets(anchors, {}, car_anchors(), true);
  EXPECT_EQ(t.positives, 0u);
  for (const auto l : t.labels) EXPECT_EQ(l, AnchorLabel::negative);
}

TEST(AssignTargets, TranslationEquivariant) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> pos(0.0, 6.0), yaw(0.0, std::numbers::pi), shift(-30.0, 30.0);
  const MapGeometry geo{0.0, 0.0, 0.5, 0.5, 12, 12};
  const auto& cls = car_anchors();
  const auto orient = default_anchor_config().orientations;
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Box3D> gts;
    for (int g = 0; g < 3; ++g) gts.push_back({make_box(pos(rng), pos(rng), 3.9, 1.6, yaw(rng)), -0.8, 1.5});
    // dyadic shifts keep anchor centers exact
    const double dx = std::round(shift(rng) * 4.0) / 4.0, dy = std::round(shift(rng) * 4.0) / 4.0;
    MapGeometry moved = geo;
    moved.x_min += dx;
    moved.y_min += dy;
    auto moved_gts = gts;
    for (auto& g : moved_gts) {
      g.bev.cx += dx;
      g.bev.cy += dy;
    }
    const auto a = assign_targets(generate_anchors(geo, cls, orient), gts, cls, true);
    const auto b = assign_targets(generate_anchors(moved, cls, orient), moved_gts, cls, true);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.matched_gt, b.matched_gt);
    for (std::size_t i = 0; i < a.corner.size(); ++i) {
      for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(a.corner[i][k], b.corner[i][k], 1e-9);
    }
  }
}

TEST(EncodeCorners, PicksSmallestCyclicShift) {
  const auto a = single_anchor(0, 0, 2.0, 2.0, 0.0);
  // the same square rotated by a quarter turn: shifting by one corner gives zero offsets
  const auto d = encode_corners(a.corners, corners_bev(make_box(0, 0, 2.0, 2.0, std::numbers::pi / 2.0)));
  for (const double v : d) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(HeadForward, ZeroParamsGiveHalfProbabilityAndZeroOffsets) {
  std::mt19937_64 rng(2);
  auto p = make_class_head<double>(5, 8, rng);
  EXPECT_EQ(p.cls.weight.extent(0), 8u);
  EXPECT_EQ(p.loc.weight.extent(0), 64u);
  EXPECT_EQ(p.vertical.weight.extent(0), 16u);
  for (auto* c : {&p.cls, &p.loc, &p.vertical}) {
    c->weight.fill(0.0);
    c->bias.fill(0.0);
  }
  const auto features = random_grid({5, 6, 7}, rng);
  const auto out = head_forward(features, p);
  EXPECT_EQ(out.cls.shape(), (Shape{8, 6, 7}));
  EXPECT_EQ(out.loc.shape(), (Shape{64, 6, 7}));
  EXPECT_EQ(out.vertical.shape(), (Shape{16, 6, 7}));
  for (const double v : out.cls.values()) EXPECT_EQ(sigmoid(v), 0.5);
  for (const double v : out.loc.values()) EXPECT_EQ(v, 0.0);
}

TEST(HeadForward, ChannelMismatchThrows) {
  std::mt19937_64 rng(3);
  const auto p = make_class_head<double>(5, 2, rng);
  EXPECT_THROW((void)head_forward(Grid({4, 3, 3}), p), DimensionError);
}

TEST(FocalLoss, HandValues) {
  EXPECT_NEAR(focal_loss(0.5, true, 0.75, 2.0), 0.75 * 0.25 * std::log(2.0), 1e-15);
  EXPECT_NEAR(focal_loss(0.5, true, 0.75, 2.0), 0.12996, 1e-5);
  EXPECT_NEAR(focal_loss(1.0, true, 0.75, 2.0), 0.0, 1e-12);
  EXPECT_NEAR(focal_loss(0.0, false, 0.25, 2.0), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(focal_loss(0.0, true, 0.75, 2.0)));
  for (const double p : {0.01, 0.3, 0.9}) {
    EXPECT_NEAR(focal_loss(p, true, 1.0, 0.0), -std::log(p), 1e-12);
    EXPECT_NEAR(focal_loss(p, false, 0.0, 0.0), -std::log(1.0 - p), 1e-12);
  }
}

TEST(FocalLoss, DecreasingInProbabilityForPositives) {
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 1; i < 1000; ++i) {
    const double l = focal_loss(i / 1000.0, true, 0.75, 2.0);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(FocalLoss, LogitDerivativeMatchesFiniteDifference) {
  for (const double x : {-6.0, -1.0, 0.0, 0.7, 4.0}) {
    for (const bool pos : {true, false}) {
      const double h = 1e-6;
      const double numeric = (focal_loss(sigmoid(x + h), pos, 0.75, 2.0) - focal_loss(sigmoid(x - h), pos, 0.75, 2.0)) / (2 * h);
      EXPECT_NEAR(focal_from_logit(x, pos, 0.75, 2.0).d_logit, numeric, 1e-7);
    }
  }
}

TEST(CornerLoss, HandValues) {
  CornerOffsets target{0.1, -0.2, 0.3, 0.0, 1.0, -1.0, 2.0, 0.5};
  EXPECT_EQ(corner_loss(target, target), 0.0);
  auto pred = target;
  pred[3] += 0.5;
  EXPECT_NEAR(corner_loss(pred, target), 0.125, 1e-12);
  pred = target;
  pred[6] -= 2.0;
  EXPECT_NEAR(corner_loss(pred, target), 1.5, 1e-12);
}

TEST(TotalLoss, HandBuiltSingleAnchor) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  Box3D gt = a.box;
  gt.bev.cx += 0.25;
  gt.z_center = -0.5;
  const auto t = assign_targets({a}, {gt}, car_anchors(), true);
  auto out = perfect_output(t, 0.0);
  out.loc[5] += 0.5;
  out.vertical[1] += 0.5;
  LossConfig cfg;
  cfg.focal_alpha = {0.75};
  const auto r = total_loss<double>({t}, {out}, cfg);
  EXPECT_EQ(r.terms.positives, 1u);
  EXPECT_NEAR(r.terms.cls, 0.75 * 0.25 * std::log(2.0), 1e-12);
  EXPECT_NEAR(r.terms.loc, 0.125, 1e-12);
  EXPECT_NEAR(r.terms.vertical, 0.125, 1e-12);
  EXPECT_NEAR(r.terms.total, 0.75 * 0.25 * std::log(2.0) + 0.125 + 1.5 * 0.125, 1e-12);

  auto doubled = cfg;
  doubled.vertical_weight *= 2.0;
  const auto r2 = total_loss<double>({t}, {out}, doubled);
  EXPECT_NEAR(r2.terms.total - r.terms.total, 1.5 * 0.125, 1e-12);
}

TEST(TotalLoss, PerfectSaturatedPredictionsVanish) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  Box3D gt = a.box;
  gt.bev.cx += 0.3;
  gt.bev.yaw = 0.1;
  gt.height = 1.7;
  const auto t = assign_targets({a}, {gt}, car_anchors(), true);
  LossConfig cfg;
  cfg.focal_alpha = {0.25};
  EXPECT_LT(total_loss<double>({t}, {perfect_output(t, 30.0)}, cfg).terms.total, 1e-12);
}

TEST(TotalLoss, NoPositivesDividesByOne) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  const auto t = assign_targets({a}, {}, car_anchors(), true);
  auto out = empty_output(1, 1, 1);
  LossConfig cfg;
  cfg.focal_alpha = {0.25};
  const auto r = total_loss<double>({t}, {out}, cfg);
  EXPECT_EQ(r.terms.positives, 0u);
  EXPECT_NEAR(r.terms.total, 0.75 * 0.25 * std::log(2.0), 1e-12);
}

TEST(TotalLoss, PositivesAreCountedAcrossHeads) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  const auto t = assign_targets({a}, {a.box}, car_anchors(), true);
  const auto out = perfect_output(t, 0.0);
  LossConfig cfg;
  cfg.focal_alpha = {0.75, 0.75};
  const auto one = total_loss<double>({t}, {out}, cfg);
  const auto two = total_loss<double>({t, t}, {out, out}, cfg);
  EXPECT_EQ(two.terms.positives, 2u);
  EXPECT_NEAR(two.terms.total, one.terms.total, 1e-12);
}

TEST(TotalLoss, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(4);
  const MapGeometry geo{0.0, -2.0, 0.5, 0.5, 6, 8};
  const ClassAnchorConfig ped{ObjectClass::pedestrian, {{0.8, 0.8, 1.7}}, -1.0, 0.35, 0.25};
  const auto orient = default_anchor_config().orientations;
  std::vector<TargetAssignment> targets;
  std::vector<HeadOutput<double>> preds;
  for (const auto* cls : {&ped, &car_anchors()}) {
    const auto anchors = generate_anchors(geo, *cls, orient);
    const std::vector<Box3D> gts{Box3D{make_box(1.3, -0.4, cls->sizes[0].length, cls->sizes[0].width, 0.6), -0.7, 1.6},
                                 Box3D{make_box(2.2, 1.1, cls->sizes[0].length * 1.1, cls->sizes[0].width, 2.0), -1.1, 1.4}};
    targets.push_back(assign_targets(anchors, gts, *cls, true));
    const std::size_t n = cls->sizes.size() * orient.size();
    preds.push_back({random_grid({n, 6, 8}, rng, -3.0, 3.0), random_grid({8 * n, 6, 8}, rng, -2.0, 2.0),
                     random_grid({2 * n, 6, 8}, rng, -2.0, 2.0)});
  }
  LossConfig cfg;
  cfg.focal_alpha = {0.75, 0.25};
  auto r = total_loss<double>(targets, preds, cfg);
  ASSERT_GT(r.terms.positives, 2u);
  std::vector<GradTarget> gt;
  for (std::size_t c = 0; c < preds.size(); ++c) {
    gt.push_back({"cls" + std::to_string(c), &preds[c].cls, &r.grads[c].cls});
    gt.push_back({"loc" + std::to_string(c), &preds[c].loc, &r.grads[c].loc});
    gt.push_back({"vertical" + std::to_string(c), &preds[c].vertical, &r.grads[c].vertical});
  }
  const auto rep = check_gradients(gt, [&] { return total_loss<double>(targets, preds, cfg).terms.total; }, 1e-6);
  EXPECT_LE(rep.worst, 1e-4) << rep.worst_at;
  EXPECT_LE(rep.skipped_fraction(), 0.01);
}

TEST(TotalLoss, MismatchedHeadThrows) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  const auto t = assign_targets({a}, {a.box}, car_anchors(), true);
  LossConfig cfg;
  EXPECT_THROW((void)total_loss<double>({t}, {empty_output(2, 1, 1)}, cfg), DimensionError);
  EXPECT_THROW((void)total_loss<double>({t, t}, {empty_output(1, 1, 1)}, cfg), DimensionError);
}

TEST(Decode, ZeroOffsetsReproduceAnchor) {
  const auto a = single_anchor(3, 1, 3.5, 1.7, std::numbers::pi / 4.0);
  auto out = empty_output(1, 1, 1);
  out.cls[0] = 5.0;
  const auto r = decode_detections<double>({{a}}, {out}, {ObjectClass::car}, InferenceConfig{});
  ASSERT_EQ(r.detections.size(), 1u);
  const auto& d = r.detections[0];
  EXPECT_EQ(d.cls, ObjectClass::car);
  EXPECT_NEAR(d.score, sigmoid(5.0), 1e-15);
  EXPECT_NEAR(d.box.bev.cx, 3.0, 1e-12);
  EXPECT_NEAR(d.box.bev.cy, 1.0, 1e-12);
  EXPECT_NEAR(d.box.bev.length, 3.5, 1e-12);
  EXPECT_NEAR(d.box.bev.width, 1.7, 1e-12);
  EXPECT_LT(yaw_distance(d.box.bev.yaw, std::numbers::pi / 4.0), 1e-12);
  EXPECT_EQ(d.box.z_center, -1.0);
  EXPECT_EQ(d.box.height, 1.56);
}

TEST(Decode, ScoreThresholdFilters) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  auto out = empty_output(1, 1, 1);
  out.cls[0] = std::log(0.19 / 0.81);
  EXPECT_TRUE(decode_detections<double>({{a}}, {out}, {ObjectClass::car}, InferenceConfig{}).detections.empty());
}

TEST(Decode, EncodeThenDecodeRoundTrips) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> off(-1.5, 1.5), yaw(0.0, std::numbers::pi), size(0.5, 5.0), z(-2.0, 0.5);
  const auto orient = default_anchor_config().orientations;
  for (int i = 0; i < 1000; ++i) {
    const auto a = single_anchor(10.0, -5.0, 3.9, 1.6, orient[static_cast<std::size_t>(i) % 4]);
    const Box3D gt{make_box(10.0 + off(rng), -5.0 + off(rng), size(rng), size(rng), yaw(rng)), z(rng), size(rng)};
    // force-best makes the single anchor positive regardless of overlap
    const auto t = assign_targets({a}, {gt}, car_anchors(), true);
    if (t.positives == 0) continue;
    auto out = perfect_output(t, 10.0);
    std::size_t dropped = 0;
    const auto cands = decode_candidates({a}, out, ObjectClass::car, 0, 0.2, dropped);
    ASSERT_EQ(cands.size(), 1u);
    const auto& d = cands[0].box.box;
    const auto want = canonical_box(gt.bev);
    EXPECT_NEAR(d.bev.cx, want.cx, 1e-6);
    EXPECT_NEAR(d.bev.cy, want.cy, 1e-6);
    EXPECT_NEAR(d.bev.length, want.length, 1e-6);
    EXPECT_NEAR(d.bev.width, want.width, 1e-6);
    EXPECT_LT(yaw_distance(d.bev.yaw, want.yaw), 1e-6);
    EXPECT_DOUBLE_EQ(d.z_center, gt.z_center);
    EXPECT_DOUBLE_EQ(d.height, gt.height);
  }
}

TEST(Decode, DuplicateBoxesKeepOne) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  auto out = empty_output(2, 1, 1);
  out.cls[0] = 2.0;
  out.cls[1] = 3.0;
  const auto r = decode_detections<double>({{a, a}}, {out}, {ObjectClass::car}, InferenceConfig{});
  ASSERT_EQ(r.detections.size(), 1u);
  EXPECT_NEAR(r.detections[0].score, sigmoid(3.0), 1e-15);
}

TEST(Decode, DegenerateQuadIsDroppedAndCounted) {
  const auto a = single_anchor(0, 0, 2.0, 2.0, 0.0);
  auto out = empty_output(1, 1, 1);
  out.cls[0] = 4.0;
  // move corner 1 across to corner 3, folding the quad
  out.loc[2] = 2.0;
  out.loc[3] = -2.0;
  const auto r = decode_detections<double>({{a}}, {out}, {ObjectClass::car}, InferenceConfig{});
  EXPECT_TRUE(r.detections.empty());
  EXPECT_EQ(r.dropped_degenerate, 1u);

  auto flat = empty_output(1, 1, 1);
  flat.cls[0] = 4.0;
  flat.vertical[1] = -1.56;
  const auto r2 = decode_detections<double>({{a}}, {flat}, {ObjectClass::car}, InferenceConfig{});
  EXPECT_TRUE(r2.detections.empty());
  EXPECT_EQ(r2.dropped_degenerate, 1u);
}

TEST(Decode, NmsIsPerClass) {
  const auto a = single_anchor(0, 0, 3.5, 1.7, 0.0);
  auto out = empty_output(1, 1, 1);
  out.cls[0] = 3.0;
  const auto r = decode_detections<double>({{a}, {a}}, {out, out}, {ObjectClass::car, ObjectClass::cyclist},
                                           InferenceConfig{{0.2}, {0.4, 0.4}, true});
  EXPECT_EQ(r.detections.size(), 2u);
  const auto mixed = decode_detections<double>({{a}, {a}}, {out, out}, {ObjectClass::car, ObjectClass::cyclist},
                                               InferenceConfig{{0.2}, {0.4, 0.4}, false});
  EXPECT_EQ(mixed.detections.size(), 1u);
}

TEST(Ap40, PerfectAndEmpty) {
  const std::vector<std::vector<LabeledBox>> gts{{labeled(0, 0, 1), labeled(10, 0, 1)}, {labeled(5, 5, 1)}};
  EXPECT_DOUBLE_EQ(*ap_40(gts, gts, 0.7), 1.0);
  EXPECT_DOUBLE_EQ(*ap_40({{}, {}}, gts, 0.7), 0.0);
  EXPECT_FALSE(ap_40({{labeled(0, 0, 0.9)}}, {{}}, 0.7).has_value());
}

TEST(Ap40, FalsePositiveAboveTruePositive) {
  const std::vector<std::vector<LabeledBox>> gts{{labeled(0, 0, 1)}};
  const std::vector<std::vector<LabeledBox>> dets{{labeled(20, 0, 0.9), labeled(0, 0, 0.8)}};
  EXPECT_DOUBLE_EQ(*ap_40(dets, gts, 0.7), 0.5);
}

TEST(Ap40, HalfRecall) {
  const std::vector<std::vector<LabeledBox>> gts{{labeled(0, 0, 1), labeled(10, 0, 1)}};
  const std::vector<std::vector<LabeledBox>> dets{{labeled(0, 0, 0.9)}};
  EXPECT_DOUBLE_EQ(*ap_40(dets, gts, 0.7), 0.5);
}

TEST(Ap40, InvariantToMonotoneScoreRescaling) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> pos(0.0, 30.0), jitter(-0.6, 0.6), score(0.01, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<LabeledBox>> gts(3), dets(3);
    for (std::size_t s = 0; s < 3; ++s) {
      for (int g = 0; g < 4; ++g) {
        const auto b = labeled(pos(rng), pos(rng), 1.0);
        gts[s].push_back(b);
        if (score(rng) < 0.7) dets[s].push_back(labeled(b.box.bev.cx + jitter(rng), b.box.bev.cy + jitter(rng), score(rng)));
      }
      for (int f = 0; f < 3; ++f) dets[s].push_back(labeled(pos(rng), pos(rng), score(rng)));
    }
    auto rescaled = dets;
    for (auto& s : rescaled) {
      for (auto& d : s) d.score = std::log(d.score / (1.0 - d.score)) * 3.0 + 7.0;
    }
    EXPECT_DOUBLE_EQ(*ap_40(dets, gts, 0.5), *ap_40(rescaled, gts, 0.5));
  }
}

TEST(Ap40, MatchCountsAtThreshold) {
  const std::vector<std::vector<LabeledBox>> gts{{labeled(0, 0, 1)}};
  // offset 4/3 m along a 4 m box: RIoU exactly 0.5
  const std::vector<std::vector<LabeledBox>> dets{{labeled(4.0 / 3.0, 0, 0.9)}};
  EXPECT_DOUBLE_EQ(*ap_40(dets, gts, 0.5 - 1e-9), 1.0);
  EXPECT_DOUBLE_EQ(*ap_40(dets, gts, 0.6), 0.0);
}
