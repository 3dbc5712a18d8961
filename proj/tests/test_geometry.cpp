// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "hvnet/geometry.hpp"
#include "support/oracles.hpp"

using namespace hvnet;
using namespace hvnet::testing;

namespace {

RotatedBoxBEV random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-5.0, 5.0), s(0.3, 5.0), yaw(0.0, std::numbers::pi);
  return make_box(c(rng), c(rng), s(rng), s(rng), yaw(rng));
}

// Pairs close enough to overlap most of the time.
std::pair<RotatedBoxBEV, RotatedBoxBEV> random_pair(std::mt19937_64& rng) {
  const auto a = random_box(rng);
  std::uniform_real_distribution<double> off(-2.0, 2.0), s(0.3, 5.0), yaw(0.0, std::numbers::pi);
  return {a, make_box(a.cx + off(rng), a.cy + off(rng), s(rng), s(rng), yaw(rng))};
}

void expect_vertex(const Vec2& v, double x, double y) {
  EXPECT_NEAR(v.x, x, 1e-12);
  EXPECT_NEAR(v.y, y, 1e-12);
}

}  // namespace

TEST(CornersBev, UnitSquareCounterClockwise) {
  const auto q = corners_bev(make_box(0, 0, 1, 1, 0));
  expect_vertex(q[0], 0.5, 0.5);
  expect_vertex(q[1], -0.5, 0.5);
  expect_vertex(q[2], -0.5, -0.5);
  expect_vertex(q[3], 0.5, -0.5);
}

TEST(CornersBev, QuarterTurnTransposes) {
  const auto q = corners_bev(make_box(0, 0, 2, 1, std::numbers::pi / 2.0));
  expect_vertex(q[0], -0.5, 1.0);
  expect_vertex(q[1], -0.5, -1.0);
  expect_vertex(q[2], 0.5, -1.0);
  expect_vertex(q[3], 0.5, 1.0);
}

TEST(CornersBev, ShoelaceAreaIsLengthTimesWidth) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const auto b = random_box(rng);
    EXPECT_NEAR(signed_area(corners_bev(b)), b.length * b.width, 1e-9);
  }
}

TEST(Riou, HandCases) {
  const auto unit = make_box(0, 0, 1, 1, 0);
  EXPECT_NEAR(riou(unit, unit), 1.0, 1e-12);
  EXPECT_NEAR(riou(unit, make_box(0.5, 0, 1, 1, 0)), 1.0 / 3.0, 1e-12);
  const double octagon = 8.0 * (std::sqrt(2.0) - 1.0) / 4.0;  // side-1 octagon area, scaled to unit square
  EXPECT_NEAR(riou(unit, make_box(0, 0, 1, 1, std::numbers::pi / 4.0)), octagon / (2.0 - octagon), 1e-12);
  EXPECT_NEAR(octagon / (2.0 - octagon), 0.7071, 1e-4);
  EXPECT_EQ(riou(unit, make_box(3, 0, 1, 1, 0)), 0.0);
}

TEST(Riou, DegenerateBoxIsDomainError) {
  EXPECT_THROW((void)riou(make_box(0, 0, 0, 1, 0), make_box(0, 0, 1, 1, 0)), DomainError);
  EXPECT_THROW((void)riou(make_box(0, 0, 1, 1, 0), make_box(0, 0, 1, -1, 0)), DomainError);
}

TEST(Riou, Symmetric) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto [a, b] = random_pair(rng);
    EXPECT_NEAR(riou(a, b), riou(b, a), 1e-12);
  }
}

TEST(Riou, InvariantUnderJointRigidMotion) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> t(-20.0, 20.0), r(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < 1000; ++i) {
    const auto [a, b] = random_pair(rng);
    const double tx = t(rng), ty = t(rng), th = r(rng);
    auto move = [&](const RotatedBoxBEV& x) {
      const double c = std::cos(th), s = std::sin(th);
      return make_box(c * x.cx - s * x.cy + tx, s * x.cx + c * x.cy + ty, x.length, x.width, x.yaw + th);
    };
    EXPECT_NEAR(riou(a, b), riou(move(a), move(b)), 1e-9);
  }
}

TEST(Riou, AgreesWithSampledArea) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto [a, b] = random_pair(rng);
    EXPECT_NEAR(riou(a, b), sampled_iou(a, b, 1000, rng), 2e-3) << i;
  }
}

TEST(RotatedNms, DuplicateKeepsHigherScore) {
  const auto b = make_box(0, 0, 4, 2, 0.3);
  EXPECT_EQ(rotated_nms({b, b}, {0.9, 0.8}, 0.4, 0.2), (std::vector<std::size_t>{0}));
  EXPECT_EQ(rotated_nms({b, b}, {0.8, 0.9}, 0.4, 0.2), (std::vector<std::size_t>{1}));
}

TEST(RotatedNms, DisjointAndEmptyAndScoreFilter) {
  const std::vector<RotatedBoxBEV> boxes{make_box(0, 0, 1, 1, 0), make_box(5, 0, 1, 1, 0), make_box(10, 0, 1, 1, 0)};
  EXPECT_EQ(rotated_nms(boxes, {0.5, 0.7, 0.6}, 0.1, 0.2), (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_TRUE(rotated_nms({}, {}, 0.1, 0.2).empty());
  EXPECT_EQ(rotated_nms(boxes, {0.5, 0.1, 0.6}, 0.1, 0.2), (std::vector<std::size_t>{2, 0}));
}

TEST(RotatedNms, EqualScoresFavorLowerIndex) {
  const auto b = make_box(0, 0, 4, 2, 0.3);
  EXPECT_EQ(rotated_nms({b, b, b}, {0.5, 0.5, 0.5}, 0.4, 0.2), (std::vector<std::size_t>{0}));
}

TEST(RotatedNms, MismatchedScoresThrow) {
  EXPECT_THROW((void)rotated_nms({make_box(0, 0, 1, 1, 0)}, {}, 0.4, 0.2), DimensionError);
}

TEST(RotatedNms, IdempotentAndDescending) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RotatedBoxBEV> boxes;
    std::vector<double> scores;
    for (int i = 0; i < 40; ++i) {
      boxes.push_back(random_box(rng));
      scores.push_back(score(rng));
    }
    const auto kept = rotated_nms(boxes, scores, 0.1, 0.2);
    std::vector<RotatedBoxBEV> kb;
    std::vector<double> ks;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      kb.push_back(boxes[kept[k]]);
      ks.push_back(scores[kept[k]]);
      if (k > 0) {
        EXPECT_GE(scores[kept[k - 1]], scores[kept[k]]);
      }
      for (std::size_t j = 0; j < k; ++j) EXPECT_LE(riou(boxes[kept[j]], boxes[kept[k]]), 0.1);
    }
    const auto again = rotated_nms(kb, ks, 0.1, 0.2);
    ASSERT_EQ(again.size(), kept.size());
    for (std::size_t k = 0; k < again.size(); ++k) EXPECT_EQ(again[k], k);
  }
}

TEST(FitBoxFromQuad, RoundTripsCorners) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const auto b = random_box(rng);
    const auto f = fit_box_from_quad(corners_bev(b));
    EXPECT_NEAR(f.cx, b.cx, 1e-9);
    EXPECT_NEAR(f.cy, b.cy, 1e-9);
    EXPECT_NEAR(f.length, b.length, 1e-9);
    EXPECT_NEAR(f.width, b.width, 1e-9);
    EXPECT_LT(yaw_distance(f.yaw, b.yaw), 1e-9);
  }
}

TEST(FitBoxFromQuad, AxisAlignedUnitSquare) {
  const Quad q{{{0.5, 0.5}, {-0.5, 0.5}, {-0.5, -0.5}, {0.5, -0.5}}};
  const auto f = fit_box_from_quad(q);
  EXPECT_NEAR(f.cx, 0.0, 1e-12);
  EXPECT_NEAR(f.cy, 0.0, 1e-12);
  EXPECT_NEAR(f.length, 1.0, 1e-12);
  EXPECT_NEAR(f.width, 1.0, 1e-12);
  EXPECT_NEAR(f.yaw, 0.0, 1e-12);
}

TEST(FitBoxFromQuad, SymmetricNoiseKeepsCenter) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> eps(-0.05, 0.05);
  for (int i = 0; i < 200; ++i) {
    const auto b = random_box(rng);
    auto q = corners_bev(b);
    for (std::size_t k = 0; k < 2; ++k) {
      const Vec2 d{eps(rng), eps(rng)};
      q[k] = q[k] + d;
      q[k + 2] = q[k + 2] - d;
    }
    const auto f = fit_box_from_quad(q);
    EXPECT_NEAR(f.cx, b.cx, 1e-12);
    EXPECT_NEAR(f.cy, b.cy, 1e-12);
  }
}

TEST(FitBoxFromQuad, SelfIntersectingQuadIsDomainError) {
  auto q = corners_bev(make_box(0, 0, 2, 1, 0.2));
  std::swap(q[1], q[2]);
  EXPECT_THROW((void)fit_box_from_quad(q), DomainError);
}

TEST(CanonicalBox, LengthIsTheLongerEdge) {
  const auto c = canonical_box(make_box(1, 2, 1, 3, 0.2));
  EXPECT_EQ(c.length, 3.0);
  EXPECT_EQ(c.width, 1.0);
  EXPECT_NEAR(c.yaw, 0.2 + std::numbers::pi / 2.0, 1e-12);
  EXPECT_NEAR(riou(c, make_box(1, 2, 1, 3, 0.2)), 1.0, 1e-12);
}
