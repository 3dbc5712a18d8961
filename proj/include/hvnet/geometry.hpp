// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <vector>

#include "hvnet/error.hpp"

namespace hvnet {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

using Quad = std::array<Vec2, 4>;

/// BEV rectangles are pi-periodic in yaw; every stored yaw lives in [0, pi).
inline double normalize_yaw(double yaw) {
  double r = std::fmod(yaw, std::numbers::pi);
  if (r < 0.0) r += std::numbers::pi;
  if (r >= std::numbers::pi) r -= std::numbers::pi;
  return r;
}

/// Oriented rectangle in the x-y plane. `length` runs along the yaw direction.
struct RotatedBoxBEV {
  double cx = 0.0;
  double cy = 0.0;
  double length = 0.0;
  double width = 0.0;
  double yaw = 0.0;

  friend bool operator==(const RotatedBoxBEV&, const RotatedBoxBEV&) = default;
};

struct Box3D {
  RotatedBoxBEV bev;
  double z_center = 0.0;
  double height = 0.0;

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

inline RotatedBoxBEV make_box(double cx, double cy, double length, double width, double yaw) {
  return {cx, cy, length, width, normalize_yaw(yaw)};
}

/// Same rectangle with length >= width: swapping the roles of the two edges
/// turns the yaw by a quarter turn.
inline RotatedBoxBEV canonical_box(const RotatedBoxBEV& b) {
  if (b.length >= b.width) return {b.cx, b.cy, b.length, b.width, normalize_yaw(b.yaw)};
  return {b.cx, b.cy, b.width, b.length, normalize_yaw(b.yaw + std::numbers::pi / 2.0)};
}

/// Counter-clockwise corners starting at (+l/2, +w/2) in the box frame.
inline Quad corners_bev(const RotatedBoxBEV& b) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const double hl = 0.5 * b.length;
  const double hw = 0.5 * b.width;
  const std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  Quad out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {b.cx + c * local[i].x - s * local[i].y, b.cy + s * local[i].x + c * local[i].y};
  }
  return out;
}

/// Shoelace area; positive for counter-clockwise polygons.
inline double signed_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    a += cross(poly[i], poly[(i + 1) % poly.size()]);
  }
  return 0.5 * a;
}

inline double signed_area(const Quad& q) {
  return signed_area(std::vector<Vec2>(q.begin(), q.end()));
}

namespace detail {

inline constexpr double kClipTolerance = 1e-9;

// Sutherland-Hodgman: clip `subject` against the half-plane left of a->b.
inline std::vector<Vec2> clip_half_plane(const std::vector<Vec2>& subject, Vec2 a, Vec2 b) {
  std::vector<Vec2> out;
  if (subject.empty()) return out;
  const Vec2 edge = b - a;
  auto side = [&](Vec2 p) { return cross(edge, p - a); };
  for (std::size_t i = 0; i < subject.size(); ++i) {
    const Vec2 cur = subject[i];
    const Vec2 nxt = subject[(i + 1) % subject.size()];
    const double sc = side(cur);
    const double sn = side(nxt);
    const bool cur_in = sc >= -kClipTolerance;
    const bool nxt_in = sn >= -kClipTolerance;
    if (cur_in) out.push_back(cur);
    if (cur_in != nxt_in) {
      const double t = sc / (sc - sn);
      out.push_back(cur + t * (nxt - cur));
    }
  }
  return out;
}

inline void require_valid(const RotatedBoxBEV& b) {
  if (!(b.length > 0.0) || !(b.width > 0.0) || !std::isfinite(b.cx) || !std::isfinite(b.cy) ||
      !std::isfinite(b.yaw)) {
    throw DomainError("degenerate rotated box (non-positive size or non-finite value)");
  }
}

}  // namespace detail

inline double box_area(const RotatedBoxBEV& b) { return b.length * b.width; }

/// Area of the intersection of two rotated rectangles.
inline double intersection_area(const RotatedBoxBEV& a, const RotatedBoxBEV& b) {
  // circumscribed-circle rejection
  const double ra = 0.5 * std::hypot(a.length, a.width);
  const double rb = 0.5 * std::hypot(b.length, b.width);
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb) return 0.0;

  const Quad qa = corners_bev(a);
  const Quad qb = corners_bev(b);
  std::vector<Vec2> poly(qa.begin(), qa.end());
  for (std::size_t i = 0; i < 4 && !poly.empty(); ++i) {
    poly = detail::clip_half_plane(poly, qb[i], qb[(i + 1) % 4]);
  }
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, signed_area(poly));
}

/// Rotated intersection-over-union in bird's-eye view.
inline double riou(const RotatedBoxBEV& a, const RotatedBoxBEV& b) {
  detail::require_valid(a);
  detail::require_valid(b);
  const double inter = intersection_area(a, b);
  const double uni = box_area(a) + box_area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Greedy suppression in descending score order (ties: lower index first).
/// Boxes scoring below `score_threshold` never enter; a box is dropped when
/// its RIoU with any kept box exceeds `iou_threshold`.
inline std::vector<std::size_t> rotated_nms(const std::vector<RotatedBoxBEV>& boxes,
                                            const std::vector<double>& scores,
                                            double iou_threshold, double score_threshold) {
  if (boxes.size() != scores.size()) {
    throw DimensionError("rotated_nms: " + std::to_string(boxes.size()) + " boxes vs " +
                         std::to_string(scores.size()) + " scores");
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (scores[i] >= score_threshold) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (const std::size_t i : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return riou(boxes[i], boxes[k]) > iou_threshold;
    });
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

/// Recovers a rectangle from four counter-clockwise vertices (corners_bev
/// order). Center is the vertex mean; yaw is the doubled-angle circular mean
/// of the four edge directions mapped onto the length axis; length and width
/// are the mean lengths of the two pairs of opposite edges.
inline RotatedBoxBEV fit_box_from_quad(const Quad& q) {
  for (const auto& v : q) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y)) throw DomainError("non-finite quad vertex");
  }
  std::array<Vec2, 4> edges;
  for (std::size_t i = 0; i < 4; ++i) edges[i] = q[(i + 1) % 4] - q[i];
  // strictly convex and counter-clockwise; anything else is self-intersecting
  // or reversed
  for (std::size_t i = 0; i < 4; ++i) {
    if (!(cross(edges[i], edges[(i + 1) % 4]) > 0.0)) {
      throw DomainError("quad is not a convex counter-clockwise polygon");
    }
  }
  const Vec2 center = 0.25 * (q[0] + q[1] + q[2] + q[3]);
  // edges 0 and 2 run along -/+ length, edges 1 and 3 along -/+ width
  constexpr double kHalfPi = std::numbers::pi / 2.0;
  const std::array<double, 4> axis_angles{
      std::atan2(edges[0].y, edges[0].x) + std::numbers::pi,
      std::atan2(edges[1].y, edges[1].x) + kHalfPi,
      std::atan2(edges[2].y, edges[2].x),
      std::atan2(edges[3].y, edges[3].x) - kHalfPi,
  };
  double sx = 0.0, sy = 0.0;
  for (const double a : axis_angles) {
    sx += std::cos(2.0 * a);
    sy += std::sin(2.0 * a);
  }
  const double yaw = normalize_yaw(0.5 * std::atan2(sy, sx));
  const double length = 0.5 * (norm(edges[0]) + norm(edges[2]));
  const double width = 0.5 * (norm(edges[1]) + norm(edges[3]));
  return {center.x, center.y, length, width, yaw};
}

/// Point-in-rotated-box test in BEV (closed box).
inline bool contains_bev(const RotatedBoxBEV& b, Vec2 p, double tolerance = 1e-9) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const Vec2 d = p - Vec2{b.cx, b.cy};
  const double along = c * d.x + s * d.y;
  const double across = -s * d.x + c * d.y;
  return std::abs(along) <= 0.5 * b.length + tolerance &&
         std::abs(across) <= 0.5 * b.width + tolerance;
}

inline bool contains(const Box3D& b, double x, double y, double z, double tolerance = 1e-9) {
  return contains_bev(b.bev, {x, y}, tolerance) &&
         std::abs(z - b.z_center) <= 0.5 * b.height + tolerance;
}

}  // namespace hvnet
