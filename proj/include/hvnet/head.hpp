// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "hvnet/error.hpp"
#include "hvnet/geometry.hpp"
#include "hvnet/layers.hpp"
#include "hvnet/parallel.hpp"
#include "hvnet/pointcloud.hpp"
#include "hvnet/tensor.hpp"

namespace hvnet {

// ---------------------------------------------------------------------------
// Anchors

struct AnchorSize {
  double width = 0.0;
  double length = 0.0;
  double height = 0.0;

  friend bool operator==(const AnchorSize&, const AnchorSize&) = default;
};

struct ClassAnchorConfig {
  ObjectClass cls = ObjectClass::car;
  std::vector<AnchorSize> sizes;
  double z_center = -1.0;
  double positive_iou = 0.5;
  double negative_iou = 0.35;

  friend bool operator==(const ClassAnchorConfig&, const ClassAnchorConfig&) = default;
};

struct AnchorConfig {
  std::vector<ClassAnchorConfig> classes;
  std::vector<double> orientations{0.0, std::numbers::pi / 4.0, std::numbers::pi / 2.0,
                                   3.0 * std::numbers::pi / 4.0};
  bool force_best_anchor = true;

  [[nodiscard]] std::size_t anchors_per_pixel(std::size_t class_slot) const {
    return classes.at(class_slot).sizes.size() * orientations.size();
  }

  void validate() const {
    if (classes.empty() || orientations.empty()) {
      throw ContractViolation("anchor config needs at least one class and one orientation");
    }
    for (const auto& c : classes) {
      if (c.sizes.empty()) {
        throw ContractViolation(std::string("no anchor sizes for ") + class_name(c.cls));
      }
      for (const auto& s : c.sizes) {
        if (!(s.width > 0.0 && s.length > 0.0 && s.height > 0.0)) {
          throw ContractViolation(std::string("non-positive anchor size for ") + class_name(c.cls));
        }
      }
      if (!(c.positive_iou > c.negative_iou)) {
        throw ContractViolation(std::string("positive RIoU threshold must exceed negative for ") +
                                class_name(c.cls));
      }
    }
  }

  friend bool operator==(const AnchorConfig&, const AnchorConfig&) = default;
};

inline AnchorConfig default_anchor_config() {
  AnchorConfig cfg;
  cfg.classes = {
      {ObjectClass::pedestrian, {{0.8, 0.8, 1.7}}, -1.0, 0.35, 0.25},
      {ObjectClass::cyclist, {{0.8, 1.8, 1.5}}, -1.0, 0.35, 0.25},
      {ObjectClass::car, {{1.7, 3.5, 1.56}, {2.0, 6.0, 1.56}}, -1.0, 0.5, 0.35},
  };
  return cfg;
}

/// Pixel (r, q) of a head map covers x in [x_min + r*pixel_length, ...) and
/// y in [y_min + q*pixel_width, ...).
struct MapGeometry {
  double x_min = 0.0;
  double y_min = 0.0;
  double pixel_length = 1.0;
  double pixel_width = 1.0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  [[nodiscard]] Vec2 pixel_center(std::size_t r, std::size_t q) const {
    return {x_min + (static_cast<double>(r) + 0.5) * pixel_length,
            y_min + (static_cast<double>(q) + 0.5) * pixel_width};
  }
};

struct Anchor {
  Box3D box;
  Quad corners;
};

/// Anchor index = (r * cols + q) * N_anc + size * N_orient + orientation,
/// matching the channel layout of the head branches.
inline std::vector<Anchor> generate_anchors(const MapGeometry& geo, const ClassAnchorConfig& cls,
                                            const std::vector<double>& orientations) {
  std::vector<Anchor> out;
  out.reserve(geo.rows * geo.cols * cls.sizes.size() * orientations.size());
  for (std::size_t r = 0; r < geo.rows; ++r) {
    for (std::size_t q = 0; q < geo.cols; ++q) {
      const Vec2 c = geo.pixel_center(r, q);
      for (const auto& s : cls.sizes) {
        for (const double yaw : orientations) {
          Anchor a;
          a.box.bev = make_box(c.x, c.y, s.length, s.width, yaw);
          a.box.z_center = cls.z_center;
          a.box.height = s.height;
          a.corners = corners_bev(a.box.bev);
          out.push_back(a);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target assignment

enum class AnchorLabel : std::uint8_t { negative = 0, ignore = 1, positive = 2 };

using CornerOffsets = std::array<double, 8>;

struct TargetAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<std::int64_t> matched_gt;   // -1 unless positive
  std::vector<CornerOffsets> corner;      // zeros unless positive
  std::vector<std::array<double, 2>> vertical;
  std::size_t positives = 0;
};

/// gt corners minus anchor corners, choosing among the four cyclic corner
/// correspondences the one with the smallest offset norm (first on ties).
inline CornerOffsets encode_corners(const Quad& anchor, const Quad& gt) {
  CornerOffsets best{};
  double best_norm = std::numeric_limits<double>::infinity();
  for (std::size_t shift = 0; shift < 4; ++shift) {
    CornerOffsets d;
    double n = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      const Vec2 g = gt[(k + shift) % 4];
      d[2 * k] = g.x - anchor[k].x;
      d[2 * k + 1] = g.y - anchor[k].y;
      n += d[2 * k] * d[2 * k] + d[2 * k + 1] * d[2 * k + 1];
    }
    if (n < best_norm) {
      best_norm = n;
      best = d;
    }
  }
  return best;
}

inline Quad apply_corner_offsets(const Quad& anchor, const CornerOffsets& d) {
  Quad q;
  for (std::size_t k = 0; k < 4; ++k) q[k] = {anchor[k].x + d[2 * k], anchor[k].y + d[2 * k + 1]};
  return q;
}

/// `gts` are the ground-truth boxes of the anchors' class only.
inline TargetAssignment assign_targets(const std::vector<Anchor>& anchors,
                                       const std::vector<Box3D>& gts, const ClassAnchorConfig& cls,
                                       bool force_best_anchor) {
  const std::size_t n = anchors.size();
  TargetAssignment t;
  t.labels.assign(n, AnchorLabel::negative);
  t.matched_gt.assign(n, -1);
  t.corner.assign(n, CornerOffsets{});
  t.vertical.assign(n, {0.0, 0.0});
  if (gts.empty() || n == 0) return t;

  std::vector<double> best_iou(n, 0.0);
  std::vector<std::int64_t> best_gt(n, -1);
  std::vector<double> gt_best_iou(gts.size(), 0.0);
  std::vector<std::size_t> gt_best_anchor(gts.size(), n);

  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto& gb = gts[g].bev;
    const double gr = 0.5 * std::hypot(gb.length, gb.width);
    for (std::size_t a = 0; a < n; ++a) {
      const auto& ab = anchors[a].box.bev;
      const double ar = 0.5 * std::hypot(ab.length, ab.width);
      if (std::hypot(ab.cx - gb.cx, ab.cy - gb.cy) >= ar + gr) continue;
      const double iou = riou(ab, gb);
      if (iou > best_iou[a]) {
        best_iou[a] = iou;
        best_gt[a] = static_cast<std::int64_t>(g);
      }
      if (iou > gt_best_iou[g]) {
        gt_best_iou[g] = iou;
        gt_best_anchor[g] = a;
      }
    }
  }

  for (std::size_t a = 0; a < n; ++a) {
    if (best_gt[a] >= 0 && best_iou[a] > cls.positive_iou) {
      t.labels[a] = AnchorLabel::positive;
      t.matched_gt[a] = best_gt[a];
    } else if (best_iou[a] < cls.negative_iou) {
      t.labels[a] = AnchorLabel::negative;
    } else {
      t.labels[a] = AnchorLabel::ignore;
    }
  }
  if (force_best_anchor) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const std::size_t a = gt_best_anchor[g];
      if (a == n) continue;  // gt overlaps no anchor at all
      t.labels[a] = AnchorLabel::positive;
      t.matched_gt[a] = static_cast<std::int64_t>(g);
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (t.labels[a] != AnchorLabel::positive) continue;
    ++t.positives;
    const auto& gt = gts[static_cast<std::size_t>(t.matched_gt[a])];
    t.corner[a] = encode_corners(anchors[a].corners, corners_bev(gt.bev));
    t.vertical[a] = {gt.z_center - anchors[a].box.z_center, gt.height - anchors[a].box.height};
  }
  return t;
}

// ---------------------------------------------------------------------------
// Head branches

template <typename T>
struct ClassHeadParams {
  Conv2dParams<T> cls;       // N_anc channels
  Conv2dParams<T> loc;       // 8 N_anc channels
  Conv2dParams<T> vertical;  // 2 N_anc channels
};

template <typename T, typename Rng>
ClassHeadParams<T> make_class_head(std::size_t in_channels, std::size_t anchors_per_pixel, Rng& rng) {
  return {make_conv<T>(in_channels, anchors_per_pixel, 3, 1, 1, rng),
          make_conv<T>(in_channels, 8 * anchors_per_pixel, 3, 1, 1, rng),
          make_conv<T>(in_channels, 2 * anchors_per_pixel, 3, 1, 1, rng)};
}

template <typename T>
struct HeadOutput {
  DenseGrid<T> cls;       // logits [N_anc x H x W]
  DenseGrid<T> loc;       // [8 N_anc x H x W]
  DenseGrid<T> vertical;  // [2 N_anc x H x W]

  [[nodiscard]] std::size_t anchors_per_pixel() const { return cls.extent(0); }
  [[nodiscard]] std::size_t pixels() const { return cls.extent(1) * cls.extent(2); }
  [[nodiscard]] std::size_t anchor_count() const { return cls.size(); }

  // anchor a = pixel * N_anc + k
  [[nodiscard]] std::size_t cls_index(std::size_t a) const {
    const std::size_t k = a % anchors_per_pixel(), pix = a / anchors_per_pixel();
    return k * pixels() + pix;
  }
  [[nodiscard]] std::size_t loc_index(std::size_t a, std::size_t c) const {
    const std::size_t k = a % anchors_per_pixel(), pix = a / anchors_per_pixel();
    return (8 * k + c) * pixels() + pix;
  }
  [[nodiscard]] std::size_t vertical_index(std::size_t a, std::size_t c) const {
    const std::size_t k = a % anchors_per_pixel(), pix = a / anchors_per_pixel();
    return (2 * k + c) * pixels() + pix;
  }
};

template <typename T>
HeadOutput<T> head_forward(const DenseGrid<T>& features, const ClassHeadParams<T>& p) {
  return {conv2d_forward(features, p.cls, Activation::none),
          conv2d_forward(features, p.loc, Activation::none),
          conv2d_forward(features, p.vertical, Activation::none)};
}

template <typename T>
struct ClassHeadGrads {
  DenseGrid<T> input;
  ClassHeadParams<T> params;
};

template <typename T>
ClassHeadGrads<T> head_backward(const DenseGrid<T>& features, const ClassHeadParams<T>& p,
                                const HeadOutput<T>& d_out) {
  auto gc = conv2d_backward(features, p.cls, d_out.cls);
  auto gl = conv2d_backward(features, p.loc, d_out.loc);
  auto gv = conv2d_backward(features, p.vertical, d_out.vertical);
  ClassHeadGrads<T> g;
  g.input = std::move(gc.input);
  add_inplace(g.input, gl.input);
  add_inplace(g.input, gv.input);
  g.params.cls = {std::move(gc.weight), std::move(gc.bias), p.cls.stride, p.cls.padding};
  g.params.loc = {std::move(gl.weight), std::move(gl.bias), p.loc.stride, p.loc.padding};
  g.params.vertical = {std::move(gv.weight), std::move(gv.bias), p.vertical.stride,
                       p.vertical.padding};
  return g;
}

// ---------------------------------------------------------------------------
// Losses

struct LossConfig {
  std::vector<double> focal_alpha{0.75, 0.75, 0.25};  // per class slot
  double focal_gamma = 2.0;
  double loc_weight = 1.0;
  double cls_weight = 1.0;
  double vertical_weight = 1.5;

  void validate() const {
    if (!(loc_weight > 0.0 && cls_weight > 0.0 && vertical_weight > 0.0)) {
      throw ContractViolation("loss weights must be positive");
    }
    if (!(focal_gamma >= 0.0)) throw ContractViolation("focal gamma must be >= 0");
    for (const double a : focal_alpha) {
      if (!(a >= 0.0 && a <= 1.0)) throw ContractViolation("focal alpha must lie in [0, 1]");
    }
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

inline constexpr double kProbClamp = 1e-7;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double focal_loss(double p, bool positive, double alpha, double gamma) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  if (positive) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

struct FocalTerm {
  double loss = 0.0;
  double d_logit = 0.0;
};

/// Focal loss of a logit and its derivative. Inside the probability clamp the
/// loss is constant, so the derivative is zero there.
inline FocalTerm focal_from_logit(double logit, bool positive, double alpha, double gamma) {
  const double raw = sigmoid(logit);
  const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
  FocalTerm t;
  t.loss = focal_loss(p, positive, alpha, gamma);
  if (p != raw) return t;
  if (positive) {
    t.d_logit = alpha * std::pow(1.0 - p, gamma) * (gamma * p * std::log(p) - (1.0 - p));
  } else {
    t.d_logit = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * std::log(1.0 - p));
  }
  return t;
}

inline double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

inline double smooth_l1_grad(double d) {
  if (d >= 1.0) return 1.0;
  if (d <= -1.0) return -1.0;
  return d;
}

inline double corner_loss(const CornerOffsets& pred, const CornerOffsets& target) {
  double s = 0.0;
  for (std::size_t k = 0; k < 8; ++k) s += smooth_l1(pred[k] - target[k]);
  return s;
}

struct LossBreakdown {
  double total = 0.0;
  double loc = 0.0;       // raw sums before weighting and normalization
  double cls = 0.0;
  double vertical = 0.0;
  std::size_t positives = 0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

template <typename T>
struct LossResult {
  LossBreakdown terms;
  std::vector<HeadOutput<T>> grads;  // d total / d head outputs, per class slot
};

/// L = (l_loc L_loc + l_cls L_cls + l_h L_h) / max(N_pos, 1) with N_pos counted
/// over every class head. Ignored anchors contribute nothing.
template <typename T>
LossResult<T> total_loss(const std::vector<TargetAssignment>& targets,
                         const std::vector<HeadOutput<T>>& preds, const LossConfig& cfg) {
  if (targets.size() != preds.size()) {
    throw DimensionError("total_loss: " + std::to_string(targets.size()) + " target sets for " +
                         std::to_string(preds.size()) + " heads");
  }
  if (cfg.focal_alpha.size() < preds.size()) {
    throw ContractViolation("total_loss: focal alpha missing for some class heads");
  }
  LossResult<T> r;
  std::size_t npos = 0;
  for (const auto& t : targets) npos += t.positives;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(npos, 1));
  r.terms.positives = npos;

  for (std::size_t c = 0; c < preds.size(); ++c) {
    const auto& p = preds[c];
    const auto& t = targets[c];
    if (t.labels.size() != p.anchor_count() || p.loc.extent(0) != 8 * p.anchors_per_pixel() ||
        p.vertical.extent(0) != 2 * p.anchors_per_pixel()) {
      throw DimensionError("total_loss: head " + std::to_string(c) + " has " +
                           std::to_string(p.anchor_count()) + " anchors, targets cover " +
                           std::to_string(t.labels.size()));
    }
    HeadOutput<T> g{zeros_like(p.cls), zeros_like(p.loc), zeros_like(p.vertical)};
    const double alpha = cfg.focal_alpha[c];
    for (std::size_t a = 0; a < t.labels.size(); ++a) {
      const auto label = t.labels[a];
      if (label == AnchorLabel::ignore) continue;
      const bool pos = label == AnchorLabel::positive;
      const std::size_t ci = p.cls_index(a);
      const auto f = focal_from_logit(static_cast<double>(p.cls[ci]), pos, alpha, cfg.focal_gamma);
      r.terms.cls += f.loss;
      g.cls[ci] = static_cast<T>(cfg.cls_weight * norm * f.d_logit);
      if (!pos) continue;
      for (std::size_t k = 0; k < 8; ++k) {
        const std::size_t li = p.loc_index(a, k);
        const double d = static_cast<double>(p.loc[li]) - t.corner[a][k];
        r.terms.loc += smooth_l1(d);
        g.loc[li] = static_cast<T>(cfg.loc_weight * norm * smooth_l1_grad(d));
      }
      for (std::size_t k = 0; k < 2; ++k) {
        const std::size_t vi = p.vertical_index(a, k);
        const double d = static_cast<double>(p.vertical[vi]) - t.vertical[a][k];
        r.terms.vertical += smooth_l1(d);
        g.vertical[vi] = static_cast<T>(cfg.vertical_weight * norm * smooth_l1_grad(d));
      }
    }
    r.grads.push_back(std::move(g));
  }
  r.terms.total = norm * (cfg.loc_weight * r.terms.loc + cfg.cls_weight * r.terms.cls +
                          cfg.vertical_weight * r.terms.vertical);
  return r;
}

// ---------------------------------------------------------------------------
// Decoding

struct InferenceConfig {
  double score_threshold = 0.2;
  std::vector<double> nms_thresholds{0.02, 0.02, 0.4};  // per class slot
  bool per_class_nms = true;

  friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

struct DecodeResult {
  std::vector<LabeledBox> detections;
  std::size_t dropped_degenerate = 0;
};

struct DecodeCandidate {
  LabeledBox box;
  std::size_t slot = 0;
};

/// Candidates of one class head scoring at least the threshold; quads that do
/// not form a convex rectangle-like polygon (or give non-positive height) are
/// dropped and counted.
template <typename T>
std::vector<DecodeCandidate> decode_candidates(const std::vector<Anchor>& anchors,
                                               const HeadOutput<T>& pred, ObjectClass cls,
                                               std::size_t slot, double score_threshold,
                                               std::size_t& dropped) {
  if (anchors.size() != pred.anchor_count()) {
    throw DimensionError("decode: " + std::to_string(anchors.size()) + " anchors for " +
                         std::to_string(pred.anchor_count()) + " predictions");
  }
  std::vector<DecodeCandidate> out;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const double score = sigmoid(static_cast<double>(pred.cls[pred.cls_index(a)]));
    if (score < score_threshold) continue;
    CornerOffsets d;
    for (std::size_t k = 0; k < 8; ++k) d[k] = static_cast<double>(pred.loc[pred.loc_index(a, k)]);
    LabeledBox b;
    b.cls = cls;
    b.score = score;
    b.box.z_center = anchors[a].box.z_center + static_cast<double>(pred.vertical[pred.vertical_index(a, 0)]);
    b.box.height = anchors[a].box.height + static_cast<double>(pred.vertical[pred.vertical_index(a, 1)]);
    try {
      b.box.bev = canonical_box(fit_box_from_quad(apply_corner_offsets(anchors[a].corners, d)));
    } catch (const DomainError&) {
      ++dropped;
      continue;
    }
    if (!(b.box.height > 0.0) || !(b.box.bev.width > 0.0) || !(b.box.bev.length > 0.0)) {
      ++dropped;
      continue;
    }
    out.push_back({b, slot});
  }
  return out;
}

/// Greedy NMS over mixed classes; a candidate is suppressed by a kept box
/// when their RIoU exceeds the candidate's own class threshold.
inline std::vector<LabeledBox> suppress(const std::vector<DecodeCandidate>& cands,
                                        const std::vector<double>& thresholds,
                                        double score_threshold) {
  std::vector<RotatedBoxBEV> boxes;
  std::vector<double> scores;
  for (const auto& c : cands) {
    boxes.push_back(c.box.box.bev);
    scores.push_back(c.box.score);
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (scores[i] >= score_threshold) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (const std::size_t i : order) {
    const double thr = thresholds.at(cands[i].slot);
    const bool hit = std::any_of(kept.begin(), kept.end(),
                                 [&](std::size_t k) { return riou(boxes[i], boxes[k]) > thr; });
    if (!hit) kept.push_back(i);
  }
  std::vector<LabeledBox> out;
  for (const std::size_t k : kept) out.push_back(cands[k].box);
  return out;
}

/// `anchors[i]` and `preds[i]` belong to `classes[i]`.
template <typename T>
DecodeResult decode_detections(const std::vector<std::vector<Anchor>>& anchors,
                               const std::vector<HeadOutput<T>>& preds,
                               const std::vector<ObjectClass>& classes, const InferenceConfig& cfg) {
  if (anchors.size() != preds.size() || classes.size() != preds.size()) {
    throw DimensionError("decode_detections: anchor, prediction and class lists differ in length");
  }
  if (cfg.nms_thresholds.size() < preds.size()) {
    throw ContractViolation("decode_detections: NMS threshold missing for some class heads");
  }
  DecodeResult r;
  if (cfg.per_class_nms) {
    for (std::size_t c = 0; c < preds.size(); ++c) {
      const auto cands =
          decode_candidates(anchors[c], preds[c], classes[c], c, cfg.score_threshold, r.dropped_degenerate);
      std::vector<RotatedBoxBEV> boxes;
      std::vector<double> scores;
      for (const auto& cd : cands) {
        boxes.push_back(cd.box.box.bev);
        scores.push_back(cd.box.score);
      }
      for (const std::size_t k :
           rotated_nms(boxes, scores, cfg.nms_thresholds[c], cfg.score_threshold)) {
        r.detections.push_back(cands[k].box);
      }
    }
  } else {
    std::vector<DecodeCandidate> all;
    for (std::size_t c = 0; c < preds.size(); ++c) {
      auto cands =
          decode_candidates(anchors[c], preds[c], classes[c], c, cfg.score_threshold, r.dropped_degenerate);
      all.insert(all.end(), cands.begin(), cands.end());
    }
    r.detections = suppress(all, cfg.nms_thresholds, cfg.score_threshold);
  }
  return r;
}

}  // namespace hvnet
