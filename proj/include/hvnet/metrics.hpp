// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hvnet/error.hpp"
#include "hvnet/geometry.hpp"
#include "hvnet/pointcloud.hpp"

namespace hvnet {

inline constexpr std::size_t kRecallPositions = 40;

/// Average precision over the recall positions 1/40, 2/40, ..., 1 using
/// interpolated precision (max precision at any recall >= r). Detections are
/// matched greedily per scene in descending score order to the unmatched gt
/// of highest BEV RIoU, counting a match when RIoU >= `riou_threshold`.
/// All boxes are assumed to be of one class. Returns nullopt without gts.
inline std::optional<double> ap_40(const std::vector<std::vector<LabeledBox>>& detections,
                                   const std::vector<std::vector<LabeledBox>>& gts,
                                   double riou_threshold) {
  if (detections.size() != gts.size()) {
    throw DimensionError("ap_40: " + std::to_string(detections.size()) + " detection scenes for " +
                         std::to_string(gts.size()) + " gt scenes");
  }
  std::size_t total_gt = 0;
  for (const auto& g : gts) total_gt += g.size();
  if (total_gt == 0) return std::nullopt;

  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> all;
  for (std::size_t s = 0; s < detections.size(); ++s) {
    const auto& dets = detections[s];
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<bool> taken(gts[s].size(), false);
    for (const std::size_t i : order) {
      double best = -1.0;
      std::size_t best_g = gts[s].size();
      for (std::size_t g = 0; g < gts[s].size(); ++g) {
        if (taken[g]) continue;
        const double iou = riou(dets[i].box.bev, gts[s][g].box.bev);
        if (iou > best) {
          best = iou;
          best_g = g;
        }
      }
      const bool tp = best_g < gts[s].size() && best >= riou_threshold;
      if (tp) taken[best_g] = true;
      all.push_back({dets[i].score, tp});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Scored& a, const Scored& b) { return a.score > b.score; });

  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].tp) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  // suffix maximum gives the interpolated precision
  for (std::size_t i = precision.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0.0;
  std::size_t j = 0;
  for (std::size_t k = 1; k <= kRecallPositions; ++k) {
    const double r = static_cast<double>(k) / static_cast<double>(kRecallPositions);
    while (j < recall.size() && recall[j] < r - 1e-12) ++j;
    if (j < recall.size()) sum += precision[j];
  }
  return sum / static_cast<double>(kRecallPositions);
}

}  // namespace hvnet
