// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hvnet/archive.hpp"
#include "hvnet/config.hpp"
#include "hvnet/kitti_label.hpp"
#include "hvnet/metrics.hpp"
#include "hvnet/model.hpp"
#include "hvnet/optimizer.hpp"
#include "hvnet/pointcloud.hpp"
#include "hvnet/svg.hpp"

namespace hvnet {

using Real = float;  // parameter precision of the operational pipeline

/// Scene generation and weight initialization draw from separate streams of
/// the same seed.
inline std::uint64_t init_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

inline std::vector<LabeledScene> make_toy_scenes(const ModelConfig& cfg, std::uint64_t seed,
                                                 std::size_t count) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledScene> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(synth_toy_scene(rng, cfg.synthesis));
  return out;
}

// ---------------------------------------------------------------------------
// Training

/// Fresh weights for `seed`, calibrated on the first scene when the config
/// asks for it.
template <typename T>
ModelParams<T> initial_params(const ModelConfig& cfg, std::uint64_t seed,
                              const std::vector<LabeledScene>& scenes) {
  auto p = make_model_params<T>(cfg, init_seed(seed));
  if (cfg.training.calibrate_init && !scenes.empty()) calibrate_hvfe(p.hvfe, scenes.front().cloud, cfg.hvfe);
  return p;
}

template <typename T>
struct SceneLoss {
  LossBreakdown terms;
  ModelParams<T> grads;
};

template <typename T>
SceneLoss<T> scene_loss(const LabeledScene& scene, const ModelConfig& cfg,
                        const ModelParams<T>& params, bool with_grads) {
  const auto st = model_forward(scene.cloud, cfg, params);
  const auto targets = assign_scene_targets(st, scene.boxes, cfg);
  auto loss = total_loss(targets, st.heads, cfg.loss);
  SceneLoss<T> out;
  out.terms = loss.terms;
  if (with_grads) out.grads = model_backward(loss.grads, st, cfg, params);
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  LossBreakdown mean;  // averaged over the scenes of the epoch
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;  // last good parameters
  std::vector<EpochLog> log;
  LossBreakdown initial;  // mean over scenes at the starting weights
  LossBreakdown final;    // mean over scenes at the returned weights
  bool diverged = false;
  std::size_t iterations = 0;
};

namespace detail {

inline void accumulate_terms(LossBreakdown& acc, const LossBreakdown& t, double w) {
  acc.total += w * t.total;
  acc.loc += w * t.loc;
  acc.cls += w * t.cls;
  acc.vertical += w * t.vertical;
  acc.positives += t.positives;
}

template <typename T>
bool all_finite(const ModelParams<T>& p) {
  bool ok = true;
  for_each_param(p, [&](const std::string&, const DenseGrid<T>& g) { ok = ok && g.all_finite(); });
  return ok;
}

}  // namespace detail

template <typename T>
LossBreakdown mean_loss(const std::vector<LabeledScene>& scenes, const ModelConfig& cfg,
                        const ModelParams<T>& params) {
  LossBreakdown acc;
  for (const auto& s : scenes) {
    detail::accumulate_terms(acc, scene_loss(s, cfg, params, false).terms,
                             1.0 / static_cast<double>(scenes.size()));
  }
  return acc;
}

/// One Adam step per scene per epoch, scenes visited in a fixed order. A
/// non-finite loss or gradient stops training and keeps the weights from
/// before the offending step.
template <typename T>
TrainResult<T> train_toy(const std::vector<LabeledScene>& scenes, const ModelConfig& cfg,
                         ModelParams<T> params, std::size_t epochs,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  TrainResult<T> r;
  if (scenes.empty()) throw ContractViolation("train_toy needs at least one scene");
  r.initial = mean_loss(scenes, cfg, params);
  Adam<T> adam(params, cfg.optimizer);
  const double w = 1.0 / static_cast<double>(scenes.size());
  for (std::size_t e = 0; e < epochs && !r.diverged; ++e) {
    EpochLog log;
    log.epoch = e;
    log.learning_rate = learning_rate_at(cfg.optimizer, r.iterations, e, epochs);
    for (const auto& scene : scenes) {
      auto sl = scene_loss(scene, cfg, params, true);
      if (!std::isfinite(sl.terms.total) || !detail::all_finite(sl.grads)) {
        r.diverged = true;
        break;
      }
      detail::accumulate_terms(log.mean, sl.terms, w);
      ModelParams<T> next = params;
      adam.step(next, sl.grads, learning_rate_at(cfg.optimizer, r.iterations, e, epochs));
      ++r.iterations;
      if (!detail::all_finite(next)) {
        r.diverged = true;
        break;
      }
      params = std::move(next);
    }
    if (r.diverged) break;
    r.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  r.final = mean_loss(scenes, cfg, params);
  r.params = std::move(params);
  return r;
}

inline std::string loss_csv_header() { return "epoch,learning_rate,total,loc,cls,vertical,positives\n"; }

inline std::string loss_csv_row(const EpochLog& l) {
  char buf[256];
  const int n = std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n", l.epoch,
                              l.learning_rate, l.mean.total, l.mean.loc, l.mean.cls,
                              l.mean.vertical, l.mean.positives);
  return std::string(buf, static_cast<std::size_t>(n));
}

// ---------------------------------------------------------------------------
// Evaluation

struct ApRow {
  ObjectClass cls = ObjectClass::car;
  double riou_threshold = 0.0;
  std::optional<double> ap;  // nullopt when the class has no gts
  std::size_t gts = 0;
  std::size_t detections = 0;
};

inline double default_eval_threshold(ObjectClass c) { return c == ObjectClass::car ? 0.7 : 0.5; }

/// AP_40 per class. `thresholds` maps class slot order of `classes`; empty
/// means the standard 0.5 Pedestrian/Cyclist, 0.7 Car.
inline std::vector<ApRow> evaluate_detections(const std::vector<std::vector<LabeledBox>>& detections,
                                              const std::vector<std::vector<LabeledBox>>& gts,
                                              const std::vector<ObjectClass>& classes,
                                              const std::optional<double>& riou_override = {}) {
  std::vector<ApRow> rows;
  for (const auto c : classes) {
    std::vector<std::vector<LabeledBox>> d(detections.size()), g(gts.size());
    ApRow row;
    row.cls = c;
    row.riou_threshold = riou_override.value_or(default_eval_threshold(c));
    for (std::size_t s = 0; s < detections.size(); ++s) {
      for (const auto& b : detections[s]) {
        if (b.cls == c) d[s].push_back(b);
      }
    }
    for (std::size_t s = 0; s < gts.size(); ++s) {
      for (const auto& b : gts[s]) {
        if (b.cls == c) g[s].push_back(b);
      }
    }
    for (const auto& x : d) row.detections += x.size();
    for (const auto& x : g) row.gts += x.size();
    row.ap = ap_40(d, g, row.riou_threshold);
    rows.push_back(row);
  }
  return rows;
}

inline std::string ap_csv(const std::vector<ApRow>& rows) {
  std::string out = "class,riou_threshold,ap40,gts,detections\n";
  for (const auto& r : rows) {
    char buf[160];
    const std::string ap = r.ap ? std::to_string(*r.ap) : std::string("N/A");
    const int n = std::snprintf(buf, sizeof(buf), "%s,%.2f,%s,%zu,%zu\n", class_name(r.cls),
                                r.riou_threshold, ap.c_str(), r.gts, r.detections);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

template <typename T>
std::vector<ApRow> evaluate_scenes(const std::vector<LabeledScene>& scenes, const ModelConfig& cfg,
                                   const ModelParams<T>& params,
                                   const std::optional<double>& riou_override = {}) {
  std::vector<std::vector<LabeledBox>> dets, gts;
  for (const auto& s : scenes) {
    dets.push_back(detect(s.cloud, cfg, params).detections);
    gts.push_back(s.boxes);
  }
  return evaluate_detections(dets, gts, cfg.classes(), riou_override);
}

// ---------------------------------------------------------------------------
// File-level inference

struct InferenceReport {
  std::size_t processed = 0;
  std::vector<std::string> failures;  // "path: reason"
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

/// For each input `<stem>.bin` writes `<stem>.txt` (KITTI labels with score)
/// and, with `plot`, `<stem>.svg`. Ground truth for the plot is read from
/// `gt_dir/<stem>.txt` when that file exists.
template <typename T>
InferenceReport run_inference(const ModelConfig& cfg, const ModelParams<T>& params,
                              const std::vector<std::filesystem::path>& inputs,
                              const std::filesystem::path& out_dir, bool plot,
                              const std::optional<std::filesystem::path>& gt_dir = {}) {
  InferenceReport rep;
  std::filesystem::create_directories(out_dir);
  for (const auto& in : inputs) {
    try {
      const auto loaded = read_kitti_bin(in);
      if (loaded.cloud.dim() != cfg.hvfe.point_dim) {
        throw FormatError("point dimension " + std::to_string(loaded.cloud.dim()) + " does not match config");
      }
      const auto result = detect(loaded.cloud, cfg, params);
      const auto stem = in.stem().string();
      write_labels(out_dir / (stem + ".txt"), result.detections, true);
      if (plot) {
        std::vector<LabeledBox> gts;
        if (gt_dir && std::filesystem::exists(*gt_dir / (stem + ".txt"))) {
          gts = read_labels(*gt_dir / (stem + ".txt"));
        }
        const auto cropped = crop_to_scene(loaded.cloud, cfg.hvfe.scene);
        write_text(out_dir / (stem + ".svg"),
                   render_bev_svg(cfg.hvfe.scene, cropped, gts, result.detections));
      }
      ++rep.processed;
    } catch (const FormatError& e) {
      rep.failures.push_back(in.string() + ": " + e.what());
    }
  }
  return rep;
}

inline std::vector<std::filesystem::path> list_bin_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".bin") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Writes `<dir>/<index>.bin` and `<dir>/<index>.txt` for each scene.
inline void write_scenes(const std::filesystem::path& dir, const std::vector<LabeledScene>& scenes) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%06zu", i);
    write_kitti_bin(dir / (std::string(stem) + ".bin"), scenes[i].cloud);
    write_labels(dir / (std::string(stem) + ".txt"), scenes[i].boxes, false);
  }
}

}  // namespace hvnet
