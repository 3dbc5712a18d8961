// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hvnet/backbone.hpp"
#include "hvnet/error.hpp"
#include "hvnet/head.hpp"
#include "hvnet/hvfe.hpp"
#include "hvnet/pointcloud.hpp"

namespace hvnet {

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t warmup_iterations = 300;
  double warmup_ratio = 1.0 / 3.0;
  double decay_ratio = 0.1;
  std::vector<double> decay_epochs{40.0, 60.0};
  double schedule_epochs = 70.0;  // milestones are fractions of this length

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct TrainingConfig {
  std::size_t scenes = 3;
  bool augment = false;
  bool calibrate_init = false;  // unit-RMS HVFE rescaling on the first scene
  AugmentConfig augmentation;
};

struct ModelConfig {
  HvfeConfig hvfe;
  std::vector<std::size_t> block_widths{64, 128, 256};
  std::size_t convs_per_block = 3;
  std::size_t ffpn_width = 128;
  std::vector<std::size_t> class_strides{1, 2, 2};
  Activation backbone_activation = Activation::relu;
  AnchorConfig anchors = default_anchor_config();
  LossConfig loss;
  InferenceConfig inference;
  OptimizerConfig optimizer;
  TrainingConfig training;
  SynthConfig synthesis;

  [[nodiscard]] BackboneConfig backbone() const {
    BackboneConfig b;
    b.input_channels = hvfe.projection_channels;
    b.injected_images = hvfe.projection_scales.size();
    b.block_widths = block_widths;
    b.convs_per_block = convs_per_block;
    b.ffpn_width = ffpn_width;
    b.class_strides = class_strides;
    b.activation = backbone_activation;
    return b;
  }

  [[nodiscard]] std::vector<ObjectClass> classes() const {
    std::vector<ObjectClass> out;
    for (const auto& c : anchors.classes) out.push_back(c.cls);
    return out;
  }

  /// BEV geometry of the head map of class slot `i`, whose rows/cols come
  /// from the actual backbone output.
  [[nodiscard]] MapGeometry head_geometry(std::size_t i, std::size_t rows, std::size_t cols) const {
    const auto g = hvfe.grid(hvfe.projection_scales.front());
    const double stride = static_cast<double>(class_strides.at(i));
    return {hvfe.scene.min[0], hvfe.scene.min[1], g.cell_length() * stride,
            g.cell_width() * stride, rows, cols};
  }

  void validate() const {
    hvfe.validate();
    backbone().validate();
    anchors.validate();
    loss.validate();
    const auto& sr = hvfe.projection_scales;
    for (std::size_t r = 1; r < sr.size(); ++r) {
      if (std::abs(sr[r] - 2.0 * sr[r - 1]) > 1e-12) {
        throw ContractViolation("consecutive projection scales must double");
      }
    }
    if (class_strides.size() != anchors.classes.size()) {
      throw ContractViolation("one class stride per anchor class is required");
    }
    if (loss.focal_alpha.size() != anchors.classes.size() ||
        inference.nms_thresholds.size() != anchors.classes.size()) {
      throw ContractViolation("focal alpha and NMS thresholds need one entry per anchor class");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.contains(k)) throw FormatError(where + ": unknown key '" + k + "'");
  }
}

template <typename V>
void read_opt(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw FormatError(where + "." + key + ": " + e.what());
  }
}

inline Activation parse_activation(const std::string& s, const std::string& where) {
  if (s == "relu") return Activation::relu;
  if (s == "none") return Activation::none;
  throw FormatError(where + ": activation must be 'relu' or 'none', got '" + s + "'");
}

inline std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "none"; }

inline ObjectClass require_class(const std::string& s, const std::string& where) {
  const auto c = parse_class(s);
  if (!c) throw FormatError(where + ": unknown class '" + s + "'");
  return *c;
}

inline json architecture_json(const ModelConfig& c) {
  json j;
  j["scene"] = {{"min", c.hvfe.scene.min}, {"max", c.hvfe.scene.max}};
  j["voxel"] = {{"length", c.hvfe.voxel_length}, {"width", c.hvfe.voxel_width}};
  j["feature_scales"] = c.hvfe.feature_scales;
  j["projection_scales"] = c.hvfe.projection_scales;
  j["encoder_width"] = c.hvfe.encoder_width;
  j["projection_channels"] = c.hvfe.projection_channels;
  j["point_dim"] = c.hvfe.point_dim;
  j["activations"] = {{"embed", activation_name(c.hvfe.embed_activation)},
                      {"gate", activation_name(c.hvfe.gate_activation)},
                      {"backbone", activation_name(c.backbone_activation)}};
  j["backbone"] = {{"block_widths", c.block_widths},
                   {"convs_per_block", c.convs_per_block},
                   {"ffpn_width", c.ffpn_width},
                   {"class_strides", c.class_strides}};
  json classes = json::array();
  for (const auto& a : c.anchors.classes) {
    json sizes = json::array();
    for (const auto& s : a.sizes) sizes.push_back({s.width, s.length, s.height});
    classes.push_back({{"name", class_name(a.cls)},
                       {"sizes", sizes},
                       {"z_center", a.z_center},
                       {"positive_iou", a.positive_iou},
                       {"negative_iou", a.negative_iou}});
  }
  json degrees = json::array();
  for (const double o : c.anchors.orientations) degrees.push_back(o * 180.0 / std::numbers::pi);
  j["anchors"] = {{"classes", classes},
                  {"orientations_deg", degrees},
                  {"force_best_anchor", c.anchors.force_best_anchor}};
  return j;
}

}  // namespace detail

inline ModelConfig parse_config(const nlohmann::json& j) {
  using detail::read_opt;
  using detail::reject_unknown;
  reject_unknown(j,
                 {"scene", "voxel", "feature_scales", "projection_scales", "encoder_width",
                  "projection_channels", "point_dim", "activations", "backbone", "anchors", "loss",
                  "inference", "optimizer", "training", "synthesis"},
                 "config");
  ModelConfig c;
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    reject_unknown(s, {"min", "max"}, "scene");
    read_opt(s, "min", c.hvfe.scene.min, "scene");
    read_opt(s, "max", c.hvfe.scene.max, "scene");
  }
  if (j.contains("voxel")) {
    const auto& v = j["voxel"];
    reject_unknown(v, {"length", "width"}, "voxel");
    read_opt(v, "length", c.hvfe.voxel_length, "voxel");
    read_opt(v, "width", c.hvfe.voxel_width, "voxel");
  }
  read_opt(j, "feature_scales", c.hvfe.feature_scales, "config");
  read_opt(j, "projection_scales", c.hvfe.projection_scales, "config");
  read_opt(j, "encoder_width", c.hvfe.encoder_width, "config");
  read_opt(j, "projection_channels", c.hvfe.projection_channels, "config");
  read_opt(j, "point_dim", c.hvfe.point_dim, "config");
  if (j.contains("activations")) {
    const auto& a = j["activations"];
    reject_unknown(a, {"embed", "gate", "backbone"}, "activations");
    std::string s;
    if (a.contains("embed")) {
      read_opt(a, "embed", s, "activations");
      c.hvfe.embed_activation = detail::parse_activation(s, "activations.embed");
    }
    if (a.contains("gate")) {
      read_opt(a, "gate", s, "activations");
      c.hvfe.gate_activation = detail::parse_activation(s, "activations.gate");
    }
    if (a.contains("backbone")) {
      read_opt(a, "backbone", s, "activations");
      c.backbone_activation = detail::parse_activation(s, "activations.backbone");
    }
  }
  if (j.contains("backbone")) {
    const auto& b = j["backbone"];
    reject_unknown(b, {"block_widths", "convs_per_block", "ffpn_width", "class_strides"}, "backbone");
    read_opt(b, "block_widths", c.block_widths, "backbone");
    read_opt(b, "convs_per_block", c.convs_per_block, "backbone");
    read_opt(b, "ffpn_width", c.ffpn_width, "backbone");
    read_opt(b, "class_strides", c.class_strides, "backbone");
  }
  if (j.contains("anchors")) {
    const auto& a = j["anchors"];
    reject_unknown(a, {"classes", "orientations_deg", "force_best_anchor"}, "anchors");
    if (a.contains("classes")) {
      c.anchors.classes.clear();
      for (const auto& cj : a["classes"]) {
        reject_unknown(cj, {"name", "sizes", "z_center", "positive_iou", "negative_iou"},
                       "anchors.classes");
        ClassAnchorConfig cc;
        std::string name;
        read_opt(cj, "name", name, "anchors.classes");
        cc.cls = detail::require_class(name, "anchors.classes.name");
        std::vector<std::array<double, 3>> sizes;
        read_opt(cj, "sizes", sizes, "anchors.classes");
        for (const auto& s : sizes) cc.sizes.push_back({s[0], s[1], s[2]});
        read_opt(cj, "z_center", cc.z_center, "anchors.classes");
        read_opt(cj, "positive_iou", cc.positive_iou, "anchors.classes");
        read_opt(cj, "negative_iou", cc.negative_iou, "anchors.classes");
        c.anchors.classes.push_back(cc);
      }
    }
    if (a.contains("orientations_deg")) {
      std::vector<double> deg;
      read_opt(a, "orientations_deg", deg, "anchors");
      c.anchors.orientations.clear();
      for (const double d : deg) c.anchors.orientations.push_back(d * std::numbers::pi / 180.0);
    }
    read_opt(a, "force_best_anchor", c.anchors.force_best_anchor, "anchors");
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    reject_unknown(l, {"focal_alpha", "focal_gamma", "loc_weight", "cls_weight", "vertical_weight"},
                   "loss");
    read_opt(l, "focal_alpha", c.loss.focal_alpha, "loss");
    read_opt(l, "focal_gamma", c.loss.focal_gamma, "loss");
    read_opt(l, "loc_weight", c.loss.loc_weight, "loss");
    read_opt(l, "cls_weight", c.loss.cls_weight, "loss");
    read_opt(l, "vertical_weight", c.loss.vertical_weight, "loss");
  }
  if (j.contains("inference")) {
    const auto& i = j["inference"];
    reject_unknown(i, {"score_threshold", "nms_thresholds", "per_class_nms"}, "inference");
    read_opt(i, "score_threshold", c.inference.score_threshold, "inference");
    read_opt(i, "nms_thresholds", c.inference.nms_thresholds, "inference");
    read_opt(i, "per_class_nms", c.inference.per_class_nms, "inference");
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    reject_unknown(o,
                   {"learning_rate", "weight_decay", "beta1", "beta2", "epsilon", "warmup_iterations",
                    "warmup_ratio", "decay_ratio", "decay_epochs", "schedule_epochs"},
                   "optimizer");
    auto& oc = c.optimizer;
    read_opt(o, "learning_rate", oc.learning_rate, "optimizer");
    read_opt(o, "weight_decay", oc.weight_decay, "optimizer");
    read_opt(o, "beta1", oc.beta1, "optimizer");
    read_opt(o, "beta2", oc.beta2, "optimizer");
    read_opt(o, "epsilon", oc.epsilon, "optimizer");
    read_opt(o, "warmup_iterations", oc.warmup_iterations, "optimizer");
    read_opt(o, "warmup_ratio", oc.warmup_ratio, "optimizer");
    read_opt(o, "decay_ratio", oc.decay_ratio, "optimizer");
    read_opt(o, "decay_epochs", oc.decay_epochs, "optimizer");
    read_opt(o, "schedule_epochs", oc.schedule_epochs, "optimizer");
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    reject_unknown(t, {"scenes", "augment", "calibrate_init"}, "training");
    read_opt(t, "scenes", c.training.scenes, "training");
    read_opt(t, "augment", c.training.augment, "training");
    read_opt(t, "calibrate_init", c.training.calibrate_init, "training");
  }
  c.synthesis.scene = c.hvfe.scene;
  if (j.contains("synthesis")) {
    const auto& s = j["synthesis"];
    reject_unknown(s,
                   {"objects", "ground_z", "surface_density", "clutter_points", "size_jitter",
                    "min_gap", "max_attempts"},
                   "synthesis");
    auto& sc = c.synthesis;
    if (s.contains("objects")) {
      for (const auto& oj : s["objects"]) {
        reject_unknown(oj, {"class", "length", "width", "height", "count"}, "synthesis.objects");
        ObjectTemplate ot;
        std::string name;
        read_opt(oj, "class", name, "synthesis.objects");
        ot.cls = detail::require_class(name, "synthesis.objects.class");
        read_opt(oj, "length", ot.length, "synthesis.objects");
        read_opt(oj, "width", ot.width, "synthesis.objects");
        read_opt(oj, "height", ot.height, "synthesis.objects");
        read_opt(oj, "count", ot.count, "synthesis.objects");
        sc.objects.push_back(ot);
      }
    }
    read_opt(s, "ground_z", sc.ground_z, "synthesis");
    read_opt(s, "surface_density", sc.surface_density, "synthesis");
    read_opt(s, "clutter_points", sc.clutter_points, "synthesis");
    read_opt(s, "size_jitter", sc.size_jitter, "synthesis");
    read_opt(s, "min_gap", sc.min_gap, "synthesis");
    read_opt(s, "max_attempts", sc.max_attempts, "synthesis");
  }
  c.validate();
  return c;
}

inline ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    return parse_config(j);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// FNV-1a 64 over the canonical dump of every setting that shapes the
/// network or the meaning of its parameters.
inline std::string config_fingerprint(const ModelConfig& c) {
  const std::string text = detail::architecture_json(c).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace hvnet
