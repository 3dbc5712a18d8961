// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hvnet/backbone.hpp"
#include "hvnet/config.hpp"
#include "hvnet/head.hpp"
#include "hvnet/hvfe.hpp"
#include "hvnet/pointcloud.hpp"

namespace hvnet {

template <typename T>
struct ModelParams {
  HvfeParams<T> hvfe;
  BackboneParams<T> backbone;
  std::vector<ClassHeadParams<T>> heads;  // one per anchor class slot
};

namespace detail {

template <typename P, typename Fn>
void visit_linear(P& p, const std::string& name, Fn& fn) {
  fn(name + ".weight", p.weight);
  fn(name + ".bias", p.bias);
}

}  // namespace detail

/// Visits every parameter grid with a stable dotted name, in a fixed order.
/// Works on const and non-const parameter sets alike.
template <typename Params, typename Fn>
void for_each_param(Params& p, Fn&& fn) {
  using detail::visit_linear;
  visit_linear(p.hvfe.point_embed, "hvfe.point_embed", fn);
  visit_linear(p.hvfe.avfe_point, "hvfe.avfe_point", fn);
  visit_linear(p.hvfe.avfe_attention, "hvfe.avfe_attention", fn);
  visit_linear(p.hvfe.avfeo_point, "hvfe.avfeo_point", fn);
  visit_linear(p.hvfe.avfeo_attention, "hvfe.avfeo_attention", fn);
  for (std::size_t b = 0; b < p.backbone.blocks.size(); ++b) {
    for (std::size_t l = 0; l < p.backbone.blocks[b].size(); ++l) {
      visit_linear(p.backbone.blocks[b][l],
                   "backbone.block" + std::to_string(b) + ".conv" + std::to_string(l), fn);
    }
  }
  for (std::size_t i = 0; i < p.backbone.lateral.size(); ++i) {
    visit_linear(p.backbone.lateral[i], "backbone.lateral" + std::to_string(i), fn);
  }
  for (std::size_t i = 0; i < p.backbone.fuse.size(); ++i) {
    visit_linear(p.backbone.fuse[i], "backbone.fuse" + std::to_string(i), fn);
  }
  for (std::size_t i = 0; i < p.backbone.align.size(); ++i) {
    visit_linear(p.backbone.align[i], "backbone.align" + std::to_string(i + 1), fn);
  }
  for (std::size_t i = 0; i < p.backbone.class_convs.size(); ++i) {
    visit_linear(p.backbone.class_convs[i], "backbone.class" + std::to_string(i), fn);
  }
  for (std::size_t i = 0; i < p.heads.size(); ++i) {
    const std::string base = "head" + std::to_string(i);
    visit_linear(p.heads[i].cls, base + ".cls", fn);
    visit_linear(p.heads[i].loc, base + ".loc", fn);
    visit_linear(p.heads[i].vertical, base + ".vertical", fn);
  }
}

template <typename T>
std::size_t parameter_count(const ModelParams<T>& p) {
  std::size_t n = 0;
  for_each_param(p, [&](const std::string&, const DenseGrid<T>& g) { n += g.size(); });
  return n;
}

template <typename T>
ModelParams<T> make_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams<T> p;
  p.hvfe = make_hvfe_params<T>(cfg.hvfe, rng);
  const auto bc = cfg.backbone();
  p.backbone = make_backbone_params<T>(bc, rng);
  for (std::size_t i = 0; i < cfg.anchors.classes.size(); ++i) {
    p.heads.push_back(make_class_head<T>(bc.ffpn_width, cfg.anchors.anchors_per_pixel(i), rng));
  }
  return p;
}

inline constexpr double kZeroFixtureClsBias = -10.0;

/// Every weight and bias zero except the classification biases, which sit at
/// -10 so that no anchor reaches the score threshold.
template <typename T>
ModelParams<T> make_zero_model_params(const ModelConfig& cfg) {
  auto p = make_model_params<T>(cfg, 0);
  for_each_param(p, [](const std::string&, DenseGrid<T>& g) { g.fill(T{0}); });
  for (auto& h : p.heads) h.cls.bias.fill(static_cast<T>(kZeroFixtureClsBias));
  return p;
}

namespace detail {

template <typename T>
double mean_square(const DenseGrid<T>& g) {
  double s = 0.0;
  for (const T v : g.values()) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

template <typename T>
void rescale_linear(LinearParams<T>& p, double mean_sq, std::size_t count) {
  if (count == 0 || !(mean_sq > 0.0)) return;
  const T f = static_cast<T>(1.0 / std::sqrt(mean_sq / static_cast<double>(count)));
  for (T& v : p.weight.values()) v *= f;
  for (T& v : p.bias.values()) v *= f;
}

template <typename T>
void rescale_to_unit_rms(LinearParams<T>& p, const std::vector<const DenseGrid<T>*>& inputs) {
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto* x : inputs) {
    const auto y = linear_forward(*x, p);
    sq += mean_square(y);
    n += y.size();
  }
  rescale_linear(p, sq, n);
}

}  // namespace detail

/// Rescales each HVFE linear layer, in forward order, so its pre-activation
/// output has unit RMS on `reference`. Layers whose output is all zero on the
/// reference are left alone.
template <typename T>
void calibrate_hvfe(HvfeParams<T>& p, const PointCloud& reference, const HvfeConfig& cfg,
                    std::size_t rounds = 3) {
  const auto cloud = crop_to_scene(reference, cfg.scene);
  if (cloud.empty()) return;
  auto attention = [](const std::vector<ScaleState<T>>& scales) {
    std::vector<const DenseGrid<T>*> out;
    for (const auto& s : scales) out.push_back(&s.attention);
    return out;
  };
  for (std::size_t r = 0; r < rounds; ++r) {
    auto st = hvfe_forward(cloud, cfg, p);
    detail::rescale_to_unit_rms(p.point_embed, {&st.points});
    st = hvfe_forward(cloud, cfg, p);
    detail::rescale_to_unit_rms(p.avfe_point, {&st.features});
    detail::rescale_to_unit_rms(p.avfe_attention, attention(st.feature_scales));
    st = hvfe_forward(cloud, cfg, p);
    detail::rescale_to_unit_rms(p.avfeo_point, {&st.aggregated});
    detail::rescale_to_unit_rms(p.avfeo_attention, attention(st.projection_scales));
  }
}

template <typename T>
ModelParams<T> zero_grads_like(const ModelParams<T>& p) {
  ModelParams<T> g = p;
  for_each_param(g, [](const std::string&, DenseGrid<T>& x) { x.fill(T{0}); });
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
struct ForwardState {
  PointCloud cloud;  // cropped to the scene
  HvfeState<T> hvfe;
  BackboneState<T> backbone;
  std::vector<HeadOutput<T>> heads;
  std::vector<std::vector<Anchor>> anchors;  // per class slot
};

template <typename T>
ForwardState<T> model_forward(const PointCloud& raw, const ModelConfig& cfg,
                              const ModelParams<T>& params) {
  ForwardState<T> st;
  st.cloud = crop_to_scene(raw, cfg.hvfe.scene);
  st.hvfe = hvfe_forward(st.cloud, cfg.hvfe, params.hvfe);
  std::vector<const DenseGrid<T>*> images;
  for (const auto& im : st.hvfe.images) images.push_back(&im.image);
  const auto bc = cfg.backbone();
  st.backbone = backbone_forward(images, bc, params.backbone);
  for (std::size_t i = 0; i < params.heads.size(); ++i) {
    const auto& map = st.backbone.class_map(i);
    st.heads.push_back(head_forward(map, params.heads[i]));
    const auto geo = cfg.head_geometry(i, map.extent(1), map.extent(2));
    st.anchors.push_back(generate_anchors(geo, cfg.anchors.classes[i], cfg.anchors.orientations));
  }
  return st;
}

template <typename T>
ModelParams<T> model_backward(const std::vector<HeadOutput<T>>& d_heads, const ForwardState<T>& st,
                              const ModelConfig& cfg, const ModelParams<T>& params) {
  ModelParams<T> g;
  std::vector<DenseGrid<T>> d_maps;
  for (std::size_t i = 0; i < params.heads.size(); ++i) {
    auto hg = head_backward(st.backbone.class_map(i), params.heads[i], d_heads[i]);
    d_maps.push_back(std::move(hg.input));
    g.heads.push_back(std::move(hg.params));
  }
  auto bg = backbone_backward(d_maps, st.backbone, cfg.backbone(), params.backbone);
  g.backbone = std::move(bg.params);
  auto hg = hvfe_backward(bg.images, st.hvfe, cfg.hvfe, params.hvfe);
  g.hvfe = std::move(hg.params);
  return g;
}

/// Splits labeled boxes by anchor class slot and assigns targets per head.
template <typename T>
std::vector<TargetAssignment> assign_scene_targets(const ForwardState<T>& st,
                                                   const std::vector<LabeledBox>& gts,
                                                   const ModelConfig& cfg) {
  std::vector<TargetAssignment> out;
  for (std::size_t i = 0; i < cfg.anchors.classes.size(); ++i) {
    const auto& cc = cfg.anchors.classes[i];
    std::vector<Box3D> boxes;
    for (const auto& b : gts) {
      if (b.cls == cc.cls) boxes.push_back(b.box);
    }
    out.push_back(assign_targets(st.anchors[i], boxes, cc, cfg.anchors.force_best_anchor));
  }
  return out;
}

template <typename T>
DecodeResult detect(const PointCloud& raw, const ModelConfig& cfg, const ModelParams<T>& params) {
  if (crop_to_scene(raw, cfg.hvfe.scene).size() == 0) return {};
  const auto st = model_forward(raw, cfg, params);
  return decode_detections(st.anchors, st.heads, cfg.classes(), cfg.inference);
}

}  // namespace hvnet
