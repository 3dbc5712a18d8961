// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "hvnet/error.hpp"
#include "hvnet/layers.hpp"
#include "hvnet/pointcloud.hpp"
#include "hvnet/tensor.hpp"
#include "hvnet/voxel.hpp"

namespace hvnet {

/// Hybrid voxel feature extractor settings.
///
/// `feature_scales` (S_T) drive the attentive encoders whose point-wise
/// outputs are concatenated into H; `projection_scales` (S_R) choose the
/// pseudo-image resolutions H is projected to. The two sets are independent.
struct HvfeConfig {
  SceneSpec scene;
  double voxel_length = 0.2;
  double voxel_width = 0.2;
  std::vector<double> feature_scales{0.5, 1.0, 2.0};
  std::vector<double> projection_scales{1.0, 2.0, 4.0};
  std::size_t encoder_width = 64;         // q
  std::size_t projection_channels = 128;  // N_H
  std::size_t point_dim = 4;              // d
  Activation embed_activation = Activation::relu;
  Activation gate_activation = Activation::relu;  // applied after the attention multiply

  [[nodiscard]] VoxelGridSpec grid(double scale) const {
    return {scene, voxel_length, voxel_width, scale};
  }
  [[nodiscard]] std::size_t aggregate_width() const {
    return 2 * encoder_width * feature_scales.size();
  }
  [[nodiscard]] std::size_t attention_width() const { return 2 * point_dim; }

  void validate() const {
    if (feature_scales.empty() || projection_scales.empty()) {
      throw ContractViolation("feature and projection scale sets must be non-empty");
    }
    if (!std::is_sorted(feature_scales.begin(), feature_scales.end()) ||
        !std::is_sorted(projection_scales.begin(), projection_scales.end())) {
      throw ContractViolation("scale sets must be listed in ascending order");
    }
    if (encoder_width == 0 || projection_channels == 0 || point_dim < 3) {
      throw ContractViolation("encoder width, projection channels must be positive, point dim >= 3");
    }
    for (const double s : feature_scales) grid(s).validate();
    for (const double s : projection_scales) grid(s).validate();
  }
};

/// One parameter set for every feature-scale encoder and one for every
/// projection layer, regardless of how many scales are configured.
template <typename T>
struct HvfeParams {
  LinearParams<T> point_embed;      // d -> q, produces F
  LinearParams<T> avfe_point;       // q -> q
  LinearParams<T> avfe_attention;   // 2d -> q
  LinearParams<T> avfeo_point;      // e -> N_H
  LinearParams<T> avfeo_attention;  // 2d -> N_H
};

template <typename T, typename Rng>
HvfeParams<T> make_hvfe_params(const HvfeConfig& cfg, Rng& rng) {
  const std::size_t q = cfg.encoder_width;
  return {make_linear<T>(cfg.point_dim, q, rng), make_linear<T>(q, q, rng),
          make_linear<T>(cfg.attention_width(), q, rng),
          make_linear<T>(cfg.aggregate_width(), cfg.projection_channels, rng),
          make_linear<T>(cfg.attention_width(), cfg.projection_channels, rng)};
}

template <typename T>
DenseGrid<T> points_as_grid(const PointCloud& cloud) {
  std::vector<T> data(cloud.values().begin(), cloud.values().end());
  return DenseGrid<T>({cloud.size(), cloud.dim()}, std::move(data));
}

/// Per-point attention knowledge, width 2d:
///   (x_i - mean of x over the voxel) ++ f_i ++ (mean of p over the voxel).
template <typename T>
DenseGrid<T> attention_knowledge(const PointCloud& cloud, const VoxelGroups& groups) {
  const std::size_t n = cloud.size();
  const std::size_t d = cloud.dim();
  if (groups.point_count() != n) {
    throw DimensionError("attention_knowledge: groups cover " +
                         std::to_string(groups.point_count()) + " points, cloud has " +
                         std::to_string(n));
  }
  const DenseGrid<T> points = points_as_grid<T>(cloud);
  const DenseGrid<T> voxel_mean = scatter_mean(points, groups.point_group, groups.group_count());
  const DenseGrid<T> mean_per_point = gather(voxel_mean, groups.point_group);
  DenseGrid<T> g({n, 2 * d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) g(i, a) = points(i, a) - mean_per_point(i, a);
    for (std::size_t a = 3; a < d; ++a) g(i, a) = points(i, a);
    for (std::size_t a = 0; a < d; ++a) g(i, d + a) = mean_per_point(i, a);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Shared core of the encoder and projection layers:
//   M = act(linear_x(X) * linear_g(G)),  pooled = scatter_max(M) per voxel.

template <typename T>
struct GatedPoolCache {
  DenseGrid<T> point_lin;
  DenseGrid<T> attention_lin;
  DenseGrid<T> gated;
  ScatterMaxResult<T> pooled;
};

template <typename T>
struct GatedPoolGrads {
  DenseGrid<T> input;
  LinearParams<T> point;
  LinearParams<T> attention;
};

template <typename T>
GatedPoolCache<T> gated_pool_forward(const DenseGrid<T>& x, const DenseGrid<T>& g,
                                     const VoxelGroups& groups, const LinearParams<T>& lin_x,
                                     const LinearParams<T>& lin_g, Activation act) {
  if (x.extent(0) != g.extent(0) || x.extent(0) != groups.point_count()) {
    throw DimensionError("attentive layer: inputs " + shape_string(x.shape()) + " and " +
                         shape_string(g.shape()) + " for " +
                         std::to_string(groups.point_count()) + " grouped points");
  }
  GatedPoolCache<T> c;
  c.point_lin = linear_forward(x, lin_x);
  c.attention_lin = linear_forward(g, lin_g);
  c.gated = hadamard(c.point_lin, c.attention_lin);
  if (act == Activation::relu) relu_inplace(c.gated);
  c.pooled = scatter_max(c.gated, groups.point_group, groups.group_count());
  return c;
}

template <typename T>
GatedPoolGrads<T> gated_pool_backward(const DenseGrid<T>& d_gated, const DenseGrid<T>& d_pooled,
                                      const DenseGrid<T>& x, const DenseGrid<T>& g,
                                      const LinearParams<T>& lin_x, const LinearParams<T>& lin_g,
                                      Activation act, const GatedPoolCache<T>& c) {
  DenseGrid<T> d_m = scatter_max_backward(d_pooled, c.pooled.argmax, x.extent(0));
  if (!d_gated.empty()) add_inplace(d_m, d_gated);
  if (act == Activation::relu) d_m = relu_backward(c.gated, d_m);
  const DenseGrid<T> d_point = hadamard(d_m, c.attention_lin);
  const DenseGrid<T> d_attention = hadamard(d_m, c.point_lin);
  auto gx = linear_backward(x, lin_x, d_point);
  auto gg = linear_backward(g, lin_g, d_attention);
  return {std::move(gx.input), {std::move(gx.weight), std::move(gx.bias)},
          {std::move(gg.weight), std::move(gg.bias)}};
}

// ---------------------------------------------------------------------------
// AVFE: point-wise M concatenated with its voxel's max-pooled row.

template <typename T>
struct AvfeResult {
  DenseGrid<T> output;  // [N x 2q]
  GatedPoolCache<T> cache;
};

template <typename T>
AvfeResult<T> avfe_forward(const DenseGrid<T>& features, const DenseGrid<T>& attention,
                           const VoxelGroups& groups, const HvfeParams<T>& params,
                           Activation act = Activation::relu) {
  AvfeResult<T> r;
  r.cache = gated_pool_forward(features, attention, groups, params.avfe_point,
                               params.avfe_attention, act);
  const DenseGrid<T> broadcast = gather(r.cache.pooled.out, groups.point_group);
  r.output = concat_columns<T>({&r.cache.gated, &broadcast});
  return r;
}

template <typename T>
GatedPoolGrads<T> avfe_backward(const DenseGrid<T>& upstream, const DenseGrid<T>& features,
                                const DenseGrid<T>& attention, const VoxelGroups& groups,
                                const HvfeParams<T>& params, const GatedPoolCache<T>& cache,
                                Activation act = Activation::relu) {
  const std::size_t q = cache.gated.extent(1);
  auto halves = split_columns(upstream, {q, q});
  const DenseGrid<T> d_pooled =
      gather_backward(halves[1], groups.point_group, groups.group_count());
  return gated_pool_backward(halves[0], d_pooled, features, attention, params.avfe_point,
                             params.avfe_attention, act, cache);
}

/// Column blocks in the order given (ascending feature scale).
template <typename T>
DenseGrid<T> hvfe_aggregate(const std::vector<DenseGrid<T>>& per_scale) {
  std::vector<const DenseGrid<T>*> parts;
  for (const auto& h : per_scale) parts.push_back(&h);
  return concat_columns(parts);
}

// ---------------------------------------------------------------------------
// AVFEO: max-pooled rows written to their pixels.

template <typename T>
struct PseudoImage {
  DenseGrid<T> image;  // [N_H x N_L x N_W]; pixel (x_idx, y_idx) = (c div N_W, c mod N_W)
  VoxelGridSpec grid;
};

/// Pixel of a flat cursor: (c div N_W, c mod N_W).
inline std::pair<std::size_t, std::size_t> cursor_to_pixel(std::size_t cursor, std::size_t cols) {
  return {cursor / cols, cursor % cols};
}

template <typename T>
struct AvfeoResult {
  PseudoImage<T> projected;
  GatedPoolCache<T> cache;
};

template <typename T>
AvfeoResult<T> avfeo_project(const DenseGrid<T>& aggregated, const DenseGrid<T>& attention,
                             const VoxelGroups& groups, const HvfeParams<T>& params,
                             const VoxelGridSpec& grid, Activation act = Activation::relu) {
  AvfeoResult<T> r;
  r.cache = gated_pool_forward(aggregated, attention, groups, params.avfeo_point,
                               params.avfeo_attention, act);
  const std::size_t rows = grid.rows(), cols = grid.cols();
  const std::size_t channels = params.avfeo_point.out_features();
  r.projected.grid = grid;
  r.projected.image = DenseGrid<T>({channels, rows, cols});
  for (std::size_t g = 0; g < groups.group_count(); ++g) {
    const auto [xi, yi] = cursor_to_pixel(groups.voxel_ids[g], cols);
    if (xi >= rows) {
      throw ContractViolation("avfeo_project: voxel " + std::to_string(groups.voxel_ids[g]) +
                              " maps outside the " + std::to_string(rows) + "x" +
                              std::to_string(cols) + " image");
    }
    for (std::size_t c = 0; c < channels; ++c) r.projected.image(c, xi, yi) = r.cache.pooled.out(g, c);
  }
  return r;
}

template <typename T>
GatedPoolGrads<T> avfeo_backward(const DenseGrid<T>& d_image, const DenseGrid<T>& aggregated,
                                 const DenseGrid<T>& attention, const VoxelGroups& groups,
                                 const HvfeParams<T>& params, const GatedPoolCache<T>& cache,
                                 Activation act = Activation::relu) {
  require_rank(d_image.shape(), 3, "avfeo_backward");
  const std::size_t channels = d_image.extent(0), cols = d_image.extent(2);
  DenseGrid<T> d_pooled({groups.group_count(), channels});
  for (std::size_t g = 0; g < groups.group_count(); ++g) {
    const auto [xi, yi] = cursor_to_pixel(groups.voxel_ids[g], cols);
    for (std::size_t c = 0; c < channels; ++c) d_pooled(g, c) = d_image(c, xi, yi);
  }
  return gated_pool_backward(DenseGrid<T>{}, d_pooled, aggregated, attention,
                             params.avfeo_point, params.avfeo_attention, act, cache);
}

// ---------------------------------------------------------------------------
// Full extractor

template <typename T>
struct ScaleState {
  double scale = 1.0;
  VoxelGroups groups;
  DenseGrid<T> attention;
};

template <typename T>
struct HvfeState {
  DenseGrid<T> points;          // raw [N x d]
  DenseGrid<T> features;        // F = embed(points), [N x q]
  std::vector<ScaleState<T>> feature_scales;
  std::vector<ScaleState<T>> projection_scales;
  std::vector<DenseGrid<T>> encoded;  // H^(s_t)
  std::vector<GatedPoolCache<T>> encoder_caches;
  DenseGrid<T> aggregated;            // H
  std::vector<GatedPoolCache<T>> projection_caches;
  std::vector<PseudoImage<T>> images;  // ascending projection scale
};

template <typename T>
ScaleState<T> prepare_scale(const PointCloud& cloud, const HvfeConfig& cfg, double scale) {
  ScaleState<T> s;
  s.scale = scale;
  const auto cursors = compute_cursors(cloud, cfg.grid(scale));
  s.groups = build_groups(cursors);
  s.attention = attention_knowledge<T>(cloud, s.groups);
  return s;
}

/// Voxelize at every scale, encode per feature scale with the shared AVFE
/// parameters, concatenate into H, and project H to one pseudo-image per
/// projection scale with the shared AVFEO parameters.
template <typename T>
HvfeState<T> hvfe_forward(const PointCloud& cloud, const HvfeConfig& cfg,
                          const HvfeParams<T>& params) {
  cfg.validate();
  if (cloud.dim() != cfg.point_dim) {
    throw DimensionError("hvfe_forward: cloud dim " + std::to_string(cloud.dim()) +
                         " but extractor expects " + std::to_string(cfg.point_dim));
  }
  HvfeState<T> st;
  st.points = points_as_grid<T>(cloud);
  st.features = linear_forward(st.points, params.point_embed, cfg.embed_activation);

  for (const double s : cfg.feature_scales) {
    st.feature_scales.push_back(prepare_scale<T>(cloud, cfg, s));
    const auto& scale = st.feature_scales.back();
    auto enc = avfe_forward(st.features, scale.attention, scale.groups, params, cfg.gate_activation);
    st.encoded.push_back(std::move(enc.output));
    st.encoder_caches.push_back(std::move(enc.cache));
  }
  st.aggregated = hvfe_aggregate(st.encoded);

  for (const double s : cfg.projection_scales) {
    st.projection_scales.push_back(prepare_scale<T>(cloud, cfg, s));
    const auto& scale = st.projection_scales.back();
    auto proj = avfeo_project(st.aggregated, scale.attention, scale.groups, params, cfg.grid(s),
                              cfg.gate_activation);
    st.images.push_back(std::move(proj.projected));
    st.projection_caches.push_back(std::move(proj.cache));
  }
  return st;
}

template <typename T>
HvfeParams<T> zero_hvfe_grads(const HvfeParams<T>& p) {
  auto z = [](const LinearParams<T>& l) { return LinearParams<T>{zeros_like(l.weight), zeros_like(l.bias)}; };
  return {z(p.point_embed), z(p.avfe_point), z(p.avfe_attention), z(p.avfeo_point),
          z(p.avfeo_attention)};
}

template <typename T>
struct HvfeGrads {
  HvfeParams<T> params;
  DenseGrid<T> features;  // dL/dF
};

template <typename T>
HvfeGrads<T> hvfe_backward(const std::vector<DenseGrid<T>>& d_images, const HvfeState<T>& st,
                           const HvfeConfig& cfg, const HvfeParams<T>& params) {
  if (st.images.empty() || st.projection_caches.size() != st.images.size()) {
    throw UsageError("hvfe_backward called without a matching forward state");
  }
  if (d_images.size() != st.images.size()) {
    throw DimensionError("hvfe_backward: " + std::to_string(d_images.size()) +
                         " image gradients for " + std::to_string(st.images.size()) + " images");
  }
  HvfeGrads<T> out{zero_hvfe_grads(params), zeros_like(st.features)};
  auto accumulate = [](LinearParams<T>& acc, const LinearParams<T>& g) {
    add_inplace(acc.weight, g.weight);
    add_inplace(acc.bias, g.bias);
  };

  DenseGrid<T> d_aggregated = zeros_like(st.aggregated);
  for (std::size_t r = 0; r < st.images.size(); ++r) {
    const auto& scale = st.projection_scales[r];
    auto g = avfeo_backward(d_images[r], st.aggregated, scale.attention, scale.groups, params,
                            st.projection_caches[r], cfg.gate_activation);
    add_inplace(d_aggregated, g.input);
    accumulate(out.params.avfeo_point, g.point);
    accumulate(out.params.avfeo_attention, g.attention);
  }

  const std::vector<std::size_t> widths(st.encoded.size(), st.encoded.front().extent(1));
  const auto d_encoded = split_columns(d_aggregated, widths);
  for (std::size_t t = 0; t < st.encoded.size(); ++t) {
    const auto& scale = st.feature_scales[t];
    auto g = avfe_backward(d_encoded[t], st.features, scale.attention, scale.groups, params,
                           st.encoder_caches[t], cfg.gate_activation);
    add_inplace(out.features, g.input);
    accumulate(out.params.avfe_point, g.point);
    accumulate(out.params.avfe_attention, g.attention);
  }

  auto ge = linear_backward(st.points, params.point_embed, out.features, cfg.embed_activation,
                            st.features);
  out.params.point_embed = {std::move(ge.weight), std::move(ge.bias)};
  return out;
}

}  // namespace hvnet
