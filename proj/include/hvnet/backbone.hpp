// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hvnet/error.hpp"
#include "hvnet/layers.hpp"
#include "hvnet/tensor.hpp"

namespace hvnet {

struct BackboneConfig {
  std::size_t input_channels = 128;  // N_H of the pseudo-images
  std::size_t injected_images = 3;   // N_R; image r > 0 joins block r after its strided conv
  std::vector<std::size_t> block_widths{64, 128, 256};
  std::size_t convs_per_block = 3;
  std::size_t ffpn_width = 128;
  std::vector<std::size_t> class_strides{1, 2, 2};  // Pedestrian, Cyclist, Car
  Activation activation = Activation::relu;

  [[nodiscard]] std::size_t block_count() const { return block_widths.size(); }
  [[nodiscard]] std::size_t fused_channels() const { return ffpn_width * block_count(); }

  void validate() const {
    if (block_widths.empty() || convs_per_block == 0 || ffpn_width == 0) {
      throw ContractViolation("backbone needs at least one block, one conv per block and ffpn width > 0");
    }
    if (injected_images == 0 || injected_images > block_widths.size()) {
      throw ContractViolation("backbone accepts 1.." + std::to_string(block_widths.size()) +
                              " pseudo-images, got " + std::to_string(injected_images));
    }
    if (class_strides.empty()) throw ContractViolation("backbone needs at least one class branch");
    if (injected_images > 1 && convs_per_block < 2) {
      throw ContractViolation("injecting pseudo-images needs at least two convs per block");
    }
  }
};

template <typename T>
struct BackboneParams {
  std::vector<std::vector<Conv2dParams<T>>> blocks;  // main stream
  std::vector<Conv2dParams<T>> lateral;              // deconv B_{i+1} -> B_i resolution
  std::vector<Conv2dParams<T>> fuse;                 // 3x3 conv per pyramid level
  std::vector<Conv2dParams<T>> align;                // deconv level i (i >= 1) -> full resolution
  std::vector<Conv2dParams<T>> class_convs;          // one strided 3x3 conv per class
};

template <typename T, typename Rng>
BackboneParams<T> make_backbone_params(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  BackboneParams<T> p;
  const std::size_t nb = cfg.block_count();
  std::size_t in = cfg.input_channels;
  for (std::size_t b = 0; b < nb; ++b) {
    std::vector<Conv2dParams<T>> block;
    const std::size_t width = cfg.block_widths[b];
    for (std::size_t l = 0; l < cfg.convs_per_block; ++l) {
      const std::size_t stride = (b > 0 && l == 0) ? 2 : 1;
      block.push_back(make_conv<T>(in, width, 3, stride, 1, rng));
      in = width;
      if (b > 0 && l == 0 && b < cfg.injected_images) in += cfg.input_channels;
    }
    p.blocks.push_back(std::move(block));
  }
  const std::size_t f = cfg.ffpn_width;
  for (std::size_t i = 0; i + 1 < nb; ++i) {
    p.lateral.push_back(make_conv<T>(cfg.block_widths[i + 1], f, 2, 2, 0, rng));
  }
  for (std::size_t i = 0; i < nb; ++i) {
    const std::size_t level_in = cfg.block_widths[i] + (i + 1 < nb ? f : 0);
    p.fuse.push_back(make_conv<T>(level_in, f, 3, 1, 1, rng));
  }
  for (std::size_t i = 1; i < nb; ++i) {
    const std::size_t factor = std::size_t{1} << i;
    p.align.push_back(make_conv<T>(f, f, factor, factor, 0, rng));
  }
  for (const std::size_t s : cfg.class_strides) {
    p.class_convs.push_back(make_conv<T>(cfg.fused_channels(), f, 3, s, 1, rng));
  }
  return p;
}

template <typename T>
struct ConvTrace {
  DenseGrid<T> input;
  DenseGrid<T> output;
};

namespace detail {

template <typename T>
ConvTrace<T> traced_conv(const DenseGrid<T>& x, const Conv2dParams<T>& p, Activation act,
                         bool transposed) {
  return {x, transposed ? deconv2d_forward(x, p, act) : conv2d_forward(x, p, act)};
}

template <typename T>
DenseGrid<T> traced_conv_backward(const ConvTrace<T>& t, const Conv2dParams<T>& p,
                                  const DenseGrid<T>& upstream, Activation act, bool transposed,
                                  Conv2dParams<T>& grad) {
  auto g = transposed ? deconv2d_backward(t.input, p, upstream, act, t.output)
                      : conv2d_backward(t.input, p, upstream, act, t.output);
  add_inplace(grad.weight, g.weight);
  add_inplace(grad.bias, g.bias);
  return std::move(g.input);
}

}  // namespace detail

template <typename T>
Conv2dParams<T> zeros_like(const Conv2dParams<T>& p) {
  return {zeros_like(p.weight), zeros_like(p.bias), p.stride, p.padding};
}

template <typename T>
BackboneParams<T> zero_backbone_grads(const BackboneParams<T>& p) {
  BackboneParams<T> g;
  for (const auto& block : p.blocks) {
    std::vector<Conv2dParams<T>> gb;
    for (const auto& c : block) gb.push_back(zeros_like(c));
    g.blocks.push_back(std::move(gb));
  }
  for (const auto& c : p.lateral) g.lateral.push_back(zeros_like(c));
  for (const auto& c : p.fuse) g.fuse.push_back(zeros_like(c));
  for (const auto& c : p.align) g.align.push_back(zeros_like(c));
  for (const auto& c : p.class_convs) g.class_convs.push_back(zeros_like(c));
  return g;
}

// ---------------------------------------------------------------------------
// Main stream

template <typename T>
struct MainStreamState {
  std::vector<std::vector<ConvTrace<T>>> traces;
  std::vector<DenseGrid<T>> outputs;  // B_1 .. B_NB
};

/// `images` ordered by ascending projection scale; image 0 feeds block 0 and
/// image b > 0 is concatenated to block b after its strided first layer.
template <typename T>
MainStreamState<T> main_stream(const std::vector<const DenseGrid<T>*>& images,
                               const BackboneConfig& cfg, const BackboneParams<T>& params) {
  cfg.validate();
  if (images.size() != cfg.injected_images) {
    throw DimensionError("main_stream: " + std::to_string(images.size()) +
                         " pseudo-images, configured for " + std::to_string(cfg.injected_images));
  }
  MainStreamState<T> st;
  DenseGrid<T> x = *images.front();
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    std::vector<ConvTrace<T>> traces;
    for (std::size_t l = 0; l < params.blocks[b].size(); ++l) {
      traces.push_back(detail::traced_conv(x, params.blocks[b][l], cfg.activation, false));
      x = traces.back().output;
      if (b > 0 && l == 0 && b < images.size()) {
        const auto& img = *images[b];
        if (img.rank() != 3 || img.extent(1) != x.extent(1) || img.extent(2) != x.extent(2)) {
          throw DimensionError("main_stream: block " + std::to_string(b + 1) + " resolution " +
                               shape_string(x.shape()) + " cannot take pseudo-image " +
                               shape_string(img.shape()));
        }
        x = concat_channels<T>({&x, &img});
      }
    }
    st.traces.push_back(std::move(traces));
    st.outputs.push_back(x);
  }
  return st;
}

/// Returns the gradient for every injected pseudo-image.
template <typename T>
std::vector<DenseGrid<T>> main_stream_backward(const std::vector<DenseGrid<T>>& d_outputs,
                                               const MainStreamState<T>& st,
                                               const BackboneConfig& cfg,
                                               const BackboneParams<T>& params,
                                               BackboneParams<T>& grads) {
  const std::size_t nb = params.blocks.size();
  std::vector<DenseGrid<T>> d_images(cfg.injected_images);
  DenseGrid<T> carry;  // gradient arriving from the next block's input
  for (std::size_t b = nb; b-- > 0;) {
    DenseGrid<T> d = d_outputs[b];
    if (!carry.empty()) add_inplace(d, carry);
    for (std::size_t l = params.blocks[b].size(); l-- > 0;) {
      if (b > 0 && l == 0 && b < cfg.injected_images) {
        const std::size_t own = params.blocks[b][0].out_channels();
        auto parts = split_channels(d, {own, d.extent(0) - own});
        d_images[b] = std::move(parts[1]);
        d = std::move(parts[0]);
      }
      d = detail::traced_conv_backward(st.traces[b][l], params.blocks[b][l], d, cfg.activation,
                                       false, grads.blocks[b][l]);
    }
    carry = std::move(d);
  }
  d_images[0] = std::move(carry);
  return d_images;
}

// ---------------------------------------------------------------------------
// Feature fusion pyramid

template <typename T>
struct FfpnState {
  std::vector<ConvTrace<T>> lateral;
  std::vector<ConvTrace<T>> fuse;
  std::vector<ConvTrace<T>> align;
  DenseGrid<T> fused;  // B_f
};

/// B_f = concat_i align_i(fuse_i(B_i ++ lateral_i(B_{i+1}))), every level
/// brought to the resolution of B_1 before the final concatenation.
template <typename T>
FfpnState<T> ffpn_fuse(const std::vector<DenseGrid<T>>& blocks, const BackboneConfig& cfg,
                       const BackboneParams<T>& params) {
  const std::size_t nb = blocks.size();
  if (nb == 0 || params.fuse.size() != nb) {
    throw DimensionError("ffpn_fuse: " + std::to_string(nb) + " levels for " +
                         std::to_string(params.fuse.size()) + " fuse layers");
  }
  FfpnState<T> st;
  std::vector<DenseGrid<T>> parts;
  for (std::size_t i = 0; i < nb; ++i) {
    DenseGrid<T> level = blocks[i];
    if (i + 1 < nb) {
      st.lateral.push_back(detail::traced_conv(blocks[i + 1], params.lateral[i], cfg.activation, true));
      level = concat_channels<T>({&blocks[i], &st.lateral.back().output});
    }
    st.fuse.push_back(detail::traced_conv(level, params.fuse[i], cfg.activation, false));
    if (i == 0) {
      parts.push_back(st.fuse.back().output);
    } else {
      st.align.push_back(detail::traced_conv(st.fuse.back().output, params.align[i - 1],
                                             cfg.activation, true));
      const auto& up = st.align.back().output;
      if (up.extent(1) != blocks[0].extent(1) || up.extent(2) != blocks[0].extent(2)) {
        throw DimensionError("ffpn_fuse: level " + std::to_string(i + 1) + " aligned to " +
                             shape_string(up.shape()) + ", expected resolution of " +
                             shape_string(blocks[0].shape()));
      }
      parts.push_back(up);
    }
  }
  std::vector<const DenseGrid<T>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  st.fused = concat_channels(ptrs);
  return st;
}

template <typename T>
std::vector<DenseGrid<T>> ffpn_backward(const DenseGrid<T>& d_fused, const FfpnState<T>& st,
                                        const std::vector<DenseGrid<T>>& blocks,
                                        const BackboneConfig& cfg, const BackboneParams<T>& params,
                                        BackboneParams<T>& grads) {
  const std::size_t nb = blocks.size();
  std::vector<DenseGrid<T>> d_blocks;
  for (const auto& b : blocks) d_blocks.push_back(zeros_like(b));
  const auto d_parts = split_channels(d_fused, std::vector<std::size_t>(nb, cfg.ffpn_width));
  for (std::size_t i = 0; i < nb; ++i) {
    DenseGrid<T> d = d_parts[i];
    if (i > 0) {
      d = detail::traced_conv_backward(st.align[i - 1], params.align[i - 1], d, cfg.activation,
                                       true, grads.align[i - 1]);
    }
    d = detail::traced_conv_backward(st.fuse[i], params.fuse[i], d, cfg.activation, false,
                                     grads.fuse[i]);
    if (i + 1 < nb) {
      auto halves = split_channels(d, {blocks[i].extent(0), d.extent(0) - blocks[i].extent(0)});
      add_inplace(d_blocks[i], halves[0]);
      auto d_next = detail::traced_conv_backward(st.lateral[i], params.lateral[i], halves[1],
                                                 cfg.activation, true, grads.lateral[i]);
      add_inplace(d_blocks[i + 1], d_next);
    } else {
      add_inplace(d_blocks[i], d);
    }
  }
  return d_blocks;
}

// ---------------------------------------------------------------------------
// Class-specific pyramids

template <typename T>
struct PyramidState {
  std::vector<ConvTrace<T>> traces;  // output of trace i is B_o^(i)
};

template <typename T>
PyramidState<T> class_pyramids(const DenseGrid<T>& fused, const BackboneConfig& cfg,
                               const BackboneParams<T>& params) {
  PyramidState<T> st;
  for (const auto& conv : params.class_convs) {
    st.traces.push_back(detail::traced_conv(fused, conv, cfg.activation, false));
  }
  return st;
}

template <typename T>
DenseGrid<T> class_pyramids_backward(const std::vector<DenseGrid<T>>& d_outputs,
                                     const PyramidState<T>& st, const BackboneConfig& cfg,
                                     const BackboneParams<T>& params, BackboneParams<T>& grads) {
  DenseGrid<T> d_fused = zeros_like(st.traces.front().input);
  for (std::size_t i = 0; i < st.traces.size(); ++i) {
    auto d = detail::traced_conv_backward(st.traces[i], params.class_convs[i], d_outputs[i],
                                          cfg.activation, false, grads.class_convs[i]);
    add_inplace(d_fused, d);
  }
  return d_fused;
}

// ---------------------------------------------------------------------------

template <typename T>
struct BackboneState {
  MainStreamState<T> main;
  FfpnState<T> ffpn;
  PyramidState<T> pyramids;

  [[nodiscard]] const DenseGrid<T>& class_map(std::size_t i) const {
    return pyramids.traces[i].output;
  }
};

template <typename T>
BackboneState<T> backbone_forward(const std::vector<const DenseGrid<T>*>& images,
                                  const BackboneConfig& cfg, const BackboneParams<T>& params) {
  BackboneState<T> st;
  st.main = main_stream(images, cfg, params);
  st.ffpn = ffpn_fuse(st.main.outputs, cfg, params);
  st.pyramids = class_pyramids(st.ffpn.fused, cfg, params);
  return st;
}

template <typename T>
struct BackboneGrads {
  BackboneParams<T> params;
  std::vector<DenseGrid<T>> images;
};

template <typename T>
BackboneGrads<T> backbone_backward(const std::vector<DenseGrid<T>>& d_class_maps,
                                   const BackboneState<T>& st, const BackboneConfig& cfg,
                                   const BackboneParams<T>& params) {
  BackboneGrads<T> g{zero_backbone_grads(params), {}};
  const auto d_fused = class_pyramids_backward(d_class_maps, st.pyramids, cfg, params, g.params);
  const auto d_blocks = ffpn_backward(d_fused, st.ffpn, st.main.outputs, cfg, params, g.params);
  g.images = main_stream_backward(d_blocks, st.main, cfg, params, g.params);
  return g;
}

}  // namespace hvnet
