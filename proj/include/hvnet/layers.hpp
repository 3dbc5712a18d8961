// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>

#include "hvnet/error.hpp"
#include "hvnet/parallel.hpp"
#include "hvnet/tensor.hpp"

namespace hvnet {

enum class Activation { none, relu };

template <typename T>
struct LinearParams {
  DenseGrid<T> weight;  // [out x in]
  DenseGrid<T> bias;    // [out]

  [[nodiscard]] std::size_t in_features() const { return weight.extent(1); }
  [[nodiscard]] std::size_t out_features() const { return weight.extent(0); }
};

template <typename T>
struct LinearGrads {
  DenseGrid<T> input;
  DenseGrid<T> weight;
  DenseGrid<T> bias;
};

template <typename T>
struct Conv2dParams {
  DenseGrid<T> weight;  // [out_channels x in_channels x kernel_h x kernel_w]
  DenseGrid<T> bias;    // [out_channels]
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};

  [[nodiscard]] std::size_t out_channels() const { return weight.extent(0); }
  [[nodiscard]] std::size_t in_channels() const { return weight.extent(1); }
  [[nodiscard]] std::size_t kernel_h() const { return weight.extent(2); }
  [[nodiscard]] std::size_t kernel_w() const { return weight.extent(3); }
};

template <typename T>
using ConvGrads = LinearGrads<T>;

// Uniform in +-sqrt(6 / fan_in), zero bias.
template <typename T, typename Rng>
LinearParams<T> make_linear(std::size_t in, std::size_t out, Rng& rng) {
  LinearParams<T> p{DenseGrid<T>({out, in}), DenseGrid<T>({out})};
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(1, in)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : p.weight.values()) w = static_cast<T>(dist(rng));
  return p;
}

template <typename T, typename Rng>
Conv2dParams<T> make_conv(std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride, std::size_t padding, Rng& rng) {
  Conv2dParams<T> p{DenseGrid<T>({out, in, kernel, kernel}), DenseGrid<T>({out}),
                    {stride, stride}, {padding, padding}};
  const double fan_in = static_cast<double>(std::max<std::size_t>(1, in * kernel * kernel));
  std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
  for (auto& w : p.weight.values()) w = static_cast<T>(dist(rng));
  return p;
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
DenseGrid<T> linear_forward(const DenseGrid<T>& x, const LinearParams<T>& p,
                            Activation act = Activation::none) {
  require_rank(x.shape(), 2, "linear_forward input");
  require_rank(p.weight.shape(), 2, "linear_forward weight");
  if (x.extent(1) != p.in_features() || p.bias.size() != p.out_features()) {
    throw DimensionError("linear_forward: input " + shape_string(x.shape()) +
                         " incompatible with weight " + shape_string(p.weight.shape()) +
                         " / bias " + shape_string(p.bias.shape()));
  }
  const std::size_t rows = x.extent(0);
  const std::size_t in = p.in_features();
  const std::size_t out = p.out_features();
  DenseGrid<T> y({rows, out});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * in;
    T* yr = y.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wr = p.weight.data() + o * in;
      T acc = p.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yr[o] = (act == Activation::relu && acc < T{0}) ? T{0} : acc;
    }
  }
  return y;
}

/// `output` is the forward result; it is only consulted for the rectifier mask.
template <typename T>
LinearGrads<T> linear_backward(const DenseGrid<T>& x, const LinearParams<T>& p,
                               const DenseGrid<T>& upstream,
                               Activation act = Activation::none,
                               const DenseGrid<T>& output = DenseGrid<T>{}) {
  require_rank(x.shape(), 2, "linear_backward input");
  require_rank(upstream.shape(), 2, "linear_backward upstream");
  if (x.extent(1) != p.in_features() || upstream.extent(0) != x.extent(0) ||
      upstream.extent(1) != p.out_features()) {
    throw DimensionError("linear_backward: input " + shape_string(x.shape()) + ", upstream " +
                         shape_string(upstream.shape()) + ", weight " +
                         shape_string(p.weight.shape()));
  }
  DenseGrid<T> grad = upstream;
  if (act == Activation::relu) grad = relu_backward(output, upstream);

  const std::size_t rows = x.extent(0);
  const std::size_t in = p.in_features();
  const std::size_t out = p.out_features();
  LinearGrads<T> g{DenseGrid<T>({rows, in}), DenseGrid<T>({out, in}), DenseGrid<T>({out})};
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * in;
    const T* gr = grad.data() + r * out;
    T* dxr = g.input.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T go = gr[o];
      if (go == T{0}) continue;
      g.bias[o] += go;
      T* dwr = g.weight.data() + o * in;
      const T* wr = p.weight.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        dwr[i] += go * xr[i];
        dxr[i] += go * wr[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)

namespace detail {

template <typename T>
void check_conv(const DenseGrid<T>& x, const Conv2dParams<T>& p, const char* what) {
  require_rank(x.shape(), 3, what);
  require_rank(p.weight.shape(), 4, what);
  if (x.extent(0) != p.in_channels() || p.bias.size() != p.out_channels()) {
    throw DimensionError(std::string(what) + ": input " + shape_string(x.shape()) +
                         " incompatible with weight " + shape_string(p.weight.shape()));
  }
  if (p.stride[0] == 0 || p.stride[1] == 0) {
    throw DimensionError(std::string(what) + ": zero stride");
  }
}

/// Output columns q with 0 <= q*stride + v - pad < in, as [first, last).
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_columns(std::size_t out, std::size_t in,
                                                               std::size_t v, std::size_t stride,
                                                               std::size_t pad) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t first =
      v >= pad ? 0 : (static_cast<std::ptrdiff_t>(pad - v) + s - 1) / s;
  const std::ptrdiff_t last = std::min<std::ptrdiff_t>(
      static_cast<std::ptrdiff_t>(out),
      (static_cast<std::ptrdiff_t>(in + pad) - static_cast<std::ptrdiff_t>(v) + s - 1) / s);
  return {first, std::max(first, last)};
}

inline constexpr std::size_t kLanes = 8;

/// Dot product split over fixed lanes so the compiler can vectorize it while
/// the summation order stays fixed.
template <typename T>
void lane_dot(std::array<T, kLanes>& lanes, const T* a, const T* b, std::ptrdiff_t n) {
  std::ptrdiff_t i = 0;
  for (; i + static_cast<std::ptrdiff_t>(kLanes) <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  for (std::size_t l = 0; i < n; ++i, ++l) lanes[l] += a[i] * b[i];
}

}  // namespace detail

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t pad) {
  if (in + 2 * pad < kernel) {
    throw DimensionError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

inline std::size_t deconv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                        std::size_t pad) {
  if (in == 0 || (in - 1) * stride + kernel <= 2 * pad) {
    throw DimensionError("deconv: invalid extent arithmetic for input " + std::to_string(in));
  }
  return (in - 1) * stride + kernel - 2 * pad;
}

template <typename T>
DenseGrid<T> conv2d_forward(const DenseGrid<T>& x, const Conv2dParams<T>& p,
                            Activation act = Activation::none) {
  detail::check_conv(x, p, "conv2d_forward");
  const std::size_t ci = p.in_channels(), co = p.out_channels();
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w();
  const std::size_t ih = x.extent(1), iw = x.extent(2);
  const std::size_t sh = p.stride[0], sw = p.stride[1];
  const std::size_t ph = p.padding[0], pw = p.padding[1];
  const std::size_t oh = conv_output_extent(ih, kh, sh, ph);
  const std::size_t ow = conv_output_extent(iw, kw, sw, pw);
  DenseGrid<T> y({co, oh, ow});

  parallel_for(co, [&](std::size_t o) {
    T* out = y.data() + o * oh * ow;
    std::fill(out, out + oh * ow, p.bias[o]);
    for (std::size_t c = 0; c < ci; ++c) {
      const T* in = x.data() + c * ih * iw;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const T w = p.weight[((o * ci + c) * kh + u) * kw + v];
          if (w == T{0}) continue;
          for (std::size_t r = 0; r < oh; ++r) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(r * sh + u) -
                                      static_cast<std::ptrdiff_t>(ph);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(ih)) continue;
            const T* src = in + yy * iw;
            T* dst = out + r * ow;
            const auto [first, last_excl] = detail::valid_columns(ow, iw, v, sw, pw);
            if (sw == 1) {
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(pw);
              for (std::ptrdiff_t q = first; q < last_excl; ++q) dst[q] += w * src[q + shift];
            } else {
              for (std::ptrdiff_t q = first; q < last_excl; ++q) {
                dst[q] += w * src[static_cast<std::size_t>(q) * sw + v - pw];
              }
            }
          }
        }
      }
    }
    if (act == Activation::relu) {
      for (std::size_t i = 0; i < oh * ow; ++i) out[i] = out[i] > T{0} ? out[i] : T{0};
    }
  });
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const DenseGrid<T>& x, const Conv2dParams<T>& p,
                             const DenseGrid<T>& upstream, Activation act = Activation::none,
                             const DenseGrid<T>& output = DenseGrid<T>{}) {
  detail::check_conv(x, p, "conv2d_backward");
  const std::size_t ci = p.in_channels(), co = p.out_channels();
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w();
  const std::size_t ih = x.extent(1), iw = x.extent(2);
  const std::size_t sh = p.stride[0], sw = p.stride[1];
  const std::size_t ph = p.padding[0], pw = p.padding[1];
  const std::size_t oh = conv_output_extent(ih, kh, sh, ph);
  const std::size_t ow = conv_output_extent(iw, kw, sw, pw);
  if (upstream.shape() != Shape{co, oh, ow}) {
    throw DimensionError("conv2d_backward: upstream " + shape_string(upstream.shape()) +
                         " expected " + shape_string({co, oh, ow}));
  }
  const DenseGrid<T> grad = act == Activation::relu ? relu_backward(output, upstream) : upstream;

  ConvGrads<T> g{DenseGrid<T>(x.shape()), DenseGrid<T>(p.weight.shape()),
                 DenseGrid<T>(p.bias.shape())};

  // weight and bias gradients, one output channel per task
  parallel_for(co, [&](std::size_t o) {
    const T* go = grad.data() + o * oh * ow;
    T bsum{0};
    for (std::size_t i = 0; i < oh * ow; ++i) bsum += go[i];
    g.bias[o] = bsum;
    for (std::size_t c = 0; c < ci; ++c) {
      const T* in = x.data() + c * ih * iw;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const auto [first, last] = detail::valid_columns(ow, iw, v, sw, pw);
          std::array<T, detail::kLanes> lanes{};
          for (std::size_t r = 0; r < oh; ++r) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(r * sh + u) -
                                      static_cast<std::ptrdiff_t>(ph);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(ih)) continue;
            const T* grow = go + r * ow;
            const T* src = in + yy * iw;
            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(pw);
            if (sw == 1) {
              detail::lane_dot(lanes, grow + first, src + first + off, last - first);
            } else {
              for (std::ptrdiff_t q = first; q < last; ++q) {
                lanes[0] += grow[q] * src[q * static_cast<std::ptrdiff_t>(sw) + off];
              }
            }
          }
          T acc{0};
          for (const T l : lanes) acc += l;
          g.weight[((o * ci + c) * kh + u) * kw + v] = acc;
        }
      }
    }
  });

  // input gradient, one input channel per task
  parallel_for(ci, [&](std::size_t c) {
    T* dx = g.input.data() + c * ih * iw;
    for (std::size_t o = 0; o < co; ++o) {
      const T* go = grad.data() + o * oh * ow;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const T w = p.weight[((o * ci + c) * kh + u) * kw + v];
          if (w == T{0}) continue;
          const auto [first, last] = detail::valid_columns(ow, iw, v, sw, pw);
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(v) - static_cast<std::ptrdiff_t>(pw);
          for (std::size_t r = 0; r < oh; ++r) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(r * sh + u) -
                                      static_cast<std::ptrdiff_t>(ph);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(ih)) continue;
            T* drow = dx + yy * iw;
            const T* grow = go + r * ow;
            if (sw == 1) {
              for (std::ptrdiff_t q = first; q < last; ++q) drow[q + off] += w * grow[q];
            } else {
              for (std::ptrdiff_t q = first; q < last; ++q) {
                drow[q * static_cast<std::ptrdiff_t>(sw) + off] += w * grow[q];
              }
            }
          }
        }
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------------------
// Transposed convolution. Weight layout matches Conv2dParams:
// [out_channels x in_channels x kh x kw]; input pixel (r, q) of channel c
// spreads w[o][c][u][v] * x into output pixel (r*stride + u - pad, q*stride + v - pad).

template <typename T>
DenseGrid<T> deconv2d_forward(const DenseGrid<T>& x, const Conv2dParams<T>& p,
                              Activation act = Activation::none) {
  detail::check_conv(x, p, "deconv2d_forward");
  const std::size_t ci = p.in_channels(), co = p.out_channels();
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w();
  const std::size_t ih = x.extent(1), iw = x.extent(2);
  const std::size_t sh = p.stride[0], sw = p.stride[1];
  const std::size_t ph = p.padding[0], pw = p.padding[1];
  const std::size_t oh = deconv_output_extent(ih, kh, sh, ph);
  const std::size_t ow = deconv_output_extent(iw, kw, sw, pw);
  DenseGrid<T> y({co, oh, ow});

  parallel_for(co, [&](std::size_t o) {
    T* out = y.data() + o * oh * ow;
    std::fill(out, out + oh * ow, p.bias[o]);
    for (std::size_t c = 0; c < ci; ++c) {
      const T* in = x.data() + c * ih * iw;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const T w = p.weight[((o * ci + c) * kh + u) * kw + v];
          if (w == T{0}) continue;
          for (std::size_t r = 0; r < ih; ++r) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(r * sh + u) -
                                      static_cast<std::ptrdiff_t>(ph);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(oh)) continue;
            for (std::size_t q = 0; q < iw; ++q) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(q * sw + v) -
                                        static_cast<std::ptrdiff_t>(pw);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(ow)) continue;
              out[yy * ow + xx] += w * in[r * iw + q];
            }
          }
        }
      }
    }
    if (act == Activation::relu) {
      for (std::size_t i = 0; i < oh * ow; ++i) out[i] = out[i] > T{0} ? out[i] : T{0};
    }
  });
  return y;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const DenseGrid<T>& x, const Conv2dParams<T>& p,
                               const DenseGrid<T>& upstream, Activation act = Activation::none,
                               const DenseGrid<T>& output = DenseGrid<T>{}) {
  detail::check_conv(x, p, "deconv2d_backward");
  const std::size_t ci = p.in_channels(), co = p.out_channels();
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w();
  const std::size_t ih = x.extent(1), iw = x.extent(2);
  const std::size_t sh = p.stride[0], sw = p.stride[1];
  const std::size_t ph = p.padding[0], pw = p.padding[1];
  const std::size_t oh = deconv_output_extent(ih, kh, sh, ph);
  const std::size_t ow = deconv_output_extent(iw, kw, sw, pw);
  if (upstream.shape() != Shape{co, oh, ow}) {
    throw DimensionError("deconv2d_backward: upstream " + shape_string(upstream.shape()) +
                         " expected " + shape_string({co, oh, ow}));
  }
  const DenseGrid<T> grad = act == Activation::relu ? relu_backward(output, upstream) : upstream;

  ConvGrads<T> g{DenseGrid<T>(x.shape()), DenseGrid<T>(p.weight.shape()),
                 DenseGrid<T>(p.bias.shape())};

  parallel_for(co, [&](std::size_t o) {
    const T* go = grad.data() + o * oh * ow;
    T bsum{0};
    for (std::size_t i = 0; i < oh * ow; ++i) bsum += go[i];
    g.bias[o] = bsum;
    for (std::size_t c = 0; c < ci; ++c) {
      const T* in = x.data() + c * ih * iw;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          T acc{0};
          for (std::size_t r = 0; r < ih; ++r) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(r * sh + u) -
                                      static_cast<std::ptrdiff_t>(ph);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(oh)) continue;
            for (std::size_t q = 0; q < iw; ++q) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(q * sw + v) -
                                        static_cast<std::ptrdiff_t>(pw);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(ow)) continue;
              acc += go[yy * ow + xx] * in[r * iw + q];
            }
          }
          g.weight[((o * ci + c) * kh + u) * kw + v] = acc;
        }
      }
    }
  });

  parallel_for(ci, [&](std::size_t c) {
    T* dx = g.input.data() + c * ih * iw;
    for (std::size_t o = 0; o < co; ++o) {
      const T* go = grad.data() + o * oh * ow;
      for (std::size_t u = 0; u < kh; ++u) {
        for (std::size_t v = 0; v < kw; ++v) {
          const T w = p.weight[((o * ci + c) * kh + u) * kw + v];
          if (w == T{0}) continue;
          for (std::size_t r = 0; r < ih; ++r) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(r * sh + u) -
                                      static_cast<std::ptrdiff_t>(ph);
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(oh)) continue;
            for (std::size_t q = 0; q < iw; ++q) {
              const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(q * sw + v) -
                                        static_cast<std::ptrdiff_t>(pw);
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(ow)) continue;
              dx[r * iw + q] += w * go[yy * ow + xx];
            }
          }
        }
      }
    }
  });
  return g;
}

}  // namespace hvnet
