// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hvnet/error.hpp"

namespace hvnet {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

/// Dense row-major array of rank 1 to 4.
///
/// Extents may be zero so that empty point sets flow through the pipeline
/// without special cases (a cloud with N = 0 yields [0 x q] feature grids).
template <typename T>
class DenseGrid {
 public:
  using value_type = T;

  DenseGrid() = default;

  explicit DenseGrid(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(checked_volume(shape_), fill) {}

  DenseGrid(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_volume(shape_)) {
      throw DimensionError("grid data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                           shape_string(shape_));
    }
    return shape_[axis];
  }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<T> values() noexcept { return data_; }
  [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
  [[nodiscard]] T* data() noexcept { return data_.data(); }
  [[nodiscard]] const T* data() const noexcept { return data_.data(); }
  [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // rank-2 access
  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * shape_[1] + c];
  }
  // rank-3 access (channel, row, column)
  T& operator()(std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  const T& operator()(std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  [[nodiscard]] std::span<T> row(std::size_t r) {
    const std::size_t width = data_.size() / std::max<std::size_t>(1, shape_[0]);
    return std::span<T>(data_).subspan(r * width, width);
  }
  [[nodiscard]] std::span<const T> row(std::size_t r) const {
    const std::size_t width = data_.size() / std::max<std::size_t>(1, shape_[0]);
    return std::span<const T>(data_).subspan(r * width, width);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  [[nodiscard]] bool same_shape(const DenseGrid& other) const noexcept {
    return shape_ == other.shape_;
  }

  [[nodiscard]] bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(static_cast<double>(v)); });
  }

  friend bool operator==(const DenseGrid&, const DenseGrid&) = default;

 private:
  static std::size_t checked_volume(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw DimensionError("grid rank must be 1..4, got " + std::to_string(shape.size()));
    }
    return shape_volume(shape);
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
DenseGrid<T> zeros_like(const DenseGrid<T>& g) {
  return DenseGrid<T>(g.shape());
}

template <typename To, typename From>
DenseGrid<To> grid_cast(const DenseGrid<From>& g) {
  std::vector<To> out(g.size());
  std::transform(g.values().begin(), g.values().end(), out.begin(),
                 [](From v) { return static_cast<To>(v); });
  return DenseGrid<To>(g.shape(), std::move(out));
}

inline void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(shape));
  }
}

template <typename T>
void add_inplace(DenseGrid<T>& acc, const DenseGrid<T>& x) {
  if (!acc.same_shape(x)) {
    throw DimensionError("add: " + shape_string(acc.shape()) + " vs " +
                         shape_string(x.shape()));
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

template <typename T>
DenseGrid<T> hadamard(const DenseGrid<T>& a, const DenseGrid<T>& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("hadamard: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  DenseGrid<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
void relu_inplace(DenseGrid<T>& x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

/// Masks upstream by the rectified forward output (gradient 0 where out <= 0).
template <typename T>
DenseGrid<T> relu_backward(const DenseGrid<T>& output, const DenseGrid<T>& upstream) {
  if (!output.same_shape(upstream)) {
    throw DimensionError("relu_backward: " + shape_string(output.shape()) + " vs " +
                         shape_string(upstream.shape()));
  }
  DenseGrid<T> out(upstream.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = output[i] > T{0} ? upstream[i] : T{0};
  }
  return out;
}

/// Column-wise concatenation of rank-2 grids sharing the row count.
template <typename T>
DenseGrid<T> concat_columns(const std::vector<const DenseGrid<T>*>& parts) {
  if (parts.empty()) throw DimensionError("concat_columns: no inputs");
  const std::size_t rows = parts.front()->extent(0);
  std::size_t width = 0;
  for (const auto* p : parts) {
    require_rank(p->shape(), 2, "concat_columns");
    if (p->extent(0) != rows) {
      throw DimensionError("concat_columns: row mismatch " +
                           shape_string(parts.front()->shape()) + " vs " +
                           shape_string(p->shape()));
    }
    width += p->extent(1);
  }
  DenseGrid<T> out({rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t offset = 0;
    for (const auto* p : parts) {
      const auto src = p->row(r);
      std::copy(src.begin(), src.end(), out.data() + r * width + offset);
      offset += src.size();
    }
  }
  return out;
}

/// Inverse of concat_columns for the given block widths.
template <typename T>
std::vector<DenseGrid<T>> split_columns(const DenseGrid<T>& x,
                                        const std::vector<std::size_t>& widths) {
  require_rank(x.shape(), 2, "split_columns");
  if (std::accumulate(widths.begin(), widths.end(), std::size_t{0}) != x.extent(1)) {
    throw DimensionError("split_columns: widths do not sum to " + shape_string(x.shape()));
  }
  const std::size_t rows = x.extent(0);
  std::vector<DenseGrid<T>> out;
  std::size_t offset = 0;
  for (const std::size_t w : widths) {
    DenseGrid<T> part({rows, w});
    for (std::size_t r = 0; r < rows; ++r) {
      const auto src = x.row(r).subspan(offset, w);
      std::copy(src.begin(), src.end(), part.data() + r * w);
    }
    out.push_back(std::move(part));
    offset += w;
  }
  return out;
}

/// Channel-wise concatenation of [C x H x W] grids with equal spatial extents.
template <typename T>
DenseGrid<T> concat_channels(const std::vector<const DenseGrid<T>*>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const auto& first = parts.front()->shape();
  std::size_t channels = 0;
  for (const auto* p : parts) {
    require_rank(p->shape(), 3, "concat_channels");
    if (p->extent(1) != first[1] || p->extent(2) != first[2]) {
      throw DimensionError("concat_channels: spatial mismatch " + shape_string(first) +
                           " vs " + shape_string(p->shape()));
    }
    channels += p->extent(0);
  }
  std::vector<T> data;
  data.reserve(channels * first[1] * first[2]);
  for (const auto* p : parts) data.insert(data.end(), p->values().begin(), p->values().end());
  return DenseGrid<T>({channels, first[1], first[2]}, std::move(data));
}

template <typename T>
std::vector<DenseGrid<T>> split_channels(const DenseGrid<T>& x,
                                         const std::vector<std::size_t>& channels) {
  require_rank(x.shape(), 3, "split_channels");
  if (std::accumulate(channels.begin(), channels.end(), std::size_t{0}) != x.extent(0)) {
    throw DimensionError("split_channels: channel counts do not sum to " +
                         shape_string(x.shape()));
  }
  const std::size_t plane = x.extent(1) * x.extent(2);
  std::vector<DenseGrid<T>> out;
  std::size_t offset = 0;
  for (const std::size_t c : channels) {
    std::vector<T> data(x.data() + offset * plane, x.data() + (offset + c) * plane);
    out.emplace_back(Shape{c, x.extent(1), x.extent(2)}, std::move(data));
    offset += c;
  }
  return out;
}

}  // namespace hvnet
