// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hvnet/error.hpp"
#include "hvnet/parallel.hpp"
#include "hvnet/pointcloud.hpp"
#include "hvnet/tensor.hpp"

namespace hvnet {

namespace detail {

// floor() that absorbs representation error of decimal voxel sizes, so that
// 64 / 0.2 gives 320 and 10 / 0.2 gives 50.
inline std::ptrdiff_t snapped_floor(double v) {
  constexpr double kSnap = 1e-9;
  return static_cast<std::ptrdiff_t>(std::floor(v + kSnap));
}

}  // namespace detail

/// 2D pillar grid at scale `scale` over the base voxel size. Pillars span the
/// full scene height.
struct VoxelGridSpec {
  SceneSpec scene;
  double voxel_length = 0.2;  // meters along x
  double voxel_width = 0.2;   // meters along y
  double scale = 1.0;

  [[nodiscard]] double cell_length() const { return voxel_length * scale; }
  [[nodiscard]] double cell_width() const { return voxel_width * scale; }
  [[nodiscard]] double voxel_height() const { return scene.height(); }
  /// N_L: cells along x.
  [[nodiscard]] std::size_t rows() const {
    return static_cast<std::size_t>(std::max<std::ptrdiff_t>(
        0, detail::snapped_floor(scene.length() / cell_length())));
  }
  /// N_W: cells along y; also the row stride of the flat cursor.
  [[nodiscard]] std::size_t cols() const {
    return static_cast<std::size_t>(std::max<std::ptrdiff_t>(
        0, detail::snapped_floor(scene.width() / cell_width())));
  }
  [[nodiscard]] std::size_t cell_count() const { return rows() * cols(); }

  void validate() const {
    scene.validate();
    if (!(voxel_length > 0.0) || !(voxel_width > 0.0) || !(scale > 0.0)) {
      throw ContractViolation("voxel sizes and scale must be positive");
    }
    if (rows() < 1 || cols() < 1) {
      throw ContractViolation("voxel grid at scale " + std::to_string(scale) +
                              " has no cells inside the scene");
    }
  }
};

/// Flat voxel id of every point: c = floor((x - x_min) / (v_L s)) * N_W +
/// floor((y - y_min) / (v_W s)). Every point is kept; there is no per-voxel
/// capacity.
inline std::vector<std::size_t> compute_cursors(const PointCloud& cloud, const VoxelGridSpec& grid) {
  grid.validate();
  const std::size_t rows = grid.rows();
  const std::size_t cols = grid.cols();
  const double cl = grid.cell_length();
  const double cw = grid.cell_width();
  std::vector<std::size_t> cursors(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const std::ptrdiff_t xi = detail::snapped_floor((cloud.x(i) - grid.scene.min[0]) / cl);
    const std::ptrdiff_t yi = detail::snapped_floor((cloud.y(i) - grid.scene.min[1]) / cw);
    if (xi < 0 || yi < 0 || static_cast<std::size_t>(xi) >= rows ||
        static_cast<std::size_t>(yi) >= cols) {
      throw ContractViolation("point " + std::to_string(i) + " (" + std::to_string(cloud.x(i)) +
                              ", " + std::to_string(cloud.y(i)) +
                              ") falls outside the voxel grid; crop the cloud first");
    }
    cursors[i] = static_cast<std::size_t>(xi) * cols + static_cast<std::size_t>(yi);
  }
  return cursors;
}

/// Occupied voxels of one scale. Groups are ordered by ascending voxel id and
/// list their member points in ascending index order (CSR layout).
struct VoxelGroups {
  std::vector<std::size_t> voxel_ids;    // group ordinal -> voxel id
  std::vector<std::size_t> offsets;      // size group_count() + 1
  std::vector<std::size_t> members;      // point indices, grouped
  std::vector<std::size_t> point_group;  // point index -> group ordinal

  [[nodiscard]] std::size_t group_count() const { return voxel_ids.size(); }
  [[nodiscard]] std::size_t point_count() const { return point_group.size(); }
  [[nodiscard]] std::span<const std::size_t> members_of(std::size_t g) const {
    return std::span<const std::size_t>(members).subspan(offsets[g], offsets[g + 1] - offsets[g]);
  }
  [[nodiscard]] std::size_t group_size(std::size_t g) const { return offsets[g + 1] - offsets[g]; }
};

inline VoxelGroups build_groups(std::span<const std::size_t> cursors) {
  VoxelGroups groups;
  const std::size_t n = cursors.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cursors[a] < cursors[b]; });
  groups.point_group.resize(n);
  groups.members = order;
  groups.offsets.push_back(0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t id = cursors[order[k]];
    if (groups.voxel_ids.empty() || groups.voxel_ids.back() != id) {
      if (!groups.voxel_ids.empty()) groups.offsets.push_back(k);
      groups.voxel_ids.push_back(id);
    }
    groups.point_group[order[k]] = groups.voxel_ids.size() - 1;
  }
  if (n > 0) groups.offsets.push_back(n);
  return groups;
}

// ---------------------------------------------------------------------------
// Gather

/// Row slice: out[m] = values[indices[m]].
template <typename T>
DenseGrid<T> gather(const DenseGrid<T>& values, std::span<const std::size_t> indices) {
  require_rank(values.shape(), 2, "gather");
  const std::size_t k = values.extent(0), q = values.extent(1);
  DenseGrid<T> out({indices.size(), q});
  for (std::size_t m = 0; m < indices.size(); ++m) {
    if (indices[m] >= k) {
      throw BoundsError("gather: index " + std::to_string(indices[m]) + " >= " +
                        std::to_string(k) + " rows");
    }
    const auto src = values.row(indices[m]);
    std::copy(src.begin(), src.end(), out.data() + m * q);
  }
  return out;
}

/// Adjoint of gather: upstream rows are summed into their source rows.
template <typename T>
DenseGrid<T> gather_backward(const DenseGrid<T>& upstream, std::span<const std::size_t> indices,
                             std::size_t source_rows) {
  require_rank(upstream.shape(), 2, "gather_backward");
  if (upstream.extent(0) != indices.size()) {
    throw DimensionError("gather_backward: " + shape_string(upstream.shape()) + " vs " +
                         std::to_string(indices.size()) + " indices");
  }
  const std::size_t q = upstream.extent(1);
  DenseGrid<T> out({source_rows, q});
  for (std::size_t m = 0; m < indices.size(); ++m) {
    if (indices[m] >= source_rows) throw BoundsError("gather_backward: index out of range");
    T* dst = out.data() + indices[m] * q;
    const T* src = upstream.data() + m * q;
    for (std::size_t c = 0; c < q; ++c) dst[c] += src[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scatter

template <typename T>
struct ScatterMaxResult {
  DenseGrid<T> out;                 // [G x q]
  DenseGrid<std::size_t> argmax;    // [G x q] winning point index
};

namespace detail {

inline void check_group_index(std::span<const std::size_t> group_of, std::size_t rows,
                              std::size_t num_groups, const char* what) {
  if (group_of.size() != rows) {
    throw DimensionError(std::string(what) + ": " + std::to_string(group_of.size()) +
                         " group indices for " + std::to_string(rows) + " rows");
  }
  for (const std::size_t g : group_of) {
    if (g >= num_groups) {
      throw ContractViolation(std::string(what) + ": group ordinal " + std::to_string(g) +
                              " >= " + std::to_string(num_groups));
    }
  }
}

}  // namespace detail

/// out[g][c] = max over points i with group_of[i] == g of src[i][c]. argmax
/// keeps the smallest point index among equal maxima, so the result does not
/// depend on evaluation order. Columns may be processed in parallel.
template <typename T>
ScatterMaxResult<T> scatter_max(const DenseGrid<T>& src, std::span<const std::size_t> group_of,
                                std::size_t num_groups) {
  require_rank(src.shape(), 2, "scatter_max");
  const std::size_t n = src.extent(0), q = src.extent(1);
  detail::check_group_index(group_of, n, num_groups, "scatter_max");
  constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();
  ScatterMaxResult<T> r{DenseGrid<T>({num_groups, q}), DenseGrid<std::size_t>({num_groups, q}, kUnset)};
  parallel_for(q, [&](std::size_t c) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t g = group_of[i];
      const T v = src(i, c);
      std::size_t& best = r.argmax(g, c);
      // strict comparison keeps the earliest index on ties
      if (best == kUnset || v > r.out(g, c)) {
        best = i;
        r.out(g, c) = v;
      }
    }
  }, 8);
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (q > 0 && r.argmax(g, 0) == kUnset) {
      throw ContractViolation("scatter_max: group " + std::to_string(g) + " has no members");
    }
  }
  return r;
}

/// Routes each upstream entry to the point that won the forward max.
template <typename T>
DenseGrid<T> scatter_max_backward(const DenseGrid<T>& upstream, const DenseGrid<std::size_t>& argmax,
                                  std::size_t num_points) {
  if (!(upstream.shape() == argmax.shape())) {
    throw DimensionError("scatter_max_backward: upstream " + shape_string(upstream.shape()) +
                         " vs argmax " + shape_string(argmax.shape()));
  }
  require_rank(upstream.shape(), 2, "scatter_max_backward");
  const std::size_t groups = upstream.extent(0), q = upstream.extent(1);
  DenseGrid<T> out({num_points, q});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t c = 0; c < q; ++c) {
      const std::size_t i = argmax(g, c);
      if (i >= num_points) throw BoundsError("scatter_max_backward: argmax out of range");
      out(i, c) += upstream(g, c);
    }
  }
  return out;
}

/// out[g] = arithmetic mean of the rows of src belonging to group g.
template <typename T>
DenseGrid<T> scatter_mean(const DenseGrid<T>& src, std::span<const std::size_t> group_of,
                          std::size_t num_groups) {
  require_rank(src.shape(), 2, "scatter_mean");
  const std::size_t n = src.extent(0), q = src.extent(1);
  detail::check_group_index(group_of, n, num_groups, "scatter_mean");
  DenseGrid<T> out({num_groups, q});
  std::vector<std::size_t> counts(num_groups, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = group_of[i];
    ++counts[g];
    for (std::size_t c = 0; c < q; ++c) out(g, c) += src(i, c);
  }
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (counts[g] == 0) {
      throw ContractViolation("scatter_mean: group " + std::to_string(g) + " has no members");
    }
    const T k = static_cast<T>(counts[g]);
    for (std::size_t c = 0; c < q; ++c) out(g, c) /= k;
  }
  return out;
}

template <typename T>
DenseGrid<T> scatter_mean_backward(const DenseGrid<T>& upstream,
                                   std::span<const std::size_t> group_of) {
  require_rank(upstream.shape(), 2, "scatter_mean_backward");
  const std::size_t groups = upstream.extent(0), q = upstream.extent(1);
  detail::check_group_index(group_of, group_of.size(), groups, "scatter_mean_backward");
  std::vector<std::size_t> counts(groups, 0);
  for (const std::size_t g : group_of) ++counts[g];
  DenseGrid<T> out({group_of.size(), q});
  for (std::size_t i = 0; i < group_of.size(); ++i) {
    const std::size_t g = group_of[i];
    const T inv = T{1} / static_cast<T>(counts[g]);
    for (std::size_t c = 0; c < q; ++c) out(i, c) = upstream(g, c) * inv;
  }
  return out;
}

}  // namespace hvnet
