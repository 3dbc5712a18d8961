// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used by the test suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "hvnet/geometry.hpp"
#include "hvnet/tensor.hpp"

namespace hvnet::testing {

using Grid = DenseGrid<double>;

template <typename Rng>
Grid random_grid(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Grid g(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : g.values()) v = u(rng);
  return g;
}

inline double weighted_sum(const Grid& weights, const Grid& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  return s;
}

// ---------------------------------------------------------------------------
// Finite differences

struct GradTarget {
  std::string name;
  Grid* value;
  const Grid* analytic;
};

struct GradReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates straddling a kink
  double worst = 0.0;
  std::string worst_at;

  void merge(const GradReport& o) {
    checked += o.checked;
    skipped += o.skipped;
    if (o.worst > worst) {
      worst = o.worst;
      worst_at = o.worst_at;
    }
  }
  [[nodiscard]] double skipped_fraction() const {
    return checked + skipped == 0 ? 0.0 : static_cast<double>(skipped) / static_cast<double>(checked + skipped);
  }
};

/// Central differences per coordinate, error |a - n| / max(|a|, |n|, floor).
/// A coordinate whose one-sided slopes disagree by more than half the
/// tolerance sits on a kink (ReLU switch, max tie) and is skipped; when it is
/// not skipped the kink can bias the central estimate by at most that half.
inline GradReport check_gradients(const std::vector<GradTarget>& targets,
                                  const std::function<double()>& f, double eps,
                                  double tol = 1e-4, double floor = 1e-2) {
  GradReport r;
  const double f0 = f();
  for (const auto& t : targets) {
    if (!t.value->same_shape(*t.analytic)) {
      throw DimensionError("gradient target " + t.name + " has mismatched analytic shape");
    }
    for (std::size_t i = 0; i < t.value->size(); ++i) {
      const double orig = (*t.value)[i];
      (*t.value)[i] = orig + eps;
      const double fp = f();
      (*t.value)[i] = orig - eps;
      const double fm = f();
      (*t.value)[i] = orig;
      const double forward = (fp - f0) / eps;
      const double backward = (f0 - fm) / eps;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = (*t.analytic)[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      if (std::abs(forward - backward) > 0.5 * tol * denom) {
        ++r.skipped;
        continue;
      }
      ++r.checked;
      const double err = std::abs(a - numeric) / denom;
      if (err > r.worst) {
        r.worst = err;
        r.worst_at = t.name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) +
                     " numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Segment reductions by brute force

struct BruteMax {
  Grid out;
  std::vector<std::size_t> argmax;  // row-major [groups x cols]
};

inline BruteMax brute_scatter_max(const Grid& src, const std::vector<std::size_t>& group_of,
                                  std::size_t groups) {
  const std::size_t n = src.extent(0), q = src.extent(1);
  BruteMax b{Grid({groups, q}), std::vector<std::size_t>(groups * q, 0)};
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t c = 0; c < q; ++c) {
      bool seen = false;
      double best = 0.0;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (group_of[i] != g) continue;
        if (!seen || src(i, c) > best) {
          best = src(i, c);
          arg = i;
          seen = true;
        }
      }
      b.out(g, c) = best;
      b.argmax[g * q + c] = arg;
    }
  }
  return b;
}

/// Random group ordinals for n points with every ordinal in [0, groups) used.
inline std::vector<std::size_t> random_groups(std::mt19937_64& rng, std::size_t n, std::size_t& groups) {
  std::uniform_int_distribution<std::size_t> gd(1, std::max<std::size_t>(1, n));
  groups = gd(rng);
  std::vector<std::size_t> g(n);
  std::uniform_int_distribution<std::size_t> pick(0, groups - 1);
  for (std::size_t i = 0; i < n; ++i) g[i] = i < groups ? i : pick(rng);
  std::shuffle(g.begin(), g.end(), rng);
  return g;
}

inline Grid brute_scatter_mean(const Grid& src, const std::vector<std::size_t>& group_of,
                               std::size_t groups) {
  const std::size_t n = src.extent(0), q = src.extent(1);
  Grid out({groups, q});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t c = 0; c < q; ++c) {
      double s = 0.0;
      std::size_t k = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (group_of[i] == g) {
          s += src(i, c);
          ++k;
        }
      }
      out(g, c) = s / static_cast<double>(k);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Area by sampling

inline bool inside_rectangle(const RotatedBoxBEV& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return std::abs(u) <= 0.5 * b.length && std::abs(v) <= 0.5 * b.width;
}

/// IoU estimated from a jittered (stratified) grid of `side` x `side`
/// samples over the joint bounding square of both boxes.
template <typename Rng>
double sampled_iou(const RotatedBoxBEV& a, const RotatedBoxBEV& b, std::size_t side, Rng& rng) {
  const double ra = 0.5 * std::hypot(a.length, a.width), rb = 0.5 * std::hypot(b.length, b.width);
  const double x0 = std::min(a.cx - ra, b.cx - rb), x1 = std::max(a.cx + ra, b.cx + rb);
  const double y0 = std::min(a.cy - ra, b.cy - rb), y1 = std::max(a.cy + ra, b.cy + rb);
  const double hx = (x1 - x0) / static_cast<double>(side), hy = (y1 - y0) / static_cast<double>(side);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t in_a = 0, in_b = 0, both = 0;
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      const double x = x0 + (static_cast<double>(i) + u(rng)) * hx;
      const double y = y0 + (static_cast<double>(j) + u(rng)) * hy;
      const bool pa = inside_rectangle(a, x, y), pb = inside_rectangle(b, x, y);
      in_a += pa;
      in_b += pb;
      both += pa && pb;
    }
  }
  const double uni = static_cast<double>(in_a + in_b - both);
  return uni == 0.0 ? 0.0 : static_cast<double>(both) / uni;
}

/// Angular distance between two yaws on the pi-periodic circle.
inline double yaw_distance(double a, double b) {
  const double d = std::fmod(std::abs(a - b), std::numbers::pi);
  return std::min(d, std::numbers::pi - d);
}

}  // namespace hvnet::testing
