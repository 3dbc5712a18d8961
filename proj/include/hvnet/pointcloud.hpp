// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hvnet/error.hpp"
#include "hvnet/geometry.hpp"

namespace hvnet {

static_assert(std::endian::native == std::endian::little,
              "KITTI velodyne files are read in native byte order");

/// N points of `dim` floats each: x, y, z followed by dim - 3 extra features.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::size_t dim) : dim_(dim) { check_dim(); }
  PointCloud(std::size_t dim, std::vector<float> values) : dim_(dim), values_(std::move(values)) {
    check_dim();
    if (values_.size() % dim_ != 0) {
      throw DimensionError("point cloud values not a multiple of dim " + std::to_string(dim_));
    }
  }

  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size() / dim_; }
  [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

  [[nodiscard]] std::span<const float> point(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * dim_, dim_);
  }
  [[nodiscard]] std::span<float> point(std::size_t i) {
    return std::span<float>(values_).subspan(i * dim_, dim_);
  }
  [[nodiscard]] float x(std::size_t i) const { return values_[i * dim_]; }
  [[nodiscard]] float y(std::size_t i) const { return values_[i * dim_ + 1]; }
  [[nodiscard]] float z(std::size_t i) const { return values_[i * dim_ + 2]; }

  void push_back(std::span<const float> p) {
    if (p.size() != dim_) throw DimensionError("point has wrong dimension");
    values_.insert(values_.end(), p.begin(), p.end());
  }

  [[nodiscard]] const std::vector<float>& values() const noexcept { return values_; }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  void check_dim() const {
    if (dim_ < 3) throw DimensionError("point dimension must be >= 3");
  }

  std::size_t dim_ = 4;
  std::vector<float> values_;
};

/// Axis-aligned detection volume [min, max) in meters.
struct SceneSpec {
  std::array<double, 3> min{0.0, -32.0, -3.0};
  std::array<double, 3> max{64.0, 32.0, 2.0};

  [[nodiscard]] double length() const { return max[0] - min[0]; }
  [[nodiscard]] double width() const { return max[1] - min[1]; }
  [[nodiscard]] double height() const { return max[2] - min[2]; }

  void validate() const {
    for (std::size_t a = 0; a < 3; ++a) {
      if (!(max[a] > min[a])) throw ContractViolation("scene max must exceed min on every axis");
    }
  }

  [[nodiscard]] bool contains(double x, double y, double z) const {
    return x >= min[0] && x < max[0] && y >= min[1] && y < max[1] && z >= min[2] && z < max[2];
  }

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

enum class ObjectClass : std::uint8_t { pedestrian = 0, cyclist = 1, car = 2 };

inline constexpr std::size_t kClassCount = 3;
inline constexpr std::array<ObjectClass, kClassCount> kAllClasses{
    ObjectClass::pedestrian, ObjectClass::cyclist, ObjectClass::car};

inline const char* class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::pedestrian: return "Pedestrian";
    case ObjectClass::cyclist: return "Cyclist";
    case ObjectClass::car: return "Car";
  }
  return "Unknown";
}

inline std::optional<ObjectClass> parse_class(const std::string& name) {
  for (const auto c : kAllClasses) {
    if (name == class_name(c)) return c;
  }
  return std::nullopt;
}

inline std::size_t class_index(ObjectClass c) { return static_cast<std::size_t>(c); }

struct LabeledBox {
  Box3D box;
  ObjectClass cls = ObjectClass::car;
  double score = 1.0;

  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

struct LabeledScene {
  PointCloud cloud;
  std::vector<LabeledBox> boxes;
};

// ---------------------------------------------------------------------------
// KITTI velodyne .bin

struct BinReadResult {
  PointCloud cloud;
  std::size_t rejected_non_finite = 0;
};

inline BinReadResult parse_kitti_bin(std::span<const std::byte> bytes) {
  constexpr std::size_t kRecord = 4 * sizeof(float);
  if (bytes.size() % kRecord != 0) {
    throw FormatError("velodyne data truncated: " + std::to_string(bytes.size()) +
                      " bytes, partial record at byte offset " +
                      std::to_string(bytes.size() - bytes.size() % kRecord));
  }
  BinReadResult result{PointCloud(4), 0};
  std::vector<float> values;
  values.reserve(bytes.size() / sizeof(float));
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
    std::array<float, 4> rec{};
    std::memcpy(rec.data(), bytes.data() + off, kRecord);
    if (!std::isfinite(rec[0]) || !std::isfinite(rec[1]) || !std::isfinite(rec[2]) ||
        !std::isfinite(rec[3])) {
      ++result.rejected_non_finite;
      continue;
    }
    values.insert(values.end(), rec.begin(), rec.end());
  }
  result.cloud = PointCloud(4, std::move(values));
  return result;
}

inline BinReadResult read_kitti_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_kitti_bin(std::as_bytes(std::span<const char>(raw)));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Writes x, y, z and the first extra feature (zero when dim == 3).
inline void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto p = cloud.point(i);
    const std::array<float, 4> rec{p[0], p[1], p[2], cloud.dim() > 3 ? p[3] : 0.0f};
    out.write(reinterpret_cast<const char*>(rec.data()), sizeof(rec));
  }
}

// ---------------------------------------------------------------------------

/// Keeps points with min <= (x, y, z) < max, order preserved.
inline PointCloud crop_to_scene(const PointCloud& cloud, const SceneSpec& scene) {
  std::vector<float> kept;
  kept.reserve(cloud.values().size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (scene.contains(cloud.x(i), cloud.y(i), cloud.z(i))) {
      const auto p = cloud.point(i);
      kept.insert(kept.end(), p.begin(), p.end());
    }
  }
  return PointCloud(cloud.dim(), std::move(kept));
}

// ---------------------------------------------------------------------------
// Global augmentation

struct AugmentConfig {
  double flip_probability = 0.5;
  double rotation_min = -std::numbers::pi / 2.0;
  double rotation_max = std::numbers::pi / 2.0;
  double scale_min = 0.95;
  double scale_max = 1.05;
  std::array<double, 3> translation_std{0.2, 0.2, 0.2};
};

/// Applied in order: mirror y (optional), rotate about z, scale, translate.
struct GlobalTransform {
  bool flip_y = false;
  double rotation = 0.0;
  double scale = 1.0;
  std::array<double, 3> translation{0.0, 0.0, 0.0};

  [[nodiscard]] std::array<double, 3> apply_point(double x, double y, double z) const {
    if (flip_y) y = -y;
    const double c = std::cos(rotation);
    const double s = std::sin(rotation);
    const double rx = c * x - s * y;
    const double ry = s * x + c * y;
    return {scale * rx + translation[0], scale * ry + translation[1],
            scale * z + translation[2]};
  }

  [[nodiscard]] Box3D apply_box(const Box3D& b) const {
    const auto c = apply_point(b.bev.cx, b.bev.cy, b.z_center);
    const double yaw = flip_y ? -b.bev.yaw : b.bev.yaw;
    return {make_box(c[0], c[1], scale * b.bev.length, scale * b.bev.width, yaw + rotation),
            c[2], scale * b.height};
  }
};

template <typename Rng>
GlobalTransform sample_global_transform(Rng& rng, const AugmentConfig& cfg) {
  GlobalTransform t;
  t.flip_y = std::bernoulli_distribution(cfg.flip_probability)(rng);
  t.rotation = std::uniform_real_distribution<double>(cfg.rotation_min, cfg.rotation_max)(rng);
  t.scale = std::uniform_real_distribution<double>(cfg.scale_min, cfg.scale_max)(rng);
  for (std::size_t a = 0; a < 3; ++a) {
    t.translation[a] = cfg.translation_std[a] > 0.0
                           ? std::normal_distribution<double>(0.0, cfg.translation_std[a])(rng)
                           : 0.0;
  }
  return t;
}

inline LabeledScene apply_global_transform(const LabeledScene& scene, const GlobalTransform& t) {
  LabeledScene out{PointCloud(scene.cloud.dim(), scene.cloud.values()), {}};
  for (std::size_t i = 0; i < out.cloud.size(); ++i) {
    auto p = out.cloud.point(i);
    const auto q = t.apply_point(p[0], p[1], p[2]);
    p[0] = static_cast<float>(q[0]);
    p[1] = static_cast<float>(q[1]);
    p[2] = static_cast<float>(q[2]);
  }
  out.boxes.reserve(scene.boxes.size());
  for (const auto& b : scene.boxes) out.boxes.push_back({t.apply_box(b.box), b.cls, b.score});
  return out;
}

template <typename Rng>
LabeledScene augment_global(const LabeledScene& scene, Rng& rng, const AugmentConfig& cfg) {
  return apply_global_transform(scene, sample_global_transform(rng, cfg));
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct ObjectTemplate {
  ObjectClass cls = ObjectClass::car;
  double length = 3.5;
  double width = 1.7;
  double height = 1.56;
  std::size_t count = 1;
};

struct SynthConfig {
  SceneSpec scene;
  std::vector<ObjectTemplate> objects;
  double ground_z = -1.8;
  double surface_density = 40.0;    // points per square meter of box surface
  std::size_t clutter_points = 500;  // uniform ground returns
  double size_jitter = 0.05;        // relative
  double min_gap = 0.3;             // meters between footprints
  std::size_t max_attempts = 1000;
};

namespace detail {

template <typename Rng>
void sample_box_surface(const Box3D& box, double density, Rng& rng, std::vector<float>& out) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double l = box.bev.length, w = box.bev.width, h = box.height;
  // four sides and the roof, sampled slightly inside so every point stays in the box
  const double shrink = 0.995;
  struct Face {
    double area;
    int kind;
  };
  const std::array<Face, 5> faces{{{l * h, 0}, {l * h, 1}, {w * h, 2}, {w * h, 3}, {l * w, 4}}};
  const double c = std::cos(box.bev.yaw), s = std::sin(box.bev.yaw);
  std::uniform_real_distribution<double> reflect(0.0, 1.0);
  for (const auto& f : faces) {
    const auto n = static_cast<std::size_t>(std::ceil(f.area * density));
    for (std::size_t k = 0; k < n; ++k) {
      double a = (unit(rng) - 0.5) * l * shrink;
      double b = (unit(rng) - 0.5) * w * shrink;
      double z = (unit(rng) - 0.5) * h * shrink;
      switch (f.kind) {
        case 0: b = 0.5 * w * shrink; break;
        case 1: b = -0.5 * w * shrink; break;
        case 2: a = 0.5 * l * shrink; break;
        case 3: a = -0.5 * l * shrink; break;
        default: z = 0.5 * h * shrink; break;
      }
      out.push_back(static_cast<float>(box.bev.cx + c * a - s * b));
      out.push_back(static_cast<float>(box.bev.cy + s * a + c * b));
      out.push_back(static_cast<float>(box.z_center + z));
      out.push_back(static_cast<float>(reflect(rng)));
    }
  }
}

}  // namespace detail

/// Boxes with pairwise disjoint footprints (separated by `min_gap`), points on
/// their surfaces plus uniform ground clutter; everything inside the scene.
template <typename Rng>
LabeledScene synth_toy_scene(Rng& rng, const SynthConfig& cfg) {
  cfg.scene.validate();
  LabeledScene scene{PointCloud(4), {}};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> yaw_dist(0.0, std::numbers::pi);

  for (const auto& tmpl : cfg.objects) {
    for (std::size_t k = 0; k < tmpl.count; ++k) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
        const double jl = 1.0 + cfg.size_jitter * (2.0 * unit(rng) - 1.0);
        const double jw = 1.0 + cfg.size_jitter * (2.0 * unit(rng) - 1.0);
        const double l = tmpl.length * jl;
        const double w = tmpl.width * jw;
        const double margin = 0.5 * std::hypot(l, w) + 0.05;
        const double xlo = cfg.scene.min[0] + margin, xhi = cfg.scene.max[0] - margin;
        const double ylo = cfg.scene.min[1] + margin, yhi = cfg.scene.max[1] - margin;
        if (!(xhi > xlo) || !(yhi > ylo)) break;
        const Box3D box{make_box(xlo + (xhi - xlo) * unit(rng), ylo + (yhi - ylo) * unit(rng), l,
                                 w, yaw_dist(rng)),
                        cfg.ground_z + 0.5 * tmpl.height, tmpl.height};
        const RotatedBoxBEV grown{box.bev.cx, box.bev.cy, l + cfg.min_gap, w + cfg.min_gap,
                                  box.bev.yaw};
        bool clear = true;
        for (const auto& other : scene.boxes) {
          const RotatedBoxBEV og{other.box.bev.cx, other.box.bev.cy,
                                 other.box.bev.length + cfg.min_gap,
                                 other.box.bev.width + cfg.min_gap, other.box.bev.yaw};
          if (intersection_area(grown, og) > 0.0) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        scene.boxes.push_back({box, tmpl.cls, 1.0});
        placed = true;
      }
    }
  }

  std::vector<float> values;
  for (const auto& b : scene.boxes) detail::sample_box_surface(b.box, cfg.surface_density, rng, values);
  for (std::size_t k = 0; k < cfg.clutter_points; ++k) {
    const double x = cfg.scene.min[0] + cfg.scene.length() * unit(rng);
    const double y = cfg.scene.min[1] + cfg.scene.width() * unit(rng);
    const double z = cfg.ground_z + 0.05 * (unit(rng) - 0.5);
    values.push_back(static_cast<float>(x));
    values.push_back(static_cast<float>(y));
    values.push_back(static_cast<float>(z));
    values.push_back(static_cast<float>(0.2 * unit(rng)));
  }
  scene.cloud = crop_to_scene(PointCloud(4, std::move(values)), cfg.scene);
  return scene;
}

}  // namespace hvnet
