// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "hvnet/geometry.hpp"
#include "hvnet/pointcloud.hpp"

namespace hvnet {

struct SvgStyle {
  double pixels_per_meter = 10.0;
  std::size_t max_points = 20000;  // larger clouds are thinned with a fixed stride
};

namespace detail {

inline std::string fmt(const char* f, double a) {
  char buf[64];
  const int n = std::snprintf(buf, sizeof(buf), f, a);
  return std::string(buf, static_cast<std::size_t>(n));
}

}  // namespace detail

/// Bird's-eye view: x grows to the right, y grows upward. Ground truth is
/// drawn green, detections red with their score.
inline std::string render_bev_svg(const SceneSpec& scene, const PointCloud& cloud,
                                  const std::vector<LabeledBox>& gts,
                                  const std::vector<LabeledBox>& detections,
                                  const SvgStyle& style = {}) {
  using detail::fmt;
  const double k = style.pixels_per_meter;
  const double w = scene.length() * k;
  const double h = scene.width() * k;
  auto sx = [&](double x) { return fmt("%.2f", (x - scene.min[0]) * k); };
  auto sy = [&](double y) { return fmt("%.2f", (scene.max[1] - y) * k); };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", w) + "\" height=\"" +
         fmt("%.0f", h) + "\" viewBox=\"0 0 " + fmt("%.2f", w) + " " + fmt("%.2f", h) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"#101418\"/>\n<g fill=\"#8fa3b8\">\n";
  const std::size_t stride = std::max<std::size_t>(1, (cloud.size() + style.max_points - 1) /
                                                          std::max<std::size_t>(style.max_points, 1));
  for (std::size_t i = 0; i < cloud.size(); i += stride) {
    out += "<circle cx=\"" + sx(cloud.x(i)) + "\" cy=\"" + sy(cloud.y(i)) + "\" r=\"0.8\"/>\n";
  }
  out += "</g>\n";
  auto polygon = [&](const LabeledBox& b, const char* color) {
    const auto q = corners_bev(b.box.bev);
    out += "<polygon fill=\"none\" stroke=\"";
    out += color;
    out += "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < 4; ++i) {
      if (i) out += ' ';
      out += sx(q[i].x) + "," + sy(q[i].y);
    }
    out += "\"/>\n";
  };
  for (const auto& g : gts) polygon(g, "#3ddc84");
  for (const auto& d : detections) {
    polygon(d, "#ff5a5f");
    out += "<text x=\"" + sx(d.box.bev.cx) + "\" y=\"" + sy(d.box.bev.cy) +
           "\" fill=\"#ff5a5f\" font-size=\"9\" font-family=\"monospace\">" + class_name(d.cls) +
           " " + fmt("%.2f", d.score) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace hvnet
