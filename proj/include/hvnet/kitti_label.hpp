// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "hvnet/error.hpp"
#include "hvnet/pointcloud.hpp"

namespace hvnet {

// KITTI label lines:
//   type truncated occluded alpha x1 y1 x2 y2 h w l x y z ry [score]
// Box coordinates stay in the LiDAR frame (no camera calibration is applied):
// (x, y, z) is the box center, l runs along the heading and ry is the BEV yaw
// mapped to [-pi/2, pi/2). The 2D bbox is written as zeros and alpha as -10.

inline double yaw_to_kitti(double yaw) {
  double r = normalize_yaw(yaw);
  if (r >= std::numbers::pi / 2.0) r -= std::numbers::pi;
  return r;
}

inline std::string format_label_line(const LabeledBox& b, bool with_score) {
  char buf[256];
  const auto& box = b.box;
  int n = std::snprintf(buf, sizeof(buf),
                        "%s 0.00 0 -10.00 0.00 0.00 0.00 0.00 %.6f %.6f %.6f %.6f %.6f %.6f %.6f",
                        class_name(b.cls), box.height, box.bev.width, box.bev.length, box.bev.cx,
                        box.bev.cy, box.z_center, yaw_to_kitti(box.bev.yaw));
  std::string line(buf, static_cast<std::size_t>(n));
  if (with_score) {
    n = std::snprintf(buf, sizeof(buf), " %.6f", b.score);
    line.append(buf, static_cast<std::size_t>(n));
  }
  return line;
}

inline std::string format_labels(const std::vector<LabeledBox>& boxes, bool with_score) {
  std::string out;
  for (const auto& b : boxes) {
    out += format_label_line(b, with_score);
    out += '\n';
  }
  return out;
}

/// Lines of classes outside Pedestrian/Cyclist/Car (Van, DontCare, ...) are skipped.
inline std::vector<LabeledBox> parse_labels(const std::string& text) {
  std::vector<LabeledBox> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string type;
    std::vector<double> v;
    fields >> type;
    double value = 0.0;
    while (fields >> value) v.push_back(value);
    if (!fields.eof() || (v.size() != 14 && v.size() != 15)) {
      throw FormatError("label line " + std::to_string(line_no) + ": expected 15 or 16 fields");
    }
    const auto cls = parse_class(type);
    if (!cls) continue;
    LabeledBox b;
    b.cls = *cls;
    b.box.height = v[7];
    b.box.bev.width = v[8];
    b.box.bev.length = v[9];
    b.box.bev.cx = v[10];
    b.box.bev.cy = v[11];
    b.box.z_center = v[12];
    b.box.bev.yaw = normalize_yaw(v[13]);
    b.score = v.size() == 15 ? v[14] : 1.0;
    if (!(b.box.height > 0.0) || !(b.box.bev.width > 0.0) || !(b.box.bev.length > 0.0)) {
      throw FormatError("label line " + std::to_string(line_no) + ": non-positive box size");
    }
    out.push_back(b);
  }
  return out;
}

inline std::vector<LabeledBox> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_labels(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_labels(const std::filesystem::path& path, const std::vector<LabeledBox>& boxes,
                         bool with_score) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << format_labels(boxes, with_score);
}

}  // namespace hvnet
