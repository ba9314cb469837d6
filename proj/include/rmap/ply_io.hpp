#pragma once

#include "rmap/geom.hpp"
#include "rmap/occupancy.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

namespace rmap {

namespace detail {

/// Shortest decimal form that round-trips the value. Keeps every serialized
/// artifact byte-identical for identical inputs.
inline std::string format_value(float v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_value(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

inline double parse_double(const std::string& token, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(context + ": cannot parse number '" + token + "'");
  }
}

}  // namespace detail

/// ASCII PLY with float32 x/y/z vertex properties. Coordinates are narrowed
/// to float on write, matching the declared property type.
inline std::string ply_to_string(const PointCloud& cloud) {
  std::string out;
  out += "ply\n";
  out += "format ascii 1.0\n";
  out += "element vertex " + std::to_string(cloud.size()) + "\n";
  out += "property float x\n";
  out += "property float y\n";
  out += "property float z\n";
  out += "end_header\n";
  for (const Point3& p : cloud.points) {
    out += detail::format_value(static_cast<float>(p.x()));
    out += ' ';
    out += detail::format_value(static_cast<float>(p.y()));
    out += ' ';
    out += detail::format_value(static_cast<float>(p.z()));
    out += '\n';
  }
  return out;
}

inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ply: cannot open " + path.string());
  const std::string body = ply_to_string(cloud);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw std::runtime_error("write_ply: write failed for " + path.string());
}

/// Reads an ASCII PLY vertex cloud. Extra vertex properties are dropped;
/// elements after the vertex element are ignored. Non-finite coordinates are
/// rejected with the file name in the message.
inline PointCloud read_ply(const std::filesystem::path& path, Frame frame = Frame::world) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ply: cannot open " + path.string());
  const std::string ctx = "read_ply(" + path.string() + ")";

  std::string line;
  if (!std::getline(f, line) || detail::strip_cr(line) != "ply")
    throw std::runtime_error(ctx + ": missing 'ply' magic");

  std::size_t vertex_count = 0;
  bool have_vertex = false, in_vertex = false, ascii = false;
  int x_col = -1, y_col = -1, z_col = -1, col = 0;
  while (std::getline(f, line)) {
    line = detail::strip_cr(line);
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment" || word.empty()) continue;
    if (word == "format") {
      std::string kind;
      ls >> kind;
      ascii = kind == "ascii";
      if (!ascii) throw std::runtime_error(ctx + ": only ascii format is supported");
    } else if (word == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
        have_vertex = true;
        col = 0;
      }
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type == "list") throw std::runtime_error(ctx + ": list property on vertex element");
      if (name == "x") x_col = col;
      if (name == "y") y_col = col;
      if (name == "z") z_col = col;
      ++col;
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw std::runtime_error(ctx + ": missing format line");
  if (!have_vertex || x_col < 0 || y_col < 0 || z_col < 0)
    throw std::runtime_error(ctx + ": vertex element with x/y/z properties not found");

  PointCloud cloud(frame);
  cloud.points.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    if (!std::getline(f, line))
      throw std::runtime_error(ctx + ": unexpected end of file at vertex " + std::to_string(i));
    std::istringstream ls(detail::strip_cr(line));
    Point3 p = Point3::Zero();
    std::string token;
    for (int c = 0; c < col; ++c) {
      if (!(ls >> token))
        throw std::runtime_error(ctx + ": short vertex row " + std::to_string(i));
      const double v = detail::parse_double(token, ctx);
      if (c == x_col) p.x() = v;
      if (c == y_col) p.y() = v;
      if (c == z_col) p.z() = v;
    }
    if (!is_finite(p))
      throw std::runtime_error(ctx + ": non-finite coordinate at vertex " + std::to_string(i));
    cloud.points.push_back(p);
  }
  return cloud;
}

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_trajectory_csv: cannot open " + path.string());
  std::string out = "# t,x,y,z,qw,qx,qy,qz\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose& p = traj.poses[i];
    out += detail::format_value(traj.timestamps[i]);
    for (double v : {p.translation.x(), p.translation.y(), p.translation.z(), p.rotation.w(),
                     p.rotation.x(), p.rotation.y(), p.rotation.z()}) {
      out += ',';
      out += detail::format_value(v);
    }
    out += '\n';
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Trajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_trajectory_csv: cannot open " + path.string());
  const std::string ctx = "read_trajectory_csv(" + path.string() + ")";
  Trajectory traj;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string token;
    std::vector<double> vals;
    while (std::getline(ls, token, ',')) vals.push_back(detail::parse_double(token, ctx));
    if (vals.size() != 8)
      throw std::runtime_error(ctx + ": expected 8 fields on line " + std::to_string(line_no));
    Pose pose;
    pose.translation = {vals[1], vals[2], vals[3]};
    pose.rotation = Eigen::Quaterniond(vals[4], vals[5], vals[6], vals[7]);
    if (!pose.unit_rotation(1e-6))
      throw std::runtime_error(ctx + ": non-unit quaternion on line " + std::to_string(line_no));
    traj.push_back(vals[0], pose);
  }
  return traj;
}

/// Loads every `{timestamp}.ply` in a directory, sorted by timestamp.
inline std::vector<std::pair<double, PointCloud>> load_scan_dir(
    const std::filesystem::path& dir, Frame frame = Frame::sensor) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("load_scan_dir: not a directory: " + dir.string());
  std::vector<std::pair<double, PointCloud>> scans;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".ply") continue;
    const std::string stem = entry.path().stem().string();
    const double t = detail::parse_double(stem, "load_scan_dir: file " + entry.path().string() +
                                                    " has a non-numeric timestamp name");
    scans.emplace_back(t, read_ply(entry.path(), frame));
  }
  std::sort(scans.begin(), scans.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return scans;
}

/// Debug export: one `i,j,k,logodds` row per stored voxel, sorted by key.
inline void write_map_csv(const std::filesystem::path& path, const OccupancyMap& map) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_map_csv: cannot open " + path.string());
  std::string out = "i,j,k,logodds\n";
  for (const auto& [key, l] : sorted_cells(map)) {
    out += std::to_string(key.i) + "," + std::to_string(key.j) + "," + std::to_string(key.k) +
           "," + detail::format_value(l) + "\n";
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace rmap
