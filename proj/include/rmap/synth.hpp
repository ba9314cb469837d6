#pragma once

#include "rmap/geom.hpp"
#include "rmap/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rmap {

enum class SceneLayout { corridor, two_room, L_tunnel };

inline SceneLayout scene_layout_from_string(const std::string& s) {
  if (s == "corridor") return SceneLayout::corridor;
  if (s == "two_room") return SceneLayout::two_room;
  if (s == "L_tunnel") return SceneLayout::L_tunnel;
  throw std::invalid_argument("unknown scene layout '" + s + "'");
}

inline std::string to_string(SceneLayout l) {
  switch (l) {
    case SceneLayout::corridor: return "corridor";
    case SceneLayout::two_room: return "two_room";
    default: return "L_tunnel";
  }
}

/// Desk-scale stand-in for a real indoor dataset: walls sampled by a dense
/// simulated lidar and a sparse, noisy, cluttered radar along a shared
/// trajectory. Everything is deterministic given the seed.
struct SceneSpec {
  SceneLayout layout = SceneLayout::corridor;
  double extents = 12.0;            // principal dimension in meters
  double wall_noise_sigma = 0.05;   // radar point noise
  double radar_dropout = 0.97;      // fraction of surface samples the radar misses
  double radar_clutter_rate = 10.0; // false returns per radar scan
  std::uint64_t seed = 1;

  void validate() const {
    if (!(extents > 2.0)) throw std::invalid_argument("scene: extents must be > 2 m");
    if (wall_noise_sigma < 0.0) throw std::invalid_argument("scene: negative noise sigma");
    if (radar_dropout < 0.0 || radar_dropout > 1.0)
      throw std::invalid_argument("scene: dropout must be in [0, 1]");
    if (radar_clutter_rate < 0.0) throw std::invalid_argument("scene: negative clutter rate");
  }
};

struct SceneData {
  std::vector<std::pair<double, PointCloud>> lidar_scans;  // sensor frame
  std::vector<std::pair<double, PointCloud>> radar_scans;  // sensor frame
  Trajectory trajectory;
};

namespace synthdetail {

// Sensor parameters shared by every synthetic scene. The radar frustum
// matches the RadarSensorConfig defaults used at map-build time.
constexpr double kLidarMaxRange = 20.0;
constexpr double kLidarAzStepDeg = 1.5;
constexpr double kLidarElMinDeg = -40.0, kLidarElMaxDeg = 40.0, kLidarElStepDeg = 4.0;
constexpr double kRadarAzFov = 180.0, kRadarElFov = 80.0, kRadarMaxRange = 8.0;
constexpr double kWallHeight = 2.5;
constexpr double kPoseStep = 0.4;
constexpr double kSensorHeight = 1.0;

/// Axis-aligned rectangle: the plane `axis = pos` bounded on the two other
/// axes (u, v in axis order, skipping `axis`).
struct Rect {
  int axis;
  double pos;
  double umin, umax, vmin, vmax;
};

struct SceneModel {
  std::vector<Rect> walls;
  std::vector<Point3> path;  // trajectory waypoints, yaw follows direction
};

inline void add_box_walls(std::vector<Rect>& walls, double x0, double x1, double y0, double y1,
                          double z0, double z1) {
  walls.push_back({0, x0, y0, y1, z0, z1});
  walls.push_back({0, x1, y0, y1, z0, z1});
  walls.push_back({1, y0, x0, x1, z0, z1});
  walls.push_back({1, y1, x0, x1, z0, z1});
  walls.push_back({2, z0, x0, x1, y0, y1});
  walls.push_back({2, z1, x0, x1, y0, y1});
}

inline SceneModel build_model(const SceneSpec& spec) {
  SceneModel m;
  const double e = spec.extents;
  const double h = kWallHeight;
  switch (spec.layout) {
    case SceneLayout::corridor: {
      const double w = e / 4.0;
      add_box_walls(m.walls, 0.0, e, 0.0, w, 0.0, h);
      for (double x = 0.8; x <= e - 0.8 + 1e-9; x += kPoseStep)
        m.path.push_back({x, w / 2.0, kSensorHeight});
      break;
    }
    case SceneLayout::two_room: {
      const double w = e / 3.0;
      const double door_half = 0.6, door_top = 2.0, xm = e / 2.0;
      add_box_walls(m.walls, 0.0, e, 0.0, w, 0.0, h);
      // Dividing wall with a doorway in the middle.
      m.walls.push_back({0, xm, 0.0, w / 2.0 - door_half, 0.0, h});
      m.walls.push_back({0, xm, w / 2.0 + door_half, w, 0.0, h});
      m.walls.push_back({0, xm, w / 2.0 - door_half, w / 2.0 + door_half, door_top, h});
      for (double x = 0.8; x <= e - 0.8 + 1e-9; x += kPoseStep)
        m.path.push_back({x, w / 2.0, kSensorHeight});
      break;
    }
    case SceneLayout::L_tunnel: {
      const double w = e / 5.0;
      const double la = 0.6 * e, lb = 0.6 * e;
      // Leg A spans x in [0, la], y in [0, w]; leg B spans x in [la-w, la],
      // y in [0, lb]; they share the corner square.
      m.walls.push_back({1, 0.0, 0.0, la, 0.0, h});          // south of A
      m.walls.push_back({0, 0.0, 0.0, w, 0.0, h});           // west end of A
      m.walls.push_back({1, w, 0.0, la - w, 0.0, h});        // north of A to corner
      m.walls.push_back({0, la - w, w, lb, 0.0, h});         // west of B above corner
      m.walls.push_back({0, la, 0.0, lb, 0.0, h});           // east of A corner + B
      m.walls.push_back({1, lb, la - w, la, 0.0, h});        // north end of B
      m.walls.push_back({2, 0.0, 0.0, la, 0.0, w});          // floor A
      m.walls.push_back({2, 0.0, la - w, la, w, lb});        // floor B
      m.walls.push_back({2, h, 0.0, la, 0.0, w});            // ceiling A
      m.walls.push_back({2, h, la - w, la, w, lb});          // ceiling B
      const double cx = la - w / 2.0;
      for (double x = 0.8; x < cx - 1e-9; x += kPoseStep)
        m.path.push_back({x, w / 2.0, kSensorHeight});
      for (double y = w / 2.0; y <= lb - 0.8 + 1e-9; y += kPoseStep)
        m.path.push_back({cx, y, kSensorHeight});
      break;
    }
  }
  return m;
}

/// First wall hit along origin + t*dir for t in (0, max_range]; returns the
/// hit range or a negative value when nothing is hit.
inline double cast_ray(const std::vector<Rect>& walls, const Point3& origin, const Point3& dir,
                       double max_range) {
  double best = -1.0;
  for (const Rect& rect : walls) {
    const double denom = dir[rect.axis];
    if (std::abs(denom) < 1e-12) continue;
    const double t = (rect.pos - origin[rect.axis]) / denom;
    if (t <= 1e-9 || t > max_range) continue;
    if (best > 0.0 && t >= best) continue;
    const int ua = rect.axis == 0 ? 1 : 0;
    const int va = rect.axis == 2 ? 1 : 2;
    const double u = origin[ua] + t * dir[ua];
    const double v = origin[va] + t * dir[va];
    if (u >= rect.umin - 1e-9 && u <= rect.umax + 1e-9 && v >= rect.vmin - 1e-9 &&
        v <= rect.vmax + 1e-9)
      best = t;
  }
  return best;
}

}  // namespace synthdetail

inline SceneData synth_scene(const SceneSpec& spec) {
  using namespace synthdetail;
  spec.validate();
  const SceneModel model = build_model(spec);
  Rng rng(spec.seed);

  SceneData out;
  for (std::size_t i = 0; i < model.path.size(); ++i) {
    double yaw = 0.0;
    if (i + 1 < model.path.size()) {
      const Point3 d = model.path[i + 1] - model.path[i];
      yaw = std::atan2(d.y(), d.x());
    } else if (i > 0) {
      const Point3 d = model.path[i] - model.path[i - 1];
      yaw = std::atan2(d.y(), d.x());
    }
    out.trajectory.push_back(static_cast<double>(i) / 10.0, Pose::from_yaw(yaw, model.path[i]));
  }

  for (std::size_t i = 0; i < out.trajectory.size(); ++i) {
    const Pose& pose = out.trajectory.poses[i];
    PointCloud lidar(Frame::sensor);
    PointCloud radar(Frame::sensor);

    for (double az = -180.0; az < 180.0 - 1e-9; az += kLidarAzStepDeg) {
      for (double el = kLidarElMinDeg; el <= kLidarElMaxDeg + 1e-9; el += kLidarElStepDeg) {
        const double ca = std::cos(az * detail::kDegToRad), sa = std::sin(az * detail::kDegToRad);
        const double ce = std::cos(el * detail::kDegToRad), se = std::sin(el * detail::kDegToRad);
        const Point3 dir_sensor{ce * ca, ce * sa, se};
        const Point3 dir_world = pose.rotation * dir_sensor;
        const double range = cast_ray(model.walls, pose.translation, dir_world, kLidarMaxRange);
        if (range <= 0.0) continue;
        const Point3 p_sensor = dir_sensor * range;
        lidar.points.push_back(p_sensor);

        // The radar re-detects a sparse, noisy subset of the same surfaces.
        if (detail::in_fov(p_sensor, kRadarAzFov, kRadarElFov, kRadarMaxRange) &&
            rng.uniform() >= spec.radar_dropout) {
          radar.points.push_back(p_sensor + Point3(rng.normal(0, spec.wall_noise_sigma),
                                                   rng.normal(0, spec.wall_noise_sigma),
                                                   rng.normal(0, spec.wall_noise_sigma)));
        }
      }
    }

    const std::size_t n_clutter = static_cast<std::size_t>(std::floor(spec.radar_clutter_rate));
    for (std::size_t c = 0; c < n_clutter; ++c) {
      const double az = rng.uniform(-kRadarAzFov / 2.0, kRadarAzFov / 2.0) * detail::kDegToRad;
      const double el = rng.uniform(-kRadarElFov / 2.0, kRadarElFov / 2.0) * detail::kDegToRad;
      const double r = rng.uniform(0.5, kRadarMaxRange);
      radar.points.push_back(
          {r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az), r * std::sin(el)});
    }

    out.lidar_scans.emplace_back(out.trajectory.timestamps[i], std::move(lidar));
    out.radar_scans.emplace_back(out.trajectory.timestamps[i], std::move(radar));
  }
  return out;
}

}  // namespace rmap
