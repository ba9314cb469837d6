#pragma once

#include "rmap/geom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rmap {

struct VoxelKey {
  std::int64_t i = 0, j = 0, k = 0;

  bool operator==(const VoxelKey& o) const { return i == o.i && j == o.j && k == o.k; }
  bool operator<(const VoxelKey& o) const {
    if (i != o.i) return i < o.i;
    if (j != o.j) return j < o.j;
    return k < o.k;
  }
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& v) const {
    std::uint64_t h = static_cast<std::uint64_t>(v.i) * 0x9e3779b97f4a7c15ULL;
    h ^= static_cast<std::uint64_t>(v.j) * 0xc2b2ae3d27d4eb4fULL;
    h ^= static_cast<std::uint64_t>(v.k) * 0x165667b19e3779f9ULL;
    return static_cast<std::size_t>(h);
  }
};

inline VoxelKey voxel_key_of(const Point3& p, double resolution) {
  return {static_cast<std::int64_t>(std::floor(p.x() / resolution)),
          static_cast<std::int64_t>(std::floor(p.y() / resolution)),
          static_cast<std::int64_t>(std::floor(p.z() / resolution))};
}

inline Point3 voxel_center(const VoxelKey& key, double resolution) {
  return {(static_cast<double>(key.i) + 0.5) * resolution,
          (static_cast<double>(key.j) + 0.5) * resolution,
          (static_cast<double>(key.k) + 0.5) * resolution};
}

inline double logodds_to_probability(double l) { return 1.0 / (1.0 + std::exp(-l)); }

/// Ray-cast lidar update values in log-odds.
struct LidarSensorConfig {
  double l_hit = 0.85;
  double l_miss = -0.4;
};

/// Explicit radar occupancy model: voxels near a return inside the field of
/// view gain evidence, every other in-FoV voxel loses a little. The miss
/// decrement is weak because radar misses say less than lidar misses do.
struct RadarSensorConfig {
  double azimuth_fov = 180.0;    // degrees, full angle
  double elevation_fov = 80.0;   // degrees, full angle
  double max_range = 8.0;        // meters
  double l_hit = 0.85;
  double l_miss = -0.05;
  int hit_radius = 0;            // Chebyshev radius around a return's voxel

  void validate() const {
    if (!(l_hit > 0.0)) throw std::invalid_argument("radar config: l_hit must be > 0");
    if (!(l_miss < 0.0)) throw std::invalid_argument("radar config: l_miss must be < 0");
    if (!(max_range > 0.0)) throw std::invalid_argument("radar config: max_range must be > 0");
    if (hit_radius < 0) throw std::invalid_argument("radar config: hit_radius must be >= 0");
  }
};

/// Sparse voxel grid of clamped log-odds occupancy. Untouched voxels have
/// implicit log-odds 0 (p = 0.5) and are not occupied.
class OccupancyMap {
 public:
  explicit OccupancyMap(double resolution = 0.15, double l_min = -2.0, double l_max = 3.5,
                        double occupied_threshold = 0.5)
      : resolution_(resolution), l_min_(l_min), l_max_(l_max),
        occupied_threshold_(occupied_threshold) {
    if (!(resolution > 0.0)) throw std::invalid_argument("occupancy map: resolution must be > 0");
    if (!(l_min < l_max)) throw std::invalid_argument("occupancy map: clamp bounds inverted");
  }

  double resolution() const { return resolution_; }
  double l_min() const { return l_min_; }
  double l_max() const { return l_max_; }
  double occupied_threshold() const { return occupied_threshold_; }

  const std::unordered_map<VoxelKey, double, VoxelKeyHash>& cells() const { return cells_; }

  double logodds(const VoxelKey& key) const {
    const auto it = cells_.find(key);
    return it == cells_.end() ? 0.0 : it->second;
  }

  bool occupied(const VoxelKey& key) const {
    return logodds_to_probability(logodds(key)) > occupied_threshold_;
  }

  std::size_t occupied_count() const {
    std::size_t n = 0;
    for (const auto& [key, l] : cells_)
      if (logodds_to_probability(l) > occupied_threshold_) ++n;
    return n;
  }

  void update(const VoxelKey& key, double delta) {
    double& l = cells_[key];
    l = std::clamp(l + delta, l_min_, l_max_);
  }

  VoxelKey key_of(const Point3& p) const { return voxel_key_of(p, resolution_); }

 private:
  double resolution_, l_min_, l_max_, occupied_threshold_;
  std::unordered_map<VoxelKey, double, VoxelKeyHash> cells_;
};

namespace detail {

/// Exact integer voxel walk from `from` to `to` (Amanatides-Woo). Visits the
/// voxel containing `from` and every traversed voxel strictly before the one
/// containing `to`; the endpoint voxel is not emitted.
template <typename Visit>
void walk_ray(const Point3& from, const Point3& to, double resolution, Visit&& visit) {
  VoxelKey cur = voxel_key_of(from, resolution);
  const VoxelKey end = voxel_key_of(to, resolution);
  if (cur == end) return;

  const Point3 d = to - from;
  std::int64_t step[3];
  double t_max[3], t_delta[3];
  const std::int64_t cur_arr_init[3] = {cur.i, cur.j, cur.k};
  for (int a = 0; a < 3; ++a) {
    if (d[a] > 0.0) {
      step[a] = 1;
      t_max[a] = ((static_cast<double>(cur_arr_init[a]) + 1.0) * resolution - from[a]) / d[a];
      t_delta[a] = resolution / d[a];
    } else if (d[a] < 0.0) {
      step[a] = -1;
      t_max[a] = (static_cast<double>(cur_arr_init[a]) * resolution - from[a]) / d[a];
      t_delta[a] = -resolution / d[a];
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  const std::int64_t max_steps =
      std::abs(end.i - cur.i) + std::abs(end.j - cur.j) + std::abs(end.k - cur.k) + 3;
  std::int64_t* cur_arr[3] = {&cur.i, &cur.j, &cur.k};
  for (std::int64_t s = 0; s < max_steps && !(cur == end); ++s) {
    visit(cur);
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    *cur_arr[axis] += step[axis];
    t_max[axis] += t_delta[axis];
  }
}

}  // namespace detail

/// Ray-cast update: for each return, every voxel the ray traverses from the
/// sensor origin receives l_miss and the endpoint voxel receives l_hit.
/// Returns with near-zero range are skipped. The scan must be in the sensor
/// frame and already FoV-filtered by the caller.
inline void insert_lidar_scan(OccupancyMap& map, const PointCloud& scan, const Pose& pose,
                              const LidarSensorConfig& cfg = {}) {
  if (!pose.unit_rotation())
    throw std::invalid_argument("insert_lidar_scan: pose rotation is not a unit quaternion");
  const Point3 origin = pose.translation;
  for (const Point3& p : scan.points) {
    if (p.squaredNorm() < 1e-24) continue;  // zero-length ray
    const Point3 endpoint = pose.apply(p);
    detail::walk_ray(origin, endpoint, map.resolution(),
                     [&](const VoxelKey& key) { map.update(key, cfg.l_miss); });
    map.update(map.key_of(endpoint), cfg.l_hit);
  }
}

/// Explicit radar update, no ray casting: classify every voxel whose center
/// lies inside the sensor frustum. Voxels within `hit_radius` (Chebyshev, in
/// voxel units) of a gated return's voxel get l_hit, all other in-FoV voxels
/// get l_miss. Returns outside the frustum are treated as absent.
inline void insert_radar_scan(OccupancyMap& map, const PointCloud& scan, const Pose& pose,
                              const RadarSensorConfig& cfg) {
  cfg.validate();
  if (!pose.unit_rotation())
    throw std::invalid_argument("insert_radar_scan: pose rotation is not a unit quaternion");

  std::unordered_set<VoxelKey, VoxelKeyHash> hit_keys;
  for (const Point3& p : scan.points) {
    if (!detail::in_fov(p, cfg.azimuth_fov, cfg.elevation_fov, cfg.max_range)) continue;
    const VoxelKey c = map.key_of(pose.apply(p));
    for (std::int64_t di = -cfg.hit_radius; di <= cfg.hit_radius; ++di)
      for (std::int64_t dj = -cfg.hit_radius; dj <= cfg.hit_radius; ++dj)
        for (std::int64_t dk = -cfg.hit_radius; dk <= cfg.hit_radius; ++dk)
          hit_keys.insert({c.i + di, c.j + dj, c.k + dk});
  }

  const double res = map.resolution();
  // Tight sensor-frame bounding box of the frustum, transformed to the
  // world: for half-angles <= 90 degrees the frustum stays in x >= 0 with
  // |y| <= R sin(az/2) and |z| <= R sin(el/2).
  const double r = cfg.max_range;
  const double half_az = 0.5 * cfg.azimuth_fov * detail::kDegToRad;
  const double half_el = 0.5 * cfg.elevation_fov * detail::kDegToRad;
  const double x0 = cfg.azimuth_fov > 180.0 ? -r : 0.0;
  const double ymax = cfg.azimuth_fov >= 180.0 ? r : r * std::sin(half_az);
  const double zmax = cfg.elevation_fov >= 180.0 ? r : r * std::sin(half_el);
  Point3 world_min = pose.translation, world_max = pose.translation;
  for (const double x : {x0, r})
    for (const double y : {-ymax, ymax})
      for (const double z : {-zmax, zmax}) {
        const Point3 corner = pose.apply({x, y, z});
        world_min = world_min.cwiseMin(corner);
        world_max = world_max.cwiseMax(corner);
      }
  const VoxelKey lo = voxel_key_of(world_min, res);
  const VoxelKey hi = voxel_key_of(world_max, res);
  for (std::int64_t i = lo.i; i <= hi.i; ++i) {
    for (std::int64_t j = lo.j; j <= hi.j; ++j) {
      for (std::int64_t k = lo.k; k <= hi.k; ++k) {
        const VoxelKey key{i, j, k};
        const Point3 center_sensor = pose.apply_inverse(voxel_center(key, res));
        if (!detail::in_fov(center_sensor, cfg.azimuth_fov, cfg.elevation_fov, cfg.max_range))
          continue;
        map.update(key, hit_keys.count(key) ? cfg.l_hit : cfg.l_miss);
      }
    }
  }
}

/// Centers of all occupied voxels, sorted lexicographically by key.
inline PointCloud occupied_centers(const OccupancyMap& map) {
  std::vector<VoxelKey> keys;
  keys.reserve(map.cells().size());
  for (const auto& [key, l] : map.cells())
    if (logodds_to_probability(l) > map.occupied_threshold()) keys.push_back(key);
  std::sort(keys.begin(), keys.end());
  PointCloud out(Frame::world);
  out.points.reserve(keys.size());
  for (const VoxelKey& key : keys) out.points.push_back(voxel_center(key, map.resolution()));
  return out;
}

/// |occupied lidar voxels| / |occupied radar voxels|.
inline double map_ratio(const OccupancyMap& lidar, const OccupancyMap& radar) {
  if (lidar.cells().empty() || radar.cells().empty())
    throw std::invalid_argument("map_ratio: both maps must be non-empty");
  const std::size_t r = radar.occupied_count();
  if (r == 0) throw std::runtime_error("map_ratio: division by zero (no occupied radar voxels)");
  return static_cast<double>(lidar.occupied_count()) / static_cast<double>(r);
}

/// Rows of `i,j,k,logodds` sorted by key, one voxel per line.
inline std::vector<std::pair<VoxelKey, double>> sorted_cells(const OccupancyMap& map) {
  std::vector<std::pair<VoxelKey, double>> rows(map.cells().begin(), map.cells().end());
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return rows;
}

}  // namespace rmap
