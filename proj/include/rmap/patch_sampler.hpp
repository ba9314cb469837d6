#pragma once

#include "rmap/fps.hpp"
#include "rmap/geom.hpp"
#include "rmap/kdtree.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace rmap {

struct SamplerConfig {
  double seed_threshold = 1.5;          // p_Th, meters between seed points
  std::size_t lidar_patch_size = 8192;  // N^L
  std::size_t radar_patch_size = 2048;  // N^R
  double subpatch_factor = 4.0;         // a; anchors are sampled from the a*N^L ball
  std::size_t anchors_per_seed = 4;     // t

  std::size_t subpatch_size() const {
    return static_cast<std::size_t>(std::llround(subpatch_factor *
                                                 static_cast<double>(lidar_patch_size)));
  }

  void validate() const {
    if (!(seed_threshold > 0.0))
      throw std::invalid_argument("sampler config: seed_threshold must be > 0");
    if (radar_patch_size < 1 || lidar_patch_size < radar_patch_size)
      throw std::invalid_argument("sampler config: requires N^L >= N^R >= 1");
    if (!(subpatch_factor > 1.0))
      throw std::invalid_argument("sampler config: subpatch_factor must be > 1");
    if (anchors_per_seed < 1 || subpatch_size() < anchors_per_seed)
      throw std::invalid_argument("sampler config: requires a*N^L >= t >= 1");
  }
};

/// Co-located radar input patch and lidar ground-truth patch sharing one
/// anchor point drawn from the lidar map.
struct PatchPair {
  Point3 anchor;
  PointCloud radar_patch;
  PointCloud lidar_patch;
  std::size_t seed_index = 0;
};

/// Greedy scan of the trajectory in time order: the first pose is always a
/// seed; a later pose becomes one iff it is farther than p_th from every
/// seed kept so far.
inline PointCloud select_seed_points(const Trajectory& traj, double p_th) {
  if (traj.empty()) throw std::invalid_argument("select_seed_points: empty trajectory");
  PointCloud seeds(Frame::world);
  for (const Pose& pose : traj.poses) {
    bool keep = true;
    for (const Point3& s : seeds.points) {
      if (distance(pose.translation, s) <= p_th) {
        keep = false;
        break;
      }
    }
    if (keep) seeds.points.push_back(pose.translation);
  }
  return seeds;
}

namespace detail {

struct PointBits {
  std::uint64_t x, y, z;
  bool operator==(const PointBits& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct PointBitsHash {
  std::size_t operator()(const PointBits& b) const {
    std::uint64_t h = b.x * 0x9e3779b97f4a7c15ULL;
    h ^= b.y * 0xc2b2ae3d27d4eb4fULL;
    h ^= b.z * 0x165667b19e3779f9ULL;
    return static_cast<std::size_t>(h);
  }
};

inline PointBits point_bits(const Point3& p) {
  PointBits b;
  std::memcpy(&b.x, &p.x(), 8);
  std::memcpy(&b.y, &p.y(), 8);
  std::memcpy(&b.z, &p.z(), 8);
  return b;
}

}  // namespace detail

/// Joint trajectory-seeded patch extraction. For each seed: take the closest
/// a*N^L lidar points, farthest-point-sample t anchors starting from the
/// point nearest the seed, then cut an N^L lidar patch and an N^R radar
/// patch around each anchor. Patches saturate to the full cloud when a map
/// is smaller than the requested size; saturation is reported as a warning,
/// not an error.
inline std::vector<PatchPair> sample_patches(const PointCloud& lidar, const PointCloud& radar,
                                             const Trajectory& traj, const SamplerConfig& cfg,
                                             std::vector<std::string>* warnings = nullptr) {
  cfg.validate();
  if (lidar.empty() || radar.empty())
    throw std::invalid_argument("sample_patches: lidar and radar clouds must be non-empty");

  const auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  if (lidar.size() < cfg.lidar_patch_size)
    warn("lidar map smaller than N^L; lidar patches saturate to the full cloud");
  if (radar.size() < cfg.radar_patch_size)
    warn("radar map smaller than N^R; radar patches saturate to the full cloud");

  const KdTree lidar_index(lidar);
  const KdTree radar_index(radar);
  const PointCloud seeds = select_seed_points(traj, cfg.seed_threshold);

  std::vector<PatchPair> out;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const PointCloud sub = lidar_index.knn(seeds[s], cfg.subpatch_size());
    std::size_t t = cfg.anchors_per_seed;
    if (sub.size() < t) {
      warn("sub-patch smaller than t; anchor count saturates to " + std::to_string(sub.size()));
      t = sub.size();
    }
    // knn output is sorted by ascending distance, so index 0 is the sub-patch
    // point nearest the seed.
    const auto anchors = fps_indices(sub.points, t, 0);
    for (std::size_t a : anchors) {
      PatchPair pair;
      pair.anchor = sub[a];
      pair.seed_index = s;
      pair.lidar_patch = lidar_index.knn(pair.anchor, cfg.lidar_patch_size);
      pair.radar_patch = radar_index.knn(pair.anchor, cfg.radar_patch_size);
      out.push_back(std::move(pair));
    }
  }
  return out;
}

/// Fraction of lidar map points that appear in at least one lidar patch
/// (bit-exact coordinate membership).
inline double lidar_coverage_fraction(const PointCloud& lidar,
                                      const std::vector<PatchPair>& patches) {
  if (lidar.empty()) return 1.0;
  std::unordered_set<detail::PointBits, detail::PointBitsHash> covered;
  for (const PatchPair& p : patches)
    for (const Point3& q : p.lidar_patch.points) covered.insert(detail::point_bits(q));
  std::size_t hit = 0;
  for (const Point3& q : lidar.points)
    if (covered.count(detail::point_bits(q))) ++hit;
  return static_cast<double>(hit) / static_cast<double>(lidar.size());
}

}  // namespace rmap
