#pragma once

#include "rmap/geom.hpp"
#include "rmap/occupancy.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rmap {

/// Similarity transform between the world frame and a patch's normalized
/// frame: x_norm = (x - center) / scale.
struct PatchTransform {
  Point3 center = Point3::Zero();
  double scale = 1.0;

  Point3 to_normalized(const Point3& p) const { return (p - center) / scale; }
  Point3 to_world(const Point3& p) const { return p * scale + center; }
};

/// Anchors the patch at `anchor` and scales by the max distance from the
/// anchor, so the patch lands inside the unit ball. The returned transform
/// is what the manifest stores and what merge_predictions inverts.
inline std::pair<PointCloud, PatchTransform> normalize_patch(const PointCloud& patch,
                                                             const Point3& anchor) {
  if (patch.empty()) throw std::invalid_argument("normalize_patch: empty patch");
  double max_d = 0.0;
  for (const Point3& p : patch.points) max_d = std::max(max_d, distance(p, anchor));
  if (max_d <= 0.0)
    throw std::invalid_argument("normalize_patch: zero scale (all points at the anchor)");
  PatchTransform tf{anchor, max_d};
  PointCloud out(patch.frame);
  out.points.reserve(patch.size());
  for (const Point3& p : patch.points) out.points.push_back(tf.to_normalized(p));
  return {std::move(out), tf};
}

/// Applies an existing transform (e.g. the one from the paired lidar patch).
inline PointCloud normalize_with(const PointCloud& patch, const PatchTransform& tf) {
  PointCloud out(patch.frame);
  out.points.reserve(patch.size());
  for (const Point3& p : patch.points) out.points.push_back(tf.to_normalized(p));
  return out;
}

inline PointCloud denormalize(const PointCloud& patch, const PatchTransform& tf) {
  PointCloud out(Frame::world);
  out.points.reserve(patch.size());
  for (const Point3& p : patch.points) out.points.push_back(tf.to_world(p));
  return out;
}

/// Denormalizes every predicted patch into the world frame and merges them
/// with set semantics on the voxel grid: one center point per occupied
/// voxel, sorted by key. Idempotent and order-independent by construction.
inline PointCloud merge_predictions(
    const std::vector<std::pair<PointCloud, PatchTransform>>& patches, double resolution) {
  if (!(resolution > 0.0))
    throw std::invalid_argument("merge_predictions: resolution must be > 0");
  std::set<VoxelKey> keys;
  for (const auto& [patch, tf] : patches)
    for (const Point3& p : patch.points) keys.insert(voxel_key_of(tf.to_world(p), resolution));
  PointCloud out(Frame::world);
  out.points.reserve(keys.size());
  for (const VoxelKey& key : keys) out.points.push_back(voxel_center(key, resolution));
  return out;
}

}  // namespace rmap
