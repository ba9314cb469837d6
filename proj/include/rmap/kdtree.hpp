#pragma once

#include "rmap/geom.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rmap {

/// Balanced k-d tree over a point cloud. Queries are exact: results are
/// identical to a brute-force scan, including the tie rule (equal distances
/// resolve to the lowest insertion index). The tree keeps its own copy of
/// the points; queries are const and safe to run concurrently.
class KdTree {
 public:
  explicit KdTree(const PointCloud& cloud) : points_(cloud.points) {
    if (points_.empty()) throw std::invalid_argument("build_index: empty input");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(points_.size());
    root_ = build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Point3>& points() const { return points_; }

  /// Indices of the min(k, n) nearest neighbors of `query`, sorted by
  /// ascending distance; equal distances sort by ascending index.
  std::vector<std::size_t> knn_indices(const Point3& query, std::size_t k) const {
    if (k == 0) throw std::invalid_argument("knn: k must be >= 1");
    k = std::min(k, points_.size());
    std::vector<Candidate> heap;  // max-heap on (dist2, index)
    heap.reserve(k + 1);
    search(root_, query, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    std::vector<std::size_t> out(heap.size());
    for (std::size_t i = 0; i < heap.size(); ++i) out[i] = heap[i].index;
    return out;
  }

  PointCloud knn(const Point3& query, std::size_t k) const {
    const auto idx = knn_indices(query, k);
    PointCloud out(Frame::world);
    out.points.reserve(idx.size());
    for (std::size_t i : idx) out.points.push_back(points_[i]);
    return out;
  }

  /// Index of the single nearest neighbor.
  std::size_t nearest(const Point3& query) const { return knn_indices(query, 1)[0]; }

  double nearest_distance(const Point3& query) const {
    return distance(points_[nearest(query)], query);
  }

  /// Indices of all points with distance <= radius, ascending by index.
  std::vector<std::size_t> radius_indices(const Point3& query, double radius) const {
    std::vector<std::size_t> out;
    radius_search(root_, query, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    std::size_t point = 0;      // index into points_
    int axis = -1;              // -1 marks a leaf
    std::int64_t left = -1;
    std::int64_t right = -1;
  };

  struct Candidate {
    double dist2;
    std::size_t index;
    bool operator<(const Candidate& o) const {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };

  std::int64_t build(std::size_t lo, std::size_t hi) {
    if (lo >= hi) return -1;
    const std::size_t mid = lo + (hi - lo) / 2;
    int axis = 0;
    {
      Point3 mn = points_[order_[lo]], mx = points_[order_[lo]];
      for (std::size_t i = lo + 1; i < hi; ++i) {
        mn = mn.cwiseMin(points_[order_[i]]);
        mx = mx.cwiseMax(points_[order_[i]]);
      }
      const Point3 ext = mx - mn;
      if (ext.y() > ext.x()) axis = 1;
      if (ext.z() > ext[axis]) axis = 2;
    }
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [this, axis](std::size_t a, std::size_t b) {
                       const double ca = points_[a][axis], cb = points_[b][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    Node n;
    n.point = order_[mid];
    n.axis = axis;
    nodes_.push_back(n);
    const std::int64_t id = static_cast<std::int64_t>(nodes_.size()) - 1;
    const std::int64_t l = build(lo, mid);
    const std::int64_t r = build(mid + 1, hi);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void consider(const Point3& query, std::size_t point_index, std::size_t k,
                std::vector<Candidate>& heap) const {
    const Candidate c{squared_distance(points_[point_index], query), point_index};
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(std::int64_t node_id, const Point3& query, std::size_t k,
              std::vector<Candidate>& heap) const {
    if (node_id < 0) return;
    const Node& n = nodes_[node_id];
    consider(query, n.point, k, heap);
    const double delta = query[n.axis] - points_[n.point][n.axis];
    const std::int64_t near = delta < 0.0 ? n.left : n.right;
    const std::int64_t far = delta < 0.0 ? n.right : n.left;
    search(near, query, k, heap);
    // Visit the far side unless it provably cannot improve the result.
    // "Cannot improve" must be strict: an equal distance with a lower index
    // still wins, so equality descends.
    if (heap.size() < k || delta * delta <= heap.front().dist2)
      search(far, query, k, heap);
  }

  void radius_search(std::int64_t node_id, const Point3& query, double r2,
                     std::vector<std::size_t>& out) const {
    if (node_id < 0) return;
    const Node& n = nodes_[node_id];
    if (squared_distance(points_[n.point], query) <= r2) out.push_back(n.point);
    const double delta = query[n.axis] - points_[n.point][n.axis];
    const std::int64_t near = delta < 0.0 ? n.left : n.right;
    const std::int64_t far = delta < 0.0 ? n.right : n.left;
    radius_search(near, query, r2, out);
    if (delta * delta <= r2) radius_search(far, query, r2, out);
  }

  std::vector<Point3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::int64_t root_ = -1;
};

using SpatialIndex = KdTree;

inline SpatialIndex build_index(const PointCloud& cloud) { return SpatialIndex(cloud); }

inline PointCloud knn(const SpatialIndex& index, const Point3& query, std::size_t k) {
  return index.knn(query, k);
}

}  // namespace rmap
