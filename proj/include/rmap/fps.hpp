#pragma once

#include "rmap/geom.hpp"

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace rmap {

/// Greedy farthest-point sampling. Starting from `start`, repeatedly adds the
/// point with the largest distance to the already-selected set; ties resolve
/// to the lowest index. Returns the m selected indices in selection order.
inline std::vector<std::size_t> fps_indices(const std::vector<Point3>& pts,
                                            std::size_t m, std::size_t start = 0) {
  const std::size_t n = pts.size();
  if (m == 0 || m > n)
    throw std::invalid_argument("fps: m must satisfy 1 <= m <= |cloud|");
  if (start >= n) throw std::invalid_argument("fps: start index out of range");

  std::vector<std::size_t> selected;
  selected.reserve(m);
  selected.push_back(start);

  std::vector<bool> taken(n, false);
  taken[start] = true;
  std::vector<double> min_d2(n);
  for (std::size_t i = 0; i < n; ++i) min_d2[i] = squared_distance(pts[i], pts[start]);

  while (selected.size() < m) {
    // Argmax over the not-yet-selected points; duplicates of selected points
    // carry distance 0 but must still be picked exactly once each.
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    selected.push_back(best);
    taken[best] = true;
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 = squared_distance(pts[i], pts[best]);
      if (d2 < min_d2[i]) min_d2[i] = d2;
    }
  }
  return selected;
}

inline PointCloud fps(const PointCloud& cloud, std::size_t m, std::size_t start = 0) {
  const auto idx = fps_indices(cloud.points, m, start);
  PointCloud out(cloud.frame);
  out.points.reserve(idx.size());
  for (std::size_t i : idx) out.points.push_back(cloud.points[i]);
  return out;
}

}  // namespace rmap
