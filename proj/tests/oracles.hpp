#pragma once

// Brute-force reference implementations used as oracles. These deliberately
// avoid the library's spatial index and sampling code paths: everything here
// is a direct O(n^2) scan over the definitions.

#include "rmap/geom.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

using rmap::Point3;
using rmap::PointCloud;

inline double d2(const Point3& a, const Point3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

inline std::vector<std::size_t> knn(const std::vector<Point3>& pts, const Point3& q,
                                    std::size_t k) {
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double da = d2(pts[a], q), db = d2(pts[b], q);
    return da < db || (da == db && a < b);
  });
  order.resize(std::min(k, pts.size()));
  return order;
}

inline std::vector<std::size_t> fps(const std::vector<Point3>& pts, std::size_t m,
                                    std::size_t start) {
  std::vector<std::size_t> sel{start};
  std::vector<bool> taken(pts.size(), false);
  taken[start] = true;
  while (sel.size() < m) {
    std::size_t best = pts.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (taken[i]) continue;
      double mn = std::numeric_limits<double>::infinity();
      for (std::size_t s : sel) mn = std::min(mn, d2(pts[i], pts[s]));
      if (mn > best_d) {
        best_d = mn;
        best = i;
      }
    }
    sel.push_back(best);
    taken[best] = true;
  }
  return sel;
}

inline double nearest_distance2(const Point3& q, const std::vector<Point3>& pts) {
  double mn = std::numeric_limits<double>::infinity();
  for (const Point3& p : pts) mn = std::min(mn, d2(q, p));
  return mn;
}

inline double chamfer_l1(const PointCloud& pred, const PointCloud& gt) {
  double a = 0.0, b = 0.0;
  for (const Point3& p : pred.points) a += std::sqrt(nearest_distance2(p, gt.points));
  for (const Point3& g : gt.points) b += std::sqrt(nearest_distance2(g, pred.points));
  return a / static_cast<double>(pred.size()) + b / static_cast<double>(gt.size());
}

inline double chamfer_l2(const PointCloud& pred, const PointCloud& gt) {
  double a = 0.0, b = 0.0;
  for (const Point3& p : pred.points) a += nearest_distance2(p, gt.points);
  for (const Point3& g : gt.points) b += nearest_distance2(g, pred.points);
  return a / static_cast<double>(pred.size()) + b / static_cast<double>(gt.size());
}

inline double fscore(const PointCloud& pred, const PointCloud& gt, double d) {
  std::size_t cp = 0, cg = 0;
  for (const Point3& p : pred.points)
    if (std::sqrt(nearest_distance2(p, gt.points)) < d) ++cp;
  for (const Point3& g : gt.points)
    if (std::sqrt(nearest_distance2(g, pred.points)) < d) ++cg;
  const double precision = static_cast<double>(cp) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(cg) / static_cast<double>(gt.size());
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

inline std::map<double, double> deviation(const PointCloud& pred, const PointCloud& gt,
                                          const std::vector<double>& percentiles) {
  std::vector<double> devs;
  for (const Point3& g : gt.points) devs.push_back(std::sqrt(nearest_distance2(g, pred.points)));
  std::sort(devs.begin(), devs.end());
  std::map<double, double> out;
  for (double p : percentiles) {
    std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * devs.size()));
    if (rank < 1) rank = 1;
    out[p] = devs[rank - 1];
  }
  return out;
}

}  // namespace oracle
