#pragma once

#include "rmap/geom.hpp"
#include "rmap/kdtree.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmap {

enum class ChamferNorm {
  l1_euclidean,  // plain Euclidean point-to-point distances
  l2_squared     // squared Euclidean distances
};

/// Symmetric Chamfer distance: mean nearest-neighbor distance from P to G
/// plus mean nearest-neighbor distance from G to P. Raw value; the reporting
/// layer applies the x1000 convention.
inline double chamfer(const PointCloud& pred, const PointCloud& gt, ChamferNorm norm) {
  if (pred.empty() || gt.empty())
    throw std::invalid_argument("chamfer: both clouds must be non-empty");
  const KdTree pred_index(pred);
  const KdTree gt_index(gt);
  const bool squared = norm == ChamferNorm::l2_squared;

  double sum_pg = 0.0;
  for (const Point3& p : pred.points) {
    const double d2 = squared_distance(p, gt.points[gt_index.nearest(p)]);
    sum_pg += squared ? d2 : std::sqrt(d2);
  }
  double sum_gp = 0.0;
  for (const Point3& g : gt.points) {
    const double d2 = squared_distance(g, pred.points[pred_index.nearest(g)]);
    sum_gp += squared ? d2 : std::sqrt(d2);
  }
  return sum_pg / static_cast<double>(pred.size()) + sum_gp / static_cast<double>(gt.size());
}

/// F-Score at distance threshold d: harmonic mean of precision (fraction of
/// predicted points strictly within d of ground truth) and recall (fraction
/// of ground-truth points strictly within d of a prediction). Returns 0 when
/// precision + recall is 0.
inline double fscore(const PointCloud& pred, const PointCloud& gt, double d) {
  if (pred.empty() || gt.empty())
    throw std::invalid_argument("fscore: both clouds must be non-empty");
  if (!(d > 0.0)) throw std::invalid_argument("fscore: threshold d must be > 0");
  const KdTree pred_index(pred);
  const KdTree gt_index(gt);
  const double d2 = d * d;

  std::size_t close_p = 0;
  for (const Point3& p : pred.points)
    if (squared_distance(p, gt.points[gt_index.nearest(p)]) < d2) ++close_p;
  std::size_t close_g = 0;
  for (const Point3& g : gt.points)
    if (squared_distance(g, pred.points[pred_index.nearest(g)]) < d2) ++close_g;

  const double precision = static_cast<double>(close_p) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(close_g) / static_cast<double>(gt.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

/// Deviation distribution: for every ground-truth point, the distance to the
/// nearest predicted point, summarized at the requested percentiles with the
/// nearest-rank method (ceil(p/100 * n)-th order statistic).
inline std::map<double, double> deviation_distribution(const PointCloud& pred,
                                                       const PointCloud& gt,
                                                       const std::vector<double>& percentiles) {
  if (pred.empty() || gt.empty())
    throw std::invalid_argument("deviation_distribution: both clouds must be non-empty");
  for (double p : percentiles)
    if (!(p > 0.0 && p <= 100.0))
      throw std::invalid_argument("deviation_distribution: percentiles must be in (0, 100]");

  const KdTree pred_index(pred);
  std::vector<double> deviations;
  deviations.reserve(gt.size());
  for (const Point3& g : gt.points)
    deviations.push_back(std::sqrt(squared_distance(g, pred.points[pred_index.nearest(g)])));
  std::sort(deviations.begin(), deviations.end());

  std::map<double, double> out;
  const double n = static_cast<double>(deviations.size());
  for (double p : percentiles) {
    const std::size_t rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
    out[p] = deviations[std::max<std::size_t>(rank, 1) - 1];
  }
  return out;
}

/// Full evaluation of one predicted cloud against one ground-truth cloud.
/// CD values carry the x1000 reporting scale.
struct MetricsReport {
  std::string frame = "world";  // "world" or "normalized"
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;
  double cd_l1 = 0.0;  // x1000
  double cd_l2 = 0.0;  // x1000
  double fscore = 0.0;
  std::map<double, double> deviation_percentiles;  // percentile -> meters

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["frame"] = frame;
    j["n_pred"] = n_pred;
    j["n_gt"] = n_gt;
    j["cd_l1"] = cd_l1;
    j["cd_l2"] = cd_l2;
    j["fscore"] = fscore;
    nlohmann::ordered_json dev;
    for (const auto& [p, v] : deviation_percentiles) {
      std::ostringstream key;
      key << p;
      dev[key.str()] = v;
    }
    j["deviation_percentiles"] = dev;
    return j;
  }

  /// CSV row in table column order: cd_l1, cd_l2, then percentiles ascending.
  std::string csv_row() const {
    std::ostringstream os;
    os.precision(17);
    os << cd_l1 << "," << cd_l2;
    for (const auto& [p, v] : deviation_percentiles) os << "," << v;
    return os.str();
  }
};

inline const std::vector<double>& default_percentiles() {
  static const std::vector<double> p{50.0, 75.0, 90.0, 95.0};
  return p;
}

inline MetricsReport evaluate(const PointCloud& pred, const PointCloud& gt,
                              const std::string& frame = "world", double fscore_d = 0.01) {
  MetricsReport r;
  r.frame = frame;
  r.n_pred = pred.size();
  r.n_gt = gt.size();
  r.cd_l1 = 1000.0 * chamfer(pred, gt, ChamferNorm::l1_euclidean);
  r.cd_l2 = 1000.0 * chamfer(pred, gt, ChamferNorm::l2_squared);
  r.fscore = fscore(pred, gt, fscore_d);
  r.deviation_percentiles = deviation_distribution(pred, gt, default_percentiles());
  return r;
}

}  // namespace rmap
