#pragma once

#include "rmap/fps.hpp"
#include "rmap/geom.hpp"
#include "rmap/kdtree.hpp"
#include "rmap/network.hpp"
#include "rmap/tensor.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace rmap {

/// Differentiable symmetric Chamfer term between a predicted [n x 3] tensor
/// and a fixed ground-truth cloud, using plain Euclidean distances:
///   (1/n) sum_p min_g |p-g|  +  (1/m) sum_g min_p |p-g|.
/// Implemented as one fused graph node; the pull-back routes each distance's
/// gradient to the predicted point that realized it.
inline Tensor chamfer_loss(const Tensor& pred, const PointCloud& gt) {
  if (pred.rank() != 2 || pred.dim(1) != 3)
    throw std::invalid_argument("chamfer_loss: expected [n x 3] prediction, got " +
                                shape_str(pred.shape()));
  if (gt.empty()) throw std::invalid_argument("chamfer_loss: empty ground truth");

  const std::size_t n = pred.dim(0);
  const std::size_t m = gt.size();
  const PointCloud pred_cloud = tensor_to_cloud(pred);
  const KdTree gt_index(gt);
  const KdTree pred_index(pred_cloud);

  // argmin pairs saved for the backward pass
  auto fwd_nn = std::make_shared<std::vector<std::size_t>>(n);   // pred i -> gt index
  auto bwd_nn = std::make_shared<std::vector<std::size_t>>(m);   // gt j -> pred index
  auto gt_copy = std::make_shared<std::vector<Point3>>(gt.points);

  double term1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t g = gt_index.nearest(pred_cloud[i]);
    (*fwd_nn)[i] = g;
    term1 += distance(pred_cloud[i], gt.points[g]);
  }
  double term2 = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t p = pred_index.nearest(gt.points[j]);
    (*bwd_nn)[j] = p;
    term2 += distance(pred_cloud[p], gt.points[j]);
  }
  const double value = term1 / static_cast<double>(n) + term2 / static_cast<double>(m);

  Tensor out = Tensor::make({1}, {value}, pred.requires_grad());
  if (pred.requires_grad()) {
    auto parent = pred.node();
    out.node()->parents = {parent};
    out.node()->backprop = [parent, fwd_nn, bwd_nn, gt_copy, n, m](Tensor::Node& self) {
      parent->ensure_grad();
      const double g = self.grad[0];
      const double wn = g / static_cast<double>(n);
      const double wm = g / static_cast<double>(m);
      auto add_grad = [&](std::size_t pred_i, const Point3& target, double w) {
        const double px = parent->value[pred_i * 3];
        const double py = parent->value[pred_i * 3 + 1];
        const double pz = parent->value[pred_i * 3 + 2];
        const double dx = px - target.x(), dy = py - target.y(), dz = pz - target.z();
        const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (d < 1e-12) return;  // |.| has no gradient at zero
        parent->grad[pred_i * 3] += w * dx / d;
        parent->grad[pred_i * 3 + 1] += w * dy / d;
        parent->grad[pred_i * 3 + 2] += w * dz / d;
      };
      for (std::size_t i = 0; i < n; ++i) add_grad(i, (*gt_copy)[(*fwd_nn)[i]], wn);
      for (std::size_t j = 0; j < m; ++j) add_grad((*bwd_nn)[j], (*gt_copy)[j], wm);
    };
  }
  return out;
}

/// Per-stage ground truths G_i: the ground-truth cloud downsampled to each
/// stage size by farthest-point sampling. The FPS start is canonical
/// (nearest the centroid) so the loss does not depend on gt point order.
inline std::vector<PointCloud> chamfer_targets(const PointCloud& gt,
                                               const std::vector<std::size_t>& stage_sizes) {
  if (gt.empty()) throw std::invalid_argument("chamfer_targets: empty ground truth");
  for (std::size_t s : stage_sizes)
    if (s > gt.size())
      throw std::invalid_argument("chamfer_targets: ground truth has " +
                                  std::to_string(gt.size()) + " points, stage needs " +
                                  std::to_string(s));
  const std::size_t start = canonical_start_index(gt.points);
  std::vector<PointCloud> targets;
  targets.reserve(stage_sizes.size());
  for (std::size_t s : stage_sizes) targets.push_back(fps(gt, s, start));
  return targets;
}

/// J = sum_i CD_i with precomputed per-stage targets.
inline Tensor total_loss_with_targets(const std::vector<Tensor>& stages,
                                      const std::vector<PointCloud>& targets) {
  if (stages.empty() || stages.size() != targets.size())
    throw std::invalid_argument("total_loss: stage/target count mismatch");
  Tensor j = chamfer_loss(stages[0], targets[0]);
  for (std::size_t i = 1; i < stages.size(); ++i)
    j = add(j, chamfer_loss(stages[i], targets[i]));
  return j;
}

/// J = sum_i CD_i(P_c,i, fps(gt, |P_c,i|)).
inline Tensor total_loss(const std::vector<Tensor>& stages, const PointCloud& gt) {
  std::vector<std::size_t> sizes;
  sizes.reserve(stages.size());
  for (const Tensor& s : stages) sizes.push_back(s.dim(0));
  return total_loss_with_targets(stages, chamfer_targets(gt, sizes));
}

}  // namespace rmap
