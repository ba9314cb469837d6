#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace rmap {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense 64-bit tensor participating in reverse-mode differentiation.
/// Each operation records its inputs and a pull-back closure; backward()
/// walks the recorded graph once in reverse topological order. Graphs are
/// rebuilt every step: dropping the loss tensor frees all intermediates,
/// only leaf parameters persist across steps.
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
  };

  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), false);
  }

  static Tensor parameter(Shape shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), true);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return make({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape[axis]; }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& value_mut() { return node_->value; }
  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::vector<double>& grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor has " + shape_str(shape()));
    return node_->value[0];
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  std::shared_ptr<Node> node() const { return node_; }

  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  static Tensor make(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return from_node(std::move(n));
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap mat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline MatMap mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline Tensor unary(const Tensor& a, Shape out_shape, std::vector<double> out_value,
                    std::function<void(Tensor::Node&, Tensor::Node&)> pull) {
  Tensor out = Tensor::make(std::move(out_shape), std::move(out_value), a.requires_grad());
  if (a.requires_grad()) {
    auto pa = a.node();
    out.node()->parents = {pa};
    out.node()->backprop = [pa, pull = std::move(pull)](Tensor::Node& self) {
      pa->ensure_grad();
      pull(self, *pa);
    };
  }
  return out;
}

inline Tensor binary(const Tensor& a, const Tensor& b, Shape out_shape,
                     std::vector<double> out_value,
                     std::function<void(Tensor::Node&, Tensor::Node&, Tensor::Node&)> pull) {
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor out = Tensor::make(std::move(out_shape), std::move(out_value), rg);
  if (rg) {
    auto pa = a.node();
    auto pb = b.node();
    out.node()->parents = {pa, pb};
    out.node()->backprop = [pa, pb, pull = std::move(pull)](Tensor::Node& self) {
      pa->ensure_grad();
      pb->ensure_grad();
      pull(self, *pa, *pb);
    };
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  detail::mat(out, m, n).noalias() = detail::mat(a.value(), m, k) * detail::mat(b.value(), k, n);
  return detail::binary(a, b, {m, n}, std::move(out),
                        [m, k, n](Tensor::Node& self, Tensor::Node& na, Tensor::Node& nb) {
                          const auto dc = detail::mat(self.grad, m, n);
                          if (na.requires_grad)
                            detail::mat(na.grad, m, k).noalias() +=
                                dc * detail::mat(nb.value, k, n).transpose();
                          if (nb.requires_grad)
                            detail::mat(nb.grad, k, n).noalias() +=
                                detail::mat(na.value, m, k).transpose() * dc;
                        });
}

/// Elementwise addition; a rank-1 right operand broadcasts across the rows
/// of a rank-2 left operand (bias add).
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.value());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return detail::binary(a, b, a.shape(), std::move(out),
                          [](Tensor::Node& self, Tensor::Node& na, Tensor::Node& nb) {
                            if (na.requires_grad)
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                na.grad[i] += self.grad[i];
                            if (nb.requires_grad)
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                nb.grad[i] += self.grad[i];
                          });
  }
  if (a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0)) {
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.value());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b.value()[j];
    return detail::binary(a, b, a.shape(), std::move(out),
                          [m, n](Tensor::Node& self, Tensor::Node& na, Tensor::Node& nb) {
                            if (na.requires_grad)
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                na.grad[i] += self.grad[i];
                            if (nb.requires_grad)
                              for (std::size_t i = 0; i < m; ++i)
                                for (std::size_t j = 0; j < n; ++j)
                                  nb.grad[j] += self.grad[i * n + j];
                          });
  }
  throw std::invalid_argument("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("sub: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::binary(a, b, a.shape(), std::move(out),
                        [](Tensor::Node& self, Tensor::Node& na, Tensor::Node& nb) {
                          if (na.requires_grad)
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              na.grad[i] += self.grad[i];
                          if (nb.requires_grad)
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              nb.grad[i] -= self.grad[i];
                        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  std::vector<double> out(a.value());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::binary(a, b, a.shape(), std::move(out),
                        [](Tensor::Node& self, Tensor::Node& na, Tensor::Node& nb) {
                          if (na.requires_grad)
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              na.grad[i] += self.grad[i] * nb.value[i];
                          if (nb.requires_grad)
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              nb.grad[i] += self.grad[i] * na.value[i];
                        });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.value());
  for (double& v : out) v *= c;
  return detail::unary(a, a.shape(), std::move(out), [c](Tensor::Node& self, Tensor::Node& na) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += c * self.grad[i];
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.value());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return detail::unary(a, a.shape(), std::move(out), [](Tensor::Node& self, Tensor::Node& na) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (na.value[i] > 0.0) na.grad[i] += self.grad[i];
  });
}

/// Row-wise softmax of a rank-2 tensor. `axis` must address the last axis.
inline Tensor softmax(const Tensor& a, int axis = -1) {
  if (a.rank() != 2 || !(axis == -1 || axis == 1))
    throw std::invalid_argument("softmax: expected rank-2 input and last axis, got " +
                                shape_str(a.shape()) + " axis " + std::to_string(axis));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.value().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      sum += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
  }
  return detail::unary(a, a.shape(), std::move(out),
                       [m, n](Tensor::Node& self, Tensor::Node& na) {
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* y = self.value.data() + i * n;
                           const double* dy = self.grad.data() + i * n;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                           for (std::size_t j = 0; j < n; ++j)
                             na.grad[i * n + j] += y[j] * (dy[j] - dot);
                         }
                       });
}

/// Per-row layer normalization with learned gain and bias.
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  if (a.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != a.dim(1) ||
      beta.dim(0) != a.dim(1))
    throw std::invalid_argument("layer_norm: incompatible shapes " + shape_str(a.shape()) + ", " +
                                shape_str(gamma.shape()) + ", " + shape_str(beta.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_sigma = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.value().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      (*xhat)[i * n + j] = (row[j] - mean) * inv;
      out[i * n + j] = gamma.value()[j] * (*xhat)[i * n + j] + beta.value()[j];
    }
  }

  const bool rg = a.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Tensor result = Tensor::make({m, n}, std::move(out), rg);
  if (rg) {
    auto pa = a.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    result.node()->parents = {pa, pg, pb};
    result.node()->backprop = [pa, pg, pb, xhat, inv_sigma, m, n](Tensor::Node& self) {
      pa->ensure_grad();
      pg->ensure_grad();
      pb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* dy = self.grad.data() + i * n;
        const double* xh = xhat->data() + i * n;
        if (pg->requires_grad || pb->requires_grad) {
          for (std::size_t j = 0; j < n; ++j) {
            pg->grad[j] += dy[j] * xh[j];
            pb->grad[j] += dy[j];
          }
        }
        if (pa->requires_grad) {
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxhat = dy[j] * pg->value[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xh[j];
          }
          mean_dxhat /= static_cast<double>(n);
          mean_dxhat_xhat /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double dxhat = dy[j] * pg->value[j];
            pa->grad[i * n + j] +=
                (*inv_sigma)[i] * (dxhat - mean_dxhat - xh[j] * mean_dxhat_xhat);
          }
        }
      }
    };
  }
  return result;
}

/// Concatenation of rank-2 tensors along axis 0 or 1 (rank-1 along axis 0).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (!((rank == 2 && (axis == 0 || axis == 1)) || (rank == 1 && axis == 0)))
    throw std::invalid_argument("concat: unsupported rank/axis");

  Shape out_shape = parts[0].shape();
  std::size_t total = parts[0].dim(static_cast<std::size_t>(axis));
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != rank)
      throw std::invalid_argument("concat: rank mismatch at input " + std::to_string(p));
    for (std::size_t d = 0; d < rank; ++d)
      if (d != static_cast<std::size_t>(axis) && parts[p].dim(d) != out_shape[d])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(parts[p].shape()) +
                                    " vs " + shape_str(out_shape));
    total += parts[p].dim(static_cast<std::size_t>(axis));
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets(parts.size());
  if (axis == 0) {
    std::size_t pos = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = pos;
      std::copy(parts[p].value().begin(), parts[p].value().end(), out.begin() + pos);
      pos += parts[p].size();
    }
  } else {
    const std::size_t rows = out_shape[0];
    std::size_t col0 = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      offsets[p] = col0;
      const std::size_t cols = parts[p].dim(1);
      for (std::size_t i = 0; i < rows; ++i)
        std::copy(parts[p].value().begin() + i * cols, parts[p].value().begin() + (i + 1) * cols,
                  out.begin() + i * total + col0);
      col0 += cols;
    }
  }

  bool rg = false;
  for (const Tensor& t : parts) rg = rg || t.requires_grad();
  Tensor result = Tensor::make(out_shape, std::move(out), rg);
  if (rg) {
    std::vector<std::shared_ptr<Tensor::Node>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& t : parts) nodes.push_back(t.node());
    result.node()->parents = nodes;
    const std::size_t cols_total = rank == 2 ? out_shape[1] : 1;
    result.node()->backprop = [nodes, offsets, axis, cols_total](Tensor::Node& self) {
      for (std::size_t p = 0; p < nodes.size(); ++p) {
        auto& parent = *nodes[p];
        if (!parent.requires_grad) continue;
        parent.ensure_grad();
        if (axis == 0) {
          for (std::size_t i = 0; i < parent.value.size(); ++i)
            parent.grad[i] += self.grad[offsets[p] + i];
        } else {
          const std::size_t cols = parent.shape[1];
          const std::size_t rows = parent.shape[0];
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              parent.grad[i * cols + j] += self.grad[i * cols_total + offsets[p] + j];
        }
      }
    };
  }
  return result;
}

/// Row gather for rank-2 inputs (element gather for rank-1). Duplicate
/// indices are allowed; their gradients accumulate.
inline Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices) {
  if (a.rank() < 1 || a.rank() > 2)
    throw std::invalid_argument("gather: expected rank 1 or 2, got " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.rank() == 2 ? a.dim(1) : 1;
  for (std::size_t idx : indices)
    if (idx >= rows)
      throw std::invalid_argument("gather: index " + std::to_string(idx) + " out of range for " +
                                  shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  std::vector<double> out(indices.size() * cols);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy(a.value().begin() + indices[i] * cols, a.value().begin() + (indices[i] + 1) * cols,
              out.begin() + i * cols);
  return detail::unary(a, out_shape, std::move(out),
                       [indices, cols](Tensor::Node& self, Tensor::Node& na) {
                         for (std::size_t i = 0; i < indices.size(); ++i)
                           for (std::size_t j = 0; j < cols; ++j)
                             na.grad[indices[i] * cols + j] += self.grad[i * cols + j];
                       });
}

namespace detail {

enum class Reduce { sum, mean, max };

inline Tensor reduce_impl(const Tensor& a, int axis, Reduce kind) {
  const char* name = kind == Reduce::sum ? "reduce_sum" : kind == Reduce::mean ? "reduce_mean"
                                                                               : "reduce_max";
  // axis < 0: reduce everything to a scalar.
  if (axis < 0) {
    const std::size_t n = a.size();
    double v;
    auto arg = std::make_shared<std::size_t>(0);
    if (kind == Reduce::max) {
      v = a.value()[0];
      for (std::size_t i = 1; i < n; ++i)
        if (a.value()[i] > v) {
          v = a.value()[i];
          *arg = i;
        }
    } else {
      v = std::accumulate(a.value().begin(), a.value().end(), 0.0);
      if (kind == Reduce::mean) v /= static_cast<double>(n);
    }
    return unary(a, {1}, {v}, [kind, n, arg](Tensor::Node& self, Tensor::Node& na) {
      const double g = self.grad[0];
      if (kind == Reduce::max) {
        na.grad[*arg] += g;
      } else {
        const double w = kind == Reduce::mean ? g / static_cast<double>(n) : g;
        for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += w;
      }
    });
  }

  // Decompose the shape around the reduced axis: [outer, reduced, inner].
  const Shape& s = a.shape();
  if (static_cast<std::size_t>(axis) >= s.size())
    throw std::invalid_argument(std::string(name) + ": axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < static_cast<std::size_t>(axis); ++d) outer *= s[d];
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t red = s[static_cast<std::size_t>(axis)];

  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d)
    if (d != static_cast<std::size_t>(axis)) out_shape.push_back(s[d]);
  if (out_shape.empty()) out_shape = {1};

  std::vector<double> out(outer * inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == Reduce::max) argmax->assign(outer * inner, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * red * inner + in;
      if (kind == Reduce::max) {
        double best = a.value()[base];
        std::size_t best_r = 0;
        for (std::size_t r = 1; r < red; ++r) {
          const double v = a.value()[base + r * inner];
          if (v > best) {
            best = v;
            best_r = r;
          }
        }
        out[o * inner + in] = best;
        (*argmax)[o * inner + in] = best_r;
      } else {
        double sum = 0.0;
        for (std::size_t r = 0; r < red; ++r) sum += a.value()[base + r * inner];
        out[o * inner + in] = kind == Reduce::mean ? sum / static_cast<double>(red) : sum;
      }
    }
  }
  return unary(a, out_shape, std::move(out),
               [kind, outer, inner, red, argmax](Tensor::Node& self, Tensor::Node& na) {
                 for (std::size_t o = 0; o < outer; ++o) {
                   for (std::size_t in = 0; in < inner; ++in) {
                     const double g = self.grad[o * inner + in];
                     const std::size_t base = o * red * inner + in;
                     if (kind == Reduce::max) {
                       na.grad[base + (*argmax)[o * inner + in] * inner] += g;
                     } else {
                       const double w =
                           kind == Reduce::mean ? g / static_cast<double>(red) : g;
                       for (std::size_t r = 0; r < red; ++r) na.grad[base + r * inner] += w;
                     }
                   }
                 }
               });
}

}  // namespace detail

inline Tensor reduce_sum(const Tensor& a, int axis = -1) {
  return detail::reduce_impl(a, axis, detail::Reduce::sum);
}
inline Tensor reduce_mean(const Tensor& a, int axis = -1) {
  return detail::reduce_impl(a, axis, detail::Reduce::mean);
}
/// Max-reduction; ties route the gradient to the first (lowest-offset) max.
inline Tensor reduce_max(const Tensor& a, int axis = -1) {
  return detail::reduce_impl(a, axis, detail::Reduce::max);
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(new_shape));
  std::vector<double> out(a.value());
  return detail::unary(a, std::move(new_shape), std::move(out),
                       [](Tensor::Node& self, Tensor::Node& na) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           na.grad[i] += self.grad[i];
                       });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw std::invalid_argument("transpose: expected rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return detail::unary(a, {n, m}, std::move(out),
                       [m, n](Tensor::Node& self, Tensor::Node& na) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                             na.grad[i * n + j] += self.grad[j * m + i];
                       });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Populates grad for every requires_grad tensor reachable from `loss`.
/// Gradients accumulate additively across fan-out, so shared subexpressions
/// contribute once per use.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversing it yields a valid topological order.
  std::vector<Tensor::Node*> topo;
  std::unordered_set<Tensor::Node*> visited;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Tensor::Node* next = node->parents[child].get();
      ++child;
      if (next->requires_grad && !visited.count(next)) {
        visited.insert(next);
        stack.emplace_back(next, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (Tensor::Node* n : topo) n->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

}  // namespace rmap
