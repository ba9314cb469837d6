#pragma once

#include "rmap/tensor.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmap {

/// Named parameter tensors. std::map keeps iteration order deterministic,
/// which makes optimizer updates and checkpoints reproducible.
using ParamMap = std::map<std::string, Tensor>;

inline bool has_grad(const Tensor& t) { return t.node()->grad.size() == t.size(); }

inline void zero_grads(ParamMap& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

/// Learning-rate decay of `rate` per `period` epochs. Continuous form uses a
/// real-valued exponent (the default); stepwise floors the epoch ratio.
inline double lr_schedule(std::size_t epoch, double base_lr, double rate = 0.9,
                          double period = 20.0, bool continuous = true) {
  const double e = static_cast<double>(epoch) / period;
  return base_lr * std::pow(rate, continuous ? e : std::floor(e));
}

/// AdamW with decoupled weight decay: the shrink p -= lr*wd*p is applied
/// separately from the moment-based update.
class AdamW {
 public:
  struct Config {
    double lr = 1e-5;
    double weight_decay = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamW() : cfg_(Config()) {}
  explicit AdamW(const Config& cfg) : cfg_(cfg) {}

  Config& config() { return cfg_; }
  const Config& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }

  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }

  void step(ParamMap& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, t] : params) {
      if (!has_grad(t))
        throw std::runtime_error("adamw_step: parameter '" + name + "' has no gradient");
      Moments& mo = state_[name];
      if (mo.m.size() != t.size()) {
        mo.m.assign(t.size(), 0.0);
        mo.v.assign(t.size(), 0.0);
      }
      auto& p = t.value_mut();
      const auto& g = t.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= cfg_.lr * cfg_.weight_decay * p[i];
        mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g[i];
        mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  Config cfg_;
  std::size_t step_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace rmap
