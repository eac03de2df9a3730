#pragma once

#include <cmath>
#include <map>
#include <string>

#include "ucgs/nn/graph.hpp"

namespace ucgs::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables clipping
};

template <class T>
double global_grad_norm(const ParamList<T>& params) {
  double sq = 0;
  for (const Param<T>* p : params) {
    if (p->frozen || p->grad.size() == 0) continue;
    sq += static_cast<double>(p->grad.squaredNorm());
  }
  return std::sqrt(sq);
}

/// Adam with bias correction and global-norm clipping. Moment estimates are
/// keyed by parameter name so they survive checkpoint round trips.
template <class T>
class Adam {
 public:
  struct Moments {
    Mat<T> m;
    Mat<T> v;
  };

  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long step_count() const noexcept { return t_; }

  /// Applies one update from the accumulated gradients, then clears them.
  /// Returns the pre-clip gradient norm.
  double step(const ParamList<T>& params) {
    const double norm = global_grad_norm(params);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    const double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(cfg_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(cfg_.eps);
    for (Param<T>* p : params) {
      if (p->frozen) continue;
      if (p->grad.size() == 0) p->zero_grad();
      Moments& s = state_[p->name];
      if (s.m.size() == 0) {
        s.m.setZero(p->value.rows(), p->value.cols());
        s.v.setZero(p->value.rows(), p->value.cols());
      }
      const auto gr = (p->grad.array() * static_cast<T>(clip)).eval();
      s.m.array() = b1 * s.m.array() + (T(1) - b1) * gr;
      s.v.array() = b2 * s.v.array() + (T(1) - b2) * gr.square();
      p->value.array() -= step * s.m.array() / ((s.v.array() * inv_c2).sqrt() + eps);
      p->zero_grad();
    }
    return norm;
  }

  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }
  void set_step_count(long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (Param<T>* p : params) p->zero_grad();
}

}  // namespace ucgs::nn
