#ifndef CTMQ_OPTIMIZER_HPP
#define CTMQ_OPTIMIZER_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "ctmq/model.hpp"
#include "ctmq/tensor.hpp"

namespace ctmq {

enum class OptimizerKind { sgd, adam };
enum class LrPolicy { constant, poly };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
inline std::string to_string(LrPolicy p) { return p == LrPolicy::constant ? "constant" : "poly"; }

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr_base = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(lr_base > 0.0)) throw Error("optimizer: lr_base must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw Error("optimizer: betas must lie in [0, 1)");
    if (weight_decay < 0.0) throw Error("optimizer: weight_decay must be non-negative");
    if (!(eps > 0.0)) throw Error("optimizer: eps must be positive");
  }
};

struct LrSchedule {
  LrPolicy policy = LrPolicy::poly;
  std::size_t total_epochs = 1;
};

/// Learning rate for 0-based `epoch` of a phase: lr_base (1 - epoch / total) under poly.
inline double lr_at(const LrSchedule& schedule, double lr_base, std::size_t epoch) {
  if (epoch > schedule.total_epochs) {
    throw Error("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(schedule.total_epochs) + "]");
  }
  if (schedule.policy == LrPolicy::constant) return lr_base;
  if (schedule.total_epochs == 0) throw Error("lr_at: poly schedule needs total_epochs > 0");
  return lr_base * (1.0 - static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs));
}

namespace detail {
template <class T>
const Tensor<T>& checked_grad(const std::string& name, const Var<T>& v) {
  if (!v.has_grad()) throw Error("optimizer: missing gradient for trainable parameter " + name);
  return v.grad();
}
}  // namespace detail

/// Plain gradient descent: w <- w - lr (g + weight_decay w).
template <class T>
void sgd_step(NamedParams<T>& params, double lr, double weight_decay = 0.0) {
  for (auto& [name, e] : params.entries()) {
    if (!e.trainable) continue;
    const auto& g = detail::checked_grad(name, e.var);
    auto& w = e.var.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= static_cast<T>(lr * (static_cast<double>(g[i]) + weight_decay * static_cast<double>(w[i])));
    }
  }
}

/// Moment buffers and step counter, keyed by parameter name.
struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor<float>> m;
  std::map<std::string, Tensor<float>> v;
};

/// Bias-corrected ADAM. Moments are kept in single precision regardless of T.
template <class T>
void adam_step(NamedParams<T>& params, AdamState& state, double lr, const OptimizerConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, e] : params.entries()) {
    if (!e.trainable) continue;
    const auto& g = detail::checked_grad(name, e.var);
    auto& w = e.var.mutable_value();
    auto [mit, m_new] = state.m.try_emplace(name, w.shape());
    auto [vit, v_new] = state.v.try_emplace(name, w.shape());
    auto& m = mit->second;
    auto& v = vit->second;
    if (m.shape() != w.shape() || v.shape() != w.shape()) throw Error("adam: moment shape mismatch for " + name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + cfg.weight_decay * static_cast<double>(w[i]);
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - step);
    }
  }
}

}  // namespace ctmq

#endif  // CTMQ_OPTIMIZER_HPP
