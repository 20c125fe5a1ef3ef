#ifndef CTMQ_QUANTIZATION_HPP
#define CTMQ_QUANTIZATION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctmq/autodiff.hpp"
#include "ctmq/tensor.hpp"

namespace ctmq {

/// Bit depth that means "real-valued": every quantizer is the identity.
inline constexpr int kRealBits = 32;

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

enum class QuantKind { weight_multi_bit, weight_binary, activation };

inline std::string to_string(QuantKind kind) {
  switch (kind) {
    case QuantKind::weight_multi_bit: return "weight_multi_bit";
    case QuantKind::weight_binary: return "weight_binary";
    case QuantKind::activation: return "activation";
  }
  return "?";
}

struct QuantSpec {
  int bits = kRealBits;
  QuantKind kind = QuantKind::activation;

  bool is_identity() const noexcept { return bits == kRealBits; }

  void validate() const {
    if (bits < 1 || bits > kRealBits) throw Error("bit depth must lie in [1, 32], got " + std::to_string(bits));
    if (kind == QuantKind::weight_binary && bits != 1) {
      throw Error("binary weight quantizer requires k = 1, got " + std::to_string(bits));
    }
    if (kind == QuantKind::weight_multi_bit && bits == 1) {
      throw Error("multi-bit weight quantizer requires k >= 2; use weight_binary for k = 1");
    }
  }

  /// Weight quantizer used by a layer running at `bits`.
  static QuantSpec weights(int bits) {
    return {bits, bits == 1 ? QuantKind::weight_binary : QuantKind::weight_multi_bit};
  }
  static QuantSpec activations(int bits) { return {bits, QuantKind::activation}; }

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

/// Number of steps on a k-bit lattice, 2^k - 1.
template <class T>
T lattice_steps(int bits) {
  return static_cast<T>(std::ldexp(1.0, bits) - 1.0);
}

/// tanh(w) / (2 max|tanh(w)|) + 0.5, per tensor. Output lies in [0, 1].
template <class T>
Tensor<T> normalize_weights(const Tensor<T>& w) {
  if (w.empty()) throw DegenerateInputError("normalize_weights: empty tensor");
  Tensor<T> t = w;
  T peak{0};
  for (auto& v : t.data()) {
    v = std::tanh(v);
    peak = std::max(peak, std::abs(v));
  }
  if (!(peak > T{0})) throw DegenerateInputError("normalize_weights: all-zero weight tensor " + shape_str(w.shape()));
  const T denom = T{2} * peak;
  for (auto& v : t.data()) v = v / denom + T(0.5);
  return t;
}

namespace detail {
template <class T>
T to_weight_lattice(T normalized, T steps) {
  return T{2} * std::round(normalized * steps) / steps - T{1};
}
}  // namespace detail

/// k-bit weights (k >= 2): 2 round(w_norm (2^k-1)) / (2^k-1) - 1, values in [-1, 1].
template <class T>
Tensor<T> quantize_weights_kbit(const Tensor<T>& w, int bits) {
  if (bits < 2 || bits > kRealBits) throw Error("quantize_weights_kbit: k must lie in [2, 32], got " + std::to_string(bits));
  if (bits == kRealBits) return w;
  Tensor<T> q = normalize_weights(w);
  const T steps = lattice_steps<T>(bits);
  for (auto& v : q.data()) v = detail::to_weight_lattice(v, steps);
  return q;
}

/// sign(w) mean|w| with sign(0) = +1.
template <class T>
Tensor<T> quantize_weights_binary(const Tensor<T>& w) {
  if (w.empty()) throw DegenerateInputError("quantize_weights_binary: empty tensor");
  double total = 0.0;
  for (T v : w.data()) total += std::abs(static_cast<double>(v));
  const T scale = static_cast<T>(total / static_cast<double>(w.size()));
  if (!(scale > T{0})) throw DegenerateInputError("quantize_weights_binary: all-zero weight tensor " + shape_str(w.shape()));
  Tensor<T> q = w;
  for (auto& v : q.data()) v = v < T{0} ? -scale : scale;
  return q;
}

/// round(clamp(x, 0, 1) (2^k-1)) / (2^k-1), values in [0, 1].
template <class T>
Tensor<T> quantize_activations(const Tensor<T>& x, int bits) {
  if (bits < 1 || bits > kRealBits) throw Error("quantize_activations: k must lie in [1, 32], got " + std::to_string(bits));
  if (bits == kRealBits) return x;
  const T steps = lattice_steps<T>(bits);
  Tensor<T> q = x;
  for (auto& v : q.data()) {
    if (!std::isfinite(v)) throw Error("quantize_activations: non-finite input");
    v = std::round(std::clamp(v, T{0}, T{1}) * steps) / steps;
  }
  return q;
}

/// Forward quantizer for any spec.
template <class T>
Tensor<T> quantize(const Tensor<T>& x, const QuantSpec& spec) {
  spec.validate();
  if (spec.is_identity()) return x;
  switch (spec.kind) {
    case QuantKind::weight_multi_bit: return quantize_weights_kbit(x, spec.bits);
    case QuantKind::weight_binary: return quantize_weights_binary(x);
    case QuantKind::activation: return quantize_activations(x, spec.bits);
  }
  return x;
}

/// Straight-through gradient: upstream where lo <= x <= hi, zero elsewhere.
template <class T>
Tensor<T> ste_backward(const Tensor<T>& upstream, const Tensor<T>& pre_quant, T lo, T hi) {
  require_same_shape(upstream.shape(), pre_quant.shape(), "ste_backward");
  Tensor<T> g(upstream.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (pre_quant[i] >= lo && pre_quant[i] <= hi) ? upstream[i] : T{0};
  }
  return g;
}

/// Gradient of the multi-bit weight quantizer with round() treated as identity,
/// i.e. the exact derivative of tanh(w) / max|tanh(w)| (argmax ties go to the first index).
template <class T>
Tensor<T> multibit_weight_backward(const Tensor<T>& upstream, const Tensor<T>& w) {
  require_same_shape(upstream.shape(), w.shape(), "multibit_weight_backward");
  std::vector<T> t(w.size());
  std::size_t peak_idx = 0;
  T peak{0};
  for (std::size_t i = 0; i < w.size(); ++i) {
    t[i] = std::tanh(w[i]);
    if (std::abs(t[i]) > peak) {
      peak = std::abs(t[i]);
      peak_idx = i;
    }
  }
  if (!(peak > T{0})) throw DegenerateInputError("multibit_weight_backward: all-zero weight tensor");
  Tensor<T> g(w.shape());
  T dot{0};
  for (std::size_t i = 0; i < w.size(); ++i) {
    g[i] = upstream[i] * (T{1} - t[i] * t[i]) / peak;
    dot += upstream[i] * t[i];
  }
  const T s = t[peak_idx] < T{0} ? T{-1} : T{1};
  g[peak_idx] -= dot * s * (T{1} - t[peak_idx] * t[peak_idx]) / (peak * peak);
  return g;
}

/// Fake-quantization node: quantized forward, straight-through backward.
/// A real-valued spec returns `x` itself, so no node is recorded.
template <class T>
Var<T> fake_quant(Tape<T>& tape, const Var<T>& x, const QuantSpec& spec) {
  spec.validate();
  if (spec.is_identity()) return x;
  Tensor<T> q = quantize(x.value(), spec);
  return tape.record("fake_quant:" + to_string(spec.kind), std::move(q), {x}, [x, spec](const Tensor<T>& gout) {
    switch (spec.kind) {
      case QuantKind::weight_multi_bit: x.node()->accumulate(multibit_weight_backward(gout, x.value())); break;
      case QuantKind::weight_binary: x.node()->accumulate(ste_backward(gout, x.value(), T{-1}, T{1})); break;
      case QuantKind::activation: x.node()->accumulate(ste_backward(gout, x.value(), T{0}, T{1})); break;
    }
  });
}

struct QuantErrorStats {
  double mean_abs_err = 0.0;
  double max_abs_err = 0.0;
  std::map<double, std::size_t> level_histogram;  // quantized value -> count

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [level, c] : level_histogram) n += c;
    return n;
  }
};

/// Statistics of eps = reference - quantized, where the reference is the value the
/// quantizer rounds: 2 w_norm - 1 for multi-bit weights, w for binary weights and
/// clamp(x, 0, 1) for activations. Multi-bit diagnostics also accept k = 1 (the
/// two-level lattice {-1, 1}) so that bit depths 1..8 share one lattice family.
template <class T>
QuantErrorStats error_stats(const Tensor<T>& w, const QuantSpec& spec) {
  if (spec.bits < 1 || spec.bits > kRealBits) throw Error("error_stats: bit depth must lie in [1, 32]");
  if (spec.kind == QuantKind::weight_binary && spec.bits != 1) throw Error("error_stats: binary spec requires k = 1");
  QuantErrorStats stats;
  auto record = [&stats](double reference, double quantized) {
    const double e = std::abs(reference - quantized);
    stats.mean_abs_err += e;
    stats.max_abs_err = std::max(stats.max_abs_err, e);
    ++stats.level_histogram[quantized];
  };
  if (spec.is_identity()) {
    for (T v : w.data()) record(v, v);
  } else if (spec.kind == QuantKind::weight_multi_bit) {
    const Tensor<T> norm = normalize_weights(w);
    const T steps = lattice_steps<T>(spec.bits);
    for (T v : norm.data()) record(T{2} * v - T{1}, detail::to_weight_lattice(v, steps));
  } else if (spec.kind == QuantKind::weight_binary) {
    const Tensor<T> q = quantize_weights_binary(w);
    for (std::size_t i = 0; i < w.size(); ++i) record(w[i], q[i]);
  } else {
    const Tensor<T> q = quantize_activations(w, spec.bits);
    for (std::size_t i = 0; i < w.size(); ++i) record(std::clamp(w[i], T{0}, T{1}), q[i]);
  }
  if (!w.empty()) stats.mean_abs_err /= static_cast<double>(w.size());
  return stats;
}

}  // namespace ctmq

#endif  // CTMQ_QUANTIZATION_HPP
