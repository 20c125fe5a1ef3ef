#ifndef CTMQ_TESTS_OP_SUITE_HPP
#define CTMQ_TESTS_OP_SUITE_HPP

// Randomized finite-difference checks for every differentiable op, shared by the unit
// tests and the acceptance binary.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ctmq/ops.hpp"
#include "ctmq/quantization.hpp"
#include "support/gradcheck.hpp"

namespace ctmq::testing {

struct OpCheck {
  std::string op;
  std::size_t configs = 0;
  double worst_rel_err = 0.0;
  std::string worst_where;
};

inline constexpr double kGradTol = 1e-4;

namespace detail {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

/// Moves samples that sit within `margin` of a kink.
inline void avoid(Tensor<double>& t, std::initializer_list<double> kinks, double margin = 1e-3) {
  for (auto& v : t.data()) {
    for (double k : kinks) {
      if (std::abs(v - k) < margin) v = k + (v < k ? -2 * margin : 2 * margin);
    }
  }
}

inline void record(OpCheck& c, const GradCheckResult& r, const std::string& config) {
  ++c.configs;
  if (r.worst_rel_err >= c.worst_rel_err) {
    c.worst_rel_err = r.worst_rel_err;
    c.worst_where = config + ": " + r.worst_where;
  }
}

}  // namespace detail

inline std::vector<OpCheck> op_gradcheck_suite(std::size_t configs, std::uint64_t seed = 2024) {
  using detail::pick;
  using detail::record;
  std::vector<OpCheck> out;
  std::mt19937_64 rng(seed);

  {
    OpCheck c;
    c.op = "conv2d";
    for (std::size_t s = 0; s < configs; ++s) {
      const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 4);
      const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 2);
      const std::size_t h = pick(rng, std::max<std::size_t>(k, 3), 8), w = pick(rng, std::max<std::size_t>(k, 3), 8);
      auto f = [stride, pad](Tape<double>& t, const std::vector<Var<double>>& v) {
        return ops::conv2d(t, v[0], v[1], stride, pad);
      };
      record(c, gradcheck(f, {random_tensor({n, ci, h, w}, rng), random_tensor({co, ci, k, k}, rng)}, rng),
             "config " + std::to_string(s));
    }
    // the reference configuration: 2x3x8x8 input, 4x3x3x3 weight
    auto f = [](Tape<double>& t, const std::vector<Var<double>>& v) { return ops::conv2d(t, v[0], v[1], 1, 1); };
    record(c, gradcheck(f, {random_tensor({2, 3, 8, 8}, rng), random_tensor({4, 3, 3, 3}, rng)}, rng), "2x3x8x8");
    out.push_back(c);
  }

  for (bool training : {true, false}) {
    OpCheck c;
    c.op = training ? "batch_norm(train)" : "batch_norm(eval)";
    for (std::size_t s = 0; s < configs; ++s) {
      const bool rank4 = s % 2 == 0;
      const std::size_t n = pick(rng, 2, 4), ch = pick(rng, 1, 3);
      const Shape shape = rank4 ? Shape{n, ch, pick(rng, 1, 4), pick(rng, 1, 4)} : Shape{n, ch};
      auto rm = random_tensor({ch}, rng);
      auto rv = random_tensor({ch}, rng, 0.5, 2.0);
      auto f = [training, rm, rv](Tape<double>& t, const std::vector<Var<double>>& v) {
        ops::BatchNormState<double> st{Var<double>::leaf(rm), Var<double>::leaf(rv)};
        return ops::batch_norm(t, v[0], v[1], v[2], st, training);
      };
      record(c,
             gradcheck(f, {random_tensor(shape, rng, -2.0, 2.0), random_tensor({ch}, rng, 0.5, 1.5),
                           random_tensor({ch}, rng)},
                       rng),
             "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  {
    OpCheck c;
    c.op = "linear";
    for (std::size_t s = 0; s < configs; ++s) {
      const std::size_t n = s == 0 ? 4 : pick(rng, 1, 5), in = s == 0 ? 10 : pick(rng, 1, 12),
                        o = s == 0 ? 7 : pick(rng, 1, 8);
      auto f = [](Tape<double>& t, const std::vector<Var<double>>& v) { return ops::linear(t, v[0], v[1], v[2]); };
      record(c, gradcheck(f, {random_tensor({n, in}, rng), random_tensor({o, in}, rng), random_tensor({o}, rng)}, rng),
             "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  {
    OpCheck c;
    c.op = "max_pool2d";
    for (std::size_t s = 0; s < configs; ++s) {
      const std::size_t win = pick(rng, 2, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, win - 1);
      const std::size_t h = pick(rng, win, 7), w = pick(rng, win, 7);
      auto f = [win, stride, pad](Tape<double>& t, const std::vector<Var<double>>& v) {
        return ops::max_pool2d(t, v[0], win, stride, pad);
      };
      record(c, gradcheck(f, {random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), h, w}, rng)}, rng),
             "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  {
    OpCheck c;
    c.op = "avg_pool2d";
    for (std::size_t s = 0; s < configs; ++s) {
      const std::size_t win = pick(rng, 1, 4), stride = pick(rng, 1, 3);
      const std::size_t h = pick(rng, win, 8), w = pick(rng, win, 8);
      auto f = [win, stride](Tape<double>& t, const std::vector<Var<double>>& v) {
        return ops::avg_pool2d(t, v[0], win, stride);
      };
      record(c, gradcheck(f, {random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), h, w}, rng)}, rng),
             "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  {
    OpCheck c;
    c.op = "softmax_cross_entropy";
    for (std::size_t s = 0; s < configs; ++s) {
      const std::size_t n = pick(rng, 1, 6), k = pick(rng, 2, 10);
      std::vector<std::int32_t> labels(n);
      for (auto& l : labels) l = static_cast<std::int32_t>(rng() % k);
      auto f = [labels](Tape<double>& t, const std::vector<Var<double>>& v) {
        return ops::softmax_cross_entropy(t, v[0], labels);
      };
      record(c, gradcheck(f, {random_tensor({n, k}, rng, -3.0, 3.0)}, rng), "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  {
    OpCheck c;
    c.op = "add";
    for (std::size_t s = 0; s < configs; ++s) {
      const Shape shape{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 3)};
      const Shape other = s % 4 == 3 ? Shape{1} : shape;
      auto f = [](Tape<double>& t, const std::vector<Var<double>>& v) { return ops::add(t, v[0], v[1]); };
      record(c, gradcheck(f, {random_tensor(shape, rng), random_tensor(other, rng)}, rng), "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  {
    OpCheck c;
    c.op = "clamp";
    for (std::size_t s = 0; s < configs; ++s) {
      auto x = random_tensor({pick(rng, 1, 4), pick(rng, 1, 6)}, rng, -0.5, 1.5);
      detail::avoid(x, {0.0, 1.0});
      auto f = [](Tape<double>& t, const std::vector<Var<double>>& v) { return ops::clamp(t, v[0], 0.0, 1.0); };
      record(c, gradcheck(f, {x}, rng), "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  {
    OpCheck c;
    c.op = "scale/add_scalar/flatten";
    for (std::size_t s = 0; s < configs; ++s) {
      const double a = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
      auto f = [a](Tape<double>& t, const std::vector<Var<double>>& v) {
        return ops::flatten(t, ops::add_scalar(t, ops::scale(t, v[0], a), 0.75));
      };
      record(c, gradcheck(f, {random_tensor({pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)}, rng)},
                          rng),
             "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  {
    // the differentiable part of the multi-bit weight quantizer: tanh(w) / max|tanh(w)|
    OpCheck c;
    c.op = "weight_normalization";
    for (std::size_t s = 0; s < configs; ++s) {
      const Shape shape{pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
      auto f = [](Tape<double>& t, const std::vector<Var<double>>& v) {
        const auto& w = v[0];
        Tensor<double> y = normalize_weights(w.value());
        for (auto& e : y.data()) e = 2.0 * e - 1.0;
        return t.record("weight_normalization", std::move(y), {w}, [w](const Tensor<double>& g) {
          w.node()->accumulate(multibit_weight_backward(g, w.value()));
        });
      };
      record(c, gradcheck(f, {random_tensor(shape, rng, -2.0, 2.0)}, rng), "config " + std::to_string(s));
    }
    out.push_back(c);
  }

  return out;
}

}  // namespace ctmq::testing

#endif  // CTMQ_TESTS_OP_SUITE_HPP
