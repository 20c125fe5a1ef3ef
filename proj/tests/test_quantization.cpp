#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "ctmq/quantization.hpp"
#include "support/quant_checks.hpp"

using namespace ctmq;
using namespace ctmq::testing;

namespace {

Tensor<double> vec(std::initializer_list<double> v) { return Tensor<double>({v.size()}, std::vector<double>(v)); }

Tensor<double> uniform(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t({n});
  for (auto& v : t.data()) v = d(rng);
  return t;
}

}  // namespace

TEST(QuantSpec, Validation) {
  EXPECT_NO_THROW((QuantSpec{1, QuantKind::weight_binary}.validate()));
  EXPECT_THROW((QuantSpec{2, QuantKind::weight_binary}.validate()), Error);
  EXPECT_THROW((QuantSpec{1, QuantKind::weight_multi_bit}.validate()), Error);
  EXPECT_THROW((QuantSpec{0, QuantKind::activation}.validate()), Error);
  EXPECT_THROW((QuantSpec{33, QuantKind::activation}.validate()), Error);
  EXPECT_EQ(QuantSpec::weights(1).kind, QuantKind::weight_binary);
  EXPECT_EQ(QuantSpec::weights(3).kind, QuantKind::weight_multi_bit);
  EXPECT_TRUE(QuantSpec::activations(32).is_identity());
}

TEST(NormalizeWeights, Examples) {
  EXPECT_DOUBLE_EQ(normalize_weights(vec({0.37}))[0], 1.0);
  auto sym = normalize_weights(vec({-0.8, 0.8}));
  EXPECT_DOUBLE_EQ(sym[0], 0.0);
  EXPECT_DOUBLE_EQ(sym[1], 1.0);
  auto three = normalize_weights(vec({-1.0, 0.0, 1.0}));
  EXPECT_DOUBLE_EQ(three[0], 0.0);
  EXPECT_DOUBLE_EQ(three[1], 0.5);
  EXPECT_DOUBLE_EQ(three[2], 1.0);
  EXPECT_THROW(normalize_weights(vec({0.0, 0.0})), DegenerateInputError);
}

TEST(NormalizeWeights, RangeAndExtremes) {
  auto w = uniform(1000, -4.0, 4.0, 5);
  auto n = normalize_weights(w);
  double lo = 1.0, hi = 0.0;
  for (double v : n.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_TRUE(lo == 0.0 || hi == 1.0);
}

TEST(QuantizeWeightsKbit, Examples) {
  auto q = quantize_weights_kbit(vec({-1.0, 0.0, 1.0}), 2);
  EXPECT_DOUBLE_EQ(q[0], -1.0);
  EXPECT_DOUBLE_EQ(q[1], 2.0 * 2.0 / 3.0 - 1.0);  // round(1.5) = 2 with ties away from zero
  EXPECT_DOUBLE_EQ(q[2], 1.0);
  auto same = quantize_weights_kbit(Tensor<double>({4}, 0.3), 3);
  for (double v : same.data()) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_THROW(quantize_weights_kbit(vec({0.5}), 1), Error);
  EXPECT_THROW(quantize_weights_kbit(Tensor<double>({3}, 0.0), 4), DegenerateInputError);
}

TEST(QuantizeWeightsKbit, HalfStepBoundAtEightBits) {
  auto w = uniform(5000, -2.0, 2.0, 8);
  auto n = normalize_weights(w);
  auto q = quantize_weights_kbit(w, 8);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LE(std::abs(q[i] - (2.0 * n[i] - 1.0)), 1.0 / 255.0 + 1e-15);
}

TEST(QuantizeWeightsBinary, Examples) {
  auto a = quantize_weights_binary(vec({0.5, -1.5}));
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], -1.0);
  auto b = quantize_weights_binary(vec({0.0, 2.0}));
  EXPECT_DOUBLE_EQ(b[0], 1.0);
  EXPECT_DOUBLE_EQ(b[1], 1.0);
  EXPECT_THROW(quantize_weights_binary(Tensor<double>({3}, 0.0)), DegenerateInputError);
}

TEST(QuantizeWeightsBinary, PositiveScaleEquivariance) {
  auto w = uniform(64, -1.0, 1.0, 3);
  auto base = quantize_weights_binary(w);
  for (double c : {0.25, 2.0, 8.0}) {
    Tensor<double> scaled = w;
    for (auto& v : scaled.data()) v *= c;
    auto q = quantize_weights_binary(scaled);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(q[i], c * base[i], 1e-12);
  }
}

TEST(QuantizeActivations, Examples) {
  EXPECT_DOUBLE_EQ(quantize_activations(vec({0.7}), 1)[0], 1.0);
  for (int k = 1; k <= 8; ++k) EXPECT_DOUBLE_EQ(quantize_activations(vec({-3.2}), k)[0], 0.0);
  EXPECT_DOUBLE_EQ(quantize_activations(vec({0.5}), 2)[0], 2.0 / 3.0);
  EXPECT_THROW(quantize_activations(vec({std::nan("")}), 2), Error);
}

TEST(SteBackward, Examples) {
  auto up = vec({2.0});
  EXPECT_DOUBLE_EQ(ste_backward(up, vec({0.5}), -1.0, 1.0)[0], 2.0);
  EXPECT_DOUBLE_EQ(ste_backward(up, vec({1.5}), -1.0, 1.0)[0], 0.0);
  auto inside = uniform(100, -0.99, 0.99, 1);
  auto g = uniform(100, -5.0, 5.0, 2);
  EXPECT_EQ(ste_backward(g, inside, -1.0, 1.0), g);
}

TEST(SteBackward, SignGridExhaustive) {
  const auto t = sign_ste_grid(40001, 7);
  EXPECT_EQ(t.points, 40001u);
  EXPECT_EQ(t.mismatches, 0u);
}

TEST(SteBackward, ActivationWindowIsClampRegion) {
  auto x = vec({-0.1, 0.0, 0.3, 1.0, 1.1});
  Tape<double> tape;
  auto xv = Var<double>::leaf(x, true);
  tape.backward(fake_quant(tape, xv, QuantSpec::activations(2)), Tensor<double>({5}, 1.0));
  EXPECT_EQ(xv.grad(), vec({0.0, 1.0, 1.0, 1.0, 0.0}));
}

TEST(FakeQuant, RealValuedSpecIsIdentityBothWays) {
  auto x = uniform(50, -3.0, 3.0, 4);
  for (auto spec : {QuantSpec::weights(32), QuantSpec::activations(32)}) {
    Tape<double> tape;
    auto xv = Var<double>::leaf(x, true);
    auto y = fake_quant(tape, xv, spec);
    EXPECT_EQ(y.value(), x);
    EXPECT_EQ(tape.size(), 0u);
    auto g = uniform(50, -1.0, 1.0, 5);
    tape.backward(y, g);
    EXPECT_EQ(xv.grad(), g);
  }
}

TEST(FakeQuant, ActivationExampleAndIdempotence) {
  Tape<double> tape;
  EXPECT_EQ(fake_quant(tape, Var<double>::leaf(vec({0.2, 0.8})), QuantSpec::activations(1)).value(), vec({0.0, 1.0}));
  auto x = uniform(2000, -0.5, 1.5, 6);
  for (int k = 1; k <= 8; ++k) {
    const auto spec = QuantSpec::activations(k);
    auto once = fake_quant(tape, Var<double>::leaf(x), spec);
    auto twice = fake_quant(tape, once, spec);
    EXPECT_EQ(once.value(), twice.value()) << "k=" << k;
  }
}

TEST(FakeQuant, MultiBitWeightsPassGradientEverywhere) {
  auto w = uniform(30, -3.0, 3.0, 10);
  Tape<double> tape;
  auto wv = Var<double>::leaf(w, true);
  tape.backward(fake_quant(tape, wv, QuantSpec::weights(3)), Tensor<double>({30}, 1.0));
  std::size_t nonzero = 0;
  for (double g : wv.grad().data()) nonzero += g != 0.0;
  EXPECT_GE(nonzero, 29u);
}

TEST(Oracle, ElementExactForEveryBitDepth) {
  for (int k = 1; k <= 8; ++k) {
    const auto f = quantizer_oracle<float>(k, 100000, 100 + static_cast<std::uint64_t>(k));
    EXPECT_EQ(f.mismatches, 0u) << "float k=" << k;
    EXPECT_EQ(f.compared, 200000u);
    const auto d = quantizer_oracle<double>(k, 100000, 200 + static_cast<std::uint64_t>(k));
    EXPECT_EQ(d.mismatches, 0u) << "double k=" << k;
  }
}

TEST(Properties, RangesOfEveryQuantizer) {
  auto w = uniform(4000, -5.0, 5.0, 11);
  for (int k = 2; k <= 8; ++k) {
    for (double v : quantize_weights_kbit(w, k).data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  double m = 0.0;
  for (double v : w.data()) m += std::abs(v);
  m /= static_cast<double>(w.size());
  for (double v : quantize_weights_binary(w).data()) EXPECT_TRUE(std::abs(std::abs(v) - m) < 1e-12);
  for (int k = 1; k <= 8; ++k) {
    for (double v : quantize_activations(w, k).data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Properties, LevelCountOnDenseGrid) {
  Tensor<double> grid({10000});
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -3.0 + 6.0 * static_cast<double>(i) / 9999.0;
  for (int k = 1; k <= 8; ++k) {
    const std::size_t cap = std::size_t{1} << k;
    const auto wq = quantize(grid, QuantSpec::weights(k));
    const auto aq = quantize(grid, QuantSpec::activations(k));
    const std::set<double> wl(wq.data().begin(), wq.data().end());
    const std::set<double> al(aq.data().begin(), aq.data().end());
    EXPECT_LE(wl.size(), cap) << "weights k=" << k;
    EXPECT_LE(al.size(), cap) << "activations k=" << k;
    // a dense grid over the full range reaches every activation level
    EXPECT_EQ(al.size(), cap) << "activations k=" << k;
    if (k >= 2) {
      const double gap = 2.0 / (std::ldexp(1.0, k) - 1.0);
      for (double level : wl) {
        const double idx = (level + 1.0) / gap;
        EXPECT_NEAR(idx, std::round(idx), 1e-9) << "k=" << k;
      }
    }
  }
}

TEST(Properties, ActivationQuantizerIsMonotone) {
  Tensor<double> grid({20001});
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = -1.0 + 3.0 * static_cast<double>(i) / 20000.0;
  for (int k = 1; k <= 8; ++k) {
    const auto q = quantize_activations(grid, k);
    for (std::size_t i = 1; i < q.size(); ++i) ASSERT_LE(q[i - 1], q[i]) << "k=" << k << " at " << i;
  }
}

TEST(ErrorStats, InvariantsAndRealValuedZero) {
  auto w = uniform(3000, -2.0, 2.0, 12);
  for (int k = 1; k <= 8; ++k) {
    for (auto spec : {QuantSpec{k, QuantKind::weight_multi_bit}, QuantSpec::activations(k)}) {
      const auto s = error_stats(w, spec);
      EXPECT_LE(s.mean_abs_err, s.max_abs_err);
      EXPECT_EQ(s.count(), w.size());
    }
  }
  const auto b = error_stats(w, QuantSpec::weights(1));
  EXPECT_EQ(b.level_histogram.size(), 2u);
  EXPECT_EQ(error_stats(w, QuantSpec::weights(32)).mean_abs_err, 0.0);
  EXPECT_EQ(error_stats(w, QuantSpec::activations(32)).max_abs_err, 0.0);
}

TEST(ErrorStats, ConstantTensorBinaryIsExact) {
  EXPECT_EQ(error_stats(Tensor<double>({9}, -0.5), QuantSpec::weights(1)).max_abs_err, 0.0);
}

TEST(ErrorStats, MultiBitErrorShrinksWithBitDepth) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto w = uniform(5000, -1.5, 1.5, 300 + seed);
    double previous = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 8; ++k) {
      const double e = error_stats(w, QuantSpec{k, QuantKind::weight_multi_bit}).mean_abs_err;
      EXPECT_LE(e, previous) << "seed " << seed << " k=" << k;
      previous = e;
    }
    EXPECT_LE(error_stats(w, QuantSpec::weights(8)).mean_abs_err, error_stats(w, QuantSpec::weights(2)).mean_abs_err);
  }
}
