#ifndef CTMQ_TESTS_SCALAR_QUANT_HPP
#define CTMQ_TESTS_SCALAR_QUANT_HPP

// Loop-based reference quantizers, written against the formulas rather than the library.
// Rounding is half-away-from-zero, implemented by hand for non-negative arguments.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ctmq::testing {

template <class T>
T round_half_away_nonneg(T x) {
  if (x < T{0}) throw std::logic_error("reference rounding expects a non-negative argument");
  const T base = std::floor(x);
  return (x - base >= T(0.5)) ? base + T{1} : base;
}

template <class T>
T levels(int k) {
  T n{1};
  for (int i = 0; i < k; ++i) n *= T{2};
  return n - T{1};
}

template <class T>
std::vector<T> ref_normalize(const std::vector<T>& w) {
  T m{0};
  for (T v : w) {
    const T t = std::tanh(v);
    if ((t < T{0} ? -t : t) > m) m = t < T{0} ? -t : t;
  }
  std::vector<T> out;
  for (T v : w) out.push_back(std::tanh(v) / (T{2} * m) + T(0.5));
  return out;
}

template <class T>
std::vector<T> ref_weights_kbit(const std::vector<T>& w, int k) {
  const T n = levels<T>(k);
  std::vector<T> out;
  for (T v : ref_normalize(w)) out.push_back(T{2} * round_half_away_nonneg(v * n) / n - T{1});
  return out;
}

template <class T>
std::vector<T> ref_weights_binary(const std::vector<T>& w) {
  double s = 0.0;
  for (T v : w) s += v < T{0} ? -static_cast<double>(v) : static_cast<double>(v);
  const T m = static_cast<T>(s / static_cast<double>(w.size()));
  std::vector<T> out;
  for (T v : w) out.push_back(v >= T{0} ? m : -m);
  return out;
}

template <class T>
T ref_activation(T x, int k) {
  const T n = levels<T>(k);
  const T c = x < T{0} ? T{0} : (x > T{1} ? T{1} : x);
  return round_half_away_nonneg(c * n) / n;
}

}  // namespace ctmq::testing

#endif  // CTMQ_TESTS_SCALAR_QUANT_HPP
