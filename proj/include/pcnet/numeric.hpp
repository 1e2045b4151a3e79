#ifndef PCNET_NUMERIC_HPP
#define PCNET_NUMERIC_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

namespace pcnet {

/// Error type thrown by every pcnet routine on contract violations.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLogTwoPi = 1.8378770664093454836;
inline constexpr double kLogTwo = 0.69314718055994530942;
inline constexpr double kLogPi = 1.1447298858494001741;

// log(sum(exp(x))) with max subtraction. An all -inf input is an exact
// zero-probability sum and returns -inf.
inline double logsumexp(std::span<const double> x) {
  if (x.empty()) return -kInf;
  const double m = *std::max_element(x.begin(), x.end());
  if (m == -kInf) return -kInf;
  if (m == kInf) return kInf;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) {
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

/// Digamma function psi(x) for x > 0.
///
/// Shifts the argument above 10 with the recurrence psi(x) = psi(x + 1) - 1/x
/// and then applies the asymptotic expansion; absolute error is below 1e-12
/// on (0, 1e6].
inline double digamma(double x) {
  if (!(x > 0.0)) throw Error("digamma: argument must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number series: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760.
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
  return result + std::log(x) - 0.5 * inv - series;
}

inline bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace pcnet

#endif  // PCNET_NUMERIC_HPP
