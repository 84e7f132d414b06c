#pragma once

// Log-gamma, digamma, trigamma and log-beta on the positive real axis.
//
// Each function shifts small arguments upward with the standard recurrence
// and then evaluates an asymptotic (Stirling-type) series. Internal
// arithmetic is carried out in long double so the final rounding to double
// dominates the error budget.

#include <cmath>
#include <stdexcept>
#include <string>

namespace riskgrad::specfun {

namespace detail {

inline void require_positive(double x, const char* fn) {
  if (!std::isfinite(x) || !(x > 0.0)) {
    throw std::domain_error(std::string(fn) + ": argument must be finite and > 0, got " +
                            std::to_string(x));
  }
}

// Shift threshold for the asymptotic series.
constexpr long double kLgammaShift = 10.0L;
constexpr long double kPsiShift = 6.0L;

}  // namespace detail

/// log Gamma(x) for x > 0.
inline double lgamma(double x) {
  detail::require_positive(x, "lgamma");
  if (x == 1.0 || x == 2.0) return 0.0;

  long double v = x;
  long double log_shift = 0.0L;
  if (v < detail::kLgammaShift) {
    long double prod = 1.0L;
    while (v < detail::kLgammaShift) {
      prod *= v;
      v += 1.0L;
    }
    log_shift = std::log(prod);
  }
  // Stirling series, Bernoulli terms B_2k / (2k (2k-1) v^(2k-1)).
  constexpr long double kHalfLog2Pi = 0.918938533204672741780329736405617639861L;
  const long double inv = 1.0L / v;
  const long double inv2 = inv * inv;
  const long double series =
      inv * (1.0L / 12 +
             inv2 * (-1.0L / 360 +
                     inv2 * (1.0L / 1260 +
                             inv2 * (-1.0L / 1680 +
                                     inv2 * (1.0L / 1188 +
                                             inv2 * (-691.0L / 360360 +
                                                     inv2 * (1.0L / 156 +
                                                             inv2 * (-3617.0L / 122400))))))));
  const long double result = (v - 0.5L) * std::log(v) - v + kHalfLog2Pi + series - log_shift;
  return static_cast<double>(result);
}

/// psi(x) = d/dx log Gamma(x) for x > 0.
inline double digamma(double x) {
  detail::require_positive(x, "digamma");
  long double v = x;
  long double acc = 0.0L;
  while (v < detail::kPsiShift) {
    acc -= 1.0L / v;
    v += 1.0L;
  }
  const long double inv2 = 1.0L / (v * v);
  const long double series =
      inv2 * (1.0L / 12 -
              inv2 * (1.0L / 120 -
                      inv2 * (1.0L / 252 -
                              inv2 * (1.0L / 240 -
                                      inv2 * (1.0L / 132 -
                                              inv2 * (691.0L / 32760 - inv2 * (1.0L / 12)))))));
  acc += std::log(v) - 0.5L / v - series;
  return static_cast<double>(acc);
}

/// psi'(x) for x > 0.
inline double trigamma(double x) {
  detail::require_positive(x, "trigamma");
  long double v = x;
  long double acc = 0.0L;
  while (v < detail::kPsiShift) {
    acc += 1.0L / (v * v);
    v += 1.0L;
  }
  const long double inv = 1.0L / v;
  const long double inv2 = inv * inv;
  // 1/v + 1/(2v^2) + sum_k B_2k / v^(2k+1)
  const long double tail =
      inv * inv2 *
      (1.0L / 6 +
       inv2 * (-1.0L / 30 +
               inv2 * (1.0L / 42 +
                       inv2 * (-1.0L / 30 +
                               inv2 * (5.0L / 66 + inv2 * (-691.0L / 2730 + inv2 * (7.0L / 6)))))));
  acc += inv + 0.5L * inv2 + tail;
  return static_cast<double>(acc);
}

/// log B(a, b). Symmetric in its arguments to the bit.
inline double log_beta(double a, double b) {
  detail::require_positive(a, "log_beta");
  detail::require_positive(b, "log_beta");
  const double lo = a < b ? a : b;
  const double hi = a < b ? b : a;
  return (lgamma(lo) + lgamma(hi)) - lgamma(lo + hi);
}

}  // namespace riskgrad::specfun
