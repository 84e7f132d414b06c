#pragma once

// Adaptive tanh-sinh (double-exponential) quadrature on a finite interval.
// Endpoint singularities such as x^-1/2 are integrated without special
// handling. The integrand receives the distances to both endpoints so that
// log(x) and log(1 - x) style terms stay accurate near the boundary.

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace riskgrad::quadrature {

struct Result {
  double value = 0.0;
  double error_estimate = 0.0;
  int levels = 0;
};

/// Integrate f over [a, b]. f is called as f(x - a, b - x).
template <class F>
Result tanh_sinh(F&& f, double a, double b, double tol = 1e-12, int max_levels = 12) {
  if (!(b > a)) throw std::invalid_argument("tanh_sinh: need b > a");
  constexpr double kHalfPi = std::numbers::pi / 2.0;
  constexpr double kTMax = 4.5;
  const double half = 0.5 * (b - a);

  auto node = [&](double t) {
    const double u = kHalfPi * std::sinh(t);
    const double e = std::exp(-2.0 * std::fabs(u));
    // 1 - tanh|u| computed without cancellation
    const double comp = 2.0 * e / (1.0 + e);
    const double ch = std::cosh(u);
    const double w = half * kHalfPi * std::cosh(t) / (ch * ch);
    double left = half * comp;
    double right = (b - a) - left;
    if (u > 0) std::swap(left, right);
    if (!(left > 0.0) || !(right > 0.0) || w == 0.0) return 0.0;
    return w * f(left, right);
  };

  double h = 1.0;
  double sum = node(0.0);
  for (double t = h; t <= kTMax; t += h) sum += node(t) + node(-t);
  double estimate = h * sum;
  Result out{estimate, INFINITY, 0};
  for (int level = 1; level <= max_levels; ++level) {
    h *= 0.5;
    double added = 0.0;
    for (double t = h; t <= kTMax; t += 2.0 * h) added += node(t) + node(-t);
    sum += added;
    const double next = h * sum;
    out.error_estimate = std::fabs(next - estimate);
    out.value = next;
    out.levels = level;
    estimate = next;
    if (level >= 3 && out.error_estimate <= tol * std::fmax(1.0, std::fabs(next))) break;
  }
  return out;
}

}  // namespace riskgrad::quadrature
