#pragma once

// Built-in numerical self-checks: special-function recurrences, KL closed
// forms against quadrature, and a full finite-difference gradient check.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "riskgrad/diffmath.hpp"
#include "riskgrad/quadrature.hpp"
#include "riskgrad/risk_model.hpp"
#include "riskgrad/specfun.hpp"

namespace riskgrad::selftest {

struct Hooks {
  std::function<double(double)> lgamma = [](double x) { return specfun::lgamma(x); };
  std::function<double(double)> digamma = [](double x) { return specfun::digamma(x); };
  std::function<double(double)> trigamma = [](double x) { return specfun::trigamma(x); };
};

struct CheckResult {
  std::string name;
  bool passed = true;
  std::string detail;
  double seconds = 0.0;
};

inline std::string sci(double x) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << x;
  return os.str();
}

inline CheckResult check_specfun(const Hooks& hk) {
  CheckResult r{"specfun_recurrences", true, "", 0.0};
  double worst_psi = 0.0, worst_tri = 0.0, worst_fd = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = 0.1 + (100.0 - 0.1) * i / 999.0;
    worst_psi = std::max(worst_psi, std::fabs(hk.digamma(x + 1) - hk.digamma(x) - 1.0 / x));
    worst_tri = std::max(worst_tri, std::fabs(hk.trigamma(x + 1) - hk.trigamma(x) + 1.0 / (x * x)));
    const double h = 1e-5 * std::max(1.0, x);
    const double fd = (hk.lgamma(x + h) - hk.lgamma(x - h)) / (2 * h);
    worst_fd = std::max(worst_fd, relative_error(hk.digamma(x), fd, 1e-7));
  }
  std::ostringstream os;
  os << "digamma recurrence " << worst_psi << ", trigamma recurrence " << worst_tri
     << ", digamma vs d/dx lgamma rel " << worst_fd;
  r.detail = os.str();
  r.passed = worst_psi <= 1e-9 && worst_tri <= 1e-9 && worst_fd <= 1e-5;
  return r;
}

inline CheckResult check_beta_kl() {
  CheckResult r{"beta_kl_quadrature", true, "", 0.0};
  const double grid[] = {0.5, 1.0, 1.5, 2.0, 3.0, 5.0};
  double worst = 0.0;
  for (double a : grid) {
    for (double b : grid) {
      const double log_norm = specfun::log_beta(a, b);
      auto f = [&](double x, double one_minus) {
        const double logq = (a - 1.0) * std::log(x) + (b - 1.0) * std::log(one_minus) - log_norm;
        return std::exp(logq) * logq;
      };
      const double q = quadrature::tanh_sinh(f, 0.0, 1.0, 1e-13).value;
      worst = std::max(worst, std::fabs(kl_beta({{a}, {b}}).value - q));
    }
  }
  const double uniform = kl_beta({{1.0}, {1.0}}).value;
  r.passed = worst <= 1e-6 && uniform == 0.0;
  r.detail = "max |analytic - quadrature| " + sci(worst) + ", KL(1,1) " + sci(uniform);
  return r;
}

inline CheckResult check_gauss_kl() {
  CheckResult r{"gaussian_kl_quadrature", true, "", 0.0};
  constexpr double kLog2Pi = 1.8378770664093454836;
  double worst = 0.0;
  for (double mu : {-2.0, 0.0, 2.0}) {
    for (double sigma : {0.5, 1.0, 2.0}) {
      const double lo = mu - 14.0 * sigma - 14.0, hi = mu + 14.0 * sigma + 14.0;
      auto f = [&](double left, double) {
        const double x = lo + left;
        const double logq = -0.5 * kLog2Pi - std::log(sigma) - 0.5 * std::pow((x - mu) / sigma, 2);
        return std::exp(logq) * (logq - (-0.5 * kLog2Pi - 0.5 * x * x));
      };
      const double q = quadrature::tanh_sinh(f, lo, hi, 1e-13).value;
      worst = std::max(worst, std::fabs(kl_gaussian({{mu}, {2.0 * std::log(sigma)}}).value - q));
    }
  }
  const double zero = kl_gaussian({{0.0}, {0.0}}).value;
  r.passed = worst <= 1e-6 && zero == 0.0;
  r.detail = "max |analytic - quadrature| " + sci(worst);
  return r;
}

/// Tiny config, `seeds` random points, train and eval modes.
inline CheckResult check_gradient(int seeds = 20) {
  CheckResult r{"full_gradient", true, "", 0.0};
  double worst = 0.0;
  for (int seed = 1; seed <= seeds; ++seed) {
    ModelConfig cfg;
    cfg.input_dim = 32;
    cfg.latent_dim = 4;
    cfg.categories = 3;
    cfg.hidden = 8;
    cfg.seed = static_cast<std::uint64_t>(seed);
    ModelParams p = ModelParams::initialize(cfg);
    SplitMix64 rng(derive_seed(cfg.seed, "selftest"));
    p.for_each_layer([&](const char*, DenseLayer& l) {
      for (double& b : l.bias) b = rng.uniform(-0.5, 0.5);
    });
    Vector h(cfg.input_dim), l(cfg.categories), noise(cfg.latent_dim);
    for (double& x : h) x = rng.normal();
    for (double& x : l) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
    for (double& x : noise) x = rng.normal();
    for (bool train_mode : {true, false}) {
      const std::span<const double> eps = train_mode ? std::span<const double>(noise) : std::span<const double>();
      const LossResult lr = loss_with_noise(h, l, p, cfg, eps);
      auto fn = [&](std::span<const double> q) {
        ModelParams probe = p;
        probe.assign(q);
        return loss_with_noise(h, l, probe, cfg, eps).terms.total;
      };
      const auto rep = finite_diff_check(fn, p.flatten(), lr.grad.flatten(), 1e-5, 1e-3);
      worst = std::max(worst, rep.max_rel_error);
    }
  }
  r.passed = worst <= 1e-3;
  r.detail = "max relative error " + sci(worst) + " over " + std::to_string(seeds) + " seeds";
  return r;
}

template <class F>
CheckResult timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = f();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Runs every check in order; stops nothing early so the report is complete.
inline std::vector<CheckResult> run_all(const Hooks& hooks = {}) {
  return {timed([&] { return check_specfun(hooks); }), timed([] { return check_beta_kl(); }),
          timed([] { return check_gauss_kl(); }), timed([] { return check_gradient(); })};
}

}  // namespace riskgrad::selftest
