#pragma once

// Dense layers, elementwise activations, the two reconstruction losses and
// Adam, each with an explicit backward pass. Reductions always run
// left-to-right so identical inputs give bitwise-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "riskgrad/rng.hpp"

namespace riskgrad {

using Vector = std::vector<double>;

inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": size mismatch (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
  }
}

/// Row-major out x in weight matrix plus bias.
struct DenseLayer {
  std::size_t out = 0;
  std::size_t in = 0;
  Vector weights;  // out * in
  Vector bias;     // out

  DenseLayer() = default;
  DenseLayer(std::size_t out_dim, std::size_t in_dim)
      : out(out_dim), in(in_dim), weights(out_dim * in_dim, 0.0), bias(out_dim, 0.0) {}

  double& w(std::size_t i, std::size_t k) { return weights[i * in + k]; }
  double w(std::size_t i, std::size_t k) const { return weights[i * in + k]; }

  std::size_t parameter_count() const { return weights.size() + bias.size(); }

  void validate() const {
    if (out == 0 || in == 0) throw std::invalid_argument("DenseLayer: zero dimension");
    require_same_size(weights.size(), out * in, "DenseLayer weights");
    require_same_size(bias.size(), out, "DenseLayer bias");
  }

  bool operator==(const DenseLayer&) const = default;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero bias.
inline DenseLayer glorot_layer(std::size_t out, std::size_t in, SplitMix64& rng) {
  DenseLayer layer(out, in);
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& v : layer.weights) v = rng.uniform(-limit, limit);
  return layer;
}

inline Vector dense_forward(const DenseLayer& layer, std::span<const double> in) {
  require_same_size(in.size(), layer.in, "dense_forward");
  Vector out(layer.out);
  for (std::size_t i = 0; i < layer.out; ++i) {
    double acc = layer.bias[i];
    const double* row = layer.weights.data() + i * layer.in;
    for (std::size_t k = 0; k < layer.in; ++k) acc += row[k] * in[k];
    out[i] = acc;
  }
  return out;
}

struct DenseGrad {
  Vector weights;
  Vector bias;
  Vector input;
};

inline DenseGrad dense_backward(const DenseLayer& layer, std::span<const double> in,
                                std::span<const double> upstream) {
  require_same_size(in.size(), layer.in, "dense_backward input");
  require_same_size(upstream.size(), layer.out, "dense_backward upstream");
  DenseGrad g{Vector(layer.weights.size(), 0.0), Vector(layer.out, 0.0), Vector(layer.in, 0.0)};
  for (std::size_t i = 0; i < layer.out; ++i) {
    const double up = upstream[i];
    g.bias[i] = up;
    double* grow = g.weights.data() + i * layer.in;
    for (std::size_t k = 0; k < layer.in; ++k) grow[k] = up * in[k];
  }
  for (std::size_t k = 0; k < layer.in; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < layer.out; ++i) acc += layer.w(i, k) * upstream[i];
    g.input[k] = acc;
  }
  return g;
}

enum class Activation { softplus, sigmoid, relu, identity };

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector activate(Activation kind, std::span<const double> in) {
  Vector out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = in[i];
    switch (kind) {
      case Activation::softplus: out[i] = softplus(x); break;
      case Activation::sigmoid: out[i] = sigmoid(x); break;
      case Activation::relu: out[i] = x > 0.0 ? x : 0.0; break;
      case Activation::identity: out[i] = x; break;
    }
  }
  return out;
}

/// Gradient with respect to the activation input, given its input, output and
/// the upstream gradient.
inline Vector activate_backward(Activation kind, std::span<const double> in,
                                std::span<const double> out, std::span<const double> upstream) {
  require_same_size(in.size(), upstream.size(), "activate_backward");
  require_same_size(out.size(), upstream.size(), "activate_backward");
  Vector g(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    double local = 1.0;
    switch (kind) {
      case Activation::softplus: local = sigmoid(in[i]); break;  // d/dx softplus = sigmoid
      case Activation::sigmoid: local = out[i] * (1.0 - out[i]); break;
      case Activation::relu: local = in[i] > 0.0 ? 1.0 : 0.0; break;
      case Activation::identity: break;
    }
    g[i] = local * upstream[i];
  }
  return g;
}

struct LossGrad {
  double value = 0.0;
  Vector grad;  // d value / d first argument
};

/// Summed binary cross-entropy. pred is clamped to [eps, 1 - eps]; the
/// gradient is zero where the clamp is active.
inline LossGrad bce(std::span<const double> pred, std::span<const double> target,
                    double eps = 1e-7) {
  require_same_size(pred.size(), target.size(), "bce");
  LossGrad r{0.0, Vector(pred.size(), 0.0)};
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double raw = pred[j];
    const double p = std::clamp(raw, eps, 1.0 - eps);
    const double t = target[j];
    r.value += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    if (raw > eps && raw < 1.0 - eps) r.grad[j] = -t / p + (1.0 - t) / (1.0 - p);
  }
  return r;
}

/// Squared L2 distance sum_k (a_k - b_k)^2; gradient is with respect to a.
inline LossGrad mse(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "mse");
  LossGrad r{0.0, Vector(a.size(), 0.0)};
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    r.value += diff * diff;
    r.grad[k] = 2.0 * diff;
  }
  return r;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::uint64_t step = 0;
  Vector first_moment;
  Vector second_moment;

  AdamState() = default;
  AdamState(AdamConfig c, std::size_t n)
      : cfg(c), first_moment(n, 0.0), second_moment(n, 0.0) {}
};

/// One bias-corrected Adam update of a flat parameter vector.
inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  require_same_size(params.size(), grads.size(), "adam_step");
  require_same_size(params.size(), state.first_moment.size(), "adam_step state");
  ++state.step;
  const auto& c = state.cfg;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double m_hat = m / corr1;
    const double v_hat = v / corr2;
    params[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  Vector numeric;
  bool passed = true;
};

/// Relative error with a floor on the denominator so that two near-zero
/// gradients compare as equal.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

/// Central-difference check of an analytic gradient. loss_fn must be pure.
inline GradCheckReport finite_diff_check(const std::function<double(std::span<const double>)>& loss_fn,
                                         std::span<const double> params,
                                         std::span<const double> analytic, double step,
                                         double tolerance) {
  require_same_size(params.size(), analytic.size(), "finite_diff_check");
  GradCheckReport rep;
  rep.numeric.resize(params.size());
  Vector probe(params.begin(), params.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = loss_fn(probe);
    probe[i] = orig - step;
    const double down = loss_fn(probe);
    probe[i] = orig;
    const double num = (up - down) / (2.0 * step);
    rep.numeric[i] = num;
    const double rel = relative_error(analytic[i], num);
    rep.max_abs_error = std::max(rep.max_abs_error, std::fabs(analytic[i] - num));
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error <= tolerance;
  return rep;
}

}  // namespace riskgrad
