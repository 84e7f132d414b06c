#pragma once

// Disentangled variational risk model.
//
//   h --head_semantic--> [mu, log_var]      z ~ N(mu, exp(log_var))
//   h --head_rejection-> softplus + floor -> (alpha, beta)   d = alpha / (alpha + beta)
//   d --dec_rejection--> sigmoid -> d'       (reconstructs the binary labels)
//   [z; d] --dec_semantic--> x'              (reconstructs h)
//
// Loss per example:
//   L = mse(h, x') + bce(d', l) + kl_weight * (KL_gauss + KL_beta) + reg_weight * bce(d, l)
// with Gaussian prior N(0, I) and Beta(1, 1) prior on every d^j. The Beta
// branch uses the posterior mean instead of a sample so every term has an
// analytic gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "riskgrad/diffmath.hpp"
#include "riskgrad/errors.hpp"
#include "riskgrad/rng.hpp"
#include "riskgrad/specfun.hpp"

namespace riskgrad {

struct ModelConfig {
  std::size_t input_dim = 256;  // H
  std::size_t latent_dim = 16;  // d_z
  std::size_t categories = 14;  // c
  std::size_t hidden = 64;
  double alpha_beta_floor = 1e-4;
  double prob_clamp = 1e-7;
  double kl_weight = 0.1;
  double reg_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1 || latent_dim < 1 || categories < 1 || hidden < 1) {
      throw ConfigError("model: all dimensions must be >= 1");
    }
    if (!(alpha_beta_floor > 0.0 && alpha_beta_floor < 0.1)) {
      throw ConfigError("model: alpha_beta_floor must lie in (0, 0.1)");
    }
    if (!(prob_clamp > 0.0 && prob_clamp < 0.1)) {
      throw ConfigError("model: prob_clamp must lie in (0, 0.1)");
    }
    if (!(kl_weight >= 0.0) || !(reg_weight >= 0.0)) {
      throw ConfigError("model: loss weights must be >= 0");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_dim", c.input_dim},
                     {"latent_dim", c.latent_dim},
                     {"categories", c.categories},
                     {"hidden", c.hidden},
                     {"alpha_beta_floor", c.alpha_beta_floor},
                     {"prob_clamp", c.prob_clamp},
                     {"kl_weight", c.kl_weight},
                     {"reg_weight", c.reg_weight},
                     {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("input_dim", c.input_dim);
  opt("latent_dim", c.latent_dim);
  opt("categories", c.categories);
  opt("hidden", c.hidden);
  opt("alpha_beta_floor", c.alpha_beta_floor);
  opt("prob_clamp", c.prob_clamp);
  opt("kl_weight", c.kl_weight);
  opt("reg_weight", c.reg_weight);
  opt("seed", c.seed);
}

struct ModelParams {
  DenseLayer head_semantic;   // H -> 2 d_z : [mu, log_var]
  DenseLayer head_rejection;  // H -> 2 c   : pre-softplus [alpha, beta]
  DenseLayer dec_rejection_hidden;  // c -> hidden, relu
  DenseLayer dec_rejection_out;     // hidden -> c, sigmoid
  DenseLayer dec_semantic_hidden;   // d_z + c -> hidden, relu
  DenseLayer dec_semantic_out;      // hidden -> H, identity

  /// Zero-valued parameters with the shapes implied by cfg.
  static ModelParams zeros(const ModelConfig& cfg) {
    ModelParams p;
    p.head_semantic = DenseLayer(2 * cfg.latent_dim, cfg.input_dim);
    p.head_rejection = DenseLayer(2 * cfg.categories, cfg.input_dim);
    p.dec_rejection_hidden = DenseLayer(cfg.hidden, cfg.categories);
    p.dec_rejection_out = DenseLayer(cfg.categories, cfg.hidden);
    p.dec_semantic_hidden = DenseLayer(cfg.hidden, cfg.latent_dim + cfg.categories);
    p.dec_semantic_out = DenseLayer(cfg.input_dim, cfg.hidden);
    return p;
  }

  /// Glorot-initialised weights drawn from the "init" sub-stream of cfg.seed.
  static ModelParams initialize(const ModelConfig& cfg) {
    cfg.validate();
    SplitMix64 rng(derive_seed(cfg.seed, "init"));
    ModelParams p;
    p.head_semantic = glorot_layer(2 * cfg.latent_dim, cfg.input_dim, rng);
    p.head_rejection = glorot_layer(2 * cfg.categories, cfg.input_dim, rng);
    p.dec_rejection_hidden = glorot_layer(cfg.hidden, cfg.categories, rng);
    p.dec_rejection_out = glorot_layer(cfg.categories, cfg.hidden, rng);
    p.dec_semantic_hidden = glorot_layer(cfg.hidden, cfg.latent_dim + cfg.categories, rng);
    p.dec_semantic_out = glorot_layer(cfg.input_dim, cfg.hidden, rng);
    return p;
  }

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("head_semantic", self.head_semantic);
    f("head_rejection", self.head_rejection);
    f("dec_rejection.0", self.dec_rejection_hidden);
    f("dec_rejection.1", self.dec_rejection_out);
    f("dec_semantic.0", self.dec_semantic_hidden);
    f("dec_semantic.1", self.dec_semantic_out);
  }
  template <class F>
  void for_each_layer(F&& f) {
    visit(*this, std::forward<F>(f));
  }
  template <class F>
  void for_each_layer(F&& f) const {
    visit(*this, std::forward<F>(f));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_layer([&](const char*, const DenseLayer& l) { n += l.parameter_count(); });
    return n;
  }

  /// Layer order as in for_each_layer; within a layer weights then bias.
  Vector flatten() const {
    Vector flat;
    flat.reserve(parameter_count());
    for_each_layer([&](const char*, const DenseLayer& l) {
      flat.insert(flat.end(), l.weights.begin(), l.weights.end());
      flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    });
    return flat;
  }

  void assign(std::span<const double> flat) {
    require_same_size(flat.size(), parameter_count(), "ModelParams::assign");
    std::size_t pos = 0;
    for_each_layer([&](const char*, DenseLayer& l) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.weights.size(),
                  l.weights.begin());
      pos += l.weights.size();
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
      pos += l.bias.size();
    });
  }

  void check_shapes(const ModelConfig& cfg) const {
    const ModelParams ref = zeros(cfg);
    std::vector<std::pair<std::size_t, std::size_t>> expected;
    ref.for_each_layer([&](const char*, const DenseLayer& l) { expected.emplace_back(l.out, l.in); });
    std::size_t i = 0;
    for_each_layer([&](const char* name, const DenseLayer& l) {
      l.validate();
      if (l.out != expected[i].first || l.in != expected[i].second) {
        throw std::invalid_argument(std::string("layer ") + name + " has shape " +
                                    std::to_string(l.out) + "x" + std::to_string(l.in) +
                                    ", config implies " + std::to_string(expected[i].first) + "x" +
                                    std::to_string(expected[i].second));
      }
      ++i;
    });
  }

  bool operator==(const ModelParams&) const = default;
};

struct SemanticPosterior {
  Vector mu;
  Vector log_var;
};

struct RejectionPosterior {
  Vector alpha;
  Vector beta;
};

/// Per-category risk intensities, each in (0, 1).
struct RiskDistribution {
  Vector values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t j) const { return values[j]; }
  double max() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, v);
    return m;
  }
  bool operator==(const RiskDistribution&) const = default;
};

enum class Mode { train, eval };

inline std::pair<SemanticPosterior, RejectionPosterior> infer(std::span<const double> h,
                                                              const ModelParams& params,
                                                              const ModelConfig& cfg) {
  require_same_size(h.size(), cfg.input_dim, "infer");
  const Vector sem = dense_forward(params.head_semantic, h);
  const Vector rej = dense_forward(params.head_rejection, h);
  SemanticPosterior sp{Vector(sem.begin(), sem.begin() + static_cast<std::ptrdiff_t>(cfg.latent_dim)),
                       Vector(sem.begin() + static_cast<std::ptrdiff_t>(cfg.latent_dim), sem.end())};
  RejectionPosterior rp;
  rp.alpha.resize(cfg.categories);
  rp.beta.resize(cfg.categories);
  for (std::size_t j = 0; j < cfg.categories; ++j) {
    rp.alpha[j] = softplus(rej[j]) + cfg.alpha_beta_floor;
    rp.beta[j] = softplus(rej[cfg.categories + j]) + cfg.alpha_beta_floor;
  }
  return {std::move(sp), std::move(rp)};
}

/// Train mode: reparameterised draw mu + sigma * eps. Eval mode: mu.
inline Vector sample_semantic(const SemanticPosterior& post, Mode mode, SplitMix64* rng = nullptr) {
  if (mode == Mode::eval) return post.mu;
  if (rng == nullptr) throw std::invalid_argument("sample_semantic: train mode needs a generator");
  Vector z(post.mu.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    z[k] = post.mu[k] + std::exp(0.5 * post.log_var[k]) * rng->normal();
  }
  return z;
}

inline RiskDistribution rejection_point(const RejectionPosterior& post, double prob_clamp = 1e-7) {
  require_same_size(post.alpha.size(), post.beta.size(), "rejection_point");
  RiskDistribution d{Vector(post.alpha.size())};
  for (std::size_t j = 0; j < d.values.size(); ++j) {
    const double mean = post.alpha[j] / (post.alpha[j] + post.beta[j]);
    d.values[j] = std::clamp(mean, prob_clamp, 1.0 - prob_clamp);
  }
  return d;
}

inline Vector decode_rejection(std::span<const double> d, const ModelParams& params) {
  const Vector a = activate(Activation::relu, dense_forward(params.dec_rejection_hidden, d));
  return activate(Activation::sigmoid, dense_forward(params.dec_rejection_out, a));
}

inline Vector decode_semantic(std::span<const double> z, std::span<const double> d,
                              const ModelParams& params) {
  Vector joint(z.begin(), z.end());
  joint.insert(joint.end(), d.begin(), d.end());
  require_same_size(joint.size(), params.dec_semantic_hidden.in, "decode_semantic");
  const Vector a = activate(Activation::relu, dense_forward(params.dec_semantic_hidden, joint));
  return dense_forward(params.dec_semantic_out, a);
}

struct GaussianKL {
  double value = 0.0;
  Vector grad_mu;
  Vector grad_log_var;
};

/// KL(N(mu, diag exp(log_var)) || N(0, I)).
inline GaussianKL kl_gaussian(const SemanticPosterior& post) {
  require_same_size(post.mu.size(), post.log_var.size(), "kl_gaussian");
  GaussianKL r{0.0, Vector(post.mu.size()), Vector(post.mu.size())};
  for (std::size_t k = 0; k < post.mu.size(); ++k) {
    const double mu = post.mu[k];
    const double lv = post.log_var[k];
    const double var = std::exp(lv);
    r.value += 0.5 * (mu * mu + var - lv - 1.0);
    r.grad_mu[k] = mu;
    r.grad_log_var[k] = 0.5 * (var - 1.0);
  }
  return r;
}

struct BetaKL {
  double value = 0.0;
  Vector grad_alpha;
  Vector grad_beta;
};

/// sum_j KL(Beta(alpha_j, beta_j) || Beta(1, 1)).
inline BetaKL kl_beta(const RejectionPosterior& post) {
  require_same_size(post.alpha.size(), post.beta.size(), "kl_beta");
  const std::size_t c = post.alpha.size();
  BetaKL r{0.0, Vector(c), Vector(c)};
  for (std::size_t j = 0; j < c; ++j) {
    const double a = post.alpha[j];
    const double b = post.beta[j];
    const double s = a + b;
    const double psi_s = specfun::digamma(s);
    r.value += -specfun::log_beta(a, b) + (a - 1.0) * specfun::digamma(a) +
               (b - 1.0) * specfun::digamma(b) - (s - 2.0) * psi_s;
    // The psi terms from differentiating -log B cancel against the product rule.
    const double tri_s = specfun::trigamma(s);
    r.grad_alpha[j] = (a - 1.0) * specfun::trigamma(a) - (s - 2.0) * tri_s;
    r.grad_beta[j] = (b - 1.0) * specfun::trigamma(b) - (s - 2.0) * tri_s;
  }
  return r;
}

struct LossBreakdown {
  double semantic_recon = 0.0;   // mse(h, x')
  double rejection_recon = 0.0;  // bce(d', l)
  double kl_gauss = 0.0;
  double kl_beta = 0.0;
  double regularizer = 0.0;      // bce(d, l)
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    semantic_recon += o.semantic_recon;
    rejection_recon += o.rejection_recon;
    kl_gauss += o.kl_gauss;
    kl_beta += o.kl_beta;
    regularizer += o.regularizer;
    total += o.total;
    return *this;
  }
  LossBreakdown& operator*=(double s) {
    semantic_recon *= s;
    rejection_recon *= s;
    kl_gauss *= s;
    kl_beta *= s;
    regularizer *= s;
    total *= s;
    return *this;
  }

  /// Name of the first non-finite term, if any.
  std::optional<std::string> non_finite_term() const {
    const std::pair<const char*, double> terms[] = {{"semantic_recon", semantic_recon},
                                                    {"rejection_recon", rejection_recon},
                                                    {"kl_gauss", kl_gauss},
                                                    {"kl_beta", kl_beta},
                                                    {"regularizer", regularizer},
                                                    {"total", total}};
    for (const auto& [name, v] : terms) {
      if (!std::isfinite(v)) return std::string(name);
    }
    return std::nullopt;
  }
};

struct LossResult {
  LossBreakdown terms;
  ModelParams grad;  // same shapes as the parameters
};

/// Loss and full parameter gradient for one example. `noise` holds the
/// standard-normal draws for the semantic sample; an empty span means the
/// eval-mode path z = mu.
inline LossResult loss_with_noise(std::span<const double> h, std::span<const double> labels,
                                  const ModelParams& params, const ModelConfig& cfg,
                                  std::span<const double> noise) {
  const std::size_t dz = cfg.latent_dim;
  const std::size_t c = cfg.categories;
  require_same_size(h.size(), cfg.input_dim, "loss_total features");
  require_same_size(labels.size(), c, "loss_total labels");
  if (!noise.empty()) require_same_size(noise.size(), dz, "loss_total noise");

  // ---- forward
  const Vector sem_out = dense_forward(params.head_semantic, h);
  const Vector rej_pre = dense_forward(params.head_rejection, h);

  SemanticPosterior sp{Vector(sem_out.begin(), sem_out.begin() + static_cast<std::ptrdiff_t>(dz)),
                       Vector(sem_out.begin() + static_cast<std::ptrdiff_t>(dz), sem_out.end())};
  Vector sigma(dz);
  Vector z(dz);
  for (std::size_t k = 0; k < dz; ++k) {
    sigma[k] = std::exp(0.5 * sp.log_var[k]);
    z[k] = sp.mu[k] + (noise.empty() ? 0.0 : sigma[k] * noise[k]);
  }

  RejectionPosterior rp{Vector(c), Vector(c)};
  Vector d_raw(c), d(c);
  for (std::size_t j = 0; j < c; ++j) {
    rp.alpha[j] = softplus(rej_pre[j]) + cfg.alpha_beta_floor;
    rp.beta[j] = softplus(rej_pre[c + j]) + cfg.alpha_beta_floor;
    d_raw[j] = rp.alpha[j] / (rp.alpha[j] + rp.beta[j]);
    d[j] = std::clamp(d_raw[j], cfg.prob_clamp, 1.0 - cfg.prob_clamp);
  }

  const Vector rej_h_pre = dense_forward(params.dec_rejection_hidden, d);
  const Vector rej_h = activate(Activation::relu, rej_h_pre);
  const Vector rej_o_pre = dense_forward(params.dec_rejection_out, rej_h);
  const Vector d_prime = activate(Activation::sigmoid, rej_o_pre);

  Vector joint(z);
  joint.insert(joint.end(), d.begin(), d.end());
  const Vector sem_h_pre = dense_forward(params.dec_semantic_hidden, joint);
  const Vector sem_h = activate(Activation::relu, sem_h_pre);
  const Vector x_prime = dense_forward(params.dec_semantic_out, sem_h);

  const LossGrad l_sem = mse(x_prime, h);
  const LossGrad l_rej = bce(d_prime, labels, cfg.prob_clamp);
  const LossGrad l_reg = bce(d, labels, cfg.prob_clamp);
  const GaussianKL kg = kl_gaussian(sp);
  // Non-finite shape parameters surface as a NaN term, not a domain error.
  const bool finite_shapes =
      std::all_of(rp.alpha.begin(), rp.alpha.end(), [](double v) { return std::isfinite(v); }) &&
      std::all_of(rp.beta.begin(), rp.beta.end(), [](double v) { return std::isfinite(v); });
  const BetaKL kb = finite_shapes ? kl_beta(rp) : BetaKL{std::nan(""), Vector(c, 0.0), Vector(c, 0.0)};

  LossResult out;
  auto& t = out.terms;
  t.semantic_recon = l_sem.value;
  t.rejection_recon = l_rej.value;
  t.kl_gauss = kg.value;
  t.kl_beta = kb.value;
  t.regularizer = l_reg.value;
  t.total = (t.semantic_recon + t.rejection_recon) + cfg.kl_weight * (t.kl_gauss + t.kl_beta) +
            cfg.reg_weight * t.regularizer;

  // ---- backward
  auto& g = out.grad;

  // semantic decoder
  const DenseGrad g_sem_out = dense_backward(params.dec_semantic_out, sem_h, l_sem.grad);
  const Vector g_sem_h_pre =
      activate_backward(Activation::relu, sem_h_pre, sem_h, g_sem_out.input);
  const DenseGrad g_sem_hidden = dense_backward(params.dec_semantic_hidden, joint, g_sem_h_pre);
  g.dec_semantic_out = DenseLayer(params.dec_semantic_out.out, params.dec_semantic_out.in);
  g.dec_semantic_out.weights = g_sem_out.weights;
  g.dec_semantic_out.bias = g_sem_out.bias;
  g.dec_semantic_hidden = DenseLayer(params.dec_semantic_hidden.out, params.dec_semantic_hidden.in);
  g.dec_semantic_hidden.weights = g_sem_hidden.weights;
  g.dec_semantic_hidden.bias = g_sem_hidden.bias;

  // rejection decoder
  const Vector g_rej_o_pre =
      activate_backward(Activation::sigmoid, rej_o_pre, d_prime, l_rej.grad);
  const DenseGrad g_rej_out = dense_backward(params.dec_rejection_out, rej_h, g_rej_o_pre);
  const Vector g_rej_h_pre =
      activate_backward(Activation::relu, rej_h_pre, rej_h, g_rej_out.input);
  const DenseGrad g_rej_hidden = dense_backward(params.dec_rejection_hidden, d, g_rej_h_pre);
  g.dec_rejection_out = DenseLayer(params.dec_rejection_out.out, params.dec_rejection_out.in);
  g.dec_rejection_out.weights = g_rej_out.weights;
  g.dec_rejection_out.bias = g_rej_out.bias;
  g.dec_rejection_hidden =
      DenseLayer(params.dec_rejection_hidden.out, params.dec_rejection_hidden.in);
  g.dec_rejection_hidden.weights = g_rej_hidden.weights;
  g.dec_rejection_hidden.bias = g_rej_hidden.bias;

  // rejection head: d feeds both decoders and the regulariser
  Vector g_pre_rej(2 * c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double g_d = g_sem_hidden.input[dz + j] + g_rej_hidden.input[j] + cfg.reg_weight * l_reg.grad[j];
    if (d_raw[j] <= cfg.prob_clamp || d_raw[j] >= 1.0 - cfg.prob_clamp) g_d = 0.0;
    const double a = rp.alpha[j];
    const double b = rp.beta[j];
    const double s2 = (a + b) * (a + b);
    const double g_alpha = g_d * (b / s2) + cfg.kl_weight * kb.grad_alpha[j];
    const double g_beta = -g_d * (a / s2) + cfg.kl_weight * kb.grad_beta[j];
    g_pre_rej[j] = g_alpha * sigmoid(rej_pre[j]);
    g_pre_rej[c + j] = g_beta * sigmoid(rej_pre[c + j]);
  }
  const DenseGrad g_head_rej = dense_backward(params.head_rejection, h, g_pre_rej);
  g.head_rejection = DenseLayer(params.head_rejection.out, params.head_rejection.in);
  g.head_rejection.weights = g_head_rej.weights;
  g.head_rejection.bias = g_head_rej.bias;

  // semantic head
  Vector g_sem(2 * dz, 0.0);
  for (std::size_t k = 0; k < dz; ++k) {
    const double g_z = g_sem_hidden.input[k];
    g_sem[k] = g_z + cfg.kl_weight * kg.grad_mu[k];
    const double dz_dlv = noise.empty() ? 0.0 : 0.5 * sigma[k] * noise[k];
    g_sem[dz + k] = g_z * dz_dlv + cfg.kl_weight * kg.grad_log_var[k];
  }
  const DenseGrad g_head_sem = dense_backward(params.head_semantic, h, g_sem);
  g.head_semantic = DenseLayer(params.head_semantic.out, params.head_semantic.in);
  g.head_semantic.weights = g_head_sem.weights;
  g.head_semantic.bias = g_head_sem.bias;

  return out;
}

/// Loss and gradient for one example. Train mode draws the semantic noise
/// from rng; eval mode uses z = mu.
inline LossResult loss_total(std::span<const double> h, std::span<const double> labels,
                             const ModelParams& params, const ModelConfig& cfg, Mode mode,
                             SplitMix64* rng = nullptr) {
  if (mode == Mode::eval) return loss_with_noise(h, labels, params, cfg, {});
  if (rng == nullptr) throw std::invalid_argument("loss_total: train mode needs a generator");
  Vector noise(cfg.latent_dim);
  for (double& e : noise) e = rng->normal();
  return loss_with_noise(h, labels, params, cfg, noise);
}

/// Eval-mode risk: the clamped posterior mean of the Beta head.
inline RiskDistribution predict_risk(std::span<const double> h, const ModelParams& params,
                                     const ModelConfig& cfg) {
  const auto [sp, rp] = infer(h, params, cfg);
  return rejection_point(rp, cfg.prob_clamp);
}

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  AdamConfig adam;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.adam.lr},
                     {"beta1", c.adam.beta1},
                     {"beta2", c.adam.beta2},
                     {"eps", c.adam.eps}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("epochs", c.epochs);
  opt("batch_size", c.batch_size);
  opt("lr", c.adam.lr);
  opt("beta1", c.adam.beta1);
  opt("beta2", c.adam.beta2);
  opt("eps", c.adam.eps);
}

struct EpochStats {
  std::size_t epoch = 0;
  LossBreakdown mean;  // per-example means over the epoch
  double min_kl_gauss = 0.0;
  double min_kl_beta = 0.0;
};

inline nlohmann::json to_json(const EpochStats& s) {
  return nlohmann::json{{"epoch", s.epoch},
                        {"total", s.mean.total},
                        {"semantic_recon", s.mean.semantic_recon},
                        {"rejection_recon", s.mean.rejection_recon},
                        {"kl_gauss", s.mean.kl_gauss},
                        {"kl_beta", s.mean.kl_beta},
                        {"regularizer", s.mean.regularizer},
                        {"min_kl_gauss", s.min_kl_gauss},
                        {"min_kl_beta", s.min_kl_beta}};
}

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> epochs;
};

/// Mini-batch Adam on the mean batch loss. Batches are reshuffled every
/// epoch from the "shuffle" sub-stream; semantic noise comes from the
/// "sample" sub-stream. Deterministic for a given cfg.seed.
inline TrainResult train(const std::vector<Vector>& features, const std::vector<Vector>& labels,
                         const ModelConfig& cfg, const TrainConfig& tcfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  if (features.empty()) throw DataError("train: empty training set");
  require_same_size(features.size(), labels.size(), "train");
  if (tcfg.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");

  TrainResult result{ModelParams::initialize(cfg), {}};
  Vector flat = result.params.flatten();
  AdamState adam(tcfg.adam, flat.size());
  SplitMix64 sample_rng(derive_seed(cfg.seed, "sample"));
  const std::uint64_t shuffle_root = derive_seed(cfg.seed, "shuffle");
  const std::size_t n = features.size();

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const auto order = shuffled_epoch_order(n, shuffle_root, epoch);
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.min_kl_gauss = INFINITY;
    stats.min_kl_beta = INFINITY;
    for (std::size_t start = 0; start < n; start += tcfg.batch_size) {
      const std::size_t end = std::min(start + tcfg.batch_size, n);
      Vector grad_sum(flat.size(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const LossResult lr =
            loss_total(features[i], labels[i], result.params, cfg, Mode::train, &sample_rng);
        if (auto bad = lr.terms.non_finite_term()) {
          throw NumericError("non-finite " + *bad + " loss at epoch " + std::to_string(epoch + 1) +
                             ", example index " + std::to_string(i));
        }
        stats.mean += lr.terms;
        stats.min_kl_gauss = std::min(stats.min_kl_gauss, lr.terms.kl_gauss);
        stats.min_kl_beta = std::min(stats.min_kl_beta, lr.terms.kl_beta);
        const Vector g = lr.grad.flatten();
        for (std::size_t p = 0; p < g.size(); ++p) grad_sum[p] += g[p];
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& v : grad_sum) v *= inv;
      adam_step(adam, flat, grad_sum);
      result.params.assign(flat);
    }
    stats.mean *= 1.0 / static_cast<double>(n);
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_json(const ModelParams& params, const ModelConfig& cfg) {
  nlohmann::json layers = nlohmann::json::object();
  params.for_each_layer([&](const char* name, const DenseLayer& l) {
    layers[std::string(name) + ".weight"] = {{"shape", {l.out, l.in}}, {"data", l.weights}};
    layers[std::string(name) + ".bias"] = {{"shape", {l.out, 1}}, {"data", l.bias}};
  });
  return nlohmann::json{{"version", kCheckpointVersion}, {"config", cfg}, {"params", layers}};
}

inline std::pair<ModelParams, ModelConfig> checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || !j.contains("version")) throw DataError("checkpoint: missing version");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported version " + std::to_string(version) +
                      " (supported: " + std::to_string(kCheckpointVersion) + ")");
    }
    ModelConfig cfg = j.at("config").get<ModelConfig>();
    cfg.validate();
    ModelParams params = ModelParams::zeros(cfg);
    const auto& layers = j.at("params");
    auto read = [&](const std::string& key, std::size_t rows, std::size_t cols, Vector& dst) {
      if (!layers.contains(key)) throw DataError("checkpoint: missing tensor " + key);
      const auto& t = layers.at(key);
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      if (shape != std::vector<std::size_t>{rows, cols}) {
        throw DataError("checkpoint: tensor " + key + " has inconsistent shape");
      }
      auto data = t.at("data").get<Vector>();
      if (data.size() != rows * cols) {
        throw DataError("checkpoint: tensor " + key + " has " + std::to_string(data.size()) +
                        " values, shape implies " + std::to_string(rows * cols));
      }
      for (double v : data) {
        if (!std::isfinite(v)) throw DataError("checkpoint: non-finite value in " + key);
      }
      dst = std::move(data);
    };
    params.for_each_layer([&](const char* name, DenseLayer& l) {
      read(std::string(name) + ".weight", l.out, l.in, l.weights);
      read(std::string(name) + ".bias", l.out, 1, l.bias);
    });
    return {std::move(params), cfg};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed content: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const ModelParams& params, const ModelConfig& cfg,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << checkpoint_json(params, cfg).dump() << '\n';
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

inline std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + " is corrupted: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace riskgrad
