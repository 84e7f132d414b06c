// Acceptance harness: one PASS/FAIL line per criterion, non-zero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "keyword_oracle.hpp"
#include "riskgrad/evalkit.hpp"
#include "riskgrad/llm_backend.hpp"
#include "riskgrad/refine.hpp"
#include "riskgrad/risk_model.hpp"
#include "riskgrad/specfun.hpp"
#include "stub_server.hpp"
#include "synthetic.hpp"

using namespace riskgrad;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

int failures = 0;

void criterion(int id, const char* title, double time_limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.ok = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (time_limit_s > 0 && secs >= time_limit_s && o.ok) {
    o.ok = false;
    o.detail = "runtime " + std::to_string(secs) + " s exceeds " + std::to_string(time_limit_s) + " s";
  }
  if (!o.ok) ++failures;
  std::printf("%s criterion %2d: %s [%.2f s]%s%s\n", o.ok ? "PASS" : "FAIL", id, title, secs,
              o.detail.empty() ? "" : " - ", o.detail.c_str());
  std::fflush(stdout);
}

std::string num(double x) {
  char b[64];
  std::snprintf(b, sizeof b, "%.3g", x);
  return b;
}

double beta_kl_boost(double a, double b) {
  const double log_norm = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  boost::math::quadrature::tanh_sinh<double> integrator;
  auto f = [&](double x, double xc) {
    const double one_minus = x <= 0.5 ? 1.0 - x : xc;
    const double xx = x <= 0.5 ? x : 1.0 - xc;
    if (xx <= 0.0 || one_minus <= 0.0) return 0.0;
    const double logq = (a - 1.0) * std::log(xx) + (b - 1.0) * std::log(one_minus) - log_norm;
    return std::exp(logq) * logq;
  };
  return integrator.integrate(f, 0.0, 1.0);
}

double gauss_kl_boost(double mu, double sigma) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  boost::math::quadrature::tanh_sinh<double> integrator;
  const double lo = mu - 14.0 * sigma - 14.0, hi = mu + 14.0 * sigma + 14.0;
  auto f = [&](double x) {
    const double logq = -0.5 * kLog2Pi - std::log(sigma) - 0.5 * std::pow((x - mu) / sigma, 2);
    const double logp = -0.5 * kLog2Pi - 0.5 * x * x;
    return std::exp(logq) * (logq - logp);
  };
  return integrator.integrate(f, lo, hi);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim = 32;
  cfg.latent_dim = 4;
  cfg.categories = 3;
  cfg.hidden = 8;
  cfg.seed = seed;
  return cfg;
}

// request schema: model, messages[{role,content}], temperature, max_tokens
bool valid_request(const std::string& body, std::string& why) {
  try {
    const auto j = nlohmann::json::parse(body);
    if (!j.is_object()) return why = "not an object", false;
    if (!j.contains("model") || !j["model"].is_string()) return why = "model", false;
    if (!j.contains("messages") || !j["messages"].is_array() || j["messages"].empty()) return why = "messages", false;
    for (const auto& m : j["messages"]) {
      if (!m.is_object() || m.size() != 2) return why = "message keys", false;
      const auto role = m.value("role", std::string());
      if (role != "system" && role != "user" && role != "assistant") return why = "role " + role, false;
      if (!m.contains("content") || !m["content"].is_string()) return why = "content", false;
    }
    if (!j.contains("temperature") || !j["temperature"].is_number()) return why = "temperature", false;
    if (!j.contains("max_tokens") || !j["max_tokens"].is_number_integer()) return why = "max_tokens", false;
    return true;
  } catch (const std::exception& e) {
    why = e.what();
    return false;
  }
}

std::vector<ChatMessage> messages_of(const std::string& body) {
  std::vector<ChatMessage> out;
  const auto j = nlohmann::json::parse(body);
  for (const auto& m : j["messages"]) {
    out.push_back({parse_role(m["role"].get<std::string>()), m["content"].get<std::string>()});
  }
  return out;
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");

  criterion(1, "special-function recurrences and digamma vs d/dx lgamma", 2.0, [] {
    Outcome o;
    double psi = 0, tri = 0, fd = 0;
    for (int i = 0; i < 1000; ++i) {
      const double x = 0.1 + (100.0 - 0.1) * i / 999.0;
      psi = std::max(psi, std::fabs(specfun::digamma(x + 1) - specfun::digamma(x) - 1.0 / x));
      tri = std::max(tri, std::fabs(specfun::trigamma(x + 1) - specfun::trigamma(x) + 1.0 / (x * x)));
      const double h = 1e-5 * std::max(1.0, x);
      const double d = (specfun::lgamma(x + h) - specfun::lgamma(x - h)) / (2 * h);
      fd = std::max(fd, relative_error(specfun::digamma(x), d, 1e-7));
    }
    o.require(psi <= 1e-9, "digamma recurrence " + num(psi));
    o.require(tri <= 1e-9, "trigamma recurrence " + num(tri));
    o.require(fd <= 1e-5, "digamma vs finite difference " + num(fd));
    o.detail = o.ok ? "max errors " + num(psi) + ", " + num(tri) + ", rel " + num(fd) : o.detail;
    return o;
  });

  criterion(2, "Beta KL closed form vs quadrature on the 36-point grid", 5.0, [] {
    Outcome o;
    const double grid[] = {0.5, 1.0, 1.5, 2.0, 3.0, 5.0};
    double worst = 0;
    for (double a : grid)
      for (double b : grid) worst = std::max(worst, std::fabs(kl_beta({{a}, {b}}).value - beta_kl_boost(a, b)));
    o.require(worst <= 1e-6, "max deviation " + num(worst));
    o.require(kl_beta({{1.0}, {1.0}}).value == 0.0, "KL(Beta(1,1)||Beta(1,1)) is not exactly 0");
    if (o.ok) o.detail = "max deviation " + num(worst);
    return o;
  });

  criterion(3, "Gaussian KL closed form vs quadrature", 0, [] {
    Outcome o;
    double worst = 0;
    for (double mu : {-2.0, 0.0, 2.0})
      for (double s : {0.5, 1.0, 2.0})
        worst = std::max(worst, std::fabs(kl_gaussian({{mu}, {2 * std::log(s)}}).value - gauss_kl_boost(mu, s)));
    o.require(worst <= 1e-6, "max deviation " + num(worst));
    o.require(kl_gaussian({{0.0}, {0.0}}).value == 0.0, "KL(N(0,1)||N(0,1)) is not 0");
    if (o.ok) o.detail = "max deviation " + num(worst);
    return o;
  });

  criterion(4, "full gradient vs central differences, 20 seeds", 10.0, [] {
    Outcome o;
    double worst = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const ModelConfig cfg = tiny_config(seed);
      ModelParams p = ModelParams::initialize(cfg);
      SplitMix64 rng(seed * 977);
      p.for_each_layer([&](const char*, DenseLayer& l) {
        for (double& b : l.bias) b = rng.uniform(-0.5, 0.5);
      });
      Vector h(cfg.input_dim), l(cfg.categories), noise(cfg.latent_dim);
      for (double& x : h) x = rng.normal();
      for (double& x : l) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
      for (double& x : noise) x = rng.normal();
      for (bool train_mode : {true, false}) {
        const std::span<const double> eps = train_mode ? std::span<const double>(noise) : std::span<const double>();
        const LossResult r = loss_with_noise(h, l, p, cfg, eps);
        auto fn = [&](std::span<const double> q) {
          ModelParams probe = p;
          probe.assign(q);
          return loss_with_noise(h, l, probe, cfg, eps).terms.total;
        };
        worst = std::max(worst, finite_diff_check(fn, p.flatten(), r.grad.flatten(), 1e-5, 1e-3).max_rel_error);
      }
    }
    o.require(worst <= 1e-3, "max relative error " + num(worst));
    if (o.ok) o.detail = "max relative error " + num(worst);
    return o;
  });

  criterion(5, "synthetic training: per-category AUC >= 0.95, KL terms finite and >= -1e-9", 60.0, [] {
    Outcome o;
    ModelConfig cfg;
    cfg.input_dim = 64;
    cfg.categories = 4;
    cfg.latent_dim = 16;
    cfg.hidden = 64;
    cfg.seed = 2024;
    const auto data = synth::planted_linear(2000, cfg.input_dim, cfg.categories, 0.05, 99);
    TrainConfig t;
    t.epochs = 50;
    t.batch_size = 32;
    t.adam.lr = 1e-2;
    bool kl_ok = true;
    std::string kl_msg;
    const TrainResult r = train(data.features, data.noisy_labels, cfg, t, [&](const EpochStats& s) {
      const bool good = std::isfinite(s.min_kl_gauss) && std::isfinite(s.min_kl_beta) && s.min_kl_gauss >= -1e-9 &&
                        s.min_kl_beta >= -1e-9 && std::isfinite(s.mean.kl_gauss) && std::isfinite(s.mean.kl_beta);
      if (!good && kl_ok) {
        kl_ok = false;
        kl_msg = "epoch " + std::to_string(s.epoch) + " KL min " + num(s.min_kl_gauss) + "/" + num(s.min_kl_beta);
      }
    });
    o.require(kl_ok, kl_msg);
    double min_auc = 1.0;
    std::string aucs;
    for (std::size_t j = 0; j < cfg.categories; ++j) {
      std::vector<double> scores, labels;
      for (std::size_t i = 0; i < data.features.size(); ++i) {
        scores.push_back(predict_risk(data.features[i], r.params, cfg)[j]);
        labels.push_back(data.clean_labels[i][j]);
      }
      const double auc = synth::pairwise_auc(scores, labels);
      min_auc = std::min(min_auc, auc);
      aucs += (j ? "," : "") + num(auc);
    }
    o.require(min_auc >= 0.95, "AUC per category " + aucs);
    if (o.ok) o.detail = "AUC per category " + aucs + " after " + std::to_string(t.epochs) + " epochs";
    return o;
  });

  criterion(6, "effort and risky-set boundary semantics", 0, [] {
    Outcome o;
    const RiskThresholds th;
    o.require(effort_of(0.80, th) == EffortLevel::Critical, "0.80");
    o.require(effort_of(0.50, th) == EffortLevel::Mild, "0.50");
    o.require(effort_of(0.49, th) == EffortLevel::Minor, "0.49 effort");
    o.require(risky_set(RiskDistribution{{0.49}}, th.tau).size() == 1, "0.49 in S");
    o.require(risky_set(RiskDistribution{{0.30}}, th.tau).size() == 1, "0.30 in S");
    o.require(risky_set(RiskDistribution{{0.29999}}, th.tau).empty(), "0.29999 not in S");
    return o;
  });

  criterion(7, "textual gradient goldens, byte-exact", 0, [] {
    Outcome o;
    const std::string dir = RISKGRAD_GOLDEN_DIR;
    const auto spec = nlohmann::json::parse(slurp(dir + "/textgrad_cases.json"));
    const CategoryVocab vocab{spec["vocab"].get<std::vector<std::string>>()};
    std::size_t n = 0, empty = 0;
    for (const auto& c : spec["cases"]) {
      const auto file = c["file"].get<std::string>();
      const auto expected = slurp(dir + "/" + file);
      const auto got = build_textgrad(RiskDistribution{c["risk"].get<std::vector<double>>()}, vocab, RiskThresholds{});
      o.require(got.text == expected, "mismatch in " + file);
      ++n;
      if (expected.empty()) ++empty;
    }
    o.require(n == 5 && empty == 1, "expected 5 goldens including the empty case");
    return o;
  });

  criterion(8, "closed-loop refinement with keyword mocks, 50 prompts", 5.0, [] {
    Outcome o;
    const auto vocab = synth::keyword_vocab();
    const auto scorer = synth::keyword_scorer(vocab, synth::keyword_map());
    const MockBackend target(MockSpec{MockKind::template_target, {}, ""});
    const MockBackend refiner(MockSpec{MockKind::keyword_refiner, synth::keyword_map(), ""});
    RefineConfig cfg;
    cfg.max_iters = 5;
    std::size_t safe = 0, clean = 0, monotone = 0;
    const auto prompts = synth::planted_prompts(50, 8);
    for (const auto& p : prompts) {
      const auto trace = refine_loop(p.text, target, refiner, scorer, vocab, cfg);
      if (trace.ended_safe(cfg.thresholds.tau) && trace.steps.size() <= 6) ++safe;
      const std::string low = detail::ascii_lower(trace.final_prompt());
      bool any = false;
      for (const auto& [cat, words] : synth::keyword_map())
        for (const auto& w : words) any = any || low.find(w) != std::string::npos;
      if (!any) ++clean;
      bool mono = true;
      for (std::size_t t = 1; t < trace.steps.size(); ++t) mono = mono && trace.steps[t].risk.max() <= trace.steps[t - 1].risk.max();
      if (mono) ++monotone;
    }
    o.require(safe == 50, std::to_string(safe) + "/50 traces ended safe within T_max");
    o.require(clean == 50, std::to_string(clean) + "/50 final prompts free of planted keywords");
    o.require(monotone == 50, std::to_string(monotone) + "/50 traces with non-increasing max risk");
    return o;
  });

  criterion(9, "sweep monotonicity and brute-force recount", 0, [] {
    Outcome o;
    SplitMix64 rng(31);
    std::vector<ScoredExample> data;
    for (int i = 0; i < 1000; ++i) {
      ScoredExample ex;
      ex.id = std::to_string(i);
      ex.harmful = rng.below(2) == 1;
      for (int j = 0; j < 4; ++j) ex.risk.values.push_back(ex.harmful ? std::sqrt(rng.uniform()) : rng.uniform() * rng.uniform());
      data.push_back(std::move(ex));
    }
    std::vector<double> taus;
    for (int k = 1; k <= 20; ++k) taus.push_back(k / 21.0);
    const auto rep = sweep(data, taus);
    o.require(rep.rows.size() == 20, "row count");
    for (std::size_t k = 0; k < rep.rows.size(); ++k) {
      std::size_t fs_ = 0, fh = 0, ns = 0, nh = 0;
      for (const auto& ex : data) {
        bool any = false;
        for (double v : ex.risk.values) any = any || v >= taus[k];
        (ex.harmful ? nh : ns)++;
        if (any) (ex.harmful ? fh : fs_)++;
      }
      o.require(rep.rows[k].fpr == static_cast<double>(fs_) / static_cast<double>(ns), "FPR recount at row " + std::to_string(k));
      o.require(rep.rows[k].detection == static_cast<double>(fh) / static_cast<double>(nh), "detection recount at row " + std::to_string(k));
      o.require(rep.rows[k].n_safe == ns && rep.rows[k].n_harmful == nh, "counts at row " + std::to_string(k));
      if (k > 0) {
        o.require(rep.rows[k].fpr <= rep.rows[k - 1].fpr, "FPR increased at row " + std::to_string(k));
        o.require(rep.rows[k].detection <= rep.rows[k - 1].detection, "detection increased at row " + std::to_string(k));
      }
    }
    return o;
  });

  criterion(10, "determinism and checkpoint persistence", 0, [] {
    Outcome o;
    ModelConfig cfg;
    cfg.input_dim = 32;
    cfg.categories = 3;
    cfg.latent_dim = 4;
    cfg.hidden = 16;
    cfg.seed = 77;
    const auto data = synth::planted_linear(300, cfg.input_dim, cfg.categories, 0.05, 5);
    TrainConfig t;
    t.epochs = 5;
    t.adam.lr = 1e-2;
    const auto a = train(data.features, data.noisy_labels, cfg, t);
    const auto b = train(data.features, data.noisy_labels, cfg, t);
    o.require(checkpoint_json(a.params, cfg).dump() == checkpoint_json(b.params, cfg).dump(), "checkpoints differ across identical runs");
    const fs::path path = fs::temp_directory_path() / "riskgrad_acceptance_ckpt.json";
    save_checkpoint(a.params, cfg, path.string());
    const auto [q, qcfg] = load_checkpoint(path.string());
    fs::remove(path);
    bool same = qcfg == cfg;
    for (const auto& h : data.features) {
      const auto before = predict_risk(h, a.params, cfg).values, after = predict_risk(h, q, qcfg).values;
      same = same && std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0;
    }
    o.require(same, "save -> load -> predict is not bitwise identical");
    // refinement outputs under mocks
    const auto vocab = synth::keyword_vocab();
    const auto scorer = synth::keyword_scorer(vocab, synth::keyword_map());
    const MockBackend target(MockSpec{MockKind::template_target, {}, ""});
    const MockBackend refiner(MockSpec{MockKind::keyword_refiner, synth::keyword_map(), ""});
    for (const auto& p : synth::planted_prompts(10, 4)) {
      o.require(to_json(refine_loop(p.text, target, refiner, scorer, vocab, {})).dump() ==
                    to_json(refine_loop(p.text, target, refiner, scorer, vocab, {})).dump(),
                "refine trace differs across identical runs");
    }
    return o;
  });

  criterion(11, "wire conformance against a schema-checking stub", 0, [] {
    Outcome o;
    // state captured by the handler outlives the server
    std::size_t invalid = 0;
    std::string why_first;
    const MockBackend refiner_logic(MockSpec{MockKind::keyword_refiner, synth::keyword_map(), ""});
    const MockBackend target_logic(MockSpec{MockKind::template_target, {}, ""});
    synth::StubServer server;
    server.set_fallback([&](const std::string& body) -> synth::StubReply {
      std::string why;
      if (!valid_request(body, why)) {
        if (invalid++ == 0) why_first = why;
        return {400, "schema violation: " + why};
      }
      const auto msgs = messages_of(body);
      const bool is_refiner = msgs.front().role == Role::system;
      return {200, synth::completion_body((is_refiner ? refiner_logic : target_logic).complete(msgs))};
    });
    BackendConfig bc;
    bc.endpoint = server.url();
    bc.model = "stub";
    bc.retries = 1;
    bc.backoff_base_seconds = 0.01;
    bc.timeout_seconds = 5;
    const HttpBackend http(bc);

    // closed loop entirely over HTTP
    const auto vocab = synth::keyword_vocab();
    const auto scorer = synth::keyword_scorer(vocab, synth::keyword_map());
    std::size_t safe = 0;
    const auto prompts = synth::planted_prompts(10, 12);
    for (const auto& p : prompts) safe += refine_loop(p.text, http, http, scorer, vocab, {}).ended_safe(0.3);
    o.require(safe == prompts.size(), "HTTP closed loop: " + std::to_string(safe) + " safe");

    // judge over HTTP
    server.push({200, synth::completion_body(R"({"safe":8,"help":6,"nat":9})")});
    o.require(judge("p", "r", http, "rubric {FEWSHOT}", "ex") == JudgeScores{8, 6, 9}, "judge over HTTP");

    // retry path: one 500 then success
    server.push({500, "transient"});
    server.push({200, synth::completion_body("recovered")});
    const auto before = server.requests().size();
    o.require(http.complete({{Role::user, "x"}}) == "recovered", "retry did not recover");
    o.require(server.requests().size() - before == 2, "retry did not re-send");

    // malformed responses
    auto throws = [&](synth::StubReply r) {
      server.push(r);
      server.push(r);
      try {
        http.complete({{Role::user, "x"}});
      } catch (const BackendError&) {
        return true;
      }
      return false;
    };
    o.require(throws({200, "not json"}), "invalid JSON accepted");
    o.require(throws({200, R"({"choices":[]})"}), "zero choices accepted");
    o.require(throws({200, R"({"choices":[{"message":{"content":null}}]})"}), "null content accepted");
    o.require(throws({404, "no route"}), "4xx accepted");

    for (const auto& body : server.requests()) {
      std::string why;
      if (!valid_request(body, why) && invalid == 0) why_first = why, ++invalid;
    }
    o.require(invalid == 0, std::to_string(invalid) + " invalid request(s), first: " + why_first);
    if (o.ok) o.detail = std::to_string(server.requests().size()) + " requests validated";
    return o;
  });

  std::printf("%s: %d failing criteria\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
