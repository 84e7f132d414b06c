#pragma once

// Risk-guided prompt refinement.
//
// Each iteration asks the target model for a response, scores the
// (prompt, response) pair, and stops once every category is below tau.
// Otherwise every category with d^j >= tau contributes one line to a textual
// gradient whose effort level (Minor / Mild / Critical) is chosen from
// tau_low and tau_high, and the refiner model rewrites the prompt.

#include <cstdio>
#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "riskgrad/corpus.hpp"
#include "riskgrad/errors.hpp"
#include "riskgrad/llm_backend.hpp"
#include "riskgrad/risk_model.hpp"

namespace riskgrad {

struct RiskThresholds {
  double tau = 0.3;
  double tau_low = 0.5;
  double tau_high = 0.8;

  void validate() const {
    if (!(0.0 < tau && tau <= tau_low && tau_low <= tau_high && tau_high < 1.0)) {
      throw ConfigError("thresholds: need 0 < tau <= tau_low <= tau_high < 1");
    }
  }
};

enum class EffortLevel { Minor = 0, Mild = 1, Critical = 2 };

inline const char* effort_label(EffortLevel e) {
  switch (e) {
    case EffortLevel::Critical: return "CRITICAL";
    case EffortLevel::Mild: return "MILD";
    case EffortLevel::Minor: return "MINOR";
  }
  return "MINOR";
}

inline EffortLevel effort_of(double d, const RiskThresholds& th) {
  if (d >= th.tau_high) return EffortLevel::Critical;
  if (d >= th.tau_low) return EffortLevel::Mild;
  return EffortLevel::Minor;
}

/// Ascending indices j with d^j >= tau.
inline std::vector<std::size_t> risky_set(const RiskDistribution& d, double tau) {
  std::vector<std::size_t> s;
  for (std::size_t j = 0; j < d.size(); ++j) {
    if (d[j] >= tau) s.push_back(j);
  }
  return s;
}

/// Safe iff no category reaches tau.
inline bool is_safe(const RiskDistribution& d, double tau) { return risky_set(d, tau).empty(); }

struct GradientTemplate {
  // Placeholders: {name} {intensity} {effort} {instruction}
  std::string line_format =
      "[RISK] category=\"{name}\"; intensity={intensity}; effort={effort}; instruction={instruction}";
  std::string critical = "Remove or fundamentally rewrite all content enabling this risk.";
  std::string mild = "Rephrase the risky elements into a safe, educational framing.";
  std::string minor = "Lightly adjust wording to reduce this risk while preserving intent.";

  const std::string& instruction(EffortLevel e) const {
    switch (e) {
      case EffortLevel::Critical: return critical;
      case EffortLevel::Mild: return mild;
      case EffortLevel::Minor: return minor;
    }
    return minor;
  }

  void validate() const {
    for (const char* ph : {"{name}", "{intensity}", "{effort}"}) {
      if (line_format.find(ph) == std::string::npos) {
        throw ConfigError(std::string("gradient template: line format lacks ") + ph);
      }
    }
  }
};

/// Two decimals; exact binary ties round half to even.
inline std::string format_intensity(double d) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", d);
  return buf;
}

inline std::string render_gradient_line(const GradientTemplate& tpl, std::string_view name,
                                        double intensity, EffortLevel effort) {
  std::string out;
  const std::string& f = tpl.line_format;
  for (std::size_t i = 0; i < f.size();) {
    auto sub = [&](std::string_view key, std::string_view value) {
      if (f.compare(i, key.size(), key) != 0) return false;
      out.append(value);
      i += key.size();
      return true;
    };
    if (f[i] == '{' && (sub("{name}", name) || sub("{intensity}", format_intensity(intensity)) ||
                        sub("{effort}", effort_label(effort)) ||
                        sub("{instruction}", tpl.instruction(effort)))) {
      continue;
    }
    out.push_back(f[i++]);
  }
  return out;
}

struct GradientPart {
  std::size_t category = 0;
  double intensity = 0.0;
  EffortLevel effort = EffortLevel::Minor;

  bool operator==(const GradientPart&) const = default;
};

struct TextGradient {
  std::string text;
  std::vector<GradientPart> parts;

  bool empty() const { return text.empty(); }
  bool operator==(const TextGradient&) const = default;
};

/// One template line per risky category, ascending index, joined by "\n".
inline TextGradient build_textgrad(const RiskDistribution& d, const CategoryVocab& vocab,
                                   const RiskThresholds& th, const GradientTemplate& tpl = {}) {
  require_same_size(d.size(), vocab.size(), "build_textgrad");
  TextGradient g;
  for (std::size_t j : risky_set(d, th.tau)) {
    const EffortLevel e = effort_of(d[j], th);
    if (!g.text.empty()) g.text.push_back('\n');
    g.text += render_gradient_line(tpl, vocab.names[j], d[j], e);
    g.parts.push_back({j, d[j], e});
  }
  return g;
}

inline constexpr std::string_view kCoarseGradient =
    "This prompt may be unsafe. Rewrite it to be safe while preserving intent.";

inline constexpr std::string_view kDefaultSystemPrompt =
    "You are an expert AI Safety Optimizer. Rewrite the given prompt to eliminate the identified "
    "risks while preserving the user's benign intent, style, and specificity. Output only the "
    "rewritten prompt.";

inline std::string refiner_user_message(std::string_view prompt, std::string_view gradient) {
  std::string m = "PROMPT:\n";
  m.append(prompt).append("\n\nRISK GRADIENT:\n").append(gradient).append("\n\nRewrite the prompt now.");
  return m;
}

/// p[t+1] = M_opt(p[t], gradient, p_sys).
inline std::string refine_step(std::string_view prompt, const TextGradient& gradient,
                               const ChatBackend& refiner, std::string_view system_prompt) {
  if (gradient.empty()) throw std::invalid_argument("refine_step: empty gradient");
  const std::vector<ChatMessage> msgs{{Role::system, std::string(system_prompt)},
                                      {Role::user, refiner_user_message(prompt, gradient.text)}};
  std::string out = detail::trim(refiner.complete(msgs));
  if (out.empty()) throw BackendError("refiner returned an empty prompt");
  return out;
}

enum class RefineMode { fine_grained, coarse };

struct RefineConfig {
  RiskThresholds thresholds;
  int max_iters = 5;
  std::string system_prompt{kDefaultSystemPrompt};
  GradientTemplate gradient_template;
  RefineMode mode = RefineMode::fine_grained;

  void validate() const {
    thresholds.validate();
    if (max_iters < 1) throw ConfigError("refine: max_iters must be >= 1");
    gradient_template.validate();
  }
};

inline void from_json(const nlohmann::json& j, RefineConfig& c) {
  auto opt = [&](const nlohmann::json& src, const char* key, auto& field) {
    if (src.contains(key)) src.at(key).get_to(field);
  };
  opt(j, "tau", c.thresholds.tau);
  opt(j, "tau_low", c.thresholds.tau_low);
  opt(j, "tau_high", c.thresholds.tau_high);
  opt(j, "max_iters", c.max_iters);
  opt(j, "system_prompt", c.system_prompt);
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "fine_grained") c.mode = RefineMode::fine_grained;
    else if (m == "coarse") c.mode = RefineMode::coarse;
    else throw ConfigError("refine: unknown mode '" + m + "'");
  }
  if (j.contains("template")) {
    const auto& t = j.at("template");
    opt(t, "line_format", c.gradient_template.line_format);
    opt(t, "critical", c.gradient_template.critical);
    opt(t, "mild", c.gradient_template.mild);
    opt(t, "minor", c.gradient_template.minor);
  }
}

/// Risk of a (prompt, response) pair.
using Scorer = std::function<RiskDistribution(const std::string& prompt, const std::string& response)>;

/// predict_risk(featurize(build_input(p, r))) with a trained model.
inline Scorer model_scorer(const ModelParams& params, const ModelConfig& cfg,
                           const FeaturizerConfig& fcfg) {
  return [&params, &cfg, fcfg](const std::string& p, const std::string& r) {
    return predict_risk(featurize(build_input(p, r), fcfg), params, cfg);
  };
}

/// Stand-in scorer counting keyword hits in the prompt: 0.05 with none,
/// otherwise 0.4 + 0.2 per extra hit, capped at 0.95.
inline Scorer keyword_count_scorer(const CategoryVocab& vocab,
                                   std::map<std::string, std::vector<std::string>> keywords) {
  for (const auto& [cat, words] : keywords) {
    if (std::find(vocab.names.begin(), vocab.names.end(), cat) == vocab.names.end()) {
      throw ConfigError("keyword scorer: unknown category " + cat);
    }
  }
  return [vocab, keywords = std::move(keywords)](const std::string& prompt, const std::string&) {
    const std::string low = detail::ascii_lower(prompt);
    RiskDistribution d;
    for (const auto& name : vocab.names) {
      std::size_t hits = 0;
      if (auto it = keywords.find(name); it != keywords.end()) {
        for (const auto& w : it->second) {
          for (auto pos = low.find(w); pos != std::string::npos; pos = low.find(w, pos + 1)) ++hits;
        }
      }
      d.values.push_back(hits == 0 ? 0.05 : std::min(0.95, 0.4 + 0.2 * static_cast<double>(hits - 1)));
    }
    return d;
  };
}

struct RefinementStep {
  std::size_t t = 0;
  std::string prompt;
  std::string response;
  RiskDistribution risk;
  std::optional<TextGradient> gradient;
};

struct RefinementTrace {
  std::vector<RefinementStep> steps;

  bool ended_safe(double tau) const { return !steps.empty() && is_safe(steps.back().risk, tau); }
  const std::string& final_prompt() const { return steps.back().prompt; }
};

inline nlohmann::json to_json(const RefinementTrace& trace) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    arr.push_back({{"t", s.t},
                   {"prompt", s.prompt},
                   {"response", s.response},
                   {"risk", s.risk.values},
                   {"gradient", s.gradient ? nlohmann::json(s.gradient->text) : nlohmann::json()}});
  }
  return arr;
}

/// Raised when a backend fails mid-loop; carries the steps completed so far.
class RefinementAborted : public BackendError {
 public:
  RefinementAborted(const std::string& what, RefinementTrace partial)
      : BackendError(what), partial_(std::move(partial)) {}
  const RefinementTrace& partial() const { return partial_; }

 private:
  RefinementTrace partial_;
};

inline RefinementTrace refine_loop(const std::string& initial_prompt, const ChatBackend& target,
                                   const ChatBackend& refiner, const Scorer& scorer,
                                   const CategoryVocab& vocab, const RefineConfig& cfg) {
  cfg.validate();
  RefinementTrace trace;
  std::string prompt = initial_prompt;
  for (std::size_t t = 0;; ++t) {
    RefinementStep step;
    step.t = t;
    step.prompt = prompt;
    try {
      step.response = target.complete({{Role::user, prompt}});
    } catch (const std::exception& e) {
      throw RefinementAborted("target backend failed at t=" + std::to_string(t) + ": " + e.what(),
                              trace);
    }
    step.risk = scorer(step.prompt, step.response);
    require_same_size(step.risk.size(), vocab.size(), "refine_loop risk");
    if (is_safe(step.risk, cfg.thresholds.tau) || t >= static_cast<std::size_t>(cfg.max_iters)) {
      trace.steps.push_back(std::move(step));
      return trace;
    }
    TextGradient grad = cfg.mode == RefineMode::coarse
                            ? TextGradient{std::string(kCoarseGradient), {}}
                            : build_textgrad(step.risk, vocab, cfg.thresholds, cfg.gradient_template);
    step.gradient = grad;
    trace.steps.push_back(step);
    try {
      prompt = refine_step(prompt, grad, refiner, cfg.system_prompt);
    } catch (const std::exception& e) {
      throw RefinementAborted("refiner backend failed at t=" + std::to_string(t) + ": " + e.what(),
                              trace);
    }
  }
}

}  // namespace riskgrad
