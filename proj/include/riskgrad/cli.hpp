#pragma once

// Command-line front end: train, score, refine, sweep, judge, selftest.
//
// Exit codes: 0 ok, 1 selftest failure, 2 config error, 3 data error,
// 4 numeric abort, 5 backend failure (refine/judge: every item failed).

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "riskgrad/corpus.hpp"
#include "riskgrad/errors.hpp"
#include "riskgrad/evalkit.hpp"
#include "riskgrad/llm_backend.hpp"
#include "riskgrad/refine.hpp"
#include "riskgrad/risk_model.hpp"
#include "riskgrad/rng.hpp"
#include "riskgrad/selftest.hpp"

namespace riskgrad::cli {

enum ExitCode : int {
  kOk = 0,
  kSelftestFailed = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kBackend = 5,
};

struct Paths {
  std::string dataset, vocab, checkpoint, embeddings, rubric, fewshot, output_dir;
};

struct BackendSpec {
  std::string type = "mock";  // mock | http
  MockSpec mock;
  BackendConfig http;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Paths paths;
  FeaturizerConfig featurizer;
  ModelConfig model;
  TrainConfig train;
  double train_fraction = 0.9;
  RefineConfig refine;
  std::string scorer = "model";  // model | keyword
  std::map<std::string, std::vector<std::string>> scorer_keywords;
  std::vector<double> sweep_taus = kDefaultSweepTaus;
  std::map<std::string, BackendSpec> backends;
};

// ---------------------------------------------------------------- config

/// `a.b.c=value`; value is parsed as JSON when possible, else kept as a string.
inline void apply_override(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: empty path segment in '" + key + "'");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("--set: '" + key + "' descends into a non-object");
      *node = nlohmann::json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

inline BackendSpec parse_backend_spec(const std::string& role, const nlohmann::json& j) {
  BackendSpec b;
  b.type = j.value("type", std::string("mock"));
  if (b.type == "mock") {
    b.mock = j.get<MockSpec>();
    b.mock.validate();
  } else if (b.type == "http") {
    b.http = j.get<BackendConfig>();
    b.http.validate();
  } else {
    throw ConfigError("backend '" + role + "': unknown type '" + b.type + "'");
  }
  return b;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  try {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      auto opt = [&](const char* k, std::string& f) {
        if (p.contains(k)) p.at(k).get_to(f);
      };
      opt("dataset", c.paths.dataset);
      opt("vocab", c.paths.vocab);
      opt("checkpoint", c.paths.checkpoint);
      opt("embeddings", c.paths.embeddings);
      opt("rubric", c.paths.rubric);
      opt("fewshot", c.paths.fewshot);
      opt("output_dir", c.paths.output_dir);
    }
    if (j.contains("featurizer")) {
      const auto& f = j.at("featurizer");
      if (f.contains("dim")) f.at("dim").get_to(c.featurizer.dim);
      if (f.contains("ngram_min")) f.at("ngram_min").get_to(c.featurizer.ngram_min);
      if (f.contains("ngram_max")) f.at("ngram_max").get_to(c.featurizer.ngram_max);
      if (f.contains("hash_seed")) f.at("hash_seed").get_to(c.featurizer.hash_seed);
    }
    c.model.input_dim = c.featurizer.dim;
    if (j.contains("model")) from_json(j.at("model"), c.model);
    if (j.contains("train")) {
      from_json(j.at("train"), c.train);
      if (j.at("train").contains("train_fraction")) j.at("train").at("train_fraction").get_to(c.train_fraction);
    }
    if (j.contains("refine")) {
      const auto& r = j.at("refine");
      from_json(r, c.refine);
      if (r.contains("scorer")) r.at("scorer").get_to(c.scorer);
      if (r.contains("scorer_keywords")) r.at("scorer_keywords").get_to(c.scorer_keywords);
    }
    if (j.contains("sweep") && j.at("sweep").contains("taus")) j.at("sweep").at("taus").get_to(c.sweep_taus);
    if (j.contains("backends")) {
      for (const auto& [role, spec] : j.at("backends").items()) {
        if (role != "refiner" && role != "target" && role != "judge") {
          throw ConfigError("backends: unknown role '" + role + "' (expected refiner, target, judge)");
        }
        c.backends[role] = parse_backend_spec(role, spec);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  // seed flows into the model's init/sample/shuffle sub-streams
  c.model.seed = c.seed;
  c.featurizer.validate();
  c.model.validate();
  c.refine.validate();
  if (c.scorer != "model" && c.scorer != "keyword") throw ConfigError("refine.scorer must be 'model' or 'keyword'");
  return c;
}

inline nlohmann::json read_json_file(const std::string& path, bool config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (config) throw ConfigError("cannot open config file: " + path);
    throw DataError("cannot open file: " + path);
  }
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    if (config) throw ConfigError("config " + path + ": " + e.what());
    throw DataError(path + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = path.empty() ? nlohmann::json::object() : read_json_file(path, true);
  for (const auto& o : overrides) apply_override(j, o);
  return parse_run_config(j);
}

// ---------------------------------------------------------------- helpers

inline std::unique_ptr<ChatBackend> make_backend(const RunConfig& c, const std::string& role) {
  const auto it = c.backends.find(role);
  if (it == c.backends.end()) throw ConfigError("no backend configured for role '" + role + "'");
  if (it->second.type == "http") return std::make_unique<HttpBackend>(it->second.http);
  return std::make_unique<MockBackend>(it->second.mock);
}

inline CategoryVocab resolve_vocab(const RunConfig& c) {
  CategoryVocab v = c.paths.vocab.empty() ? CategoryVocab::placeholder(c.model.categories) : load_vocab(c.paths.vocab);
  if (v.size() != c.model.categories) {
    throw ConfigError("vocab has " + std::to_string(v.size()) + " categories but model.categories is " +
                      std::to_string(c.model.categories));
  }
  return v;
}

inline std::string require_path(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("paths.") + what + " is required for this command");
  return p;
}

/// Feature vectors for examples, either hashed text or a precomputed table.
class FeatureSource {
 public:
  explicit FeatureSource(const RunConfig& c) : fcfg_(c.featurizer) {
    if (!c.paths.embeddings.empty()) table_ = load_embeddings(c.paths.embeddings);
  }
  std::size_t dim() const { return table_ ? table_->dim : fcfg_.dim; }
  bool precomputed() const { return table_.has_value(); }
  Vector operator()(const std::string& id, const std::string& prompt, const std::string& response) const {
    if (!table_) return featurize(build_input(prompt, response), fcfg_);
    const auto it = table_->vectors.find(id);
    if (it == table_->vectors.end()) throw DataError("no embedding for example id '" + id + "'");
    return it->second;
  }

 private:
  FeaturizerConfig fcfg_;
  std::optional<EmbeddingTable> table_;
};

inline void require_dim(const FeatureSource& fs, const ModelConfig& m) {
  if (fs.dim() != m.input_dim) {
    throw ConfigError("feature dimension " + std::to_string(fs.dim()) + " does not match model.input_dim " +
                      std::to_string(m.input_dim));
  }
}

struct TextRecord {
  std::string id, prompt, response;
  nlohmann::json raw;
};

/// JSONL of objects with id and prompt; response optional.
inline std::vector<TextRecord> load_text_records(const std::string& path, bool need_response) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open input: " + path);
  std::vector<TextRecord> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      TextRecord r;
      r.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                              : std::to_string(out.size());
      r.prompt = j.at("prompt").get<std::string>();
      if (need_response || j.contains("response")) r.response = j.at("response").get<std::string>();
      r.raw = std::move(j);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; results stay in index order.
template <class T, class F>
std::vector<T> parallel_map(std::size_t n, int jobs, F&& fn) {
  std::vector<T> out(n);
  std::vector<std::exception_ptr> errs(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

/// Writes to `path`, or to stdout when empty.
inline void write_output(const std::string& path, const std::string& data, std::ostream& out) {
  if (path.empty()) {
    out << data;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write output: " + path);
  f << data;
  if (!f.flush()) throw DataError("failed writing output: " + path);
}

inline std::string output_file(const RunConfig& c, const std::string& name) {
  if (c.paths.output_dir.empty()) return "";
  std::filesystem::create_directories(c.paths.output_dir);
  return (std::filesystem::path(c.paths.output_dir) / name).string();
}

// ---------------------------------------------------------------- commands

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline int cmd_train(const RunConfig& c, Streams io) {
  const CategoryVocab vocab = resolve_vocab(c);
  const std::string ckpt = require_path(c.paths.checkpoint, "checkpoint");
  const auto examples = load_jsonl(require_path(c.paths.dataset, "dataset"), vocab);
  const FeatureSource fs(c);
  require_dim(fs, c.model);

  const DataSplit split = split_and_batch(examples.size(), c.train_fraction, c.train.batch_size,
                                          derive_seed(c.seed, "split"));
  std::vector<Vector> xs, ls;
  for (const auto& batch : split.train_batches) {
    for (std::size_t i : batch) {
      xs.push_back(fs(examples[i].id, examples[i].prompt, examples[i].response));
      ls.push_back(examples[i].label_vector());
    }
  }
  nlohmann::json epochs = nlohmann::json::array();
  const TrainResult res = train(xs, ls, c.model, c.train, [&](const EpochStats& s) {
    epochs.push_back(to_json(s));
    io.err << "epoch " << s.epoch << " loss " << s.mean.total << "\n";
  });

  LossBreakdown eval;
  for (std::size_t i : split.eval) {
    const auto& ex = examples[i];
    const Vector h = fs(ex.id, ex.prompt, ex.response);
    eval += loss_total(h, ex.label_vector(), res.params, c.model, Mode::eval, nullptr).terms;
  }
  if (!split.eval.empty()) eval *= 1.0 / static_cast<double>(split.eval.size());

  if (const auto parent = std::filesystem::path(ckpt).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  save_checkpoint(res.params, c.model, ckpt);
  const nlohmann::json stats{{"n_train", xs.size()},
                             {"n_eval", split.eval.size()},
                             {"epochs", epochs},
                             {"eval", {{"total", eval.total},
                                       {"semantic_recon", eval.semantic_recon},
                                       {"rejection_recon", eval.rejection_recon},
                                       {"kl_gauss", eval.kl_gauss},
                                       {"kl_beta", eval.kl_beta},
                                       {"regularizer", eval.regularizer}}}};
  const std::string stats_path = output_file(c, "train_stats.json");
  write_output(stats_path, stats.dump(2) + "\n", io.out);
  io.err << "wrote checkpoint " << ckpt << "\n";
  return kOk;
}

struct LoadedModel {
  ModelParams params;
  ModelConfig cfg;
};

inline LoadedModel load_model(const RunConfig& c) {
  auto [p, m] = load_checkpoint(require_path(c.paths.checkpoint, "checkpoint"));
  return {std::move(p), m};
}

inline int cmd_score(const RunConfig& c, const std::string& input, const std::string& output, int jobs,
                     Streams io) {
  const LoadedModel lm = load_model(c);
  const FeatureSource fs(c);
  require_dim(fs, lm.cfg);
  const auto recs = load_text_records(input.empty() ? require_path(c.paths.dataset, "dataset") : input, true);
  const auto lines = parallel_map<std::string>(recs.size(), jobs, [&](std::size_t i) {
    const Vector h = fs(recs[i].id, recs[i].prompt, recs[i].response);
    const RiskDistribution d = predict_risk(h, lm.params, lm.cfg);
    const Vector dp = decode_rejection(d.values, lm.params);
    return nlohmann::json{{"id", recs[i].id}, {"d", d.values}, {"d_prime", dp}}.dump() + "\n";
  });
  std::string all;
  for (const auto& l : lines) all += l;
  write_output(output, all, io.out);
  return kOk;
}

inline Scorer build_scorer(const RunConfig& c, const CategoryVocab& vocab, std::shared_ptr<LoadedModel>& keep) {
  if (c.scorer == "keyword") return keyword_count_scorer(vocab, c.scorer_keywords);
  keep = std::make_shared<LoadedModel>(load_model(c));
  if (!c.paths.embeddings.empty()) throw ConfigError("refine needs text features; unset paths.embeddings");
  if (keep->cfg.categories != vocab.size()) throw ConfigError("checkpoint category count does not match vocab");
  if (keep->cfg.input_dim != c.featurizer.dim) throw ConfigError("checkpoint input_dim does not match featurizer.dim");
  return model_scorer(keep->params, keep->cfg, c.featurizer);
}

inline int cmd_refine(const RunConfig& c, const std::string& input, const std::string& output, int jobs,
                      Streams io) {
  const CategoryVocab vocab = resolve_vocab(c);
  std::shared_ptr<LoadedModel> model;
  const Scorer scorer = build_scorer(c, vocab, model);
  const auto target = make_backend(c, "target");
  const auto refiner = make_backend(c, "refiner");
  const auto recs = load_text_records(input.empty() ? require_path(c.paths.dataset, "dataset") : input, false);

  struct Outcome {
    nlohmann::json j;
    bool ok = false;
  };
  const auto outcomes = parallel_map<Outcome>(recs.size(), jobs, [&](std::size_t i) {
    Outcome o;
    try {
      const auto trace = refine_loop(recs[i].prompt, *target, *refiner, scorer, vocab, c.refine);
      o.j = {{"id", recs[i].id}, {"safe", trace.ended_safe(c.refine.thresholds.tau)},
             {"final_prompt", trace.final_prompt()}, {"trace", to_json(trace)}, {"error", nullptr}};
      o.ok = true;
    } catch (const RefinementAborted& e) {
      o.j = {{"id", recs[i].id}, {"safe", false}, {"final_prompt", nullptr}, {"trace", to_json(e.partial())},
             {"error", e.what()}};
    } catch (const BackendError& e) {
      o.j = {{"id", recs[i].id}, {"safe", false}, {"final_prompt", nullptr}, {"trace", nlohmann::json::array()},
             {"error", e.what()}};
    }
    return o;
  });
  nlohmann::json arr = nlohmann::json::array();
  std::size_t ok = 0;
  for (const auto& o : outcomes) {
    arr.push_back(o.j);
    if (o.ok) ++ok;
    else io.err << "refine " << o.j["id"].get<std::string>() << ": " << o.j["error"].get<std::string>() << "\n";
  }
  write_output(output.empty() ? output_file(c, "traces.json") : output, arr.dump(2) + "\n", io.out);
  io.err << ok << "/" << recs.size() << " prompts refined\n";
  return (!recs.empty() && ok == 0) ? kBackend : kOk;
}

/// Scored JSONL ({id, d, harmful} or {id, d, labels}) or a raw labeled dataset.
inline std::vector<ScoredExample> load_for_sweep(const RunConfig& c, const std::string& path, int jobs) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open sweep input: " + path);
  std::string first;
  while (std::getline(in, first) && first.find_first_not_of(" \t\r") == std::string::npos) {
  }
  bool scored = false;
  try {
    scored = !first.empty() && nlohmann::json::parse(first).contains("d");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ":1: " + e.what());
  }
  std::vector<ScoredExample> out;
  if (scored) {
    in.clear();
    in.seekg(0);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        ScoredExample ex;
        ex.id = j.contains("id") ? j["id"].dump() : std::to_string(out.size());
        if (j.contains("id") && j["id"].is_string()) ex.id = j["id"].get<std::string>();
        ex.risk.values = j.at("d").get<std::vector<double>>();
        if (j.contains("harmful")) {
          ex.harmful = j.at("harmful").get<bool>();
        } else {
          const auto labels = j.at("labels").get<std::vector<int>>();
          ex.harmful = std::any_of(labels.begin(), labels.end(), [](int v) { return v != 0; });
        }
        out.push_back(std::move(ex));
      } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return out;
  }
  const CategoryVocab vocab = resolve_vocab(c);
  const auto examples = load_jsonl(path, vocab);
  const LoadedModel lm = load_model(c);
  const FeatureSource fs(c);
  require_dim(fs, lm.cfg);
  return parallel_map<ScoredExample>(examples.size(), jobs, [&](std::size_t i) {
    const auto& ex = examples[i];
    ScoredExample s;
    s.id = ex.id;
    s.risk = predict_risk(fs(ex.id, ex.prompt, ex.response), lm.params, lm.cfg);
    s.harmful = std::any_of(ex.labels.begin(), ex.labels.end(), [](int v) { return v != 0; });
    return s;
  });
}

inline int cmd_sweep(const RunConfig& c, const std::string& input, const std::vector<double>& taus, int jobs,
                     Streams io) {
  const auto scored = load_for_sweep(c, input.empty() ? require_path(c.paths.dataset, "dataset") : input, jobs);
  const SweepReport rep = sweep(scored, taus.empty() ? c.sweep_taus : taus);
  if (c.paths.output_dir.empty()) {
    io.out << report_csv(rep);
  } else {
    emit_report(rep, ReportFormat::csv, output_file(c, "sweep.csv"));
    emit_report(rep, ReportFormat::json, output_file(c, "sweep.json"));
    io.err << "wrote " << output_file(c, "sweep.csv") << " and sweep.json\n";
  }
  return kOk;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline int cmd_judge(const RunConfig& c, const std::string& input, const std::string& output, int jobs,
                     Streams io) {
  const std::string rubric = read_text_file(require_path(c.paths.rubric, "rubric"));
  const std::string fewshot = c.paths.fewshot.empty() ? "" : read_text_file(c.paths.fewshot);
  const auto judge_backend = make_backend(c, "judge");
  const auto recs = load_text_records(input.empty() ? require_path(c.paths.dataset, "dataset") : input, true);
  struct Outcome {
    nlohmann::json j;
    std::optional<JudgeScores> s;
  };
  const auto outcomes = parallel_map<Outcome>(recs.size(), jobs, [&](std::size_t i) {
    Outcome o;
    try {
      const JudgeScores s = judge(recs[i].prompt, recs[i].response, *judge_backend, rubric, fewshot);
      o.j = {{"id", recs[i].id}, {"safe", s.safe}, {"help", s.help}, {"nat", s.nat}};
      o.s = s;
    } catch (const BackendError& e) {
      o.j = {{"id", recs[i].id}, {"error", e.what()}};
    }
    return o;
  });
  std::string lines;
  JudgeScores sum;
  std::size_t ok = 0;
  for (const auto& o : outcomes) {
    lines += o.j.dump() + "\n";
    if (o.s) {
      sum.safe += o.s->safe;
      sum.help += o.s->help;
      sum.nat += o.s->nat;
      ++ok;
    }
  }
  write_output(output.empty() ? output_file(c, "judge.jsonl") : output, lines, io.out);
  if (ok > 0) {
    const double n = static_cast<double>(ok);
    io.err << "mean safe " << sum.safe / n << " help " << sum.help / n << " nat " << sum.nat / n << " over "
           << ok << "/" << recs.size() << "\n";
  }
  return (!recs.empty() && ok == 0) ? kBackend : kOk;
}

inline int cmd_selftest(Streams io, const selftest::Hooks& hooks = {}) {
  const auto results = selftest::run_all(hooks);
  const selftest::CheckResult* first_fail = nullptr;
  for (const auto& r : results) {
    io.out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ") [" << r.seconds << " s]\n";
    if (!r.passed && !first_fail) first_fail = &r;
  }
  if (first_fail) {
    io.err << "selftest failed: " << first_fail->name << "\n";
    return kSelftestFailed;
  }
  return kOk;
}

// ---------------------------------------------------------------- entry

inline std::vector<double> parse_taus(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--taus: cannot parse '" + tok + "'");
    }
  }
  return out;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Risk-distribution label enhancement and guided prompt refinement"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  int jobs = 1;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--set", overrides, "Override a config value: dotted.key=value (repeatable)");
  app.add_option("--jobs", jobs, "Worker threads for per-example work")->check(CLI::PositiveNumber);

  std::string input, output, mode, taus;
  auto* train_cmd = app.add_subcommand("train", "Train the risk model and write a checkpoint");
  auto* score_cmd = app.add_subcommand("score", "Score (prompt, response) pairs");
  auto* refine_cmd = app.add_subcommand("refine", "Refine prompts until the scorer deems them safe");
  auto* sweep_cmd = app.add_subcommand("sweep", "FPR / detection rate over thresholds");
  auto* judge_cmd = app.add_subcommand("judge", "Rubric scores from a judge backend");
  auto* selftest_cmd = app.add_subcommand("selftest", "Numerical self-checks");
  for (auto* sc : {score_cmd, refine_cmd, sweep_cmd, judge_cmd}) {
    sc->add_option("--input", input, "Input JSONL (default: paths.dataset)");
  }
  for (auto* sc : {score_cmd, refine_cmd, judge_cmd}) {
    sc->add_option("--output", output, "Output file (default: output_dir or stdout)");
  }
  refine_cmd->add_option("--mode", mode, "fine_grained or coarse")->check(CLI::IsMember({"fine_grained", "coarse"}));
  sweep_cmd->add_option("--taus", taus, "Comma-separated thresholds, increasing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfig;
  }

  const Streams io{out, err};
  try {
    if (selftest_cmd->parsed()) return cmd_selftest(io);
    if (!mode.empty()) overrides.push_back("refine.mode=" + mode);
    const RunConfig c = load_run_config(config_path, overrides);
    if (train_cmd->parsed()) return cmd_train(c, io);
    if (score_cmd->parsed()) return cmd_score(c, input, output, jobs, io);
    if (refine_cmd->parsed()) return cmd_refine(c, input, output, jobs, io);
    if (sweep_cmd->parsed()) return cmd_sweep(c, input, taus.empty() ? std::vector<double>{} : parse_taus(taus), jobs, io);
    if (judge_cmd->parsed()) return cmd_judge(c, input, output, jobs, io);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kBackend;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    // shape mismatches between inputs and the loaded model
    err << "data error: " << e.what() << "\n";
    return kData;
  }
  return kConfig;
}

}  // namespace riskgrad::cli
