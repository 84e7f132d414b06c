#pragma once

// Dataset ingestion, prompt/response concatenation and deterministic
// signed feature hashing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "riskgrad/diffmath.hpp"
#include "riskgrad/errors.hpp"
#include "riskgrad/rng.hpp"

namespace riskgrad {

/// Ordered rejection-category names; index order is canonical.
struct CategoryVocab {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }

  void validate() const {
    if (names.empty()) throw ConfigError("vocab: at least one category is required");
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw ConfigError("vocab: empty category name");
      if (!seen.insert(n).second) throw ConfigError("vocab: duplicate category name '" + n + "'");
    }
  }

  /// Placeholder names category_01 .. category_NN.
  static CategoryVocab placeholder(std::size_t c = 14) {
    CategoryVocab v;
    for (std::size_t j = 1; j <= c; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "category_%02zu", j);
      v.names.emplace_back(buf);
    }
    return v;
  }
};

inline CategoryVocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab file: " + path);
  CategoryVocab v;
  try {
    auto j = nlohmann::json::parse(in);
    if (!j.is_array()) throw DataError("vocab file must hold a JSON array of strings: " + path);
    for (const auto& e : j) {
      if (!e.is_string()) throw DataError("vocab entries must be strings: " + path);
      v.names.push_back(e.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("vocab file " + path + ": " + e.what());
  }
  try {
    v.validate();
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  return v;
}

struct LabeledExample {
  std::string id;
  std::string prompt;
  std::string response;
  std::vector<int> labels;  // 0/1, length c

  Vector label_vector() const { return Vector(labels.begin(), labels.end()); }

  bool operator==(const LabeledExample&) const = default;
};

inline nlohmann::json to_json(const LabeledExample& ex) {
  return nlohmann::json{
      {"id", ex.id}, {"prompt", ex.prompt}, {"response", ex.response}, {"labels", ex.labels}};
}

inline LabeledExample parse_example(const nlohmann::json& j, std::size_t c) {
  if (!j.is_object()) throw DataError("expected a JSON object");
  for (const char* key : {"id", "prompt", "response", "labels"}) {
    if (!j.contains(key)) throw DataError(std::string("missing required field '") + key + "'");
  }
  LabeledExample ex;
  if (!j["id"].is_string() || !j["prompt"].is_string() || !j["response"].is_string()) {
    throw DataError("fields id, prompt and response must be strings");
  }
  ex.id = j["id"].get<std::string>();
  ex.prompt = j["prompt"].get<std::string>();
  ex.response = j["response"].get<std::string>();
  const auto& labels = j["labels"];
  if (!labels.is_array()) throw DataError("labels must be an array");
  if (labels.size() != c) {
    throw DataError("labels has " + std::to_string(labels.size()) + " entries, vocabulary has " +
                    std::to_string(c));
  }
  for (const auto& l : labels) {
    if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) {
      throw DataError("labels must be 0 or 1");
    }
    ex.labels.push_back(l.get<int>());
  }
  return ex;
}

/// Parse a dataset stream, one JSON object per non-blank line.
inline std::vector<LabeledExample> parse_jsonl(std::istream& in, const CategoryVocab& vocab,
                                               const std::string& source = "<stream>") {
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_example(nlohmann::json::parse(line), vocab.size()));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<LabeledExample> load_jsonl(const std::string& path, const CategoryVocab& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  return parse_jsonl(in, vocab, path);
}

inline void write_jsonl(std::ostream& out, const std::vector<LabeledExample>& examples) {
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
}

inline constexpr std::string_view kInputSeparator = "\n[SEP]\n";

/// x = [p; r]
inline std::string build_input(std::string_view prompt, std::string_view response) {
  std::string x;
  x.reserve(prompt.size() + kInputSeparator.size() + response.size());
  x.append(prompt).append(kInputSeparator).append(response);
  return x;
}

struct FeaturizerConfig {
  std::size_t dim = 256;
  int ngram_min = 1;
  int ngram_max = 2;
  std::uint64_t hash_seed = 0;

  void validate() const {
    if (dim < 8) throw ConfigError("featurizer: dim must be >= 8");
    if (ngram_min < 1 || ngram_min > ngram_max || ngram_max > 4) {
      throw ConfigError("featurizer: need 1 <= ngram_min <= ngram_max <= 4");
    }
  }
};

namespace detail {

// Decode one UTF-8 code point at s[i]; returns its byte length (1 for
// malformed bytes, which are then treated as opaque non-space bytes).
inline std::size_t utf8_decode(std::string_view s, std::size_t i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) {
    return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
  };
  auto bits = [&](std::size_t k) { return static_cast<char32_t>(s[i + k] & 0x3F); };
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    cp = (static_cast<char32_t>(b0 & 0x1F) << 6) | bits(1);
    return 2;
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    cp = (static_cast<char32_t>(b0 & 0x0F) << 12) | (bits(1) << 6) | bits(2);
    return 3;
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    cp = (static_cast<char32_t>(b0 & 0x07) << 18) | (bits(1) << 12) | (bits(2) << 6) | bits(3);
    return 4;
  }
  cp = 0xFFFD;
  return 1;
}

// Unicode White_Space property.
inline bool is_unicode_space(char32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 || cp == 0x202F ||
         cp == 0x205F || cp == 0x3000;
}

}  // namespace detail

/// Lowercase (ASCII) and split on Unicode whitespace.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (std::size_t i = 0; i < text.size();) {
    char32_t cp = 0;
    const std::size_t len = detail::utf8_decode(text, i, cp);
    if (detail::is_unicode_space(cp)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      for (std::size_t k = 0; k < len; ++k) {
        char ch = text[i + k];
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
        cur.push_back(ch);
      }
    }
    i += len;
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

/// Signed hashed n-gram counts, L2-normalised.
inline Vector featurize(std::string_view text, const FeaturizerConfig& cfg) {
  cfg.validate();
  Vector h(cfg.dim, 0.0);
  const auto tokens = tokenize(text);
  std::string gram;
  for (int n = cfg.ngram_min; n <= cfg.ngram_max; ++n) {
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t start = 0; start + un <= tokens.size(); ++start) {
      gram.clear();
      for (std::size_t k = 0; k < un; ++k) {
        if (k) gram.push_back(' ');
        gram += tokens[start + k];
      }
      const std::uint64_t hash = fnv1a64(gram) ^ cfg.hash_seed;
      const double sign = (hash >> 63) ? -1.0 : 1.0;
      h[hash % cfg.dim] += sign;
    }
  }
  double norm2 = 0.0;
  for (double v : h) norm2 += v * v;
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : h) v *= inv;
  }
  return h;
}

/// Precomputed feature vectors keyed by example id.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, Vector> vectors;
};

inline EmbeddingTable parse_embeddings(std::istream& in, const std::string& source = "<stream>") {
  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("embedding") ||
        !j["embedding"].is_array()) {
      throw DataError(where + "expected {\"id\": string, \"embedding\": [numbers]}");
    }
    Vector v;
    for (const auto& x : j["embedding"]) {
      if (!x.is_number()) throw DataError(where + "embedding entries must be numbers");
      const double d = x.get<double>();
      if (!std::isfinite(d)) throw DataError(where + "non-finite embedding value");
      v.push_back(d);
    }
    if (v.empty()) throw DataError(where + "empty embedding");
    if (table.dim == 0) {
      table.dim = v.size();
    } else if (v.size() != table.dim) {
      throw DataError(where + "embedding length " + std::to_string(v.size()) +
                      " differs from earlier length " + std::to_string(table.dim));
    }
    auto id = j["id"].get<std::string>();
    if (!table.vectors.emplace(id, std::move(v)).second) {
      throw DataError(where + "duplicate id '" + id + "'");
    }
  }
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings: " + path);
  auto table = parse_embeddings(in, path);
  return table;
}

/// Indices into the input list: shuffled training batches and the eval set.
struct DataSplit {
  std::vector<std::vector<std::size_t>> train_batches;
  std::vector<std::size_t> eval;

  std::size_t train_size() const {
    std::size_t n = 0;
    for (const auto& b : train_batches) n += b.size();
    return n;
  }
};

inline DataSplit split_and_batch(std::size_t n_examples, double train_fraction,
                                 std::size_t batch_size, std::uint64_t seed) {
  if (n_examples == 0) throw DataError("split_and_batch: no examples");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split_and_batch: train_fraction must lie in (0, 1)");
  }
  if (batch_size == 0) throw ConfigError("split_and_batch: batch_size must be >= 1");
  const auto idx = shuffled_indices(n_examples, seed);
  auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n_examples) * train_fraction + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n_examples);
  DataSplit split;
  for (std::size_t start = 0; start < n_train; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, n_train);
    split.train_batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                     idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  split.eval.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return split;
}

}  // namespace riskgrad
