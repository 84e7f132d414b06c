#pragma once

// Chat-completion backends: an OpenAI-compatible HTTP client and pure mock
// backends used as test oracles and for offline runs.

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "riskgrad/errors.hpp"

namespace riskgrad {

enum class Role { system, user, assistant };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

inline Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  throw BackendError("unknown chat role '" + std::string(s) + "'");
}

struct ChatMessage {
  Role role = Role::user;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

/// Abstract completion backend. Implementations must be safe to call from
/// several threads at once.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) const = 0;
};

struct BackendConfig {
  std::string endpoint;  // e.g. http://localhost:8000 ; the client appends /v1/chat/completions
  std::string model;
  double temperature = 0.0;
  int max_tokens = 512;
  double timeout_seconds = 60.0;
  int retries = 2;
  std::string api_key_env;  // name of the environment variable holding the key
  double backoff_base_seconds = 0.5;
  int max_in_flight = 4;

  void validate() const {
    if (endpoint.empty()) throw ConfigError("backend: endpoint is required");
    if (!(temperature >= 0.0)) throw ConfigError("backend: temperature must be >= 0");
    if (retries < 0) throw ConfigError("backend: retries must be >= 0");
    if (max_tokens < 1) throw ConfigError("backend: max_tokens must be >= 1");
    if (max_in_flight < 1) throw ConfigError("backend: max_in_flight must be >= 1");
    if (!(timeout_seconds > 0.0)) throw ConfigError("backend: timeout_seconds must be > 0");
  }
};

inline void from_json(const nlohmann::json& j, BackendConfig& c) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("endpoint", c.endpoint);
  opt("model", c.model);
  opt("temperature", c.temperature);
  opt("max_tokens", c.max_tokens);
  opt("timeout_seconds", c.timeout_seconds);
  opt("retries", c.retries);
  opt("api_key_env", c.api_key_env);
  opt("backoff_base_seconds", c.backoff_base_seconds);
  opt("max_in_flight", c.max_in_flight);
}

inline nlohmann::json request_body(const std::vector<ChatMessage>& messages,
                                   const BackendConfig& cfg) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
  return nlohmann::json{{"model", cfg.model},
                        {"messages", std::move(msgs)},
                        {"temperature", cfg.temperature},
                        {"max_tokens", cfg.max_tokens}};
}

/// choices[0].message.content of a completion response body.
inline std::string parse_completion(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed response JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array()) {
    throw BackendError("malformed response: missing choices array");
  }
  if (j["choices"].empty()) throw BackendError("response has zero choices");
  const auto& first = j["choices"][0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object() ||
      !first["message"].contains("content") || !first["message"]["content"].is_string()) {
    throw BackendError("malformed response: choices[0].message.content is not a string");
  }
  auto content = first["message"]["content"].get<std::string>();
  if (content.empty()) throw BackendError("response content is empty");
  return content;
}

namespace detail {

// Counting gate bounding concurrent requests.
class InFlightGate {
 public:
  explicit InFlightGate(int limit) : available_(limit) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++available_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int available_;
};

struct Endpoint {
  std::string scheme_host_port;
  std::string base_path;
};

inline Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("backend endpoint must start with http:// or https://: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.scheme_host_port = url.substr(0, path_start);
  e.base_path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.base_path.empty() && e.base_path.back() == '/') e.base_path.pop_back();
  return e;
}

}  // namespace detail

/// OpenAI-compatible chat client: POST {endpoint}/v1/chat/completions.
/// Network errors, 429 and 5xx responses are retried with exponential
/// backoff; other failures are reported immediately.
class HttpBackend final : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig cfg)
      : cfg_(std::move(cfg)), endpoint_(detail::split_endpoint(cfg_.endpoint)),
        gate_(std::make_unique<detail::InFlightGate>(cfg_.max_in_flight)) {
    cfg_.validate();
    if (!cfg_.api_key_env.empty()) {
      const char* key = std::getenv(cfg_.api_key_env.c_str());
      if (key == nullptr || *key == '\0') {
        throw ConfigError("backend: environment variable " + cfg_.api_key_env + " is not set");
      }
      api_key_ = key;
    }
  }

  const BackendConfig& config() const { return cfg_; }

  std::string complete(const std::vector<ChatMessage>& messages) const override {
    if (messages.empty()) throw BackendError("complete: no messages");
    const std::string body = request_body(messages, cfg_).dump();
    const std::string path = endpoint_.base_path + "/v1/chat/completions";

    gate_->acquire();
    struct Release {
      detail::InFlightGate* g;
      ~Release() { g->release(); }
    } release{gate_.get()};

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
      if (attempt > 0) {
        const double wait = cfg_.backoff_base_seconds * static_cast<double>(1 << (attempt - 1));
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      }
      httplib::Client client(endpoint_.scheme_host_port);
      const auto timeout = std::chrono::duration<double>(cfg_.timeout_seconds);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      if (!api_key_.empty()) client.set_bearer_token_auth(api_key_);
      auto res = client.Post(path, body, "application/json");
      if (!res) {
        last_error = "network failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 200 && res->status < 300) return parse_completion(res->body);
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      if (res->status != 429 && res->status < 500) break;
    }
    throw BackendError("completion failed after " + std::to_string(cfg_.retries + 1) +
                       " attempt(s): " + last_error);
  }

 private:
  BackendConfig cfg_;
  detail::Endpoint endpoint_;
  std::string api_key_;
  std::unique_ptr<detail::InFlightGate> gate_;
};

enum class MockKind { echo, keyword_refiner, template_target, rubric_judge };

inline MockKind parse_mock_kind(std::string_view s) {
  if (s == "echo") return MockKind::echo;
  if (s == "keyword_refiner") return MockKind::keyword_refiner;
  if (s == "template_target") return MockKind::template_target;
  if (s == "rubric_judge") return MockKind::rubric_judge;
  throw ConfigError("unknown mock kind '" + std::string(s) + "'");
}

struct MockSpec {
  MockKind kind = MockKind::echo;
  std::map<std::string, std::vector<std::string>> keywords;  // category -> banned substrings
  std::string canned;  // rubric_judge output

  void validate() const {
    for (const auto& [cat, words] : keywords) {
      if (words.empty()) throw ConfigError("mock: empty keyword list for category " + cat);
      for (const auto& w : words) {
        if (w.empty()) throw ConfigError("mock: empty keyword for category " + cat);
        if (std::any_of(w.begin(), w.end(), [](char ch) { return ch >= 'A' && ch <= 'Z'; })) {
          throw ConfigError("mock: keywords must be lowercase: " + w);
        }
      }
    }
  }
};

inline void from_json(const nlohmann::json& j, MockSpec& m) {
  m.kind = parse_mock_kind(j.at("kind").get<std::string>());
  if (j.contains("keywords")) j.at("keywords").get_to(m.keywords);
  if (j.contains("canned")) {
    const auto& c = j.at("canned");
    m.canned = c.is_string() ? c.get<std::string>() : c.dump();
  }
}

namespace detail {

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& ch : out) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline const ChatMessage& last_user(const std::vector<ChatMessage>& messages) {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::user) return *it;
  }
  throw BackendError("mock: no user message");
}

// First n UTF-8 code points of s.
inline std::string utf8_prefix(std::string_view s, std::size_t n) {
  std::size_t i = 0, count = 0;
  while (i < s.size() && count < n) {
    ++i;
    while (i < s.size() && (static_cast<unsigned char>(s[i]) & 0xC0) == 0x80) ++i;
    ++count;
  }
  return std::string(s.substr(0, i));
}

inline std::string keyword_refine(const std::string& user, const MockSpec& spec) {
  static constexpr std::string_view kHead = "PROMPT:\n";
  static constexpr std::string_view kMid = "\n\nRISK GRADIENT:\n";
  static constexpr std::string_view kTail = "\n\nRewrite the prompt now.";
  const std::string_view u(user);
  if (!u.starts_with(kHead) || !u.ends_with(kTail)) {
    throw BackendError("keyword_refiner: unparseable refiner message layout");
  }
  const auto mid = u.find(kMid, kHead.size());
  if (mid == std::string_view::npos) {
    throw BackendError("keyword_refiner: unparseable refiner message layout (no RISK GRADIENT)");
  }
  std::string prompt(u.substr(kHead.size(), mid - kHead.size()));
  const std::string_view gradient =
      u.substr(mid + kMid.size(), u.size() - kTail.size() - (mid + kMid.size()));

  std::vector<std::string> named;
  static constexpr std::string_view kCat = "category=\"";
  for (auto pos = gradient.find(kCat); pos != std::string_view::npos;
       pos = gradient.find(kCat, pos + 1)) {
    const auto start = pos + kCat.size();
    const auto end = gradient.find('"', start);
    if (end == std::string_view::npos) {
      throw BackendError("keyword_refiner: unterminated category name in gradient");
    }
    named.emplace_back(gradient.substr(start, end - start));
  }

  for (const auto& cat : named) {
    const auto it = spec.keywords.find(cat);
    if (it == spec.keywords.end()) continue;
    for (const auto& word : it->second) {
      for (;;) {
        const auto at = ascii_lower(prompt).find(word);
        if (at == std::string::npos) break;
        prompt.erase(at, word.size());
      }
    }
  }
  for (auto pos = prompt.find("  "); pos != std::string::npos; pos = prompt.find("  ")) {
    prompt.erase(pos, 1);
  }
  return trim(prompt);
}

}  // namespace detail

/// Pure function of (messages, spec).
inline std::string mock_complete(const std::vector<ChatMessage>& messages, const MockSpec& spec) {
  if (messages.empty()) throw BackendError("complete: no messages");
  switch (spec.kind) {
    case MockKind::echo: return detail::last_user(messages).content;
    case MockKind::keyword_refiner: return detail::keyword_refine(detail::last_user(messages).content, spec);
    case MockKind::template_target:
      return "RESPONSE(" + detail::utf8_prefix(detail::last_user(messages).content, 40) + ")";
    case MockKind::rubric_judge: return spec.canned;
  }
  throw BackendError("mock: unhandled kind");
}

class MockBackend final : public ChatBackend {
 public:
  explicit MockBackend(MockSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  std::string complete(const std::vector<ChatMessage>& messages) const override {
    return mock_complete(messages, spec_);
  }
  const MockSpec& spec() const { return spec_; }

 private:
  MockSpec spec_;
};

}  // namespace riskgrad
