#pragma once

// Local OpenAI-compatible endpoint for wire tests. Replies are scripted per
// request; every received body is recorded.

#include <atomic>
#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace riskgrad::synth {

struct StubReply {
  int status = 200;
  std::string body;
};

inline std::string completion_body(const std::string& content) {
  nlohmann::json j{{"id", "stub"},
                   {"object", "chat.completion"},
                   {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}},
                                 {"finish_reason", "stop"}}}}};
  return j.dump();
}

class StubServer {
 public:
  StubServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      StubReply reply;
      {
        std::lock_guard lock(mu_);
        requests_.push_back(req.body);
        auth_.push_back(req.get_header_value("Authorization"));
        if (!script_.empty()) {
          reply = script_.front();
          script_.pop_front();
        } else if (fallback_) {
          reply = fallback_(req.body);
        } else {
          reply = {200, completion_body("ok")};
        }
      }
      res.status = reply.status;
      res.set_content(reply.body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  void push(StubReply r) {
    std::lock_guard lock(mu_);
    script_.push_back(std::move(r));
  }
  void set_fallback(std::function<StubReply(const std::string&)> f) {
    std::lock_guard lock(mu_);
    fallback_ = std::move(f);
  }
  std::vector<std::string> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }
  std::vector<std::string> auth_headers() const {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  mutable std::mutex mu_;
  std::deque<StubReply> script_;
  std::function<StubReply(const std::string&)> fallback_;
  std::vector<std::string> requests_;
  std::vector<std::string> auth_;
};

}  // namespace riskgrad::synth
