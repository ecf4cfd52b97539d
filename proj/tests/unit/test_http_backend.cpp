// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

#include "cotloop/llm_backend.hpp"
#include "support.hpp"

using namespace cotloop;
using cotloop::testing::error_of;

namespace {

// Minimal OpenAI-compatible endpoint whose behaviour is selected by the
// user message content.
class FakeOpenAi {
 public:
  FakeOpenAi() {
    server_.Post(
        "/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
          ++calls_;
          last_auth_ = req.get_header_value("Authorization");
          auto body = nlohmann::json::parse(req.body);
          last_body_ = body;
          const std::string user = body["messages"].back()["content"];
          if (user == "auth") {
            res.status = 401;
            res.set_content(R"({"error":{"message":"bad key"}})", "application/json");
            return;
          }
          if (user == "busy" && busy_remaining_-- > 0) {
            res.status = 429;
            return;
          }
          if (user == "garbage") {
            res.set_content("<html>", "text/html");
            return;
          }
          if (user == "nochoices") {
            res.set_content(R"({"choices":[]})", "application/json");
            return;
          }
          if (user == "slow") std::this_thread::sleep_for(std::chrono::milliseconds(1500));
          nlohmann::json out = {
              {"id", "cmpl-1"},
              {"object", "chat.completion"},
              {"choices",
               {{{"index", 0},
                 {"message", {{"role", "assistant"}, {"content", "推理……\nAnswer: " + user}}},
                 {"finish_reason", "stop"}}}},
              {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 7}, {"total_tokens", 18}}}};
          res.set_content(out.dump(), "application/json");
        });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeOpenAi() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::atomic<int> calls_{0};
  std::atomic<int> busy_remaining_{2};
  std::string last_auth_;
  nlohmann::json last_body_;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

BackendPolicy policy(int attempts) {
  BackendPolicy p;
  p.retry.max_attempts = attempts;
  p.retry.backoff_base = std::chrono::milliseconds(1);
  p.timeout = std::chrono::milliseconds(3000);
  return p;
}

ChatRequest ask(std::string content) {
  ChatRequest r;
  r.messages = {{Role::system, "sys"}, {Role::user, std::move(content)}};
  r.temperature = 0.6;
  r.seed = 77;
  r.top_p = 0.1;
  return r;
}

}  // namespace

TEST_CASE("HTTP backend speaks the chat-completions wire format") {
  FakeOpenAi fake;
  HttpBackend b("remote", policy(3), fake.endpoint(), "deepseek-r1", "sk-test");
  auto c = b.complete(ask("C"));
  CHECK(c.text == "推理……\nAnswer: C");
  CHECK(c.usage.total_tokens == 18);
  CHECK(c.usage.prompt_tokens == 11);
  CHECK(fake.last_auth_ == "Bearer sk-test");
  CHECK(fake.last_body_["model"] == "deepseek-r1");
  CHECK(fake.last_body_["temperature"] == 0.6);
  CHECK(fake.last_body_["seed"] == 77);
  CHECK(fake.last_body_["messages"].size() == 2);
  CHECK(fake.last_body_["messages"][0]["role"] == "system");
  // What was sent is recorded alongside the completion.
  CHECK(c.sent["top_p"] == 0.1);
  CHECK_FALSE(c.sent.contains("top_k"));
}

TEST_CASE("HTTP backend maps failures onto the error taxonomy") {
  FakeOpenAi fake;
  HttpBackend b("remote", policy(3), fake.endpoint(), "m", "");
  CHECK(error_of([&] { b.complete(ask("auth")); }) == Errc::AuthError);
  CHECK(error_of([&] { b.complete(ask("garbage")); }) == Errc::ProtocolError);
  CHECK(error_of([&] { b.complete(ask("nochoices")); }) == Errc::ProtocolError);

  // Two 429s then success within three attempts.
  auto ok = b.complete(ask("busy"));
  CHECK(ok.usage.attempts == 3);

  fake.busy_remaining_ = 5;
  HttpBackend two("remote", policy(2), fake.endpoint(), "m", "");
  CHECK(error_of([&] { two.complete(ask("busy")); }) == Errc::RateLimited);
}

TEST_CASE("HTTP backend times out per policy") {
  FakeOpenAi fake;
  auto p = policy(2);
  p.timeout = std::chrono::milliseconds(300);
  HttpBackend b("remote", p, fake.endpoint(), "m", "");
  CHECK(error_of([&] { b.complete(ask("slow")); }) == Errc::Timeout);
  CHECK(b.counters().wire_attempts == 2);
}

TEST_CASE("HTTP backend rejects non-URL endpoints") {
  CHECK(error_of([] { HttpBackend("x", {}, "localhost:80", "m", ""); }) == Errc::ConfigError);
}
