// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <thread>

#include "cotloop/llm_backend.hpp"
#include "support.hpp"

using namespace cotloop;
using cotloop::testing::error_of;

namespace {

BackendPolicy fast_policy(int max_attempts = 3, int concurrency = 4) {
  BackendPolicy p;
  p.max_concurrency = concurrency;
  p.retry.max_attempts = max_attempts;
  p.retry.backoff_base = std::chrono::milliseconds(1);
  p.retry.jitter = 0.0;
  return p;
}

ChatRequest user_request(std::string content, std::string model = "") {
  ChatRequest r;
  r.model = std::move(model);
  r.messages = {{Role::system, "You are a TCM examiner."}, {Role::user, std::move(content)}};
  return r;
}

}  // namespace

TEST_CASE("ChatRequest validation") {
  ChatRequest empty;
  CHECK(error_of([&] { empty.validate(); }) == Errc::InvalidRequest);
  ChatRequest assistant_first;
  assistant_first.messages = {{Role::system, "s"}, {Role::assistant, "a"}};
  CHECK(error_of([&] { assistant_first.validate(); }) == Errc::InvalidRequest);
  auto negative = user_request("q");
  negative.temperature = -0.1;
  CHECK(error_of([&] { negative.validate(); }) == Errc::InvalidRequest);
  CHECK_NOTHROW(user_request("q").validate());
}

TEST_CASE("BackendPolicy validation") {
  BackendPolicy p;
  p.retry.max_attempts = 0;
  CHECK(error_of([&] { p.validate(); }) == Errc::ConfigError);
  p = {};
  p.timeout = std::chrono::milliseconds(0);
  CHECK(error_of([&] { p.validate(); }) == Errc::ConfigError);
  auto parsed = policy_from_json(nlohmann::json::parse(
      R"({"max_concurrency":2,"requests_per_minute":60,"timeout_ms":5000,
          "retry":{"max_attempts":5,"backoff_base_ms":10,"jitter":0.1}})"));
  CHECK(parsed.max_concurrency == 2);
  CHECK(parsed.retry.max_attempts == 5);
  CHECK(parsed.timeout.count() == 5000);
}

TEST_CASE("scripted backend returns the fixed text for a prompt hash, byte-exact") {
  ScriptedBackend b("s", fast_policy());
  auto req = user_request("太阳中风，应选何方？");
  const std::string text = "先辨表里寒热。\n【答案】B\n\t";
  b.set_response(req.prompt_hash(), text);
  CHECK(b.complete(req).text == text);
  CHECK(error_of([&] { b.complete(user_request("unscripted")); }) == Errc::ProtocolError);
}

TEST_CASE("retry: fail twice then succeed with max_attempts=3") {
  ScriptedBackend b("s", fast_policy(3));
  b.set_default("Answer: A");
  b.fail_first(2, Errc::ServerError);
  auto c = b.complete(user_request("q"));
  CHECK(c.text == "Answer: A");
  CHECK(c.usage.attempts == 3);
  CHECK(b.counters().wire_attempts == 3);
  CHECK(b.counters().completions_returned == 1);
}

TEST_CASE("retry: always timing out with max_attempts=2 raises Timeout after 2 attempts") {
  ScriptedBackend b("s", fast_policy(2));
  b.set_default("x");
  b.always_fail(Errc::Timeout);
  CHECK(error_of([&] { b.complete(user_request("q")); }) == Errc::Timeout);
  CHECK(b.counters().wire_attempts == 2);
  CHECK(b.counters().completions_returned == 0);
}

TEST_CASE("non-transient failures are not retried") {
  ScriptedBackend b("s", fast_policy(5));
  b.always_fail(Errc::AuthError);
  CHECK(error_of([&] { b.complete(user_request("q")); }) == Errc::AuthError);
  CHECK(b.counters().wire_attempts == 1);

  ScriptedBackend r("s", fast_policy(2));
  r.always_fail(Errc::RateLimited);
  CHECK(error_of([&] { r.complete(user_request("q")); }) == Errc::RateLimited);
  CHECK(r.counters().wire_attempts == 2);
}

TEST_CASE("scripted rules advance per prompt delivery") {
  ScriptedBackend b("s", fast_policy());
  b.add_rule("题目甲", {"Answer: A", "Answer: B"});
  b.set_default("Answer: D");
  CHECK(b.complete(user_request("题目甲 ...")).text == "Answer: A");
  CHECK(b.complete(user_request("题目甲 ...")).text == "Answer: B");
  CHECK(b.complete(user_request("题目甲 ...")).text == "Answer: B");
  CHECK(b.complete(user_request("题目乙")).text == "Answer: D");
}

TEST_CASE("max_concurrency bounds in-flight requests; accounting is idempotent under retry") {
  for (int limit : {1, 3}) {
    ScriptedBackend b("s", fast_policy(3, limit));
    b.set_default("Answer: C");
    b.set_latency(std::chrono::milliseconds(3));
    b.fail_first(5, Errc::ServerError);
    std::vector<std::thread> threads;
    for (int t = 0; t < 24; ++t) {
      threads.emplace_back([&, t] { b.complete(user_request("q" + std::to_string(t))); });
    }
    for (auto& th : threads) th.join();
    CHECK(b.max_in_flight() <= limit);
    CHECK(b.max_in_flight() >= 1);
    const auto c = b.counters();
    CHECK(c.logical_requests == 24);
    CHECK(c.completions_returned == c.logical_requests);
    CHECK(c.wire_attempts == 24 + 5);
  }
}

TEST_CASE("token bucket enforces requests_per_minute") {
  auto p = fast_policy();
  p.requests_per_minute = 1200;  // 20/s with a burst of 20
  ScriptedBackend b("s", p);
  b.set_default("ok");
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 30; ++i) b.complete(user_request("q"));
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(elapsed >= 0.45);
}

TEST_CASE("SuccessCurve interpolation and monotonicity") {
  SuccessCurve c({{0, 0.4}, {100, 0.7}});
  CHECK(c.at(0) == doctest::Approx(0.4));
  CHECK(c.at(50) == doctest::Approx(0.55));
  CHECK(c.at(100) == doctest::Approx(0.7));
  CHECK(c.at(1'000'000) == doctest::Approx(0.7));
  CHECK(error_of([] { SuccessCurve({{0, 0.5}, {10, 0.4}}); }) == Errc::NonMonotoneCurve);
  CHECK(error_of([] { SuccessCurve({{0, 1.5}}); }) == Errc::NonMonotoneCurve);
  CHECK(error_of([] { SuccessCurve({}); }) == Errc::NonMonotoneCurve);
}

TEST_CASE("model ids carry the training-set size") {
  CHECK(ImprovingMock::training_size_of("m0") == 0);
  CHECK(ImprovingMock::training_size_of("m0+abc@n=417") == 417);
  CHECK(ImprovingMock::model_with_size("m0+abc", 12) == "m0+abc@n=12");
  CHECK(ImprovingMock::model_with_size("m0+abc@n=3", 12) == "m0+abc@n=12");
}

namespace {

// Empirical correct rate of the mock at a given training size.
double mock_rate(ImprovingMock& mock, const std::vector<Question>& qs, std::size_t size) {
  int correct = 0;
  for (const auto& q : qs) {
    ChatRequest r = user_request("Question:\n" + q.stem + "\nA. x\n");
    r.model = ImprovingMock::model_with_size("m0", size);
    r.seed = 42;
    const auto text = mock.complete(r).text;
    if (text.substr(text.rfind("Answer: ") + 8) == q.answer_key) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(qs.size());
}

}  // namespace

TEST_CASE("improving_mock: probability 0 and 1 endpoints") {
  auto qs = cotloop::testing::synthetic_questions(200, 5);
  ImprovingMock never("m", fast_policy(), SuccessCurve({{0, 0.0}}), 1);
  never.index_questions(qs);
  CHECK(mock_rate(never, qs, 0) == 0.0);
  CHECK(mock_rate(never, qs, 5000) == 0.0);

  ImprovingMock always("m", fast_policy(), SuccessCurve({{0, 1.0}}), 1);
  always.index_questions(qs);
  CHECK(mock_rate(always, qs, 0) == 1.0);
  CHECK(mock_rate(always, qs, 1u << 30) == 1.0);
}

TEST_CASE("improving_mock: empirical rate within 0.05 of the curve over 1,000 questions") {
  auto qs = cotloop::testing::synthetic_questions(1000, 17);
  ImprovingMock mock("m", fast_policy(), SuccessCurve({{0, 0.4}, {100, 0.7}}), 2024);
  mock.index_questions(qs);
  for (std::size_t size : {0u, 50u, 100u, 400u}) {
    const double expected = mock.curve().at(size);
    const double rate = mock_rate(mock, qs, size);
    INFO("size=" << size << " rate=" << rate << " expected=" << expected);
    CHECK(std::abs(rate - expected) <= 0.05);
  }
}

TEST_CASE("improving_mock transcripts are reproducible for identical seeds") {
  auto qs = cotloop::testing::synthetic_questions(30, 8);
  auto run = [&](std::uint64_t seed) {
    ImprovingMock mock("m", fast_policy(), SuccessCurve({{0, 0.5}}), seed);
    mock.index_questions(qs);
    std::vector<std::string> out;
    for (const auto& q : qs) {
      ChatRequest r = user_request(q.stem);
      r.seed = 9;
      out.push_back(mock.complete(r).text);
    }
    return out;
  };
  CHECK(run(1) == run(1));
  CHECK(run(1) != run(2));
}

TEST_CASE("backend config parsing and factory") {
  auto cfg = backend_config_from_json(nlohmann::json::parse(R"({
    "name": "gen", "kind": "improving_mock", "curve": {"0": 0.4, "800": 0.9}, "seed": 3,
    "policy": {"max_concurrency": 2}
  })"));
  CHECK(cfg.kind == BackendKind::improving_mock);
  CHECK(cfg.curve.at(800) == doctest::Approx(0.9));
  auto b = make_backend(cfg);
  CHECK(b->name() == "gen");
  CHECK(b->policy().max_concurrency == 2);
  CHECK(backend_config_from_json(to_json(cfg)).curve == cfg.curve);

  CHECK(error_of([] {
          backend_config_from_json(nlohmann::json::parse(R"({"name":"x","kind":"grpc"})"));
        }) == Errc::ConfigError);
  CHECK(error_of([] {
          backend_config_from_json(nlohmann::json::parse(R"({"name":"x","kind":"http"})"));
        }) == Errc::ConfigError);
  auto http = backend_config_from_json(nlohmann::json::parse(
      R"({"name":"x","kind":"http","endpoint":"http://127.0.0.1:1/v1",
          "api_key_env_var":"COTLOOP_TEST_SURELY_UNSET"})"));
  CHECK(error_of([&] { make_backend(http); }) == Errc::ConfigError);

  auto scripted = make_backend(backend_config_from_json(nlohmann::json::parse(
      R"({"name":"s","kind":"scripted","script":{"default":"Answer: B",
          "rules":[{"contains":"foo","response":"Answer: A"}]}})")));
  CHECK(scripted->complete(user_request("foo bar")).text == "Answer: A");
  CHECK(scripted->complete(user_request("baz")).text == "Answer: B");
}
