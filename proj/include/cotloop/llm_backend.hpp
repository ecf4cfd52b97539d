// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Chat-completion backends behind one interface. Backend::complete() owns the
// policy (bounded concurrency, client-side token bucket, retries with
// exponential backoff); subclasses implement a single wire attempt.

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotloop/corpus_model.hpp"
#include "cotloop/errors.hpp"

namespace cotloop {

inline constexpr double kDeterministicTemperature = 0.0;
inline constexpr double kReasoningTemperature = 0.6;

enum class Role { system, user, assistant };
std::string_view to_string(Role r);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = kDeterministicTemperature;
  int max_tokens = 2048;
  std::optional<std::uint64_t> seed;
  std::optional<double> top_p;
  std::optional<int> top_k;

  // Throws Errc::InvalidRequest: empty messages, first non-system message
  // not from the user, negative temperature.
  void validate() const;
  // SHA-256 over roles and contents only.
  std::string prompt_hash() const;
  // Content of the last user message.
  const std::string& user_text() const;
};

struct Usage {
  std::optional<int> prompt_tokens;
  std::optional<int> completion_tokens;
  std::optional<int> total_tokens;
  int attempts = 1;
};

struct Completion {
  std::string text;
  Usage usage;
  // Request fields actually sent on the wire (HTTP backends only).
  nlohmann::json sent;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds backoff_cap{30'000};
  double jitter = 0.2;  // fraction of the delay, uniform +/-
};

struct BackendPolicy {
  int max_concurrency = 4;
  double requests_per_minute = 0.0;  // 0: unlimited
  RetryPolicy retry;
  std::chrono::milliseconds timeout{120'000};

  void validate() const;
};

BackendPolicy policy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackendPolicy& p);

// Counting gate bounding in-flight wire calls.
class ConcurrencyGate {
 public:
  explicit ConcurrencyGate(int limit) : limit_(limit) {}
  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int limit_;
  int in_use_ = 0;
};

class TokenBucket {
 public:
  explicit TokenBucket(double per_minute);
  void acquire();

 private:
  std::mutex mu_;
  double rate_per_sec_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

class Backend {
 public:
  struct Counters {
    std::uint64_t logical_requests = 0;
    std::uint64_t completions_returned = 0;
    std::uint64_t wire_attempts = 0;
    std::uint64_t failures = 0;
  };

  Backend(std::string name, BackendPolicy policy);
  virtual ~Backend() = default;
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  // Thread-safe. Retries transient failures per policy and rethrows the last
  // error once attempts are exhausted.
  Completion complete(const ChatRequest& request);

  const std::string& name() const { return name_; }
  const BackendPolicy& policy() const { return policy_; }
  virtual std::string default_model() const = 0;
  Counters counters() const;

 protected:
  virtual Completion attempt(const ChatRequest& request) = 0;

 private:
  std::chrono::milliseconds backoff_delay(int failed_attempts);

  std::string name_;
  BackendPolicy policy_;
  ConcurrencyGate gate_;
  TokenBucket bucket_;
  std::atomic<std::uint64_t> logical_{0};
  std::atomic<std::uint64_t> returned_{0};
  std::atomic<std::uint64_t> wire_{0};
  std::atomic<std::uint64_t> failures_{0};
  std::mutex jitter_mu_;
  std::uint64_t jitter_state_ = 0x853c49e6748fea9bULL;
};

// Deterministic backend driven by a script. Resolution order per call:
// injected failure, responder callback, exact prompt hash, first matching
// substring rule, default text.
class ScriptedBackend : public Backend {
 public:
  using Responder = std::function<std::string(const ChatRequest&, int call_index)>;

  explicit ScriptedBackend(std::string name = "scripted", BackendPolicy policy = {},
                           std::string model = "scripted");

  void set_response(const std::string& prompt_hash, std::string text);
  // The i-th delivery for a given prompt matching `needle` returns
  // responses[min(i, size-1)].
  void add_rule(std::string needle, std::vector<std::string> responses);
  void set_default(std::string text);
  void set_responder(Responder responder);
  // The first `n` wire attempts fail with `kind`.
  void fail_first(int n, Errc kind);
  void always_fail(Errc kind);
  void set_latency(std::chrono::milliseconds latency);

  // {"default": str, "responses": {prompt_hash: str},
  //  "rules": [{"contains": str, "responses": [str]}],
  //  "fail_first": int, "fail_kind": str, "always_fail": str}
  void load_script(const nlohmann::json& script);

  std::string default_model() const override { return model_; }
  int max_in_flight() const { return max_in_flight_.load(); }

 protected:
  Completion attempt(const ChatRequest& request) override;

 private:
  struct Rule {
    std::string needle;
    std::vector<std::string> responses;
  };

  std::string model_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> by_hash_;
  std::vector<Rule> rules_;
  std::optional<std::string> default_;
  Responder responder_;
  std::unordered_map<std::string, int> deliveries_;
  int fail_remaining_ = 0;
  Errc fail_kind_ = Errc::Timeout;
  std::optional<Errc> always_fail_;
  std::chrono::milliseconds latency_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
};

// Training-set-size to success-probability curve; linear between points,
// clamped at both ends. Throws NonMonotoneCurve unless non-decreasing in
// [0, 1].
class SuccessCurve {
 public:
  explicit SuccessCurve(std::map<std::size_t, double> points);
  double at(std::size_t training_size) const;
  const std::map<std::size_t, double>& points() const { return points_; }

 private:
  std::map<std::size_t, double> points_;
};

// Simulated model whose per-question success probability grows with the
// size of the set it was fine-tuned on, read from the request's model id
// ("<id>@n=<size>"; no suffix means the untuned base, size 0). Outcomes are
// a pure function of (seed, model id, question, request seed).
class ImprovingMock : public Backend {
 public:
  ImprovingMock(std::string name, BackendPolicy policy, SuccessCurve curve, std::uint64_t seed,
                std::string base_model = "m0");

  void index_questions(const std::vector<Question>& questions);
  static std::size_t training_size_of(std::string_view model_id);
  static std::string model_with_size(std::string_view model_id, std::size_t training_size);

  const SuccessCurve& curve() const { return curve_; }
  std::string default_model() const override { return base_model_; }

 protected:
  Completion attempt(const ChatRequest& request) override;

 private:
  const Question* locate(const std::string& prompt) const;

  SuccessCurve curve_;
  std::uint64_t seed_;
  std::string base_model_;
  std::vector<Question> questions_;
  std::unordered_multimap<std::string, std::size_t> by_first_line_;
};

// OpenAI-compatible POST {endpoint}/chat/completions.
class HttpBackend : public Backend {
 public:
  HttpBackend(std::string name, BackendPolicy policy, std::string endpoint, std::string model,
              std::string api_key);

  std::string default_model() const override { return model_; }

 protected:
  Completion attempt(const ChatRequest& request) override;

 private:
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::string model_;
  std::string api_key_;
};

enum class BackendKind { http, scripted, improving_mock };

struct BackendConfig {
  std::string name;
  BackendKind kind = BackendKind::scripted;
  std::string endpoint;
  std::string model;
  std::string api_key_env_var;
  BackendPolicy policy;
  nlohmann::json script;                // scripted: inline script
  std::string script_path;              // scripted: script file
  std::map<std::size_t, double> curve;  // improving_mock
  std::uint64_t seed = 0;
};

BackendConfig backend_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BackendConfig& c);

// Builds a backend; `corpus` is indexed into improving_mock backends.
// Credentials are read only from the environment variable named in config.
std::unique_ptr<Backend> make_backend(const BackendConfig& config,
                                      const std::vector<Question>* corpus = nullptr);

}  // namespace cotloop
