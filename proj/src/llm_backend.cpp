// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/llm_backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include "cotloop/files.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
  }
  return "user";
}

void ChatRequest::validate() const {
  if (messages.empty()) throw Error(Errc::InvalidRequest, "messages must be non-empty");
  for (const auto& m : messages) {
    if (m.role == Role::system) continue;
    if (m.role != Role::user) {
      throw Error(Errc::InvalidRequest, "first non-system message must come from the user");
    }
    break;
  }
  if (!(temperature >= 0.0)) throw Error(Errc::InvalidRequest, "temperature must be >= 0");
  if (max_tokens <= 0) throw Error(Errc::InvalidRequest, "max_tokens must be positive");
}

std::string ChatRequest::prompt_hash() const {
  std::string canon;
  for (const auto& m : messages) {
    canon += to_string(m.role);
    canon += '\x1f';
    canon += m.content;
    canon += '\x1e';
  }
  return text::sha256_hex(canon);
}

const std::string& ChatRequest::user_text() const {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::user) return it->content;
  }
  static const std::string empty;
  return empty;
}

void BackendPolicy::validate() const {
  if (max_concurrency < 1) throw Error(Errc::ConfigError, "max_concurrency must be >= 1");
  if (retry.max_attempts < 1) throw Error(Errc::ConfigError, "retry.max_attempts must be >= 1");
  if (timeout.count() <= 0) throw Error(Errc::ConfigError, "timeout must be > 0");
  if (requests_per_minute < 0) throw Error(Errc::ConfigError, "requests_per_minute must be >= 0");
}

BackendPolicy policy_from_json(const nlohmann::json& j) {
  BackendPolicy p;
  p.max_concurrency = j.value("max_concurrency", p.max_concurrency);
  p.requests_per_minute = j.value("requests_per_minute", p.requests_per_minute);
  p.timeout = std::chrono::milliseconds(j.value("timeout_ms", p.timeout.count()));
  if (j.contains("retry")) {
    const auto& r = j["retry"];
    p.retry.max_attempts = r.value("max_attempts", p.retry.max_attempts);
    p.retry.backoff_base =
        std::chrono::milliseconds(r.value("backoff_base_ms", p.retry.backoff_base.count()));
    p.retry.backoff_cap =
        std::chrono::milliseconds(r.value("backoff_cap_ms", p.retry.backoff_cap.count()));
    p.retry.jitter = r.value("jitter", p.retry.jitter);
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const BackendPolicy& p) {
  return {{"max_concurrency", p.max_concurrency},
          {"requests_per_minute", p.requests_per_minute},
          {"timeout_ms", p.timeout.count()},
          {"retry",
           {{"max_attempts", p.retry.max_attempts},
            {"backoff_base_ms", p.retry.backoff_base.count()},
            {"backoff_cap_ms", p.retry.backoff_cap.count()},
            {"jitter", p.retry.jitter}}}};
}

void ConcurrencyGate::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_use_ < limit_; });
  ++in_use_;
}

void ConcurrencyGate::release() {
  {
    std::lock_guard lock(mu_);
    --in_use_;
  }
  cv_.notify_one();
}

TokenBucket::TokenBucket(double per_minute)
    : rate_per_sec_(per_minute / 60.0),
      capacity_(std::max(1.0, per_minute / 60.0)),
      tokens_(capacity_),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
  if (rate_per_sec_ <= 0.0) return;
  std::unique_lock lock(mu_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    tokens_ = std::min(capacity_, tokens_ + elapsed * rate_per_sec_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait_s = (1.0 - tokens_) / rate_per_sec_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait_s));
    lock.lock();
  }
}

Backend::Backend(std::string name, BackendPolicy policy)
    : name_(std::move(name)),
      policy_(policy),
      gate_(policy.max_concurrency),
      bucket_(policy.requests_per_minute) {
  policy_.validate();
}

Backend::Counters Backend::counters() const {
  return {logical_.load(), returned_.load(), wire_.load(), failures_.load()};
}

std::chrono::milliseconds Backend::backoff_delay(int failed_attempts) {
  const double base = static_cast<double>(policy_.retry.backoff_base.count());
  double delay = base * std::pow(2.0, failed_attempts - 1);
  delay = std::min(delay, static_cast<double>(policy_.retry.backoff_cap.count()));
  if (policy_.retry.jitter > 0.0 && delay > 0.0) {
    std::uint64_t r;
    {
      std::lock_guard lock(jitter_mu_);
      jitter_state_ = text::hash64("jitter", jitter_state_);
      r = jitter_state_;
    }
    const double u = static_cast<double>(r >> 11) * 0x1.0p-53;  // [0,1)
    delay *= 1.0 + policy_.retry.jitter * (2.0 * u - 1.0);
  }
  return std::chrono::milliseconds(static_cast<long long>(std::max(0.0, delay)));
}

Completion Backend::complete(const ChatRequest& request) {
  request.validate();
  ++logical_;
  for (int attempt_no = 1;; ++attempt_no) {
    bucket_.acquire();
    gate_.acquire();
    struct Release {
      ConcurrencyGate& g;
      ~Release() { g.release(); }
    };
    try {
      Completion c;
      {
        Release release{gate_};
        ++wire_;
        c = attempt(request);
      }
      c.usage.attempts = attempt_no;
      ++returned_;
      return c;
    } catch (const Error& e) {
      ++failures_;
      if (!is_transient(e.code()) || attempt_no >= policy_.retry.max_attempts) throw;
    }
    std::this_thread::sleep_for(backoff_delay(attempt_no));
  }
}

// ---------------------------------------------------------------------------
// ScriptedBackend

ScriptedBackend::ScriptedBackend(std::string name, BackendPolicy policy, std::string model)
    : Backend(std::move(name), policy), model_(std::move(model)) {}

void ScriptedBackend::set_response(const std::string& prompt_hash, std::string text) {
  std::lock_guard lock(mu_);
  by_hash_[prompt_hash] = std::move(text);
}

void ScriptedBackend::add_rule(std::string needle, std::vector<std::string> responses) {
  if (responses.empty()) throw Error(Errc::ConfigError, "scripted rule needs a response");
  std::lock_guard lock(mu_);
  rules_.push_back({std::move(needle), std::move(responses)});
}

void ScriptedBackend::set_default(std::string text) {
  std::lock_guard lock(mu_);
  default_ = std::move(text);
}

void ScriptedBackend::set_responder(Responder responder) {
  std::lock_guard lock(mu_);
  responder_ = std::move(responder);
}

void ScriptedBackend::fail_first(int n, Errc kind) {
  std::lock_guard lock(mu_);
  fail_remaining_ = n;
  fail_kind_ = kind;
}

void ScriptedBackend::always_fail(Errc kind) {
  std::lock_guard lock(mu_);
  always_fail_ = kind;
}

void ScriptedBackend::set_latency(std::chrono::milliseconds latency) {
  std::lock_guard lock(mu_);
  latency_ = latency;
}

namespace {

Errc errc_from_name(const std::string& name) {
  static const std::map<std::string, Errc> kNames = {
      {"timeout", Errc::Timeout},          {"rate_limited", Errc::RateLimited},
      {"server_error", Errc::ServerError}, {"auth", Errc::AuthError},
      {"protocol", Errc::ProtocolError},
  };
  auto it = kNames.find(name);
  if (it == kNames.end()) throw Error(Errc::ConfigError, "unknown failure kind '" + name + "'");
  return it->second;
}

}  // namespace

void ScriptedBackend::load_script(const nlohmann::json& script) {
  if (script.contains("default")) set_default(script["default"].get<std::string>());
  if (script.contains("responses")) {
    for (const auto& [hash, textv] : script["responses"].items()) {
      set_response(hash, textv.get<std::string>());
    }
  }
  if (script.contains("rules")) {
    for (const auto& rule : script["rules"]) {
      std::vector<std::string> responses;
      if (rule.contains("response")) responses.push_back(rule["response"].get<std::string>());
      if (rule.contains("responses")) {
        for (const auto& r : rule["responses"]) responses.push_back(r.get<std::string>());
      }
      add_rule(rule.at("contains").get<std::string>(), std::move(responses));
    }
  }
  if (script.contains("fail_first")) {
    fail_first(script["fail_first"].get<int>(),
               errc_from_name(script.value("fail_kind", std::string("timeout"))));
  }
  if (script.contains("always_fail")) always_fail(errc_from_name(script["always_fail"]));
  if (script.contains("latency_ms")) {
    set_latency(std::chrono::milliseconds(script["latency_ms"].get<int>()));
  }
}

Completion ScriptedBackend::attempt(const ChatRequest& request) {
  struct InFlight {
    std::atomic<int>& n;
    explicit InFlight(std::atomic<int>& counter, std::atomic<int>& peak) : n(counter) {
      const int now = ++n;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
    }
    ~InFlight() { --n; }
  } in_flight(in_flight_, max_in_flight_);

  std::chrono::milliseconds latency;
  Responder responder;
  {
    std::lock_guard lock(mu_);
    latency = latency_;
    if (always_fail_) throw Error(*always_fail_, "scripted failure");
    if (fail_remaining_ > 0) {
      --fail_remaining_;
      throw Error(fail_kind_, "scripted failure");
    }
    responder = responder_;
  }
  if (latency.count() > 0) std::this_thread::sleep_for(latency);

  const std::string hash = request.prompt_hash();
  std::string out;
  {
    std::unique_lock lock(mu_);
    const int call_index = deliveries_[hash]++;
    if (responder) {
      lock.unlock();
      out = responder(request, call_index);
    } else if (auto it = by_hash_.find(hash); it != by_hash_.end()) {
      out = it->second;
    } else {
      const std::string& user = request.user_text();
      bool matched = false;
      for (const auto& rule : rules_) {
        if (user.find(rule.needle) != std::string::npos) {
          const auto idx = std::min<std::size_t>(static_cast<std::size_t>(call_index),
                                                 rule.responses.size() - 1);
          out = rule.responses[idx];
          matched = true;
          break;
        }
      }
      if (!matched) {
        if (!default_) throw Error(Errc::ProtocolError, "no scripted response for prompt");
        out = *default_;
      }
    }
  }
  Completion c;
  c.text = std::move(out);
  c.usage.prompt_tokens = static_cast<int>(request.user_text().size() / 4);
  c.usage.completion_tokens = static_cast<int>(c.text.size() / 4);
  c.usage.total_tokens = *c.usage.prompt_tokens + *c.usage.completion_tokens;
  return c;
}

// ---------------------------------------------------------------------------
// ImprovingMock

SuccessCurve::SuccessCurve(std::map<std::size_t, double> points) : points_(std::move(points)) {
  if (points_.empty()) throw Error(Errc::NonMonotoneCurve, "curve needs at least one point");
  double prev = -1.0;
  for (const auto& [size, p] : points_) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(Errc::NonMonotoneCurve, "probabilities must lie in [0, 1]");
    }
    if (p < prev) {
      throw Error(Errc::NonMonotoneCurve,
                  "curve decreases at training size " + std::to_string(size));
    }
    prev = p;
  }
}

double SuccessCurve::at(std::size_t training_size) const {
  auto hi = points_.lower_bound(training_size);
  if (hi == points_.end()) return std::prev(hi)->second;
  if (hi->first == training_size || hi == points_.begin()) return hi->second;
  auto lo = std::prev(hi);
  const double t =
      static_cast<double>(training_size - lo->first) / static_cast<double>(hi->first - lo->first);
  return lo->second + t * (hi->second - lo->second);
}

ImprovingMock::ImprovingMock(std::string name, BackendPolicy policy, SuccessCurve curve,
                             std::uint64_t seed, std::string base_model)
    : Backend(std::move(name), policy),
      curve_(std::move(curve)),
      seed_(seed),
      base_model_(std::move(base_model)) {}

namespace {

std::string first_line(const std::string& s) {
  auto t = text::trim(s);
  return t.substr(0, t.find('\n'));
}

double unit_interval(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

}  // namespace

void ImprovingMock::index_questions(const std::vector<Question>& questions) {
  questions_ = questions;
  by_first_line_.clear();
  for (std::size_t i = 0; i < questions_.size(); ++i) {
    by_first_line_.emplace(first_line(questions_[i].stem), i);
  }
}

std::size_t ImprovingMock::training_size_of(std::string_view model_id) {
  const auto pos = model_id.rfind("@n=");
  if (pos == std::string_view::npos) return 0;
  std::size_t n = 0;
  for (char c : model_id.substr(pos + 3)) {
    if (c < '0' || c > '9') return 0;
    n = n * 10 + static_cast<std::size_t>(c - '0');
  }
  return n;
}

std::string ImprovingMock::model_with_size(std::string_view model_id, std::size_t training_size) {
  std::string base(model_id.substr(0, model_id.rfind("@n=")));
  if (training_size == 0) return base;
  return base + "@n=" + std::to_string(training_size);
}

const Question* ImprovingMock::locate(const std::string& prompt) const {
  const Question* best = nullptr;
  std::size_t pos = 0;
  while (pos <= prompt.size()) {
    auto end = prompt.find('\n', pos);
    if (end == std::string::npos) end = prompt.size();
    const auto line = text::trim(std::string_view(prompt).substr(pos, end - pos));
    auto [lo, hi] = by_first_line_.equal_range(line);
    for (auto it = lo; it != hi; ++it) {
      const Question& q = questions_[it->second];
      if (prompt.find(text::trim(q.stem)) != std::string::npos &&
          (!best || q.stem.size() > best->stem.size())) {
        best = &q;
      }
    }
    pos = end + 1;
  }
  return best;
}

Completion ImprovingMock::attempt(const ChatRequest& request) {
  const std::string& prompt = request.user_text();
  const Question* q = locate(prompt);
  Completion c;
  if (!q) {
    c.text = "I cannot determine the answer.";
    return c;
  }
  const std::string model = request.model.empty() ? base_model_ : request.model;
  const double p = curve_.at(training_size_of(model));
  const std::string key =
      model + '\x1f' + q->id + '\x1f' + std::to_string(request.seed.value_or(0));
  const std::uint64_t h = text::hash64(key, seed_);
  const bool correct = unit_interval(h) < p;

  std::string answer;
  if (q->is_mcq()) {
    if (correct) {
      answer = q->answer_key;
    } else {
      // A single letter different from the key.
      const auto n = q->options.size();
      std::size_t pick = text::hash64(key, seed_ ^ 0xA5A5A5A5ULL) % n;
      for (std::size_t i = 0; i < n; ++i) {
        const char letter = static_cast<char>('A' + (pick + i) % n);
        if (std::string(1, letter) != q->answer_key) {
          answer = std::string(1, letter);
          break;
        }
      }
    }
  } else {
    answer = correct ? q->answer_key : "不详";
  }
  const int steps = 2 + static_cast<int>(h % 3);
  std::string cot = "分析：题干要点为“" + first_line(q->stem).substr(0, 90) + "”。\n";
  for (int s = 1; s <= steps; ++s) {
    cot += "第" + std::to_string(s) + "步：结合辨证要点逐项比较选项并排除不符者。\n";
  }
  c.text = cot + "Answer: " + answer;
  c.usage.completion_tokens = static_cast<int>(c.text.size() / 4);
  return c;
}

// ---------------------------------------------------------------------------
// Configuration

BackendConfig backend_config_from_json(const nlohmann::json& j) {
  try {
    BackendConfig c;
    c.name = j.at("name").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "http") {
      c.kind = BackendKind::http;
    } else if (kind == "scripted") {
      c.kind = BackendKind::scripted;
    } else if (kind == "improving_mock") {
      c.kind = BackendKind::improving_mock;
    } else {
      throw Error(Errc::ConfigError, "unknown backend kind '" + kind + "'");
    }
    c.endpoint = j.value("endpoint", std::string{});
    c.model = j.value("model", std::string{});
    c.api_key_env_var = j.value("api_key_env_var", std::string{});
    if (j.contains("policy")) c.policy = policy_from_json(j["policy"]);
    if (j.contains("script")) {
      if (j["script"].is_string()) {
        c.script_path = j["script"].get<std::string>();
      } else {
        c.script = j["script"];
      }
    }
    if (j.contains("curve")) {
      for (const auto& [k, v] : j["curve"].items()) {
        c.curve[static_cast<std::size_t>(std::stoull(k))] = v.get<double>();
      }
    }
    c.seed = j.value("seed", std::uint64_t{0});
    if (c.kind == BackendKind::http && c.endpoint.empty()) {
      throw Error(Errc::ConfigError, "http backend '" + c.name + "' needs an endpoint");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("malformed backend config: ") + e.what());
  }
}

nlohmann::json to_json(const BackendConfig& c) {
  nlohmann::json j = {{"name", c.name},
                      {"kind", c.kind == BackendKind::http       ? "http"
                               : c.kind == BackendKind::scripted ? "scripted"
                                                                 : "improving_mock"},
                      {"policy", to_json(c.policy)},
                      {"seed", c.seed}};
  if (!c.endpoint.empty()) j["endpoint"] = c.endpoint;
  if (!c.model.empty()) j["model"] = c.model;
  if (!c.api_key_env_var.empty()) j["api_key_env_var"] = c.api_key_env_var;
  if (!c.script_path.empty()) j["script"] = c.script_path;
  if (!c.script.is_null()) j["script"] = c.script;
  if (!c.curve.empty()) {
    nlohmann::json curve = nlohmann::json::object();
    for (const auto& [k, v] : c.curve) curve[std::to_string(k)] = v;
    j["curve"] = curve;
  }
  return j;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config,
                                      const std::vector<Question>* corpus) {
  switch (config.kind) {
    case BackendKind::http: {
      std::string key;
      if (!config.api_key_env_var.empty()) {
        const char* v = std::getenv(config.api_key_env_var.c_str());
        if (!v) {
          throw Error(Errc::ConfigError,
                      "environment variable " + config.api_key_env_var + " is not set");
        }
        key = v;
      }
      return std::make_unique<HttpBackend>(config.name, config.policy, config.endpoint,
                                           config.model, key);
    }
    case BackendKind::scripted: {
      auto b = std::make_unique<ScriptedBackend>(config.name, config.policy,
                                                 config.model.empty() ? "scripted" : config.model);
      if (!config.script_path.empty()) b->load_script(files::read_json(config.script_path));
      if (!config.script.is_null()) b->load_script(config.script);
      return b;
    }
    case BackendKind::improving_mock: {
      auto b = std::make_unique<ImprovingMock>(
          config.name, config.policy,
          SuccessCurve(config.curve.empty() ? std::map<std::size_t, double>{{0, 0.5}}
                                            : config.curve),
          config.seed, config.model.empty() ? "m0" : config.model);
      if (corpus) b->index_questions(*corpus);
      return b;
    }
  }
  throw Error(Errc::ConfigError, "unhandled backend kind");
}

}  // namespace cotloop
