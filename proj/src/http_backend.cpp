// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <httplib.h>

#include <regex>

#include "cotloop/llm_backend.hpp"

namespace cotloop {

namespace {

Errc errc_for_status(int status) {
  if (status == 401 || status == 403) return Errc::AuthError;
  if (status == 429) return Errc::RateLimited;
  if (status == 408) return Errc::Timeout;
  if (status >= 500) return Errc::ServerError;
  return Errc::ProtocolError;
}

int optional_int(const nlohmann::json& j, const char* key, std::optional<int>& out) {
  if (j.contains(key) && j[key].is_number_integer()) out = j[key].get<int>();
  return 0;
}

}  // namespace

HttpBackend::HttpBackend(std::string name, BackendPolicy policy, std::string endpoint,
                         std::string model, std::string api_key)
    : Backend(std::move(name), policy), model_(std::move(model)), api_key_(std::move(api_key)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint, m, kUrl)) {
    throw Error(Errc::ConfigError, "endpoint must be an http(s) URL: " + endpoint);
  }
  scheme_host_port_ = m[1].str();
  path_prefix_ = m[2].matched ? m[2].str() : "";
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

Completion HttpBackend::attempt(const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  nlohmann::json body = {{"model", request.model.empty() ? model_ : request.model},
                         {"messages", std::move(messages)},
                         {"temperature", request.temperature},
                         {"max_tokens", request.max_tokens},
                         {"stream", false}};
  if (request.seed) body["seed"] = *request.seed;
  if (request.top_p) body["top_p"] = *request.top_p;
  if (request.top_k) body["top_k"] = *request.top_k;

  httplib::Client cli(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy().timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(policy().timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto res = cli.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
        err == httplib::Error::Write) {
      throw Error(Errc::Timeout, "request to " + scheme_host_port_ + " timed out");
    }
    throw Error(Errc::ServerError, "transport error: " + httplib::to_string(err));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(errc_for_status(res->status),
                "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  nlohmann::json payload;
  try {
    payload = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw Error(Errc::ProtocolError, "response is not JSON");
  }
  const auto choices = payload.find("choices");
  if (choices == payload.end() || !choices->is_array() || choices->empty()) {
    throw Error(Errc::ProtocolError, "response has no choices");
  }
  const auto& message = (*choices)[0].value("message", nlohmann::json::object());
  if (!message.contains("content") || !message["content"].is_string()) {
    throw Error(Errc::ProtocolError, "choice has no message content");
  }
  Completion c;
  c.text = message["content"].get<std::string>();
  if (payload.contains("usage") && payload["usage"].is_object()) {
    const auto& u = payload["usage"];
    optional_int(u, "prompt_tokens", c.usage.prompt_tokens);
    optional_int(u, "completion_tokens", c.usage.completion_tokens);
    optional_int(u, "total_tokens", c.usage.total_tokens);
  }
  body.erase("messages");
  c.sent = std::move(body);
  return c;
}

}  // namespace cotloop
