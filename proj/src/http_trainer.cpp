// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <httplib.h>

#include <regex>
#include <thread>

#include "cotloop/errors.hpp"
#include "cotloop/sft_store.hpp"

namespace cotloop {

namespace {

nlohmann::json parse_body(const httplib::Result& res, const std::string& what) {
  if (!res) {
    throw Error(Errc::TrainerFailed, what + ": transport error " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw Error(Errc::TrainerFailed,
                what + ": HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::TrainerFailed, what + ": response is not JSON");
  }
}

}  // namespace

HttpTrainer::HttpTrainer(std::string endpoint, std::chrono::milliseconds timeout,
                         std::chrono::milliseconds poll_interval, std::string api_key)
    : timeout_(timeout), poll_interval_(poll_interval), api_key_(std::move(api_key)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint, m, kUrl)) {
    throw Error(Errc::ConfigError, "trainer endpoint must be an http(s) URL: " + endpoint);
  }
  scheme_host_port_ = m[1].str();
  path_prefix_ = m[2].matched ? m[2].str() : "";
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

nlohmann::json HttpTrainer::describe() const {
  return {{"kind", "http"}, {"endpoint", scheme_host_port_ + path_prefix_}};
}

std::string HttpTrainer::train(const std::string& base_id, const std::filesystem::path& data,
                               const SftManifest& manifest) {
  httplib::Client cli(scheme_host_port_);
  cli.set_connection_timeout(30, 0);
  cli.set_read_timeout(60, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const nlohmann::json body = {{"base", base_id},
                               {"data_url", "file://" + std::filesystem::absolute(data).string()},
                               {"manifest_hash", manifest.manifest_hash},
                               {"records", manifest.total_records}};
  auto j = parse_body(cli.Post(path_prefix_ + "/train", headers, body.dump(), "application/json"),
                      "POST /train");
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::string job;
  if (j.contains("job") && j["job"].is_string()) job = j["job"].get<std::string>();
  for (;;) {
    const std::string status = j.value("status", std::string());
    if (status == "failed") {
      throw Error(Errc::TrainerFailed, "job failed: " + j.value("error", std::string("unknown")));
    }
    if (j.contains("model_id") && j["model_id"].is_string() &&
        !j["model_id"].get<std::string>().empty()) {
      return j["model_id"].get<std::string>();
    }
    if (job.empty()) throw Error(Errc::TrainerFailed, "response has neither model_id nor job");
    if (std::chrono::steady_clock::now() + poll_interval_ > deadline) {
      throw Error(Errc::TrainerTimeout, "job " + job + " did not finish in time");
    }
    std::this_thread::sleep_for(poll_interval_);
    j = parse_body(cli.Get(path_prefix_ + "/train/" + job, headers), "GET /train/" + job);
  }
}

}  // namespace cotloop
