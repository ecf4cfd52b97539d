// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <httplib.h>

#include <algorithm>

#include "cotloop/errors.hpp"
#include "cotloop/platform_service.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

using nlohmann::json;

namespace {

struct HttpError {
  int status;
  std::string code;
};

HttpError http_error_for(Errc e) {
  switch (e) {
    case Errc::NotFound:
      return {404, "NOT_FOUND"};
    case Errc::Conflict:
      return {409, "CONFLICT"};
    case Errc::Unauthorized:
    case Errc::AuthError:
      return {401, "UNAUTHORIZED"};
    case Errc::AnswerMismatch:
      return {422, "ANSWER_MISMATCH"};
    case Errc::TooShort:
      return {422, "TOO_SHORT"};
    case Errc::InvalidRequest:
    case Errc::InvalidQuestion:
    case Errc::ParseError:
      return {422, "INVALID_REQUEST"};
    case Errc::RateLimited:
      return {429, "RATE_LIMITED"};
    default:
      return {500, "INTERNAL"};
  }
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", {{"code", code}, {"message", message}}}}.dump(),
                  "application/json");
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw Error(Errc::InvalidRequest, "request body must be a JSON object");
    return j;
  } catch (const json::exception&) {
    throw Error(Errc::InvalidRequest, "request body is not valid JSON");
  }
}

std::size_t size_param(const httplib::Request& req, const char* name, std::size_t fallback,
                       std::size_t max) {
  if (!req.has_param(name)) return fallback;
  const auto v = req.get_param_value(name);
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
      v.size() > 9) {
    throw Error(Errc::InvalidRequest, std::string(name) + " must be a non-negative integer");
  }
  return std::min<std::size_t>(std::stoul(v), max);
}

std::string string_field(const json& j, const char* name, bool required = true) {
  if (!j.contains(name) || j[name].is_null()) {
    if (required) throw Error(Errc::InvalidRequest, std::string("missing field ") + name);
    return {};
  }
  if (!j[name].is_string())
    throw Error(Errc::InvalidRequest, std::string(name) + " must be a string");
  return j[name].get<std::string>();
}

}  // namespace

struct PlatformServer::Impl {
  Platform& platform;
  httplib::Server server;
  RateLimiter submissions;

  explicit Impl(Platform& p) : platform(p), submissions(p.config().submissions_per_minute) {}

  using Fn = std::function<void(const httplib::Request&, httplib::Response&)>;

  // Maps library errors onto the JSON error body.
  static httplib::Server::Handler guard(Fn fn) {
    return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        const auto h = http_error_for(e.code());
        std::string msg = e.what();
        const auto colon = msg.find(": ");
        if (colon != std::string::npos) msg = msg.substr(colon + 2);
        send_error(res, h.status, h.code, h.status == 500 ? "internal error" : msg);
      } catch (const std::exception&) {
        send_error(res, 500, "INTERNAL", "internal error");
      }
    };
  }

  void require_token(const httplib::Request& req, bool admin) const {
    const auto& cfg = platform.config();
    const auto header = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    if (header.compare(0, prefix.size(), prefix) == 0) {
      const auto token = header.substr(prefix.size());
      auto has = [&](const std::vector<std::string>& v) {
        return !token.empty() && std::find(v.begin(), v.end(), token) != v.end();
      };
      if (has(cfg.admin_tokens) || (!admin && has(cfg.annotator_tokens))) return;
    }
    throw Error(Errc::Unauthorized, "a valid bearer token is required");
  }

  void routes() {
    server.Get("/v1/health", guard([](const httplib::Request&, httplib::Response& res) {
                 send_json(res, {{"status", "ok"}});
               }));

    server.Get("/v1/openapi.json", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(openapi_document(), "application/json");
    });

    server.Get("/v1/policy", guard([this](const httplib::Request&, httplib::Response& res) {
                 const auto& c = platform.config();
                 send_json(res, {{"min_cot_chars", c.admission.min_cot_chars},
                                 {"reveal_key_after_first_pass", c.reveal_key_after_first_pass},
                                 {"error_codes", {"ANSWER_MISMATCH", "TOO_SHORT"}}});
               }));

    server.Get("/v1/datasets", guard([this](const httplib::Request&, httplib::Response& res) {
                 json out = json::array();
                 for (const auto& v : platform.versions()) {
                   out.push_back({{"version", v.tag},
                                  {"released_at", v.released_at},
                                  {"supersedes", v.supersedes ? json(*v.supersedes) : json()},
                                  {"manifest_hash", v.manifest_hash},
                                  {"count", v.item_ids.size()}});
                 }
                 send_json(res, {{"versions", out}});
               }));

    server.Get("/v1/datasets/:version",
               guard([this](const httplib::Request& req, httplib::Response& res) {
                 const auto tag = req.path_params.at("version");
                 auto v = platform.version(tag);
                 if (!v) throw Error(Errc::NotFound, "no dataset version " + tag);
                 const std::string etag = "\"" + v->manifest_hash + "\"";
                 res.set_header("ETag", etag);
                 res.set_header("Cache-Control", "public, max-age=31536000, immutable");
                 if (req.get_header_value("If-None-Match") == etag) {
                   res.status = 304;
                   return;
                 }
                 send_json(res, platform.public_dataset(tag));
               }));

    server.Post("/v1/versions", guard([this](const httplib::Request& req, httplib::Response& res) {
                  require_token(req, true);
                  const auto body = parse_body(req);
                  const auto tag = string_field(body, "tag");
                  std::optional<std::string> supersedes;
                  if (auto s = string_field(body, "supersedes", false); !s.empty()) supersedes = s;
                  if (!body.contains("items") || !body["items"].is_array()) {
                    throw Error(Errc::InvalidRequest, "items must be an array");
                  }
                  std::vector<Question> items;
                  for (const auto& j : body["items"]) {
                    try {
                      items.push_back(question_from_json(j));
                    } catch (const nlohmann::json::exception& e) {
                      throw Error(Errc::InvalidRequest, std::string("item: ") + e.what());
                    }
                  }
                  const bool existed = platform.version(tag).has_value();
                  const auto v = platform.release_version(tag, items, supersedes);
                  send_json(res,
                            {{"version", v.tag},
                             {"released_at", v.released_at},
                             {"supersedes", v.supersedes ? json(*v.supersedes) : json()},
                             {"manifest_hash", v.manifest_hash},
                             {"count", v.item_ids.size()}},
                            existed ? 200 : 201);
                }));

    server.Post("/v1/submissions",
                guard([this](const httplib::Request& req, httplib::Response& res) {
                  if (!submissions.allow(req.remote_addr)) {
                    res.set_header("Retry-After", "60");
                    throw Error(Errc::RateLimited, "too many submissions from this address");
                  }
                  const auto body = parse_body(req);
                  const auto model = string_field(body, "model_name");
                  const auto version = string_field(body, "dataset_version");
                  if (!platform.version(version)) {
                    throw Error(Errc::NotFound, "no dataset version " + version);
                  }
                  if (!body.contains("answers") || !body["answers"].is_object()) {
                    throw Error(Errc::InvalidRequest, "answers must be an object");
                  }
                  std::map<std::string, std::string> answers;
                  for (const auto& [id, v] : body["answers"].items()) {
                    if (v.is_null()) continue;
                    if (!v.is_string()) {
                      throw Error(Errc::InvalidRequest, "answer for " + id + " must be a string");
                    }
                    answers[id] = v.get<std::string>();
                  }
                  const bool resubmit = body.value("resubmit", false);
                  const auto s = platform.submit(model, version, answers, resubmit);
                  send_json(res, to_json(s), 201);
                }));

    server.Get("/v1/submissions/:id",
               guard([this](const httplib::Request& req, httplib::Response& res) {
                 auto s = platform.submission(req.path_params.at("id"));
                 if (!s) throw Error(Errc::NotFound, "no such submission");
                 send_json(res, to_json(*s));
               }));

    server.Get("/v1/leaderboard",
               guard([this](const httplib::Request& req, httplib::Response& res) {
                 if (!req.has_param("version")) {
                   throw Error(Errc::InvalidRequest, "version parameter is required");
                 }
                 const auto offset = size_param(req, "offset", 0, 1'000'000'000);
                 const auto limit = size_param(req, "limit", 50, 500);
                 auto page = platform.leaderboard(req.get_param_value("version"), offset, limit);
                 auto j = to_json(page);
                 j["limit"] = limit;
                 send_json(res, j);
               }));

    server.Get(
        "/v1/hardcases", guard([this](const httplib::Request& req, httplib::Response& res) {
          require_token(req, false);
          std::optional<HardCaseStatus> status;
          const auto s = req.has_param("status") ? req.get_param_value("status") : "pending";
          if (s == "pending" || s == "expert_pending") {
            status = HardCaseStatus::pending;
          } else if (s == "done" || s == "expert_done") {
            status = HardCaseStatus::done;
          } else if (s != "all") {
            throw Error(Errc::InvalidRequest, "unknown status " + s);
          }
          const auto subject = req.has_param("subject") ? req.get_param_value("subject") : "";
          std::optional<int> iteration;
          if (req.has_param("iteration")) {
            iteration = static_cast<int>(size_param(req, "iteration", 0, 1'000'000));
          }
          const auto offset = size_param(req, "offset", 0, 1'000'000'000);
          const auto limit = size_param(req, "limit", 50, 500);
          std::vector<HardCase> cases;
          for (auto& hc : platform.hard_cases().list(status)) {
            if (!subject.empty() && to_string(hc.question.subject) != subject) continue;
            if (iteration && hc.iteration != *iteration) continue;
            cases.push_back(std::move(hc));
          }
          json items = json::array();
          for (std::size_t i = offset; i < cases.size() && i < offset + limit; ++i) {
            items.push_back(platform.hard_case_view(cases[i]));
          }
          send_json(
              res,
              {{"total", cases.size()}, {"offset", offset}, {"limit", limit}, {"items", items}});
        }));

    server.Get("/v1/hardcases/:id",
               guard([this](const httplib::Request& req, httplib::Response& res) {
                 require_token(req, false);
                 auto hc = platform.hard_cases().get(req.path_params.at("id"));
                 if (!hc) throw Error(Errc::NotFound, "no hard case " + req.path_params.at("id"));
                 send_json(res, platform.hard_case_view(*hc));
               }));

    server.Post(
        "/v1/hardcases/:id/key", guard([this](const httplib::Request& req, httplib::Response& res) {
          require_token(req, false);
          if (!platform.config().reveal_key_after_first_pass) {
            send_error(res, 403, "FORBIDDEN", "key reveal is disabled by server policy");
            return;
          }
          const auto body = parse_body(req);
          const auto first = string_field(body, "first_pass_answer");
          if (text::trim(first).empty()) {
            throw Error(Errc::InvalidRequest, "record a first-pass answer first");
          }
          auto hc = platform.hard_cases().get(req.path_params.at("id"));
          if (!hc) throw Error(Errc::NotFound, "no hard case " + req.path_params.at("id"));
          send_json(res, {{"question_id", hc->question.id}, {"key", hc->question.answer_key}});
        }));

    server.Post("/v1/hardcases/:id/annotation",
                guard([this](const httplib::Request& req, httplib::Response& res) {
                  require_token(req, false);
                  const auto body = parse_body(req);
                  ExpertAnnotation a;
                  a.chain_of_thought = string_field(body, "chain_of_thought");
                  a.final_answer = string_field(body, "final_answer");
                  a.annotator = string_field(body, "annotator");
                  const auto id = req.path_params.at("id");
                  const auto r = platform.annotate(id, a);
                  send_json(res, {{"question_id", id},
                                  {"status", "expert_done"},
                                  {"verdict", "accepted"},
                                  {"iteration", r.iteration},
                                  {"annotator", r.created_by}});
                }));

    if (const auto& ui = platform.config().ui_dir) {
      if (std::filesystem::is_directory(*ui)) server.set_mount_point("/ui", ui->string());
    }

    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty() && res.status >= 400) {
        send_error(res, res.status, res.status == 404 ? "NOT_FOUND" : "ERROR",
                   httplib::status_message(res.status));
      }
    });
  }
};

PlatformServer::PlatformServer(Platform& platform) : impl_(std::make_unique<Impl>(platform)) {
  const int threads = platform.config().threads;
  impl_->server.new_task_queue = [threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(threads));
  };
  impl_->routes();
}

PlatformServer::~PlatformServer() { stop(); }

int PlatformServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw Error(Errc::ConfigError, "cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(Errc::ConfigError, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void PlatformServer::listen() { impl_->server.listen_after_bind(); }

void PlatformServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void PlatformServer::wait_until_ready() { impl_->server.wait_until_ready(); }

}  // namespace cotloop
