// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <httplib.h>

#include <random>
#include <set>
#include <thread>

#include "cotloop/errors.hpp"
#include "cotloop/platform_service.hpp"
#include "support.hpp"

using namespace cotloop;
using cotloop::testing::error_of;
using cotloop::testing::TempDir;
using nlohmann::json;

namespace {

const std::string kAnnotator = "annotator-token";
const std::string kAdmin = "admin-token";

PlatformConfig config_in(const TempDir& dir) {
  PlatformConfig c;
  c.data_dir = dir.path();
  c.annotator_tokens = {kAnnotator};
  c.admin_tokens = {kAdmin};
  c.submissions_per_minute = 0;
  c.threads = 4;
  return c;
}

HardCase hard_case(const Question& q, int iteration = 1) {
  HardCase hc;
  hc.question = q;
  hc.iteration = iteration;
  hc.attempts = 8;
  hc.sample_rejected_cot = "错误推理";
  return hc;
}

std::string long_cot() {
  std::string s;
  for (int i = 0; i < 30; ++i) s += "辨证";
  return s;
}

// A live server on an ephemeral port, recording every response body.
struct LiveServer {
  Platform& platform;
  PlatformServer server;
  std::thread thread;
  int port = 0;
  std::vector<std::string> bodies;

  explicit LiveServer(Platform& p) : platform(p), server(p) {
    port = server.bind("127.0.0.1", 0);
    thread = std::thread([this] { server.listen(); });
    server.wait_until_ready();
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }
  httplib::Headers auth(const std::string& token) const {
    return {{"Authorization", "Bearer " + token}};
  }
  httplib::Result record(httplib::Result r) {
    REQUIRE(r);
    bodies.push_back(r->body);
    return r;
  }
  httplib::Result get(const std::string& path, const httplib::Headers& h = {}) {
    auto c = client();
    return record(c.Get(path, h));
  }
  httplib::Result post(const std::string& path, const json& body, const httplib::Headers& h = {}) {
    auto c = client();
    return record(c.Post(path, h, body.dump(), "application/json"));
  }
};

std::string error_code(const httplib::Result& r) {
  return json::parse(r->body)["error"]["code"].get<std::string>();
}

}  // namespace

TEST_CASE("kv store: transactions and persistence") {
  TempDir dir;
  {
    KvStore kv(dir / "a.db");
    kv.put("ns", "k1", {{"v", 1}});
    CHECK(kv.get("ns", "k1") == json{{"v", 1}});
    CHECK_FALSE(kv.get("ns", "nope"));
    CHECK_FALSE(kv.get("other", "k1"));
    CHECK(error_of([&] {
            kv.transact([](KvStore::Txn& t) {
              t.put("ns", "k2", 2);
              throw Error(Errc::Conflict, "abort");
            });
          }) == Errc::Conflict);
    CHECK_FALSE(kv.get("ns", "k2"));
    kv.transact([](KvStore::Txn& t) {
      CHECK(t.insert("ns", "a%_", 1));
      CHECK_FALSE(t.insert("ns", "a%_", 2));
      t.put("ns", "ab", 3);
      CHECK(t.next("c") == 1);
      CHECK(t.next("c") == 2);
    });
    CHECK(kv.list("ns", "a%").size() == 1);
    CHECK(kv.list("ns").size() == 3);
  }
  KvStore again(dir / "a.db");
  CHECK(again.get("ns", "a%_") == json(1));
}

TEST_CASE("sqlite hard-case queue") {
  TempDir dir;
  const auto qs = cotloop::testing::synthetic_questions(3);
  KvStore kv(dir / "q.db");
  SqliteHardCaseQueue q(kv);
  q.push(hard_case(qs[0]));
  q.push(hard_case(qs[1], 2));
  auto dup = hard_case(qs[0], 5);
  q.push(dup);
  CHECK(q.get(qs[0].id)->iteration == 1);
  CHECK(q.list(HardCaseStatus::pending).size() == 2);

  const auto r = annotate_hard_case(q, qs[0].id, {long_cot(), qs[0].answer_key, "e1"});
  CHECK(r.source == RecordSource::expert);
  CHECK(error_of([&] { annotate_hard_case(q, qs[0].id, {long_cot(), qs[0].answer_key, "e2"}); }) ==
        Errc::Conflict);
  CHECK(error_of([&] { annotate_hard_case(q, "missing", {long_cot(), "A", "e2"}); }) ==
        Errc::NotFound);
  CHECK(q.list(HardCaseStatus::done).size() == 1);

  // A second connection on the same file sees the resolution.
  KvStore other(dir / "q.db");
  SqliteHardCaseQueue q2(other);
  CHECK(q2.get(qs[0].id)->record == r);
  CHECK_FALSE(q2.resolve(qs[0].id, r));
}

TEST_CASE("versions are immutable") {
  TempDir dir;
  Platform p(config_in(dir));
  const auto qs = cotloop::testing::synthetic_questions(8);
  const std::vector<Question> first(qs.begin(), qs.begin() + 5);
  const auto v1 = p.release_version("2025.1", first);
  CHECK(v1.item_ids.size() == 5);
  CHECK(p.release_version("2025.1", first).released_at == v1.released_at);
  CHECK(error_of([&] { p.release_version("2025.1", qs); }) == Errc::Conflict);
  CHECK(error_of([&] { p.release_version("2025.2", {qs[6], qs[7]}, "2025.1"); }) == Errc::Conflict);
  CHECK(error_of([&] { p.release_version("2025.2", qs, "nope"); }) == Errc::NotFound);
  const auto v2 = p.release_version("2025.2", qs, "2025.1");
  CHECK(v2.item_ids.size() == 8);
  CHECK(p.dataset("2025.1").manifest_hash == v1.manifest_hash);
  CHECK(p.versions().size() == 2);
  CHECK(error_of([&] { p.release_version("bad/tag", first); }) == Errc::InvalidRequest);
  CHECK(error_of([&] { p.dataset("nope"); }) == Errc::NotFound);
}

TEST_CASE("REST: datasets are redacted and stable") {
  TempDir dir;
  Platform p(config_in(dir));
  const auto qs = cotloop::testing::synthetic_questions(5);
  p.release_version("fx-5", qs);
  LiveServer s(p);

  auto r = s.get("/v1/datasets/fx-5");
  CHECK(r->status == 200);
  const auto body = json::parse(r->body);
  CHECK(body["items"].size() == 5);
  CHECK(r->body.find("answer_key") == std::string::npos);
  for (const auto& item : body["items"]) CHECK_FALSE(item.contains("answer_key"));
  const auto etag = r->get_header_value("ETag");
  CHECK(etag == "\"" + p.version("fx-5")->manifest_hash + "\"");

  auto again = s.get("/v1/datasets/fx-5");
  CHECK(again->get_header_value("ETag") == etag);
  CHECK(again->body == r->body);
  auto cached = s.get("/v1/datasets/fx-5", {{"If-None-Match", etag}});
  CHECK(cached->status == 304);
  CHECK(cached->body.empty());

  auto missing = s.get("/v1/datasets/nope");
  CHECK(missing->status == 404);
  CHECK(error_code(missing) == "NOT_FOUND");
  CHECK(s.get("/v1/datasets")->status == 200);
  CHECK(s.get("/v1/no/such/route")->status == 404);
}

TEST_CASE("REST: submissions") {
  TempDir dir;
  Platform p(config_in(dir));
  const auto qs = cotloop::testing::synthetic_questions(10);
  p.release_version("fx-10", qs);
  LiveServer s(p);

  json all_correct = json::object();
  for (const auto& q : qs) all_correct[q.id] = q.answer_key;
  auto r =
      s.post("/v1/submissions",
             {{"model_name", "oracle"}, {"dataset_version", "fx-10"}, {"answers", all_correct}});
  CHECK(r->status == 201);
  auto sub = json::parse(r->body);
  CHECK(sub["report"]["overall_weighted"] == "100.00");

  r = s.post("/v1/submissions",
             {{"model_name", "silent"}, {"dataset_version", "fx-10"}, {"answers", json::object()}});
  CHECK(r->status == 201);
  sub = json::parse(r->body);
  CHECK(sub["report"]["overall_weighted"] == "0.00");
  CHECK(sub["report"]["tally"]["unanswered"] == 10);
  CHECK(s.get("/v1/submissions/" + sub["id"].get<std::string>())->status == 200);
  CHECK(s.get("/v1/submissions/nope")->status == 404);

  r = s.post(
      "/v1/submissions",
      {{"model_name", "x"}, {"dataset_version", "fx-10"}, {"answers", {{"not-a-question", "A"}}}});
  CHECK(r->status == 422);
  CHECK(error_code(r) == "INVALID_REQUEST");
  r = s.post("/v1/submissions",
             {{"model_name", "x"}, {"dataset_version", "fx-10"}, {"answers", {{qs[0].id, "Z"}}}});
  CHECK(r->status == 422);
  r = s.post("/v1/submissions",
             {{"model_name", "x"}, {"dataset_version", "fx-10"}, {"answers", 3}});
  CHECK(r->status == 422);
  r = s.post("/v1/submissions",
             {{"model_name", "x"}, {"dataset_version", "nope"}, {"answers", json::object()}});
  CHECK(r->status == 404);

  auto c = s.client();
  auto bad = c.Post("/v1/submissions", "{not json", "application/json");
  CHECK(bad->status == 422);

  r = s.post("/v1/submissions",
             {{"model_name", "oracle"}, {"dataset_version", "fx-10"}, {"answers", all_correct}});
  CHECK(r->status == 409);
  CHECK(error_code(r) == "CONFLICT");
  r = s.post("/v1/submissions", {{"model_name", "oracle"},
                                 {"dataset_version", "fx-10"},
                                 {"answers", json::object()},
                                 {"resubmit", true}});
  CHECK(r->status == 201);
  const auto board = json::parse(s.get("/v1/leaderboard?version=fx-10")->body);
  CHECK(board["total"] == 2);
  CHECK(board["entries"][0]["overall"] == "0.00");
}

TEST_CASE("REST: leaderboard ordering") {
  TempDir dir;
  Platform p(config_in(dir));
  const auto qs = cotloop::testing::synthetic_questions(10);
  p.release_version("fx-10", qs);
  p.release_version("empty-board", {qs[0]});
  LiveServer s(p);

  auto answers = [&](int right) {
    json a = json::object();
    for (int i = 0; i < 10; ++i) {
      const auto& q = qs[static_cast<std::size_t>(i)];
      a[q.id] = i < right ? q.answer_key : std::string(1, q.answer_key[0] == 'A' ? 'B' : 'A');
    }
    return a;
  };
  for (auto [name, right] : std::vector<std::pair<std::string, int>>{
           {"eighty", 8}, {"ninety-early", 9}, {"ninety-late", 9}}) {
    CHECK(s.post("/v1/submissions",
                 {{"model_name", name}, {"dataset_version", "fx-10"}, {"answers", answers(right)}})
              ->status == 201);
  }
  auto board = json::parse(s.get("/v1/leaderboard?version=fx-10")->body);
  REQUIRE(board["entries"].size() == 3);
  CHECK(board["entries"][0]["model_name"] == "ninety-early");
  CHECK(board["entries"][0]["rank"] == 1);
  CHECK(board["entries"][0]["overall"] == "90.00");
  CHECK(board["entries"][1]["model_name"] == "ninety-late");
  CHECK(board["entries"][2]["model_name"] == "eighty");
  CHECK(board["entries"][2]["rank"] == 3);
  CHECK(board["entries"][0]["scores"].size() >= 1);

  auto page = json::parse(s.get("/v1/leaderboard?version=fx-10&offset=1&limit=1")->body);
  REQUIRE(page["entries"].size() == 1);
  CHECK(page["entries"][0]["rank"] == 2);
  CHECK(page["total"] == 3);

  auto empty = s.get("/v1/leaderboard?version=empty-board");
  CHECK(empty->status == 200);
  CHECK(json::parse(empty->body)["entries"].empty());
  CHECK(s.get("/v1/leaderboard?version=nope")->status == 404);
  CHECK(s.get("/v1/leaderboard")->status == 422);
  CHECK(s.get("/v1/leaderboard?version=fx-10&limit=-1")->status == 422);
}

TEST_CASE("leaderboard is a total order on random submission sets") {
  TempDir dir;
  Platform p(config_in(dir));
  const auto qs = cotloop::testing::synthetic_questions(12, 17);
  p.release_version("fx", qs);
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    std::map<std::string, std::string> a;
    for (const auto& q : qs) {
      const auto roll = rng() % 3;
      if (roll == 0) a[q.id] = q.answer_key;
      if (roll == 1) a[q.id] = q.answer_key[0] == 'A' ? "B" : "A";
    }
    p.submit("model-" + std::to_string(rng() % 40), "fx", a, true);
  }
  const auto page = p.leaderboard("fx", 0, 1000);
  CHECK(page.total == page.entries.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < page.entries.size(); ++i) {
    const auto& e = page.entries[i];
    CHECK(e.rank == static_cast<int>(i + 1));
    CHECK(names.insert(e.model_name).second);
    if (i == 0) continue;
    const auto& prev = page.entries[i - 1];
    const auto a = *p.submission(prev.submission_id);
    const auto b = *p.submission(e.submission_id);
    const bool ordered =
        prev.overall > e.overall ||
        (prev.overall == e.overall &&
         (a.submitted_at < b.submitted_at || (a.submitted_at == b.submitted_at && a.seq < b.seq)));
    CHECK(ordered);
  }
  // Paging agrees with the full list.
  std::vector<std::string> paged;
  for (std::size_t off = 0; off < page.total; off += 7) {
    for (const auto& e : p.leaderboard("fx", off, 7).entries) paged.push_back(e.submission_id);
  }
  REQUIRE(paged.size() == page.entries.size());
  for (std::size_t i = 0; i < paged.size(); ++i) CHECK(paged[i] == page.entries[i].submission_id);
}

TEST_CASE("REST: hard-case annotation") {
  TempDir dir;
  auto cfg = config_in(dir);
  cfg.admission.min_cot_chars = 20;
  Platform p(cfg);
  auto qs = cotloop::testing::synthetic_questions(3);
  qs[2].subject = Subject::acupuncture;
  for (const auto& q : qs) p.hard_cases().push(hard_case(q));
  LiveServer s(p);
  const auto auth = s.auth(kAnnotator);

  CHECK(s.get("/v1/hardcases")->status == 401);
  CHECK(s.get("/v1/hardcases", s.auth("wrong"))->status == 401);
  auto list = json::parse(s.get("/v1/hardcases?status=pending", auth)->body);
  CHECK(list["total"] == 3);
  CHECK(list["items"].size() == 3);
  CHECK(list["items"][0]["status"] == "expert_pending");
  const auto acu = s.get("/v1/hardcases?subject=acupuncture", auth);
  CHECK(json::parse(acu->body)["total"] == 1);
  CHECK(json::parse(s.get("/v1/hardcases?subject=surgery&iteration=9", auth)->body)["total"] == 0);

  const auto id = qs[0].id;
  const auto path = "/v1/hardcases/" + id + "/annotation";
  const std::string wrong(1, qs[0].answer_key[0] == 'A' ? 'B' : 'A');
  auto r = s.post(
      path, {{"chain_of_thought", long_cot()}, {"final_answer", wrong}, {"annotator", "e1"}}, auth);
  CHECK(r->status == 422);
  CHECK(error_code(r) == "ANSWER_MISMATCH");
  r = s.post(
      path, {{"chain_of_thought", "太短"}, {"final_answer", qs[0].answer_key}, {"annotator", "e1"}},
      auth);
  CHECK(r->status == 422);
  CHECK(error_code(r) == "TOO_SHORT");
  r = s.post(path, {{"chain_of_thought", long_cot()}, {"final_answer", qs[0].answer_key}}, auth);
  CHECK(r->status == 422);
  CHECK(s.post(path, {{"chain_of_thought", long_cot()},
                      {"final_answer", qs[0].answer_key},
                      {"annotator", "e1"}})
            ->status == 401);

  r = s.post(
      path,
      {{"chain_of_thought", long_cot()}, {"final_answer", qs[0].answer_key}, {"annotator", "e1"}},
      auth);
  CHECK(r->status == 200);
  CHECK(json::parse(r->body)["status"] == "expert_done");
  r = s.post(
      path,
      {{"chain_of_thought", long_cot()}, {"final_answer", qs[0].answer_key}, {"annotator", "e2"}},
      auth);
  CHECK(r->status == 409);
  CHECK(s.post("/v1/hardcases/nope/annotation",
               {{"chain_of_thought", long_cot()}, {"final_answer", "A"}, {"annotator", "e1"}}, auth)
            ->status == 404);

  CHECK(json::parse(s.get("/v1/hardcases?status=pending", auth)->body)["total"] == 2);
  CHECK(json::parse(s.get("/v1/hardcases/" + id, auth)->body)["status"] == "expert_done");
  // The pipeline sees the record through its own connection.
  KvStore kv(cfg.db_path());
  SqliteHardCaseQueue pipeline_view(kv);
  const auto hc = pipeline_view.get(id);
  REQUIRE(hc->record);
  CHECK(hc->record->created_by == "e1");
  CHECK(hc->record->source == RecordSource::expert);

  // Key reveal is off by default.
  CHECK(s.post("/v1/hardcases/" + qs[1].id + "/key", {{"first_pass_answer", "A"}}, auth)->status ==
        403);
}

TEST_CASE("REST: key reveal policy") {
  TempDir dir;
  auto cfg = config_in(dir);
  cfg.reveal_key_after_first_pass = true;
  Platform p(cfg);
  const auto qs = cotloop::testing::synthetic_questions(1);
  p.hard_cases().push(hard_case(qs[0]));
  LiveServer s(p);
  const auto path = "/v1/hardcases/" + qs[0].id + "/key";
  CHECK(s.post(path, {{"first_pass_answer", ""}}, s.auth(kAnnotator))->status == 422);
  auto r = s.post(path, {{"first_pass_answer", "C"}}, s.auth(kAnnotator));
  CHECK(r->status == 200);
  CHECK(json::parse(r->body)["key"] == qs[0].answer_key);
  auto policy = json::parse(s.get("/v1/policy")->body);
  CHECK(policy["reveal_key_after_first_pass"] == true);
}

TEST_CASE("REST: no response carries answer keys") {
  TempDir dir;
  Platform p(config_in(dir));
  const auto qs = cotloop::testing::synthetic_questions(6);
  p.hard_cases().push(hard_case(qs[0]));
  LiveServer s(p);
  const auto admin = s.auth(kAdmin);

  json items = json::array();
  for (const auto& q : qs) items.push_back(to_json(q));
  CHECK(s.post("/v1/versions", {{"tag", "v1"}, {"items", items}})->status == 401);
  CHECK(s.post("/v1/versions", {{"tag", "v1"}, {"items", items}}, s.auth(kAnnotator))->status ==
        401);
  CHECK(s.post("/v1/versions", {{"tag", "v1"}, {"items", items}}, admin)->status == 201);
  CHECK(s.post("/v1/versions", {{"tag", "v1"}, {"items", items}}, admin)->status == 200);
  json fewer = items;
  fewer.erase(fewer.begin());
  CHECK(s.post("/v1/versions", {{"tag", "v1"}, {"items", fewer}}, admin)->status == 409);

  json answers = json::object();
  for (const auto& q : qs) answers[q.id] = q.answer_key;
  const auto sub = s.post("/v1/submissions",
                          {{"model_name", "m"}, {"dataset_version", "v1"}, {"answers", answers}});
  s.get("/v1/health");
  s.get("/v1/policy");
  s.get("/v1/openapi.json");
  s.get("/v1/datasets");
  s.get("/v1/datasets/v1");
  s.get("/v1/submissions/" + json::parse(sub->body)["id"].get<std::string>());
  s.get("/v1/leaderboard?version=v1");
  s.get("/v1/hardcases?status=all", admin);
  s.get("/v1/hardcases/" + qs[0].id, admin);
  s.post("/v1/hardcases/" + qs[0].id + "/annotation",
         {{"chain_of_thought", long_cot()}, {"final_answer", "Z"}, {"annotator", "e"}}, admin);
  s.post("/v1/hardcases/" + qs[0].id + "/annotation",
         {{"chain_of_thought", long_cot()}, {"final_answer", qs[0].answer_key}, {"annotator", "e"}},
         admin);
  s.get("/v1/hardcases/" + qs[0].id, admin);
  s.get("/v1/hardcases?status=done", admin);
  CHECK(s.bodies.size() == 19);
  for (const auto& b : s.bodies) {
    // openapi.json documents the reveal route but never the key field name.
    CHECK(b.find("answer_key") == std::string::npos);
  }
}

TEST_CASE("REST: submission rate limit and concurrency") {
  TempDir dir;
  auto cfg = config_in(dir);
  cfg.submissions_per_minute = 3;
  Platform p(cfg);
  const auto qs = cotloop::testing::synthetic_questions(4);
  p.release_version("v", qs);
  LiveServer s(p);
  std::vector<int> statuses;
  for (int i = 0; i < 4; ++i) {
    statuses.push_back(s.post("/v1/submissions", {{"model_name", "m" + std::to_string(i)},
                                                  {"dataset_version", "v"},
                                                  {"answers", json::object()}})
                           ->status);
  }
  CHECK(statuses == std::vector<int>{201, 201, 201, 429});
  CHECK(error_code(s.post("/v1/submissions", {{"model_name", "m9"},
                                              {"dataset_version", "v"},
                                              {"answers", json::object()}})) == "RATE_LIMITED");

  RateLimiter limiter(2);
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(limiter.allow("a", t0));
  CHECK(limiter.allow("a", t0));
  CHECK_FALSE(limiter.allow("a", t0));
  CHECK(limiter.allow("b", t0));
  CHECK(limiter.allow("a", t0 + std::chrono::seconds(61)));

  // Concurrent writers through the platform object.
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] { p.submit("c" + std::to_string(t), "v", {}); });
  }
  for (auto& t : threads) t.join();
  std::set<std::int64_t> seqs;
  for (const auto& e : p.leaderboard("v", 0, 100).entries)
    seqs.insert(p.submission(e.submission_id)->seq);
  CHECK(seqs.size() == 11);
}

TEST_CASE("openapi document and config") {
  const auto doc = json::parse(openapi_document());
  for (const char* path : {"/v1/datasets/{version}", "/v1/submissions", "/v1/leaderboard",
                           "/v1/hardcases", "/v1/hardcases/{id}/annotation", "/v1/versions"}) {
    CHECK(doc["paths"].contains(path));
  }
  const auto c = platform_config_from_json(
      {{"port", 9000}, {"annotator_tokens", {"a"}}, {"min_cot_chars", 10}, {"data_dir", "/tmp/x"}});
  CHECK(c.port == 9000);
  CHECK(c.admission.min_cot_chars == 10);
  CHECK(c.db_path() == std::filesystem::path("/tmp/x/platform.db"));
  CHECK(error_of([] { platform_config_from_json({{"port", 70000}}); }) == Errc::ConfigError);
  CHECK(error_of([] { platform_config_from_json({{"port", "x"}}); }) == Errc::ConfigError);
  ::setenv("COTLOOP_TOKENS", "t1, t2", 1);
  CHECK(platform_config_from_json(json::object()).annotator_tokens ==
        std::vector<std::string>{"t1", "t2"});
  ::unsetenv("COTLOOP_TOKENS");
  CHECK(to_json(c).dump().find("\"a\"") == std::string::npos);
}
