// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Exam platform: released dataset versions (answer keys stay server-side),
// scored submissions, a leaderboard and the expert hard-case queue, backed
// by a single SQLite file and served over REST.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotloop/corpus_model.hpp"
#include "cotloop/cote_engine.hpp"
#include "cotloop/eval_harness.hpp"

struct sqlite3;

namespace cotloop {

// Namespaced JSON values in one SQLite table (WAL mode). Every call is
// serialized; transact() groups several operations into one IMMEDIATE
// transaction, so concurrent processes sharing the file also serialize.
class KvStore {
 public:
  class Txn {
   public:
    std::optional<nlohmann::json> get(const std::string& ns, const std::string& key);
    void put(const std::string& ns, const std::string& key, const nlohmann::json& value);
    // False if the key already exists.
    bool insert(const std::string& ns, const std::string& key, const nlohmann::json& value);
    std::vector<std::pair<std::string, nlohmann::json>> list(const std::string& ns,
                                                             const std::string& prefix = {});
    // Atomically increments and returns a named counter.
    std::int64_t next(const std::string& counter);

   private:
    friend class KvStore;
    explicit Txn(sqlite3* db) : db_(db) {}
    sqlite3* db_;
  };

  explicit KvStore(const std::filesystem::path& db_path);
  ~KvStore();
  KvStore(const KvStore&) = delete;
  KvStore& operator=(const KvStore&) = delete;

  std::optional<nlohmann::json> get(const std::string& ns, const std::string& key) const;
  std::vector<std::pair<std::string, nlohmann::json>> list(const std::string& ns,
                                                           const std::string& prefix = {}) const;
  void put(const std::string& ns, const std::string& key, const nlohmann::json& value);
  void transact(const std::function<void(Txn&)>& fn);

 private:
  sqlite3* db_ = nullptr;
  mutable std::mutex mu_;
};

// Hard-case queue persisted in a KvStore; shared between the pipeline and
// the annotation endpoints.
class SqliteHardCaseQueue : public HardCaseQueue {
 public:
  explicit SqliteHardCaseQueue(KvStore& store) : store_(store) {}
  void push(const HardCase& hc) override;
  std::optional<HardCase> get(const std::string& question_id) const override;
  std::vector<HardCase> list(std::optional<HardCaseStatus> status) const override;
  bool resolve(const std::string& question_id, const CotRecord& record) override;

 private:
  KvStore& store_;
};

struct DatasetVersion {
  std::string tag;
  std::vector<std::string> item_ids;  // sorted
  std::string released_at;
  std::optional<std::string> supersedes;
  std::string manifest_hash;
};

nlohmann::json to_json(const DatasetVersion& v);
DatasetVersion dataset_version_from_json(const nlohmann::json& j);

struct Submission {
  std::string id;
  std::string model_name;
  std::string dataset_version;
  std::map<std::string, std::string> answers;  // question id -> normalized letters
  std::string submitted_at;
  std::int64_t seq = 0;  // arrival order, breaks submitted_at ties
  ExamReport report;
};

nlohmann::json to_json(const Submission& s);
Submission submission_from_json(const nlohmann::json& j);

struct LeaderboardEntry {
  int rank = 0;
  std::string model_name;
  std::string submission_id;
  Hundredths overall = 0;
  std::vector<SubsetScore> subsets;
  std::string submitted_at;
};

struct LeaderboardPage {
  std::string version;
  std::size_t total = 0;
  std::size_t offset = 0;
  std::vector<LeaderboardEntry> entries;
};

nlohmann::json to_json(const LeaderboardPage& p);

struct PlatformConfig {
  std::filesystem::path data_dir = "store";
  std::string host = "127.0.0.1";
  int port = 8080;
  int threads = 8;
  std::vector<std::string> annotator_tokens;
  std::vector<std::string> admin_tokens;
  double submissions_per_minute = 30.0;  // per client address; 0: unlimited
  AdmissionPolicy admission;
  // Lets the editor fetch a key after the expert records a first-pass answer.
  bool reveal_key_after_first_pass = false;
  std::optional<std::filesystem::path> ui_dir;

  std::filesystem::path db_path() const { return data_dir / "platform.db"; }
};

// Reads {data_dir, host, port, threads, annotator_tokens, admin_tokens,
// submissions_per_minute, min_cot_chars, reveal_key_after_first_pass,
// ui_dir}; COTLOOP_PORT, COTLOOP_DATA_DIR, COTLOOP_TOKENS and
// COTLOOP_ADMIN_TOKENS (comma separated) override the file.
PlatformConfig platform_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PlatformConfig& c);  // tokens are not written

class Platform {
 public:
  explicit Platform(PlatformConfig config);

  const PlatformConfig& config() const { return config_; }
  KvStore& store() { return store_; }
  HardCaseQueue& hard_cases() { return queue_; }

  // Released versions are immutable: re-releasing identical items is a
  // no-op, different items raise Conflict. A superseding version must keep
  // every item of the version it supersedes.
  DatasetVersion release_version(const std::string& tag, const std::vector<Question>& items,
                                 const std::optional<std::string>& supersedes = std::nullopt);
  std::optional<DatasetVersion> version(const std::string& tag) const;
  std::vector<DatasetVersion> versions() const;
  // Items with keys, for server-side use. NotFound for unknown tags.
  QaDataset dataset(const std::string& tag) const;
  // Key-free payload of a version.
  nlohmann::json public_dataset(const std::string& tag) const;

  // `answers` maps question ids to raw answer strings; an empty string
  // counts as unanswered. NotFound for unknown versions, InvalidRequest for
  // foreign ids or unparsable answers, Conflict for a second submission of
  // (model_name, version) unless `resubmit`.
  Submission submit(const std::string& model_name, const std::string& version,
                    const std::map<std::string, std::string>& answers, bool resubmit = false);
  std::optional<Submission> submission(const std::string& id) const;
  // Latest submission per model, ordered by overall descending, then earlier
  // submission first.
  LeaderboardPage leaderboard(const std::string& version, std::size_t offset = 0,
                              std::size_t limit = 50) const;

  CotRecord annotate(const std::string& question_id, const ExpertAnnotation& annotation);
  // Key-free view of a hard case.
  nlohmann::json hard_case_view(const HardCase& hc) const;

 private:
  PlatformConfig config_;
  KvStore store_;
  SqliteHardCaseQueue queue_;
};

// Key-free JSON of a question.
nlohmann::json redacted(const Question& q);

// Fixed-window limiter keyed by client address.
class RateLimiter {
 public:
  explicit RateLimiter(double per_minute) : per_minute_(per_minute) {}
  // False when `client` has used up its allowance for the current minute.
  bool allow(const std::string& client,
             std::chrono::steady_clock::time_point now = std::chrono::steady_clock::now());

 private:
  struct Window {
    std::chrono::steady_clock::time_point start;
    double used = 0;
  };
  double per_minute_;
  std::mutex mu_;
  std::map<std::string, Window> windows_;
};

// The bundled OpenAPI document.
const std::string& openapi_document();

// REST front end; see openapi_document() for the routes.
class PlatformServer {
 public:
  explicit PlatformServer(Platform& platform);
  ~PlatformServer();
  // Binds `host` on `port` (0 picks a free port) and returns the port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();
  void wait_until_ready();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cotloop
