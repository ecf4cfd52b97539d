// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include <sqlite3.h>

#include "cotloop/errors.hpp"
#include "cotloop/platform_service.hpp"

namespace cotloop {

using nlohmann::json;

namespace {

void check(sqlite3* db, int rc, const char* what) {
  if (rc != SQLITE_OK && rc != SQLITE_DONE && rc != SQLITE_ROW) {
    throw Error(Errc::ServerError, std::string(what) + ": " + sqlite3_errmsg(db));
  }
}

void exec(sqlite3* db, const char* sql) {
  char* msg = nullptr;
  const int rc = sqlite3_exec(db, sql, nullptr, nullptr, &msg);
  if (rc != SQLITE_OK) {
    std::string m = msg ? msg : "unknown";
    sqlite3_free(msg);
    throw Error(Errc::ServerError, std::string("sqlite: ") + m);
  }
}

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    check(db, sqlite3_prepare_v2(db, sql, -1, &st_, nullptr), "prepare");
  }
  ~Stmt() { sqlite3_finalize(st_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& s) {
    check(db_, sqlite3_bind_text(st_, i, s.data(), static_cast<int>(s.size()), SQLITE_TRANSIENT),
          "bind");
    return *this;
  }
  bool step() {
    const int rc = sqlite3_step(st_);
    check(db_, rc, "step");
    return rc == SQLITE_ROW;
  }
  std::string text(int col) const {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(st_, col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(st_, col))) : "";
  }
  std::int64_t integer(int col) const { return sqlite3_column_int64(st_, col); }

 private:
  sqlite3* db_;
  sqlite3_stmt* st_ = nullptr;
};

}  // namespace

std::optional<json> KvStore::Txn::get(const std::string& ns, const std::string& key) {
  Stmt s(db_, "SELECT value FROM kv WHERE ns = ?1 AND key = ?2");
  s.bind(1, ns).bind(2, key);
  if (!s.step()) return std::nullopt;
  return json::parse(s.text(0));
}

void KvStore::Txn::put(const std::string& ns, const std::string& key, const json& value) {
  Stmt s(db_,
         "INSERT INTO kv(ns, key, value) VALUES(?1, ?2, ?3) "
         "ON CONFLICT(ns, key) DO UPDATE SET value = excluded.value");
  s.bind(1, ns).bind(2, key).bind(3, value.dump());
  s.step();
}

bool KvStore::Txn::insert(const std::string& ns, const std::string& key, const json& value) {
  Stmt s(db_, "INSERT OR IGNORE INTO kv(ns, key, value) VALUES(?1, ?2, ?3)");
  s.bind(1, ns).bind(2, key).bind(3, value.dump());
  s.step();
  return sqlite3_changes(db_) == 1;
}

std::vector<std::pair<std::string, json>> KvStore::Txn::list(const std::string& ns,
                                                             const std::string& prefix) {
  // Range scan instead of LIKE so '%' and '_' in keys are literal.
  Stmt s(db_, "SELECT key, value FROM kv WHERE ns = ?1 AND key >= ?2 ORDER BY key");
  s.bind(1, ns).bind(2, prefix);
  std::vector<std::pair<std::string, json>> out;
  while (s.step()) {
    auto key = s.text(0);
    if (key.compare(0, prefix.size(), prefix) != 0) break;
    out.emplace_back(std::move(key), json::parse(s.text(1)));
  }
  return out;
}

std::int64_t KvStore::Txn::next(const std::string& counter) {
  auto cur = get("counters", counter);
  const std::int64_t v = (cur ? cur->get<std::int64_t>() : 0) + 1;
  put("counters", counter, v);
  return v;
}

KvStore::KvStore(const std::filesystem::path& db_path) {
  if (db_path.has_parent_path()) std::filesystem::create_directories(db_path.parent_path());
  if (sqlite3_open_v2(db_path.c_str(), &db_,
                      SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw Error(Errc::ConfigError, "cannot open " + db_path.string() + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 10'000);
  exec(db_, "PRAGMA journal_mode=WAL");
  exec(db_, "PRAGMA synchronous=NORMAL");
  exec(db_,
       "CREATE TABLE IF NOT EXISTS kv (ns TEXT NOT NULL, key TEXT NOT NULL, value TEXT NOT NULL,"
       " PRIMARY KEY (ns, key))");
}

KvStore::~KvStore() { sqlite3_close(db_); }

std::optional<json> KvStore::get(const std::string& ns, const std::string& key) const {
  std::lock_guard lock(mu_);
  Txn t(db_);
  return t.get(ns, key);
}

std::vector<std::pair<std::string, json>> KvStore::list(const std::string& ns,
                                                        const std::string& prefix) const {
  std::lock_guard lock(mu_);
  Txn t(db_);
  return t.list(ns, prefix);
}

void KvStore::put(const std::string& ns, const std::string& key, const json& value) {
  std::lock_guard lock(mu_);
  Txn t(db_);
  t.put(ns, key, value);
}

void KvStore::transact(const std::function<void(Txn&)>& fn) {
  std::lock_guard lock(mu_);
  exec(db_, "BEGIN IMMEDIATE");
  try {
    Txn t(db_);
    fn(t);
    exec(db_, "COMMIT");
  } catch (...) {
    sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
    throw;
  }
}

// ---------------------------------------------------------------------------

void SqliteHardCaseQueue::push(const HardCase& hc) {
  store_.transact([&](KvStore::Txn& t) { t.insert("hardcases", hc.question.id, to_json(hc)); });
}

std::optional<HardCase> SqliteHardCaseQueue::get(const std::string& question_id) const {
  auto j = store_.get("hardcases", question_id);
  if (!j) return std::nullopt;
  return hard_case_from_json(*j);
}

std::vector<HardCase> SqliteHardCaseQueue::list(std::optional<HardCaseStatus> status) const {
  std::vector<HardCase> out;
  for (const auto& [_, j] : store_.list("hardcases")) {
    auto hc = hard_case_from_json(j);
    if (!status || hc.status == *status) out.push_back(std::move(hc));
  }
  return out;
}

bool SqliteHardCaseQueue::resolve(const std::string& question_id, const CotRecord& record) {
  bool ok = false;
  store_.transact([&](KvStore::Txn& t) {
    auto j = t.get("hardcases", question_id);
    if (!j) return;
    auto hc = hard_case_from_json(*j);
    if (hc.status == HardCaseStatus::done) return;
    hc.status = HardCaseStatus::done;
    hc.record = record;
    t.put("hardcases", question_id, to_json(hc));
    ok = true;
  });
  return ok;
}

}  // namespace cotloop
