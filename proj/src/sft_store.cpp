// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/sft_store.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <map>
#include <thread>

#include "cotloop/errors.hpp"
#include "cotloop/files.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifests

SftManifest SftManifest::empty(std::string base_model) {
  SftManifest m;
  m.base_model = std::move(base_model);
  m.manifest_hash = m.compute_hash();
  return m;
}

std::string SftManifest::compute_hash() const {
  std::string canon = "base=" + base_model + "\n";
  for (const auto& c : constituents) {
    canon +=
        std::to_string(c.iteration) + ":" + std::to_string(c.records) + ":" + c.content_hash + "\n";
  }
  return text::sha256_hex(canon);
}

json to_json(const SftManifest& m) {
  json cs = json::array();
  for (const auto& c : m.constituents) {
    cs.push_back(
        {{"iteration", c.iteration}, {"records", c.records}, {"content_hash", c.content_hash}});
  }
  return {{"upto_iteration", m.upto_iteration},
          {"base_model", m.base_model},
          {"constituents", cs},
          {"total_records", m.total_records},
          {"manifest_hash", m.manifest_hash}};
}

SftManifest sft_manifest_from_json(const json& j) {
  SftManifest m;
  try {
    m.upto_iteration = j.at("upto_iteration").get<int>();
    m.base_model = j.at("base_model").get<std::string>();
    for (const auto& c : j.at("constituents")) {
      m.constituents.push_back({c.at("iteration").get<int>(), c.at("records").get<std::size_t>(),
                                c.at("content_hash").get<std::string>()});
    }
    m.total_records = j.at("total_records").get<std::size_t>();
    m.manifest_hash = j.at("manifest_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("manifest: ") + e.what());
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < m.constituents.size(); ++i) {
    if (m.constituents[i].iteration != static_cast<int>(i) + 1) {
      throw Error(Errc::ChecksumMismatch, "manifest constituents are not 1..k");
    }
    total += m.constituents[i].records;
  }
  if (static_cast<int>(m.constituents.size()) != m.upto_iteration || total != m.total_records ||
      m.compute_hash() != m.manifest_hash) {
    throw Error(Errc::ChecksumMismatch, "manifest content does not match its hash");
  }
  return m;
}

SftManifest aggregate(const SftManifest& prior, const CotDataset& new_set,
                      const std::vector<CotRecord>& prior_records) {
  if (new_set.iteration != prior.upto_iteration + 1) {
    throw Error(Errc::IterationGap, "cannot aggregate iteration " +
                                        std::to_string(new_set.iteration) + " onto manifest " +
                                        std::to_string(prior.upto_iteration));
  }
  std::multimap<std::string, const CotRecord*> seen;
  for (const auto& r : prior_records) seen.emplace(r.question_id, &r);
  for (const auto& r : new_set.records) {
    auto [lo, hi] = seen.equal_range(r.question_id);
    for (auto it = lo; it != hi; ++it) {
      if (!(*it->second == r)) {
        throw Error(Errc::DuplicateQuestionConflict,
                    "question " + r.question_id + " already has a different record");
      }
    }
  }
  SftManifest m = prior;
  m.upto_iteration = new_set.iteration;
  m.constituents.push_back({new_set.iteration, new_set.records.size(), new_set.content_hash()});
  m.total_records += new_set.records.size();
  m.manifest_hash = m.compute_hash();
  return m;
}

// ---------------------------------------------------------------------------
// Model references

namespace {

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

ModelRef ModelRef::base(std::string id) {
  ModelRef m;
  m.id = std::move(id);
  return m;
}

json to_json(const ModelRef& m) {
  return {{"id", m.id},
          {"lineage",
           {{"base_model", m.lineage.base_model},
            {"manifest_hash", m.lineage.manifest_hash},
            {"trainer", m.lineage.trainer}}},
          {"created_at", m.created_at},
          {"training_records", m.training_records}};
}

ModelRef model_ref_from_json(const json& j) {
  try {
    ModelRef m;
    m.id = j.at("id").get<std::string>();
    const auto& l = j.at("lineage");
    m.lineage.base_model = l.value("base_model", std::string());
    m.lineage.manifest_hash = l.value("manifest_hash", std::string());
    m.lineage.trainer = l.value("trainer", json());
    m.created_at = j.value("created_at", std::string());
    m.training_records = j.value("training_records", std::size_t{0});
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("model ref: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Trainers

std::string MockTrainer::train(const std::string& base_id, const fs::path&,
                               const SftManifest& manifest) {
  return base_id + "+" + manifest.manifest_hash;
}

CommandTrainer::CommandTrainer(std::vector<std::string> argv, std::chrono::milliseconds timeout)
    : argv_(std::move(argv)), timeout_(timeout) {
  if (argv_.empty()) throw Error(Errc::ConfigError, "trainer command is empty");
}

json CommandTrainer::describe() const { return {{"kind", "command"}, {"command", argv_}}; }

std::string CommandTrainer::train(const std::string& base_id, const fs::path& data,
                                  const SftManifest& manifest) {
  const fs::path out_id = data.parent_path() / ("model_id_" + manifest.manifest_hash.substr(0, 16));
  std::error_code ec;
  fs::remove(out_id, ec);

  std::vector<std::string> args = argv_;
  for (const auto& a : {std::string("--base"), base_id, std::string("--data"), data.string(),
                        std::string("--out-id-file"), out_id.string()}) {
    args.push_back(a);
  }
  std::vector<char*> cargs;
  for (auto& a : args) cargs.push_back(a.data());
  cargs.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw Error(Errc::TrainerFailed, "fork failed");
  if (pid == 0) {
    ::setpgid(0, 0);
    ::execvp(cargs[0], cargs.data());
    ::_exit(127);
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw Error(Errc::TrainerFailed, "waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      throw Error(Errc::TrainerTimeout,
                  "trainer exceeded " + std::to_string(timeout_.count()) + " ms");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error(Errc::TrainerFailed,
                "trainer " + argv_[0] + " exited with status " +
                    std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
  }
  std::string id;
  try {
    id = text::trim(files::read_text(out_id));
  } catch (const Error&) {
    throw Error(Errc::TrainerFailed, "trainer wrote no model id to " + out_id.string());
  }
  fs::remove(out_id, ec);
  if (id.empty()) throw Error(Errc::TrainerFailed, "trainer wrote an empty model id");
  return id;
}

TrainerConfig trainer_config_from_json(const json& j) {
  TrainerConfig c;
  try {
    c.kind = j.value("kind", c.kind);
    if (j.contains("command")) {
      const auto& cmd = j["command"];
      if (cmd.is_string()) {
        c.command = {cmd.get<std::string>()};
      } else {
        c.command = cmd.get<std::vector<std::string>>();
      }
    }
    c.endpoint = j.value("endpoint", std::string());
    c.api_key_env_var = j.value("api_key_env_var", std::string());
    if (j.contains("timeout_ms"))
      c.timeout = std::chrono::milliseconds(j["timeout_ms"].get<long>());
    if (j.contains("poll_interval_ms")) {
      c.poll_interval = std::chrono::milliseconds(j["poll_interval_ms"].get<long>());
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("trainer config: ") + e.what());
  }
  if (c.kind != "mock" && c.kind != "command" && c.kind != "http") {
    throw Error(Errc::ConfigError, "unknown trainer kind '" + c.kind + "'");
  }
  if (c.kind == "command" && c.command.empty()) {
    throw Error(Errc::ConfigError, "command trainer needs 'command'");
  }
  if (c.kind == "http" && c.endpoint.empty()) {
    throw Error(Errc::ConfigError, "http trainer needs 'endpoint'");
  }
  if (c.timeout.count() <= 0) throw Error(Errc::ConfigError, "trainer timeout must be positive");
  return c;
}

json to_json(const TrainerConfig& c) {
  json j = {{"kind", c.kind},
            {"timeout_ms", c.timeout.count()},
            {"poll_interval_ms", c.poll_interval.count()}};
  if (!c.command.empty()) j["command"] = c.command;
  if (!c.endpoint.empty()) j["endpoint"] = c.endpoint;
  if (!c.api_key_env_var.empty()) j["api_key_env_var"] = c.api_key_env_var;
  return j;
}

std::unique_ptr<Trainer> make_trainer(const TrainerConfig& c) {
  if (c.kind == "mock") return std::make_unique<MockTrainer>();
  if (c.kind == "command") return std::make_unique<CommandTrainer>(c.command, c.timeout);
  std::string key;
  if (!c.api_key_env_var.empty()) {
    const char* v = std::getenv(c.api_key_env_var.c_str());
    if (!v) throw Error(Errc::ConfigError, "environment variable " + c.api_key_env_var + " unset");
    key = v;
  }
  return std::make_unique<HttpTrainer>(c.endpoint, c.timeout, c.poll_interval, key);
}

// ---------------------------------------------------------------------------
// Store

std::string sft_system_instruction() { return PromptTemplate::default_cot().system; }

SftStore::SftStore(fs::path root) : root_(std::move(root)) {
  for (const char* d : {"cot", "manifests", "exports", "models"}) fs::create_directories(root_ / d);
}

fs::path SftStore::manifest_path(int k) const {
  return root_ / "manifests" / ("sft_" + std::to_string(k) + ".json");
}

fs::path SftStore::model_path(const std::string& id) const {
  std::string safe;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    safe += ok ? c : '_';
  }
  if (safe.size() > 80) safe.resize(80);
  return root_ / "models" / (safe + "-" + text::sha256_hex(id).substr(0, 8) + ".json");
}

void SftStore::put_cot_dataset(const CotDataset& ds) {
  std::lock_guard lock(mu_);
  if (fs::exists(cot_dataset_path(cot_dir(), ds.iteration))) {
    const auto existing = read_cot_dataset(cot_dir(), ds.iteration);
    if (existing.content_hash() == ds.content_hash()) return;
    throw Error(Errc::ChecksumMismatch,
                "CoT dataset " + std::to_string(ds.iteration) + " is sealed with other content");
  }
  write_cot_dataset(ds, cot_dir());
}

bool SftStore::has_cot_dataset(int iteration) const {
  return fs::exists(cot_dataset_path(cot_dir(), iteration));
}

CotDataset SftStore::cot_dataset(int iteration) const {
  return read_cot_dataset(cot_dir(), iteration);
}

std::optional<SftManifest> SftStore::manifest(int upto) const {
  const auto p = manifest_path(upto);
  if (!fs::exists(p)) return std::nullopt;
  return sft_manifest_from_json(files::read_json(p));
}

int SftStore::latest_manifest() const {
  int k = 0;
  while (fs::exists(manifest_path(k + 1))) ++k;
  return k;
}

std::vector<CotRecord> SftStore::records(const SftManifest& m) const {
  std::vector<CotRecord> out;
  for (const auto& c : m.constituents) {
    const auto ds = read_cot_dataset(cot_dir(), c.iteration);
    if (ds.content_hash() != c.content_hash) {
      throw Error(Errc::ChecksumMismatch,
                  "CoT dataset " + std::to_string(c.iteration) + " changed after aggregation");
    }
    out.insert(out.end(), ds.records.begin(), ds.records.end());
  }
  return out;
}

SftManifest SftStore::aggregate(int k, const std::string& base_model) {
  if (k < 1) throw Error(Errc::IterationGap, "iterations start at 1");
  SftManifest prior = SftManifest::empty(base_model);
  if (k > 1) {
    auto p = manifest(k - 1);
    if (!p) {
      throw Error(Errc::IterationGap, "manifest " + std::to_string(k - 1) +
                                          " must exist before manifest " + std::to_string(k));
    }
    prior = std::move(*p);
  }
  if (prior.base_model != base_model) {
    throw Error(Errc::NotBaseModel, "manifest lineage uses base model " + prior.base_model);
  }
  if (!has_cot_dataset(k)) {
    throw Error(Errc::MissingConstituent, "CoT dataset " + std::to_string(k) + " is not sealed");
  }
  const auto next = cotloop::aggregate(prior, cot_dataset(k), records(prior));
  std::lock_guard lock(mu_);
  if (auto existing = fs::exists(manifest_path(k))
                          ? std::optional(files::read_json(manifest_path(k)))
                          : std::nullopt) {
    const auto old = sft_manifest_from_json(*existing);
    if (old == next) return old;
    throw Error(Errc::ChecksumMismatch,
                "manifest " + std::to_string(k) + " already exists with other content");
  }
  files::write_json_atomic(manifest_path(k), to_json(next));
  return next;
}

fs::path SftStore::export_sft(const SftManifest& m, const QaDataset& corpus) {
  std::map<std::string, const Question*> by_id;
  for (const auto& q : corpus.items) by_id.emplace(q.id, &q);
  auto recs = records(m);
  std::stable_sort(recs.begin(), recs.end(), [](const CotRecord& a, const CotRecord& b) {
    if (a.iteration != b.iteration) return a.iteration < b.iteration;
    return a.question_id < b.question_id;
  });
  const std::string system = sft_system_instruction();
  std::string body;
  for (const auto& r : recs) {
    auto it = by_id.find(r.question_id);
    if (it == by_id.end()) {
      throw Error(Errc::MissingConstituent, "question " + r.question_id + " is not in the corpus");
    }
    const Question& q = *it->second;
    std::string user = q.stem;
    if (!q.options.empty()) user += "\n" + render_options(q);
    json row = {{"question_id", r.question_id},
                {"iteration", r.iteration},
                {"source", to_string(r.source)},
                {"messages",
                 {{{"role", "system"}, {"content", system}},
                  {{"role", "user"}, {"content", user}},
                  {{"role", "assistant"},
                   {"content", r.chain_of_thought + "\nAnswer: " + r.final_answer}}}}};
    body += row.dump();
    body += '\n';
  }
  const auto stem = "sft_" + std::to_string(m.upto_iteration);
  const fs::path out = root_ / "exports" / (stem + ".jsonl");
  std::lock_guard lock(mu_);
  files::write_atomic(out, body);
  files::write_json_atomic(root_ / "exports" / (stem + ".meta.json"),
                           {{"upto_iteration", m.upto_iteration},
                            {"manifest_hash", m.manifest_hash},
                            {"file_hash", text::sha256_hex(body)},
                            {"count", recs.size()}});
  return out;
}

ModelRef SftStore::train(const ModelRef& base, const SftManifest& m, const QaDataset& corpus,
                         Trainer& trainer) {
  if (!base.is_base()) {
    throw Error(Errc::NotBaseModel, "training must start from the base model, got " + base.id +
                                        " (trained from " + base.lineage.base_model + ")");
  }
  if (base.id != m.base_model) {
    throw Error(Errc::NotBaseModel,
                "manifest is for base model " + m.base_model + ", got " + base.id);
  }
  std::lock_guard train_lock(train_mu_);
  files::LockFile lock(root_ / "models" / ".train.lock");
  const auto data = export_sft(m, corpus);
  ModelRef ref;
  ref.id = trainer.train(base.id, data, m);
  ref.lineage = {base.id, m.manifest_hash, trainer.describe()};
  ref.created_at = utc_now();
  ref.training_records = m.total_records;
  std::lock_guard store_lock(mu_);
  files::write_json_atomic(model_path(ref.id), to_json(ref));
  return ref;
}

std::vector<ModelRef> SftStore::models() const {
  std::lock_guard lock(mu_);
  std::vector<ModelRef> out;
  for (const auto& e : fs::directory_iterator(root_ / "models")) {
    if (e.path().extension() == ".json")
      out.push_back(model_ref_from_json(files::read_json(e.path())));
  }
  std::sort(out.begin(), out.end(), [](const ModelRef& a, const ModelRef& b) {
    return a.training_records != b.training_records ? a.training_records < b.training_records
                                                    : a.id < b.id;
  });
  return out;
}

std::optional<ModelRef> SftStore::model_for(const SftManifest& m) const {
  for (auto& ref : models()) {
    if (ref.lineage.manifest_hash == m.manifest_hash) return ref;
  }
  return std::nullopt;
}

}  // namespace cotloop
