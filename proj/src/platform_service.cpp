// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/platform_service.hpp"

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <set>

#include "cotloop/errors.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

using nlohmann::json;

namespace {

constexpr char kSep = '\x1f';

std::string utc_now_ms() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      auto t = text::trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

// Finest grouping every item supports.
Grouping grouping_for(const QaDataset& ds) {
  for (auto g : {Grouping::unit, Grouping::year}) {
    try {
      for (const auto& q : ds.items) group_key(q, g);
      return g;
    } catch (const Error&) {
    }
  }
  return Grouping::subject;
}

}  // namespace

json redacted(const Question& q) {
  json opts = json::array();
  for (const auto& o : q.options)
    opts.push_back({{"label", std::string(1, o.label)}, {"text", o.text}});
  json j = {{"id", q.id},
            {"stem", q.stem},
            {"options", opts},
            {"format", to_string(q.format)},
            {"subject", to_string(q.subject)},
            {"origin", to_string(q.origin)}};
  j["year"] = q.year ? json(*q.year) : json();
  j["unit"] = q.unit ? json(*q.unit) : json();
  return j;
}

json to_json(const DatasetVersion& v) {
  return {{"tag", v.tag},
          {"item_ids", v.item_ids},
          {"released_at", v.released_at},
          {"supersedes", v.supersedes ? json(*v.supersedes) : json()},
          {"manifest_hash", v.manifest_hash}};
}

DatasetVersion dataset_version_from_json(const json& j) {
  DatasetVersion v;
  v.tag = j.at("tag").get<std::string>();
  v.item_ids = j.at("item_ids").get<std::vector<std::string>>();
  v.released_at = j.at("released_at").get<std::string>();
  if (j.contains("supersedes") && j["supersedes"].is_string()) {
    v.supersedes = j["supersedes"].get<std::string>();
  }
  v.manifest_hash = j.at("manifest_hash").get<std::string>();
  return v;
}

json to_json(const Submission& s) {
  return {{"id", s.id},
          {"model_name", s.model_name},
          {"dataset_version", s.dataset_version},
          {"answers", s.answers},
          {"submitted_at", s.submitted_at},
          {"seq", s.seq},
          {"report", to_json(s.report)}};
}

Submission submission_from_json(const json& j) {
  Submission s;
  s.id = j.at("id").get<std::string>();
  s.model_name = j.at("model_name").get<std::string>();
  s.dataset_version = j.at("dataset_version").get<std::string>();
  s.answers = j.at("answers").get<std::map<std::string, std::string>>();
  s.submitted_at = j.at("submitted_at").get<std::string>();
  s.seq = j.at("seq").get<std::int64_t>();
  s.report = exam_report_from_json(j.at("report"));
  return s;
}

json to_json(const LeaderboardPage& p) {
  json entries = json::array();
  for (const auto& e : p.entries) {
    json scores = json::object();
    for (const auto& s : e.subsets) scores[s.key] = format_score(s.score);
    entries.push_back({{"rank", e.rank},
                       {"model_name", e.model_name},
                       {"submission_id", e.submission_id},
                       {"overall", format_score(e.overall)},
                       {"scores", scores},
                       {"submitted_at", e.submitted_at}});
  }
  return {{"version", p.version}, {"total", p.total}, {"offset", p.offset}, {"entries", entries}};
}

PlatformConfig platform_config_from_json(const json& j) {
  PlatformConfig c;
  try {
    if (j.contains("data_dir")) c.data_dir = j["data_dir"].get<std::string>();
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.threads = j.value("threads", c.threads);
    if (j.contains("annotator_tokens")) {
      c.annotator_tokens = j["annotator_tokens"].get<std::vector<std::string>>();
    }
    if (j.contains("admin_tokens"))
      c.admin_tokens = j["admin_tokens"].get<std::vector<std::string>>();
    c.submissions_per_minute = j.value("submissions_per_minute", c.submissions_per_minute);
    c.admission.min_cot_chars = j.value("min_cot_chars", c.admission.min_cot_chars);
    c.reveal_key_after_first_pass =
        j.value("reveal_key_after_first_pass", c.reveal_key_after_first_pass);
    if (j.contains("ui_dir") && j["ui_dir"].is_string()) c.ui_dir = j["ui_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("platform config: ") + e.what());
  }
  if (const char* v = std::getenv("COTLOOP_PORT")) {
    try {
      c.port = std::stoi(v);
    } catch (const std::exception&) {
      throw Error(Errc::ConfigError, "COTLOOP_PORT is not a number");
    }
  }
  if (const char* v = std::getenv("COTLOOP_DATA_DIR")) c.data_dir = v;
  if (const char* v = std::getenv("COTLOOP_TOKENS")) c.annotator_tokens = split_tokens(v);
  if (const char* v = std::getenv("COTLOOP_ADMIN_TOKENS")) c.admin_tokens = split_tokens(v);
  if (c.port < 0 || c.port > 65535) throw Error(Errc::ConfigError, "port out of range");
  if (c.threads < 1) throw Error(Errc::ConfigError, "threads must be >= 1");
  if (c.submissions_per_minute < 0) {
    throw Error(Errc::ConfigError, "submissions_per_minute must be >= 0");
  }
  return c;
}

json to_json(const PlatformConfig& c) {
  return {{"data_dir", c.data_dir.string()},
          {"host", c.host},
          {"port", c.port},
          {"threads", c.threads},
          {"submissions_per_minute", c.submissions_per_minute},
          {"min_cot_chars", c.admission.min_cot_chars},
          {"reveal_key_after_first_pass", c.reveal_key_after_first_pass},
          {"ui_dir", c.ui_dir ? json(c.ui_dir->string()) : json()}};
}

bool RateLimiter::allow(const std::string& client, std::chrono::steady_clock::time_point now) {
  if (per_minute_ <= 0) return true;
  std::lock_guard lock(mu_);
  auto& w = windows_[client];
  if (w.used == 0 || now - w.start >= std::chrono::minutes(1)) {
    w.start = now;
    w.used = 0;
  }
  if (w.used + 1 > per_minute_) return false;
  w.used += 1;
  return true;
}

// ---------------------------------------------------------------------------

Platform::Platform(PlatformConfig config)
    : config_(std::move(config)), store_(config_.db_path()), queue_(store_) {}

DatasetVersion Platform::release_version(const std::string& tag, const std::vector<Question>& items,
                                         const std::optional<std::string>& supersedes) {
  if (tag.empty() || tag.find(kSep) != std::string::npos || tag.find('/') != std::string::npos) {
    throw Error(Errc::InvalidRequest, "invalid version tag '" + tag + "'");
  }
  if (items.empty()) throw Error(Errc::InvalidRequest, "a version needs at least one item");
  for (const auto& q : items) validate(q);
  const QaDataset ds = make_dataset(tag, items);

  DatasetVersion v;
  v.tag = tag;
  for (const auto& q : items) v.item_ids.push_back(q.id);
  std::sort(v.item_ids.begin(), v.item_ids.end());
  v.supersedes = supersedes;
  v.manifest_hash = ds.manifest_hash;
  v.released_at = utc_now_ms();

  store_.transact([&](KvStore::Txn& t) {
    if (auto existing = t.get("versions", tag)) {
      auto old = dataset_version_from_json(*existing);
      if (old.manifest_hash != v.manifest_hash || old.supersedes != v.supersedes) {
        throw Error(Errc::Conflict, "version " + tag + " is already released with other content");
      }
      v = std::move(old);
      return;
    }
    if (supersedes) {
      auto prior = t.get("versions", *supersedes);
      if (!prior) throw Error(Errc::NotFound, "no version " + *supersedes + " to supersede");
      const auto pv = dataset_version_from_json(*prior);
      if (!std::includes(v.item_ids.begin(), v.item_ids.end(), pv.item_ids.begin(),
                         pv.item_ids.end())) {
        throw Error(Errc::Conflict, "version " + tag + " drops items of " + *supersedes);
      }
    }
    for (const auto& q : items) t.insert("items", q.id, to_json(q));
    t.put("versions", tag, to_json(v));
  });
  return v;
}

std::optional<DatasetVersion> Platform::version(const std::string& tag) const {
  auto j = store_.get("versions", tag);
  if (!j) return std::nullopt;
  return dataset_version_from_json(*j);
}

std::vector<DatasetVersion> Platform::versions() const {
  std::vector<DatasetVersion> out;
  for (const auto& [_, j] : store_.list("versions")) out.push_back(dataset_version_from_json(j));
  return out;
}

QaDataset Platform::dataset(const std::string& tag) const {
  auto v = version(tag);
  if (!v) throw Error(Errc::NotFound, "no dataset version " + tag);
  std::vector<Question> items;
  for (const auto& id : v->item_ids) {
    auto j = store_.get("items", id);
    if (!j) throw Error(Errc::MissingConstituent, "item " + id + " of " + tag + " is missing");
    items.push_back(question_from_json(*j));
  }
  auto ds = make_dataset(tag, std::move(items));
  if (ds.manifest_hash != v->manifest_hash) {
    throw Error(Errc::ChecksumMismatch, "stored items of " + tag + " do not match its manifest");
  }
  return ds;
}

json Platform::public_dataset(const std::string& tag) const {
  auto v = version(tag);
  if (!v) throw Error(Errc::NotFound, "no dataset version " + tag);
  const auto ds = dataset(tag);
  json items = json::array();
  for (const auto& q : ds.items) items.push_back(redacted(q));
  return {{"version", v->tag},
          {"released_at", v->released_at},
          {"supersedes", v->supersedes ? json(*v->supersedes) : json()},
          {"manifest_hash", v->manifest_hash},
          {"count", items.size()},
          {"items", items}};
}

Submission Platform::submit(const std::string& model_name, const std::string& version_tag,
                            const std::map<std::string, std::string>& answers, bool resubmit) {
  if (text::trim(model_name).empty()) throw Error(Errc::InvalidRequest, "model_name is empty");
  const auto ds = dataset(version_tag);
  std::map<std::string, const Question*> by_id;
  for (const auto& q : ds.items) by_id.emplace(q.id, &q);

  Submission s;
  s.model_name = model_name;
  s.dataset_version = version_tag;
  ExamRun run;
  run.model = model_name;
  run.dataset_version = version_tag;
  for (const auto& [id, raw] : answers) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw Error(Errc::InvalidRequest, "question " + id + " is not in version " + version_tag);
    }
    if (text::trim(raw).empty()) continue;
    std::string norm;
    try {
      norm = normalize_answer(raw);
    } catch (const Error&) {
      throw Error(Errc::InvalidRequest, "answer for " + id + " has no option letter");
    }
    for (char c : norm) {
      const auto& opts = it->second->options;
      if (std::none_of(opts.begin(), opts.end(), [c](const Option& o) { return o.label == c; })) {
        throw Error(Errc::InvalidRequest, "answer for " + id + " names no option of the question");
      }
    }
    s.answers[id] = norm;
  }
  for (const auto& q : ds.items) {
    TranscriptEntry e;
    e.question_id = q.id;
    auto a = s.answers.find(q.id);
    if (a == s.answers.end()) {
      e.outcome = Outcome::unanswered;
    } else {
      e.extracted = a->second;
      e.outcome = verify(a->second, q.answer_key, q.format) ? Outcome::correct : Outcome::incorrect;
    }
    run.entries.push_back(std::move(e));
  }
  s.report = score(run, ds, grouping_for(ds));

  store_.transact([&](KvStore::Txn& t) {
    const std::string entry_key = version_tag + kSep + model_name;
    if (t.get("entries", entry_key) && !resubmit) {
      throw Error(Errc::Conflict,
                  model_name + " already submitted to " + version_tag + "; set resubmit");
    }
    s.seq = t.next("submissions");
    s.submitted_at = utc_now_ms();
    s.id = text::sha256_hex(version_tag + kSep + model_name + kSep + std::to_string(s.seq) + kSep +
                            s.submitted_at)
               .substr(0, 20);
    t.put("submissions", s.id, to_json(s));
    t.put("entries", entry_key, s.id);
  });
  return s;
}

std::optional<Submission> Platform::submission(const std::string& id) const {
  auto j = store_.get("submissions", id);
  if (!j) return std::nullopt;
  return submission_from_json(*j);
}

LeaderboardPage Platform::leaderboard(const std::string& version_tag, std::size_t offset,
                                      std::size_t limit) const {
  if (!version(version_tag)) throw Error(Errc::NotFound, "no dataset version " + version_tag);
  std::vector<Submission> subs;
  for (const auto& [_, id] : store_.list("entries", version_tag + kSep)) {
    auto s = submission(id.get<std::string>());
    if (s) subs.push_back(std::move(*s));
  }
  std::sort(subs.begin(), subs.end(), [](const Submission& a, const Submission& b) {
    if (a.report.overall_weighted != b.report.overall_weighted) {
      return a.report.overall_weighted > b.report.overall_weighted;
    }
    if (a.submitted_at != b.submitted_at) return a.submitted_at < b.submitted_at;
    return a.seq < b.seq;
  });
  LeaderboardPage page;
  page.version = version_tag;
  page.total = subs.size();
  page.offset = offset;
  for (std::size_t i = offset; i < subs.size() && i < offset + limit; ++i) {
    const auto& s = subs[i];
    page.entries.push_back({static_cast<int>(i + 1), s.model_name, s.id, s.report.overall_weighted,
                            s.report.subsets, s.submitted_at});
  }
  return page;
}

CotRecord Platform::annotate(const std::string& question_id, const ExpertAnnotation& annotation) {
  if (text::trim(annotation.annotator).empty()) {
    throw Error(Errc::InvalidRequest, "annotator is required");
  }
  return annotate_hard_case(queue_, question_id, annotation, config_.admission);
}

json Platform::hard_case_view(const HardCase& hc) const {
  json j = {{"question_id", hc.question.id},
            {"question", redacted(hc.question)},
            {"iteration", hc.iteration},
            {"status", hc.status == HardCaseStatus::pending ? "expert_pending" : "expert_done"},
            {"attempts", hc.attempts},
            {"sample_rejected_cot", hc.sample_rejected_cot}};
  if (hc.record) {
    j["annotator"] = hc.record->created_by;
  }
  return j;
}

}  // namespace cotloop
