// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/eval_harness.hpp"

#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <tuple>

#include "cotloop/errors.hpp"
#include "cotloop/files.hpp"
#include "cotloop/parallel.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

namespace fs = std::filesystem;
using nlohmann::json;
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

std::string_view to_string(ExamMode m) {
  return m == ExamMode::deterministic ? "deterministic" : "reasoning";
}

ExamMode exam_mode_from_string(std::string_view s) {
  if (s == "deterministic") return ExamMode::deterministic;
  if (s == "reasoning") return ExamMode::reasoning;
  throw Error(Errc::ConfigError, "unknown exam mode '" + std::string(s) + "'");
}

double temperature_of(ExamMode m) {
  return m == ExamMode::deterministic ? kDeterministicTemperature : kReasoningTemperature;
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::correct:
      return "correct";
    case Outcome::incorrect:
      return "incorrect";
    case Outcome::unanswered:
      return "unanswered";
  }
  return "unanswered";
}

Outcome outcome_from_string(std::string_view s) {
  if (s == "correct") return Outcome::correct;
  if (s == "incorrect") return Outcome::incorrect;
  if (s == "unanswered") return Outcome::unanswered;
  throw Error(Errc::ParseError, "unknown outcome '" + std::string(s) + "'");
}

void Tally::add(Outcome o) {
  if (o == Outcome::correct) ++correct;
  if (o == Outcome::incorrect) ++incorrect;
  if (o == Outcome::unanswered) ++unanswered;
}

Tally& Tally::operator+=(const Tally& o) {
  correct += o.correct;
  incorrect += o.incorrect;
  unanswered += o.unanswered;
  return *this;
}

json to_json(const TranscriptEntry& e) {
  return {{"question_id", e.question_id},
          {"prompt", e.prompt},
          {"response", e.response},
          {"extracted", e.extracted ? json(*e.extracted) : json()},
          {"outcome", to_string(e.outcome)}};
}

TranscriptEntry transcript_entry_from_json(const json& j) {
  try {
    TranscriptEntry e;
    e.question_id = j.at("question_id").get<std::string>();
    e.prompt = j.value("prompt", std::string());
    e.response = j.value("response", std::string());
    if (j.contains("extracted") && j["extracted"].is_string()) {
      e.extracted = j["extracted"].get<std::string>();
    }
    e.outcome = outcome_from_string(j.at("outcome").get<std::string>());
    return e;
  } catch (const json::exception& ex) {
    throw Error(Errc::ParseError, std::string("transcript entry: ") + ex.what());
  }
}

Tally ExamRun::tally() const {
  Tally t;
  for (const auto& e : entries) t.add(e.outcome);
  return t;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

// Transcript lines carry run identity next to the entry so a file from a
// different run is never mixed in. A torn final line from a crash is ignored.
std::map<std::string, TranscriptEntry> load_transcript(const fs::path& path, const json& identity) {
  std::map<std::string, TranscriptEntry> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      if (in.peek() == EOF) break;
      throw Error(Errc::ParseError, "corrupt transcript line in " + path.string());
    }
    for (const auto& [k, v] : identity.items()) {
      if (j.value(k, json()) != v) {
        throw Error(Errc::ChecksumMismatch,
                    "transcript " + path.string() + " belongs to another run (" + k + ")");
      }
    }
    auto e = transcript_entry_from_json(j);
    out[e.question_id] = std::move(e);
  }
  return out;
}

}  // namespace

ExamRun run_exam(const QaDataset& dataset, Backend& backend, const ExamConfig& config) {
  for (const auto& q : dataset.items) {
    if (!q.is_mcq()) {
      throw Error(Errc::InvalidQuestion, "exam items must be multiple choice: " + q.id);
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  ExamRun run;
  run.model = config.model.empty() ? backend.default_model() : config.model;
  run.dataset_version = dataset.version;
  run.mode = config.mode;
  const json identity = {{"model", run.model},
                         {"dataset_version", run.dataset_version},
                         {"mode", to_string(run.mode)}};

  std::map<std::string, TranscriptEntry> done;
  if (config.transcript_path) {
    done = load_transcript(*config.transcript_path, identity);
    if (config.transcript_path->has_parent_path()) {
      fs::create_directories(config.transcript_path->parent_path());
    }
  }
  std::vector<const Question*> todo;
  for (const auto& q : dataset.items) {
    if (!done.count(q.id)) todo.push_back(&q);
  }

  std::mutex mu;
  auto ask = [&](std::size_t i) {
    const Question& q = *todo[i];
    ChatRequest req;
    req.model = config.model;
    req.messages = config.prompt.render(q);
    req.temperature = temperature_of(config.mode);
    req.max_tokens = config.max_tokens;
    req.seed = attempt_seed(config.seed, q.id, 0);
    const Completion c = backend.complete(req);

    TranscriptEntry e;
    e.question_id = q.id;
    e.prompt = req.user_text();
    e.response = c.text;
    try {
      e.extracted = extract_answer(c.text, q);
      e.outcome =
          verify(*e.extracted, q.answer_key, q.format) ? Outcome::correct : Outcome::incorrect;
    } catch (const Error& err) {
      if (err.code() != Errc::ExtractionFailed) throw;
      e.outcome = Outcome::unanswered;
    }
    std::lock_guard lock(mu);
    if (config.transcript_path) {
      json row = identity;
      row.update(to_json(e));
      files::append_line(*config.transcript_path, row.dump());
    }
    done[e.question_id] = std::move(e);
  };
  const int workers = config.workers > 0 ? config.workers : backend.policy().max_concurrency;
  parallel_for(todo.size(), workers, ask);

  for (const auto& q : dataset.items) run.entries.push_back(done.at(q.id));
  std::sort(run.entries.begin(), run.entries.end(),
            [](const auto& a, const auto& b) { return a.question_id < b.question_id; });
  run.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// ---------------------------------------------------------------------------
// Scores

namespace {

// Rounds a rational to the nearest integer, ties to even.
Hundredths round_half_even(const Rational& x) {
  const bool neg = x < 0;
  const Rational a = neg ? Rational(-x) : x;
  const BigInt num = boost::multiprecision::numerator(a);
  const BigInt den = boost::multiprecision::denominator(a);
  BigInt q = num / den;
  const BigInt r2 = 2 * (num % den);
  if (r2 > den || (r2 == den && (q & 1) != 0)) ++q;
  const auto v = static_cast<Hundredths>(q);
  return neg ? -v : v;
}

Rational ratio(std::uint64_t correct, std::uint64_t total) {
  return Rational(BigInt(correct), BigInt(total));
}

Hundredths to_hundredths(const Rational& fraction) { return round_half_even(fraction * 10000); }

}  // namespace

Hundredths score_of(std::uint64_t correct, std::uint64_t total) {
  if (total == 0) throw Error(Errc::EmptyGroup, "score of an empty group");
  if (correct > total) throw Error(Errc::InvalidRequest, "correct exceeds total");
  return to_hundredths(ratio(correct, total));
}

std::string format_score(Hundredths h) {
  const bool neg = h < 0;
  const std::uint64_t a = neg ? static_cast<std::uint64_t>(-h) : static_cast<std::uint64_t>(h);
  std::string frac = std::to_string(a % 100);
  if (frac.size() < 2) frac.insert(0, "0");
  return (neg ? "-" : "") + std::to_string(a / 100) + "." + frac;
}

Hundredths parse_score(std::string_view s) {
  const std::string t = text::trim(s);
  std::size_t i = 0;
  const bool neg = !t.empty() && t[0] == '-';
  if (neg) ++i;
  Hundredths whole = 0, frac = 0;
  int int_digits = 0, frac_digits = 0;
  while (i < t.size() && t[i] >= '0' && t[i] <= '9') {
    whole = whole * 10 + (t[i++] - '0');
    ++int_digits;
  }
  if (i < t.size() && t[i] == '.') {
    ++i;
    while (i < t.size() && t[i] >= '0' && t[i] <= '9') {
      if (++frac_digits > 2) throw Error(Errc::ParseError, "more than two decimals: " + t);
      frac = frac * 10 + (t[i++] - '0');
    }
    if (frac_digits == 1) frac *= 10;
  }
  if (int_digits == 0 || i != t.size() || int_digits > 15) {
    throw Error(Errc::ParseError, "not a score: '" + t + "'");
  }
  const Hundredths v = whole * 100 + frac;
  return neg ? -v : v;
}

std::string_view to_string(Grouping g) {
  switch (g) {
    case Grouping::year:
      return "year";
    case Grouping::unit:
      return "unit";
    case Grouping::year_unit:
      return "year_unit";
    case Grouping::subject:
      return "subject";
  }
  return "year";
}

Grouping grouping_from_string(std::string_view s) {
  for (auto g : {Grouping::year, Grouping::unit, Grouping::year_unit, Grouping::subject}) {
    if (to_string(g) == s) return g;
  }
  throw Error(Errc::ConfigError, "unknown grouping '" + std::string(s) + "'");
}

namespace {

// Sort key: numeric years first, then HC, then labels; unit second.
using KeyOrder = std::tuple<int, long, std::string, long>;

std::string year_part(const Question& q, long& order, int& cls) {
  if (q.origin == Origin::hand_crafted) {
    cls = 1;
    order = 0;
    return "HC";
  }
  if (!q.year) throw Error(Errc::ConfigError, "question " + q.id + " has no year");
  cls = 0;
  order = *q.year;
  return std::to_string(*q.year);
}

long unit_part(const Question& q) {
  if (!q.unit) throw Error(Errc::ConfigError, "question " + q.id + " has no unit");
  return *q.unit;
}

std::pair<std::string, KeyOrder> keyed(const Question& q, Grouping g) {
  long order = 0;
  int cls = 0;
  switch (g) {
    case Grouping::year: {
      auto y = year_part(q, order, cls);
      return {y, {cls, order, "", 0}};
    }
    case Grouping::unit: {
      const long u = unit_part(q);
      return {"U" + std::to_string(u), {0, u, "", 0}};
    }
    case Grouping::year_unit: {
      auto y = year_part(q, order, cls);
      const long u = unit_part(q);
      return {y + "/U" + std::to_string(u), {cls, order, "", u}};
    }
    case Grouping::subject: {
      std::string s(to_string(q.subject));
      return {s, {2, 0, s, 0}};
    }
  }
  return {};
}

}  // namespace

std::string group_key(const Question& q, Grouping grouping) { return keyed(q, grouping).first; }

const SubsetScore* ExamReport::find(std::string_view key) const {
  for (const auto& s : subsets) {
    if (s.key == key) return &s;
  }
  return nullptr;
}

ExamReport score(const ExamRun& run, const QaDataset& dataset, Grouping grouping) {
  if (run.entries.empty()) throw Error(Errc::EmptyGroup, "exam run has no questions");
  std::map<std::string_view, const Question*> by_id;
  for (const auto& q : dataset.items) by_id.emplace(q.id, &q);
  std::map<KeyOrder, SubsetScore> groups;
  for (const auto& e : run.entries) {
    auto it = by_id.find(e.question_id);
    const Question* q = it == by_id.end() ? nullptr : it->second;
    if (!q) throw Error(Errc::NotFound, "question " + e.question_id + " not in dataset");
    auto [key, order] = keyed(*q, grouping);
    auto& s = groups[order];
    s.key = key;
    s.tally.add(e.outcome);
  }
  ExamReport r;
  r.model = run.model;
  r.dataset_version = run.dataset_version;
  r.grouping = grouping;
  Rational sum = 0;
  for (auto& [_, s] : groups) {
    s.score = score_of(s.tally.correct, s.tally.total());
    sum += ratio(s.tally.correct, s.tally.total());
    r.tally += s.tally;
    r.subsets.push_back(std::move(s));
  }
  r.overall_simple = to_hundredths(sum / static_cast<long>(r.subsets.size()));
  r.overall_weighted = score_of(r.tally.correct, r.tally.total());
  return r;
}

Hundredths leakage_gap(const ExamReport& report, const std::set<std::string>& old_keys,
                       const std::set<std::string>& new_keys) {
  if (old_keys.empty() || new_keys.empty()) {
    throw Error(Errc::EmptyKeySet, "both key sets must be non-empty");
  }
  for (const auto& k : old_keys) {
    if (new_keys.count(k)) throw Error(Errc::ConfigError, "key " + k + " is on both sides");
  }
  auto pooled = [&](const std::set<std::string>& keys) {
    Tally t;
    for (const auto& k : keys) {
      const auto* s = report.find(k);
      if (!s) throw Error(Errc::EmptyKeySet, "report has no subset " + k);
      t += s->tally;
    }
    if (t.total() == 0) throw Error(Errc::EmptyKeySet, "key set covers no questions");
    return ratio(t.correct, t.total());
  };
  return to_hundredths(pooled(old_keys) - pooled(new_keys));
}

Hundredths leakage_gap(Hundredths old_score, Hundredths new_score) { return old_score - new_score; }

// ---------------------------------------------------------------------------
// Report files

namespace {

json tally_json(const Tally& t) {
  return {{"correct", t.correct},
          {"incorrect", t.incorrect},
          {"unanswered", t.unanswered},
          {"total", t.total()}};
}

Tally tally_from(const json& j) {
  Tally t;
  t.correct = j.at("correct").get<std::uint64_t>();
  t.incorrect = j.at("incorrect").get<std::uint64_t>();
  t.unanswered = j.at("unanswered").get<std::uint64_t>();
  return t;
}

}  // namespace

json to_json(const ExamReport& r) {
  json subsets = json::array();
  for (const auto& s : r.subsets) {
    subsets.push_back(
        {{"group", s.key}, {"score", format_score(s.score)}, {"tally", tally_json(s.tally)}});
  }
  return {{"model", r.model},
          {"dataset_version", r.dataset_version},
          {"grouping", to_string(r.grouping)},
          {"subsets", subsets},
          {"overall_simple", format_score(r.overall_simple)},
          {"overall_weighted", format_score(r.overall_weighted)},
          {"tally", tally_json(r.tally)}};
}

ExamReport exam_report_from_json(const json& j) {
  try {
    ExamReport r;
    r.model = j.at("model").get<std::string>();
    r.dataset_version = j.at("dataset_version").get<std::string>();
    r.grouping = grouping_from_string(j.at("grouping").get<std::string>());
    for (const auto& s : j.at("subsets")) {
      r.subsets.push_back({s.at("group").get<std::string>(), tally_from(s.at("tally")),
                           parse_score(s.at("score").get<std::string>())});
    }
    r.overall_simple = parse_score(j.at("overall_simple").get<std::string>());
    r.overall_weighted = parse_score(j.at("overall_weighted").get<std::string>());
    r.tally = tally_from(j.at("tally"));
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("report: ") + e.what());
  }
}

ReportFormat report_format_from_string(std::string_view s) {
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  throw Error(Errc::ConfigError, "unknown report format '" + std::string(s) + "'");
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_row(std::string_view line, char sep) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (sep == ',' && c == '"') {
      if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else {
        quoted = !quoted;
      }
    } else if (c == sep && !quoted) {
      cells.push_back(text::trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(text::trim(cur));
  if (sep == '|') {
    if (!cells.empty() && cells.front().empty()) cells.erase(cells.begin());
    if (!cells.empty() && cells.back().empty()) cells.pop_back();
  }
  return cells;
}

}  // namespace

std::string render_report(const ExamReport& r, ReportFormat format) {
  if (format == ReportFormat::json) return to_json(r).dump(2) + "\n";
  std::vector<std::string> header = {"Model"};
  std::vector<std::string> row = {r.model};
  for (const auto& s : r.subsets) {
    header.push_back(s.key);
    row.push_back(format_score(s.score));
  }
  header.push_back("Overall");
  row.push_back(format_score(r.overall_weighted));
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << csv_field(header[i]);
    out << "\n";
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_field(row[i]);
    out << "\n";
    return out.str();
  }
  auto line = [&](const std::vector<std::string>& cells) {
    out << "|";
    for (const auto& c : cells) out << " " << c << " |";
    out << "\n";
  };
  line(header);
  out << "|---|";
  for (std::size_t i = 1; i < header.size(); ++i) out << "---:|";
  out << "\n";
  line(row);
  return out.str();
}

std::map<std::string, Hundredths> parse_score_row(std::string_view table,
                                                  std::string_view row_label) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(table)};
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = text::trim(line);
    if (t.empty()) continue;
    const char sep = t[0] == '|' ? '|' : ',';
    auto cells = split_row(t, sep);
    if (sep == '|' && !cells.empty() && cells[0].find("---") != std::string::npos) continue;
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw Error(Errc::ParseError, "empty score table");
  const auto& header = rows[0];
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].empty() || rows[r][0] != row_label) continue;
    if (rows[r].size() != header.size()) {
      throw Error(Errc::ParseError, "row " + std::string(row_label) + " has the wrong width");
    }
    std::map<std::string, Hundredths> out;
    for (std::size_t c = 1; c < header.size(); ++c) {
      try {
        out[header[c]] = parse_score(rows[r][c]);
      } catch (const Error&) {
        if (!out.empty()) throw;  // only leading label columns may be non-numeric
      }
    }
    return out;
  }
  throw Error(Errc::NotFound, "no row labelled " + std::string(row_label));
}

}  // namespace cotloop
