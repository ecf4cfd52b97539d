// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Exam runs over a versioned question set and score tables grouped by exam
// year (hand-crafted items form their own "HC" column), unit or subject.
// Scores are carried as integer hundredths so reports round-trip exactly.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotloop/corpus_model.hpp"
#include "cotloop/cote_engine.hpp"
#include "cotloop/llm_backend.hpp"

namespace cotloop {

enum class ExamMode { deterministic, reasoning };
std::string_view to_string(ExamMode m);
ExamMode exam_mode_from_string(std::string_view s);
double temperature_of(ExamMode m);

enum class Outcome { correct, incorrect, unanswered };
std::string_view to_string(Outcome o);
Outcome outcome_from_string(std::string_view s);

struct Tally {
  std::uint64_t correct = 0;
  std::uint64_t incorrect = 0;
  std::uint64_t unanswered = 0;
  std::uint64_t total() const { return correct + incorrect + unanswered; }
  void add(Outcome o);
  Tally& operator+=(const Tally& o);
  friend bool operator==(const Tally&, const Tally&) = default;
};

// One transcript line: {question_id, prompt, response, extracted, outcome}.
struct TranscriptEntry {
  std::string question_id;
  std::string prompt;
  std::string response;
  std::optional<std::string> extracted;
  Outcome outcome = Outcome::unanswered;
  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

nlohmann::json to_json(const TranscriptEntry& e);
TranscriptEntry transcript_entry_from_json(const nlohmann::json& j);

struct ExamRun {
  std::string model;
  std::string dataset_version;
  ExamMode mode = ExamMode::deterministic;
  std::vector<TranscriptEntry> entries;  // sorted by question_id
  double elapsed_seconds = 0.0;

  Tally tally() const;
};

struct ExamConfig {
  ExamMode mode = ExamMode::deterministic;
  PromptTemplate prompt = PromptTemplate::default_exam();
  int max_tokens = 4096;
  std::string model;  // empty: backend default
  std::uint64_t seed = 0;
  int workers = 0;  // 0: backend max_concurrency
  // Appended per answered question; entries already present are reused on
  // the next call, so an aborted run resumes where it stopped.
  std::optional<std::filesystem::path> transcript_path;
};

// Asks every question once. Extraction failure counts as unanswered; backend
// errors abort the run after in-flight questions are logged. Throws
// InvalidQuestion for fill-in-the-blank items and ChecksumMismatch when the
// transcript belongs to another dataset version, model or mode.
ExamRun run_exam(const QaDataset& dataset, Backend& backend, const ExamConfig& config);

// ---------------------------------------------------------------------------
// Scores

using Hundredths = std::int64_t;

// 100 * correct / total rounded half-even to two decimals. EmptyGroup when
// total is 0.
Hundredths score_of(std::uint64_t correct, std::uint64_t total);
std::string format_score(Hundredths h);  // "60.00", "-13.60"
// Parses "93.3", "93.30" or "100"; more than two decimals is a ParseError.
Hundredths parse_score(std::string_view s);

enum class Grouping { year, unit, year_unit, subject };
std::string_view to_string(Grouping g);
Grouping grouping_from_string(std::string_view s);

struct SubsetScore {
  std::string key;  // "2016", "HC", "2016/U2", "U3", "acupuncture"
  Tally tally;
  Hundredths score = 0;
};

struct ExamReport {
  std::string model;
  std::string dataset_version;
  Grouping grouping = Grouping::year;
  std::vector<SubsetScore> subsets;  // years ascending, then HC
  Hundredths overall_simple = 0;     // unweighted mean of subset ratios
  Hundredths overall_weighted = 0;   // pooled over all questions
  Tally tally;

  const SubsetScore* find(std::string_view key) const;
};

nlohmann::json to_json(const ExamReport& r);
ExamReport exam_report_from_json(const nlohmann::json& j);

// Group label of one question; throws ConfigError when the metadata the
// grouping needs is missing.
std::string group_key(const Question& q, Grouping grouping);

// Throws EmptyGroup for an empty run.
ExamReport score(const ExamRun& run, const QaDataset& dataset, Grouping grouping);

// Pooled score of `old_keys` minus pooled score of `new_keys`. Throws
// EmptyKeySet when either side is empty or names an absent subset, and
// ConfigError when the sets overlap.
Hundredths leakage_gap(const ExamReport& report, const std::set<std::string>& old_keys,
                       const std::set<std::string>& new_keys);
// Gap between two already-published scores.
Hundredths leakage_gap(Hundredths old_score, Hundredths new_score);

enum class ReportFormat { markdown, json, csv };
ReportFormat report_format_from_string(std::string_view s);
// Columns: subsets in report order, then Overall (the weighted score).
std::string render_report(const ExamReport& report, ReportFormat format);

// Reads a rendered score table (csv with a header row, or a markdown table)
// into column -> score; the first non-numeric columns are skipped.
std::map<std::string, Hundredths> parse_score_row(std::string_view table,
                                                  std::string_view row_label);

}  // namespace cotloop
