// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Building a clean question corpus from raw sources: malformed-item
// filtering, near-duplicate removal, textbook segmentation, model-driven QA
// synthesis and model-in-the-loop triage.

#pragma once

#include <filesystem>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotloop/corpus_model.hpp"
#include "cotloop/llm_backend.hpp"

namespace cotloop {

// Pre-validation item as harvested. Options may be empty or ragged.
struct RawItem {
  std::string stem;
  std::vector<Option> options;
  std::string answer;
  std::string source_uri;
  Origin source_kind = Origin::mock_exam;
  std::optional<Format> format;  // inferred when absent
  Subject subject = Subject::other;
  std::optional<int> year;
  std::optional<int> unit;
};

// Options may be an array of {label, text} or an object {"A": text, ...}.
RawItem raw_item_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RawItem& r);
std::vector<RawItem> read_raw_items(const std::filesystem::path& jsonl);

enum class RejectReason {
  EmptyStem,
  MissingAnswer,
  DuplicateLabels,
  TooFewOptions,
  MalformedOptions,  // labels not consecutive from A, or empty option text
  AnswerNotInOptions,
  AnswerFormatMismatch,  // declared single-answer with several key letters
  FormatNotAllowed,
  InvalidMetadata,  // unit outside 1..4
};
std::string_view to_string(RejectReason r);

struct FilterPolicy {
  std::size_t min_options = 4;  // MCQ only
  std::vector<Format> allowed_formats = {Format::mcq_single, Format::mcq_multi,
                                         Format::fill_in_blank};
};

struct Rejected {
  RawItem item;
  RejectReason reason;
};

struct FilterResult {
  std::vector<Question> accepted;
  std::vector<Rejected> rejected;
};

// Total: every input lands in exactly one of the two lists.
FilterResult filter_malformed(const std::vector<RawItem>& items, const FilterPolicy& policy = {});

// Stem used for similarity: NFC, punctuation and whitespace removed, case-folded.
std::u32string similarity_key(std::string_view stem);

// Multiset Jaccard (sum of min counts over sum of max counts) over character
// 3-grams; keys shorter than 3 characters count as a single gram. Two empty
// keys have similarity 1.
double stem_similarity(std::u32string_view a, std::u32string_view b);

// Survivor order: real_exam, hand_crafted, mock_exam, textbook_qa, then id.
bool survives_over(const Question& a, const Question& b);

struct Dropped {
  std::string dropped_id;
  std::string kept_id;
  double similarity = 0.0;  // to kept_id
};

struct DedupResult {
  std::vector<Question> kept;  // input order
  std::vector<Dropped> dropped;
};

// Items linked by similarity >= threshold are grouped transitively; each group
// keeps one survivor. Throws ConfigError if threshold is outside [0, 1].
DedupResult dedup(const std::vector<Question>& items, double threshold = 0.9);

// ---------------------------------------------------------------------------
// Textbooks

struct HeadingRule {
  std::regex pattern;
  // Level of the heading; 0 means "number of leading '#' characters".
  int level = 1;
};

// "第<numeral>章" at level 1 and Markdown '#' headings.
std::vector<HeadingRule> default_heading_rules();

struct TextSegment {
  std::string book_id;
  std::vector<std::string> chapter_path;
  std::string text;
  std::size_t char_count = 0;  // code points
};

nlohmann::json to_json(const TextSegment& s);

struct SegmentOptions {
  std::size_t max_segment_chars = 1200;
  std::size_t min_segment_chars = 200;
  std::vector<HeadingRule> headings = default_heading_rules();
};

// Body text is every non-heading line. Segments concatenate back to the body
// exactly and never span a heading. Throws EmptyBook when the body is blank
// and ConfigError unless max > min > 0.
std::vector<TextSegment> segment_textbook(std::string_view book, std::string_view book_id,
                                          const SegmentOptions& options = {});

// The body that segment_textbook() partitions.
std::string textbook_body(std::string_view book, const std::vector<HeadingRule>& headings);

// Line filters for OCR residue. Each rule is an ECMAScript regex matched
// against a whole line; matching lines are removed.
struct LineFilter {
  std::vector<std::regex> rules;
  // Short lines repeated at least this often are dropped as running heads;
  // 0 disables.
  int running_head_min_repeats = 3;
  std::size_t running_head_max_chars = 30;

  static LineFilter generic();  // page numbers and running heads
  // One pattern per line; blank lines are ignored. Added to the generic rules.
  static LineFilter from_rule_file(const std::filesystem::path& path);
  std::string apply(std::string_view text) const;
};

// ---------------------------------------------------------------------------
// Model-driven steps

// Template with {segment_text}, {n_items} and {format} placeholders.
struct SynthesisTemplate {
  std::string system;
  std::string user;

  static SynthesisTemplate default_template();
  // Throws InvalidTemplate if a placeholder is missing.
  static SynthesisTemplate from_json(const nlohmann::json& j);
  void validate() const;
};

struct SynthesisConfig {
  SynthesisTemplate prompt = SynthesisTemplate::default_template();
  std::size_t n_items = 5;
  std::vector<Format> formats = {Format::fill_in_blank};
  double temperature = kReasoningTemperature;
  std::string model;
  std::uint64_t seed = 0;
  Subject subject = Subject::other;
  FilterPolicy policy;
};

// Parses the backend's JSON-array reply (code fences and surrounding prose
// tolerated). Throws NoParsableItems when no array of objects is found.
std::vector<RawItem> parse_synthesized(std::string_view reply, Origin origin = Origin::textbook_qa);

// At most n_items questions, tagged textbook_qa, each passing filter_malformed.
std::vector<Question> synthesize_qa(const TextSegment& segment, Backend& backend,
                                    const SynthesisConfig& config);

struct TriageEntry {
  Question question;
  int correct = 0;
  int trials = 0;
  double correct_rate = 0.0;
};

struct TriageResult {
  std::vector<TriageEntry> high_confidence;
  std::vector<TriageEntry> flagged;
};

struct TriageConfig {
  int n_trials = 3;
  double confidence_threshold = 1.0;
  double temperature = kReasoningTemperature;
  std::string model;
  std::uint64_t seed = 0;
  int workers = 0;  // 0: backend max_concurrency
};

// Rates are compared to the threshold at percent granularity, so 2 of 3
// passes a 0.67 threshold. Input order is preserved in both lists.
TriageResult triage_by_model(const std::vector<Question>& items, Backend& backend,
                             const TriageConfig& config);

}  // namespace cotloop
