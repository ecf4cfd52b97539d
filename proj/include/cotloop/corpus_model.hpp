// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Canonical data types shared by every pipeline stage: exam questions,
// datasets with content manifests, generated candidate traces and accepted
// chain-of-thought records.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cotloop {

using json = nlohmann::json;

// The sixteen knowledge domains of the training corpus, plus a catch-all.
enum class Subject {
  internal_medicine,
  surgery,
  infectious_diseases,
  pediatrics,
  materia_medica,
  health_law,
  diagnostics,
  basic_theory,
  acupuncture,
  herbal_formulas,
  ethics,
  gynecology,
  warm_febrile_diseases,
  shang_han_lun,
  jin_gui_yao_lue,
  huangdi_neijing,
  other,
};
inline constexpr int kSubjectCount = 17;

enum class Origin { real_exam, mock_exam, textbook_qa, hand_crafted };
enum class Format { mcq_single, mcq_multi, fill_in_blank };

std::string_view to_string(Subject s);
std::string_view to_string(Origin o);
std::string_view to_string(Format f);
Subject subject_from_string(std::string_view s);
Origin origin_from_string(std::string_view s);
Format format_from_string(std::string_view s);

struct Option {
  char label = 'A';
  std::string text;
  friend bool operator==(const Option&, const Option&) = default;
};

struct Question {
  std::string id;
  std::string stem;
  std::vector<Option> options;
  // Sorted option letters for MCQ ("AC"); the normalized gold completion for
  // fill-in-the-blank items.
  std::string answer_key;
  Subject subject = Subject::other;
  Origin origin = Origin::mock_exam;
  std::optional<int> year;
  std::optional<int> unit;
  Format format = Format::mcq_single;

  bool is_mcq() const { return format != Format::fill_in_blank; }
  friend bool operator==(const Question&, const Question&) = default;
};

struct QuestionSpec {
  std::string stem;
  std::vector<Option> options;
  std::string answer;
  Format format = Format::mcq_single;
  Subject subject = Subject::other;
  Origin origin = Origin::mock_exam;
  std::optional<int> year;
  std::optional<int> unit;
};

// Sorted, uppercased, deduplicated option letters found in `raw`, e.g.
// " C, A" -> "AC". Throws Errc::NoLetterFound when no A-Z letter is present.
std::string normalize_answer(std::string_view raw);

// Normalization used for fill-in-the-blank keys and completions.
std::string normalize_completion(std::string_view raw);

// Content-derived identifier: 32 hex digits of SHA-256 over the NFC,
// whitespace-collapsed stem, options and answer key.
std::string question_id(std::string_view stem, const std::vector<Option>& options,
                        std::string_view answer_key);

// Builds a Question, normalizing the key and enforcing every invariant.
// Throws Errc::InvalidQuestion with the violated rule.
Question make_question(const QuestionSpec& spec);

// Throws Errc::InvalidQuestion if `q` breaks an invariant or its id is stale.
void validate(const Question& q);

json to_json(const Question& q);
Question question_from_json(const json& j);

struct QaDataset {
  std::string version;
  std::vector<Question> items;
  std::string manifest_hash;

  const Question* find(std::string_view id) const;
};

// SHA-256 over the canonical JSONL of `items` sorted by id.
std::string dataset_hash(const std::vector<Question>& items);

// Checks id uniqueness and fills manifest_hash.
QaDataset make_dataset(std::string version, std::vector<Question> items);

json manifest_json(const QaDataset& ds);
void write_dataset(const QaDataset& ds, const std::filesystem::path& jsonl_path);
// Reads the JSONL and, if present, the "<stem>.manifest.json" sidecar; a
// sidecar whose hash disagrees with the content raises ChecksumMismatch.
QaDataset read_dataset(const std::filesystem::path& jsonl_path, std::string version = {});
std::filesystem::path manifest_path_for(const std::filesystem::path& jsonl_path);

struct Sampling {
  double temperature = 0.0;
  std::uint64_t seed = 0;
  friend bool operator==(const Sampling&, const Sampling&) = default;
};

struct CandidateTrace {
  std::string question_id;
  int attempt_index = 0;
  std::string chain_of_thought;
  std::string raw_response;
  std::optional<std::string> extracted_answer;  // nullopt: extraction failed
  bool verified = false;
  std::string backend_model;
  Sampling sampling;
  friend bool operator==(const CandidateTrace&, const CandidateTrace&) = default;
};

enum class RecordSource { machine, expert };
std::string_view to_string(RecordSource s);
RecordSource record_source_from_string(std::string_view s);

struct CotRecord {
  std::string question_id;
  std::string chain_of_thought;
  std::string final_answer;
  RecordSource source = RecordSource::machine;
  int iteration = 1;
  std::string created_by;
  friend bool operator==(const CotRecord&, const CotRecord&) = default;
};

json to_json(const CandidateTrace& t);
CandidateTrace candidate_from_json(const json& j);
json to_json(const CotRecord& r);
CotRecord record_from_json(const json& j);

}  // namespace cotloop
