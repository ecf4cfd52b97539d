// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/corpus_model.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <unordered_set>

#include "cotloop/errors.hpp"
#include "cotloop/files.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

namespace {

constexpr std::array<std::string_view, kSubjectCount> kSubjectNames = {
    "internal_medicine",
    "surgery",
    "infectious_diseases",
    "pediatrics",
    "materia_medica",
    "health_law",
    "diagnostics",
    "basic_theory",
    "acupuncture",
    "herbal_formulas",
    "ethics",
    "gynecology",
    "warm_febrile_diseases",
    "shang_han_lun",
    "jin_gui_yao_lue",
    "huangdi_neijing",
    "other",
};

constexpr std::array<std::string_view, 4> kOriginNames = {"real_exam", "mock_exam", "textbook_qa",
                                                          "hand_crafted"};
constexpr std::array<std::string_view, 3> kFormatNames = {"mcq_single", "mcq_multi",
                                                          "fill_in_blank"};

template <typename E, std::size_t N>
E enum_from(std::string_view s, const std::array<std::string_view, N>& names,
            std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  throw Error(Errc::ParseError, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

[[noreturn]] void invalid(const std::string& why) { throw Error(Errc::InvalidQuestion, why); }

}  // namespace

std::string_view to_string(Subject s) { return kSubjectNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(Origin o) { return kOriginNames[static_cast<std::size_t>(o)]; }
std::string_view to_string(Format f) { return kFormatNames[static_cast<std::size_t>(f)]; }
Subject subject_from_string(std::string_view s) {
  return enum_from<Subject>(s, kSubjectNames, "subject");
}
Origin origin_from_string(std::string_view s) {
  return enum_from<Origin>(s, kOriginNames, "origin");
}
Format format_from_string(std::string_view s) {
  return enum_from<Format>(s, kFormatNames, "format");
}

std::string normalize_answer(std::string_view raw) {
  std::set<char> letters;
  for (char32_t c : text::to_u32(raw)) {
    if (c >= U'a' && c <= U'z') c -= U'a' - U'A';
    // Full-width Ａ-Ｚ / ａ-ｚ, common in OCR'd keys.
    if (c >= U'Ａ' && c <= U'Ｚ') c = U'A' + (c - U'Ａ');
    if (c >= U'ａ' && c <= U'ｚ') c = U'A' + (c - U'ａ');
    if (c >= U'A' && c <= U'Z') letters.insert(static_cast<char>(c));
  }
  if (letters.empty()) {
    throw Error(Errc::NoLetterFound, "no option letter in '" + std::string(raw) + "'");
  }
  return std::string(letters.begin(), letters.end());
}

std::string normalize_completion(std::string_view raw) { return text::normalize(raw); }

std::string question_id(std::string_view stem, const std::vector<Option>& options,
                        std::string_view answer_key) {
  std::string canon = text::normalize(stem);
  canon += '\x1f';
  for (const auto& opt : options) {
    canon += opt.label;
    canon += '\x1e';
    canon += text::normalize(opt.text);
    canon += '\x1f';
  }
  canon += '\x1d';
  canon += text::normalize(answer_key);
  return text::sha256_hex(canon).substr(0, 32);
}

Question make_question(const QuestionSpec& spec) {
  Question q;
  q.stem = text::trim(spec.stem);
  q.options = spec.options;
  for (auto& opt : q.options) opt.text = text::trim(opt.text);
  q.format = spec.format;
  q.subject = spec.subject;
  q.origin = spec.origin;
  q.year = spec.year;
  q.unit = spec.unit;
  if (q.is_mcq()) {
    try {
      q.answer_key = normalize_answer(spec.answer);
    } catch (const Error&) {
      invalid("answer '" + spec.answer + "' contains no option letter");
    }
  } else {
    q.answer_key = normalize_completion(spec.answer);
  }
  q.id = question_id(q.stem, q.options, q.answer_key);
  validate(q);
  return q;
}

void validate(const Question& q) {
  if (text::normalize(q.stem).empty()) invalid("empty stem");
  if (q.is_mcq()) {
    if (q.options.size() < 2) invalid("fewer than 2 options");
    for (std::size_t i = 0; i < q.options.size(); ++i) {
      if (q.options[i].label != static_cast<char>('A' + i)) {
        invalid("option labels must be consecutive from A");
      }
    }
    if (q.answer_key.empty()) invalid("empty answer key");
    for (char c : q.answer_key) {
      if (c < 'A' || c >= static_cast<char>('A' + q.options.size())) {
        invalid(std::string("answer letter ") + c + " is not an option");
      }
    }
    if (!std::is_sorted(q.answer_key.begin(), q.answer_key.end()) ||
        std::adjacent_find(q.answer_key.begin(), q.answer_key.end()) != q.answer_key.end()) {
      invalid("answer key not in canonical form");
    }
    if (q.format == Format::mcq_single && q.answer_key.size() != 1) {
      invalid("single-answer item must have exactly one key letter");
    }
  } else if (q.answer_key.empty()) {
    invalid("empty fill-in-the-blank answer");
  }
  if (q.unit && (*q.unit < 1 || *q.unit > 4)) invalid("unit outside 1..4");
  if (q.id != question_id(q.stem, q.options, q.answer_key)) invalid("id does not match content");
}

json to_json(const Question& q) {
  json options = json::array();
  for (const auto& opt : q.options) {
    options.push_back({{"label", std::string(1, opt.label)}, {"text", opt.text}});
  }
  return json{{"id", q.id},
              {"stem", q.stem},
              {"options", std::move(options)},
              {"answer_key", q.answer_key},
              {"subject", to_string(q.subject)},
              {"origin", to_string(q.origin)},
              {"year", q.year ? json(*q.year) : json(nullptr)},
              {"unit", q.unit ? json(*q.unit) : json(nullptr)},
              {"format", to_string(q.format)}};
}

Question question_from_json(const json& j) {
  try {
    Question q;
    q.id = j.at("id").get<std::string>();
    q.stem = j.at("stem").get<std::string>();
    for (const auto& o : j.at("options")) {
      const auto label = o.at("label").get<std::string>();
      if (label.size() != 1) throw Error(Errc::ParseError, "option label must be one letter");
      q.options.push_back({label[0], o.at("text").get<std::string>()});
    }
    q.answer_key = j.at("answer_key").get<std::string>();
    q.subject = subject_from_string(j.at("subject").get<std::string>());
    q.origin = origin_from_string(j.at("origin").get<std::string>());
    if (j.contains("year") && !j["year"].is_null()) q.year = j["year"].get<int>();
    if (j.contains("unit") && !j["unit"].is_null()) q.unit = j["unit"].get<int>();
    q.format = format_from_string(j.at("format").get<std::string>());
    validate(q);
    return q;
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("malformed question: ") + e.what());
  }
}

const Question* QaDataset::find(std::string_view id) const {
  for (const auto& q : items) {
    if (q.id == id) return &q;
  }
  return nullptr;
}

std::string dataset_hash(const std::vector<Question>& items) {
  std::vector<const Question*> sorted;
  sorted.reserve(items.size());
  for (const auto& q : items) sorted.push_back(&q);
  std::sort(sorted.begin(), sorted.end(),
            [](const Question* a, const Question* b) { return a->id < b->id; });
  std::string canon;
  for (const auto* q : sorted) {
    canon += to_json(*q).dump();
    canon += '\n';
  }
  return text::sha256_hex(canon);
}

QaDataset make_dataset(std::string version, std::vector<Question> items) {
  std::unordered_set<std::string> seen;
  for (const auto& q : items) {
    if (!seen.insert(q.id).second) invalid("duplicate question id " + q.id);
  }
  QaDataset ds{std::move(version), std::move(items), {}};
  ds.manifest_hash = dataset_hash(ds.items);
  return ds;
}

json manifest_json(const QaDataset& ds) {
  return json{
      {"version", ds.version}, {"manifest_hash", ds.manifest_hash}, {"count", ds.items.size()}};
}

std::filesystem::path manifest_path_for(const std::filesystem::path& jsonl_path) {
  auto p = jsonl_path;
  p.replace_extension(".manifest.json");
  return p;
}

void write_dataset(const QaDataset& ds, const std::filesystem::path& jsonl_path) {
  std::vector<json> rows;
  rows.reserve(ds.items.size());
  for (const auto& q : ds.items) rows.push_back(to_json(q));
  files::write_atomic(jsonl_path, files::to_jsonl(rows));
  files::write_json_atomic(manifest_path_for(jsonl_path), manifest_json(ds));
}

QaDataset read_dataset(const std::filesystem::path& jsonl_path, std::string version) {
  std::vector<Question> items;
  for (const auto& row : files::read_jsonl(jsonl_path)) items.push_back(question_from_json(row));
  const auto mpath = manifest_path_for(jsonl_path);
  std::optional<json> manifest;
  if (std::filesystem::exists(mpath)) manifest = files::read_json(mpath);
  if (version.empty()) {
    version = manifest ? manifest->value("version", std::string{}) : jsonl_path.stem().string();
  }
  QaDataset ds = make_dataset(std::move(version), std::move(items));
  if (manifest && manifest->value("manifest_hash", ds.manifest_hash) != ds.manifest_hash) {
    throw Error(Errc::ChecksumMismatch, jsonl_path.string() + " does not match its manifest");
  }
  return ds;
}

std::string_view to_string(RecordSource s) {
  return s == RecordSource::machine ? "machine" : "expert";
}

RecordSource record_source_from_string(std::string_view s) {
  if (s == "machine") return RecordSource::machine;
  if (s == "expert") return RecordSource::expert;
  throw Error(Errc::ParseError, "unknown record source '" + std::string(s) + "'");
}

json to_json(const CandidateTrace& t) {
  return json{{"question_id", t.question_id},
              {"attempt_index", t.attempt_index},
              {"chain_of_thought", t.chain_of_thought},
              {"raw_response", t.raw_response},
              {"extracted_answer", t.extracted_answer ? json(*t.extracted_answer) : json(nullptr)},
              {"verified", t.verified},
              {"backend_model", t.backend_model},
              {"sampling", {{"temperature", t.sampling.temperature}, {"seed", t.sampling.seed}}}};
}

CandidateTrace candidate_from_json(const json& j) {
  CandidateTrace t;
  t.question_id = j.at("question_id").get<std::string>();
  t.attempt_index = j.at("attempt_index").get<int>();
  t.chain_of_thought = j.at("chain_of_thought").get<std::string>();
  t.raw_response = j.at("raw_response").get<std::string>();
  if (!j.at("extracted_answer").is_null()) {
    t.extracted_answer = j["extracted_answer"].get<std::string>();
  }
  t.verified = j.at("verified").get<bool>();
  t.backend_model = j.at("backend_model").get<std::string>();
  t.sampling.temperature = j.at("sampling").at("temperature").get<double>();
  t.sampling.seed = j.at("sampling").at("seed").get<std::uint64_t>();
  return t;
}

json to_json(const CotRecord& r) {
  return json{{"question_id", r.question_id},   {"chain_of_thought", r.chain_of_thought},
              {"final_answer", r.final_answer}, {"source", to_string(r.source)},
              {"iteration", r.iteration},       {"created_by", r.created_by}};
}

CotRecord record_from_json(const json& j) {
  try {
    CotRecord r;
    r.question_id = j.at("question_id").get<std::string>();
    r.chain_of_thought = j.at("chain_of_thought").get<std::string>();
    r.final_answer = j.at("final_answer").get<std::string>();
    r.source = record_source_from_string(j.at("source").get<std::string>());
    r.iteration = j.at("iteration").get<int>();
    r.created_by = j.at("created_by").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("malformed CoT record: ") + e.what());
  }
}

}  // namespace cotloop
