// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// One self-improvement round over a data subset: the previous-round model
// generates chain-of-thought candidates, a candidate is kept only when its
// extracted answer verifies against the gold key, and questions that never
// verify within the attempt budget are routed to expert annotation.

#pragma once

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
#include "cotloop/llm_backend.hpp"

namespace cotloop {

// Letter-set equality for MCQ keys, exact normalized text for fill-in-the-blank.
bool verify(std::string_view candidate, std::string_view ground_truth,
            Format format = Format::mcq_single);

enum class ExtractionRule { marker = 1, bracketed = 2, last_letter = 3 };

struct Extraction {
  std::string answer;            // normalized
  std::string chain_of_thought;  // text before the answer marker
  ExtractionRule rule = ExtractionRule::marker;
};

// Applies, in order: (1) an explicit marker ("答案", "Answer:", "正确选项")
// followed by option letters; (2) the last boxed or parenthesized letter;
// (3) the last standalone option letter in the final paragraph. Fill-in-the-
// blank items accept rule 1 only. Throws Errc::ExtractionFailed.
Extraction extract(std::string_view response, const Question& question);
std::string extract_answer(std::string_view response, const Question& question);

// Chat prompt with {stem}, {options} and {format} placeholders.
struct PromptTemplate {
  std::string system;
  std::string user;

  static PromptTemplate default_cot();
  static PromptTemplate default_exam();
  static PromptTemplate from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  std::vector<ChatMessage> render(const Question& q) const;
};

std::string render_options(const Question& q);

struct GenerationConfig {
  int max_attempts = 8;
  bool stop_on_first_success = true;
  double temperature = kReasoningTemperature;
  int max_tokens = 4096;
  std::uint64_t base_seed = 0;
  std::string model;  // empty: backend default
  PromptTemplate prompt = PromptTemplate::default_cot();
};

// Seed for one attempt; a pure function of (base seed, question, attempt).
std::uint64_t attempt_seed(std::uint64_t base_seed, std::string_view question_id, int attempt);

// Issues up to max_attempts completions with distinct seeds; stops at the
// first accepted candidate when stop_on_first_success is set.
std::vector<CandidateTrace> generate_candidates(const Question& question, Backend& backend,
                                                const GenerationConfig& config);

// A verified candidate with a non-empty chain of thought.
bool acceptable(const CandidateTrace& t);

// ---------------------------------------------------------------------------
// Hard cases

enum class HardCaseStatus { pending, done };
std::string_view to_string(HardCaseStatus s);

struct HardCase {
  Question question;
  int iteration = 1;
  HardCaseStatus status = HardCaseStatus::pending;
  int attempts = 0;
  std::string sample_rejected_cot;
  std::optional<CotRecord> record;
};

nlohmann::json to_json(const HardCase& h);
HardCase hard_case_from_json(const nlohmann::json& j);

class HardCaseQueue {
 public:
  virtual ~HardCaseQueue() = default;
  // No-op if the question is already queued.
  virtual void push(const HardCase& hc) = 0;
  virtual std::optional<HardCase> get(const std::string& question_id) const = 0;
  virtual std::vector<HardCase> list(std::optional<HardCaseStatus> status) const = 0;
  // Atomically marks a pending case done with `record`. Returns false if the
  // case is unknown or already done.
  virtual bool resolve(const std::string& question_id, const CotRecord& record) = 0;
};

class InMemoryHardCaseQueue : public HardCaseQueue {
 public:
  void push(const HardCase& hc) override;
  std::optional<HardCase> get(const std::string& question_id) const override;
  std::vector<HardCase> list(std::optional<HardCaseStatus> status) const override;
  bool resolve(const std::string& question_id, const CotRecord& record) override;

 private:
  mutable std::mutex mu_;
  std::map<std::string, HardCase> cases_;
};

struct ExpertAnnotation {
  std::string chain_of_thought;
  std::string final_answer;
  std::string annotator;
};

struct AdmissionPolicy {
  std::size_t min_cot_chars = 50;  // code points
};

// Validates an expert annotation for `question`; throws AnswerMismatch or
// TooShort. Returns the expert-sourced record.
CotRecord admit_expert_record(const Question& question, const ExpertAnnotation& annotation,
                              int iteration, const AdmissionPolicy& policy = {});

// Queue-level admission: NotFound for unknown cases, Conflict when already
// annotated, otherwise admit_expert_record() and resolve.
CotRecord annotate_hard_case(HardCaseQueue& queue, const std::string& question_id,
                             const ExpertAnnotation& annotation,
                             const AdmissionPolicy& policy = {});

// ---------------------------------------------------------------------------
// Iteration state and checkpointing

enum class QuestionStatus { pending, accepted, exhausted, expert_pending, expert_done };
std::string_view to_string(QuestionStatus s);
QuestionStatus question_status_from_string(std::string_view s);

struct QuestionState {
  QuestionStatus status = QuestionStatus::pending;
  int attempts = 0;
  std::vector<CotRecord> records;
  friend bool operator==(const QuestionState&, const QuestionState&) = default;
};

struct IterationState {
  int iteration = 1;
  std::size_t subset_index = 0;
  std::string subset_hash;
  std::string model_ref;
  std::uint64_t seed = 0;
  std::map<std::string, QuestionState> questions;

  // Forward-only: pending -> accepted | exhausted -> expert_pending -> expert_done.
  // Throws Errc::InvalidTransition otherwise.
  void transition(const std::string& question_id, QuestionStatus to);

  friend bool operator==(const IterationState&, const IterationState&) = default;
};

bool transition_allowed(QuestionStatus from, QuestionStatus to);

// SHA-256 over the sorted ids of the subset.
std::string subset_hash(const std::vector<Question>& subset);

nlohmann::json to_json(const IterationState& s);
IterationState iteration_state_from_json(const nlohmann::json& j);

class CheckpointStore {
 public:
  explicit CheckpointStore(std::filesystem::path path) : path_(std::move(path)) {}
  std::optional<IterationState> load() const;
  void save(const IterationState& state);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

struct CotStats {
  std::size_t n_machine = 0;
  std::size_t n_expert = 0;
  // Accepted machine candidates per machine attempt issued.
  double acceptance_rate = 0.0;
  // Machine attempts per question of the subset.
  double mean_attempts = 0.0;
  friend bool operator==(const CotStats&, const CotStats&) = default;
};

struct CotDataset {
  int iteration = 1;
  std::vector<CotRecord> records;  // sorted by (question_id, source)
  CotStats stats;

  std::string content_hash() const;
  std::string to_jsonl() const;
  friend bool operator==(const CotDataset&, const CotDataset&) = default;
};

std::filesystem::path cot_dataset_path(const std::filesystem::path& dir, int iteration);
void write_cot_dataset(const CotDataset& ds, const std::filesystem::path& dir);
// Throws MissingConstituent if absent or ChecksumMismatch if the sidecar's hash
// disagrees with the JSONL.
CotDataset read_cot_dataset(const std::filesystem::path& dir, int iteration);

struct EngineConfig {
  GenerationConfig generation;
  bool keep_all_verified = false;
  AdmissionPolicy admission;
  int workers = 0;  // 0: backend max_concurrency
  std::optional<std::filesystem::path> rejects_path;
};

struct IterationResult {
  CotDataset dataset;
  std::vector<std::string> hard_cases;  // question ids awaiting experts
  IterationState state;
};

// Runs (or resumes) iteration `iteration` over `subset`. The checkpoint is
// rewritten after every status transition; accepted questions are never
// regenerated on resume. Throws ChecksumMismatch if the checkpoint belongs to
// a different subset or model, and propagates backend errors after draining
// in-flight work.
IterationResult run_iteration(int iteration, std::size_t subset_index,
                              const std::vector<Question>& subset, Backend& backend,
                              const EngineConfig& config, CheckpointStore& checkpoints,
                              HardCaseQueue& hard_cases);

// Dataset view of a state: accepted machine records plus resolved expert
// records, with statistics.
CotDataset build_cot_dataset(const IterationState& state);

}  // namespace cotloop
