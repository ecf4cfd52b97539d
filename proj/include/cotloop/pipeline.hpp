// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Store-directory orchestration behind the CLI: partition, per-iteration
// generation, aggregation and training, each idempotent and resumable.
//
// Store layout:
//   partition.json            the fixed split of the corpus
//   checkpoints/iter_<k>.json engine checkpoints (path configurable)
//   sft/                      SftStore root
//   platform.db               hard-case queue shared with `serve`
//   evals/                    exam transcripts and reports
//   runs/                     effective config snapshot of every run
//   .lock                     one pipeline per store

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotloop/corpus_model.hpp"
#include "cotloop/cote_engine.hpp"
#include "cotloop/eval_harness.hpp"
#include "cotloop/files.hpp"
#include "cotloop/ingest.hpp"
#include "cotloop/llm_backend.hpp"
#include "cotloop/partitioner.hpp"
#include "cotloop/platform_service.hpp"
#include "cotloop/sft_store.hpp"

namespace cotloop {

struct TextbookSource {
  std::filesystem::path path;
  std::string book_id;
  Subject subject = Subject::other;
};

struct IngestConfig {
  std::vector<std::filesystem::path> raw;  // JSONL of raw items
  std::vector<TextbookSource> textbooks;
  std::optional<std::filesystem::path> line_rules;
  double dedup_threshold = 0.9;
  FilterPolicy filter;
  SegmentOptions segments;
  std::size_t items_per_segment = 5;
  std::string synthesis_backend;  // required when textbooks are given
  std::string triage_backend;     // empty: no triage
  TriageConfig triage;
};

struct PipelineConfig {
  std::filesystem::path corpus = "corpus.jsonl";
  std::string corpus_version = "corpus";
  std::filesystem::path store = "store";
  std::filesystem::path checkpoints;  // empty: <store>/checkpoints
  PartitionPlan partition;
  int iterations = 5;
  EngineConfig engine;
  std::map<std::string, BackendConfig> backends;
  std::string generation_backend;
  std::string base_model = "m0";
  TrainerConfig trainer;
  IngestConfig ingest;
  PlatformConfig platform;  // empty data_dir: the store

  PlatformConfig platform_config() const;

  std::filesystem::path checkpoint_dir() const {
    return checkpoints.empty() ? store / "checkpoints" : checkpoints;
  }
  const BackendConfig& backend(const std::string& name) const;
  // Throws ConfigError on K < 1, unknown backend names or a missing corpus
  // directory.
  void validate() const;
};

// Command-line overrides; unset fields fall through to the environment
// (COTLOOP_STORE, COTLOOP_CORPUS, COTLOOP_BACKEND, COTLOOP_K, COTLOOP_SEED)
// and then to the file.
struct ConfigOverrides {
  std::optional<std::filesystem::path> store;
  std::optional<std::filesystem::path> corpus;
  std::optional<std::string> backend;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
};

// Relative paths in the file resolve against the file's directory.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                    const ConfigOverrides& overrides = {});
void apply_overrides(PipelineConfig& config, const ConfigOverrides& overrides);
nlohmann::json to_json(const PipelineConfig& c);

struct IngestSummary {
  std::size_t raw_items = 0;
  std::size_t synthesized = 0;
  std::size_t rejected = 0;
  std::size_t duplicates = 0;
  std::size_t flagged = 0;
  std::size_t kept = 0;
  std::string manifest_hash;
};

struct IterationSummary {
  int iteration = 0;
  std::string model;  // generation model id
  std::size_t records = 0;
  CotStats stats;
  std::size_t late_expert_records = 0;  // carried over from earlier iterations
  std::size_t hard_cases = 0;           // still awaiting experts
  std::string content_hash;
  bool already_sealed = false;
};

struct LoopStep {
  IterationSummary iteration;
  SftManifest manifest;
  ModelRef model;
};

nlohmann::json to_json(const IngestSummary& s);
nlohmann::json to_json(const IterationSummary& s);
nlohmann::json to_json(const LoopStep& s);

// Writes runs/<stamp>-<pid>-<command>.json under the store and returns it.
std::filesystem::path write_config_snapshot(const PipelineConfig& config,
                                            const std::string& command);

// Saved exam reports under <store>/evals, by file name.
std::vector<ExamReport> stored_reports(const std::filesystem::path& store);

class Pipeline {
 public:
  // Takes the store lock (LockHeld if another pipeline holds it) and
  // records the effective config under runs/ tagged with `command`.
  explicit Pipeline(PipelineConfig config, const std::string& command = "run");

  const PipelineConfig& config() const { return config_; }
  SftStore& sft() { return sft_; }
  HardCaseQueue& hard_cases() { return queue_; }
  std::filesystem::path snapshot_path() const { return snapshot_; }

  IngestSummary ingest();
  const QaDataset& corpus();
  // Creates partition.json or checks it against the corpus and plan;
  // a mismatch raises ChecksumMismatch.
  Partition partition();

  // Model M_{k-1} that generates iteration k: the base model for k = 1.
  ModelRef generator_for(int k);
  // Id sent to the generation backend for `m`; improving_mock backends get
  // the training-set size appended.
  std::string backend_model_id(const ModelRef& m) const;

  // Seals CoT dataset k. Needs manifest k-1 and its trained model (else
  // IterationGap); a sealed iteration is returned unchanged. Expert records
  // resolved after their own iteration was sealed join dataset k.
  IterationSummary run_iteration(int k);
  SftManifest aggregate(int k);
  std::filesystem::path export_sft(int k);
  ModelRef train(int k);
  // partition, then run-iteration, aggregate and train for 1..iterations.
  std::vector<LoopStep> loop(int iterations);

  // `dataset` is a corpus file or a platform version tag.
  ExamReport evaluate(const std::string& dataset, const std::string& backend,
                      const std::string& model, ExamMode mode, Grouping grouping);

 private:
  std::unique_ptr<Backend> make_named_backend(const std::string& name);

  PipelineConfig config_;
  std::unique_ptr<files::LockFile> lock_;
  std::filesystem::path snapshot_;
  SftStore sft_;
  KvStore kv_;
  SqliteHardCaseQueue queue_;
  std::optional<QaDataset> corpus_;
};

}  // namespace cotloop
