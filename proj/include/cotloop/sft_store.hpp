// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

// Cumulative fine-tuning sets and the trainer contract. Manifest k covers
// the CoT datasets of iterations 1..k; every model is trained from the base
// model on one manifest, never from an intermediate model.

#pragma once

#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotloop/corpus_model.hpp"
#include "cotloop/cote_engine.hpp"

namespace cotloop {

struct Constituent {
  int iteration = 1;
  std::size_t records = 0;
  std::string content_hash;
  friend bool operator==(const Constituent&, const Constituent&) = default;
};

struct SftManifest {
  int upto_iteration = 0;
  std::vector<Constituent> constituents;  // iterations 1..upto, in order
  std::string base_model;
  std::size_t total_records = 0;
  std::string manifest_hash;

  // The k = 0 manifest: nothing aggregated yet.
  static SftManifest empty(std::string base_model);
  // Hash over base model and constituent hashes.
  std::string compute_hash() const;
  friend bool operator==(const SftManifest&, const SftManifest&) = default;
};

nlohmann::json to_json(const SftManifest& m);
// Throws ChecksumMismatch if the stored hash or totals are inconsistent.
SftManifest sft_manifest_from_json(const nlohmann::json& j);

// Adds iteration k = prior.upto_iteration + 1. `prior_records` are the records
// already covered by `prior`. Throws IterationGap or DuplicateQuestionConflict
// (a question id already covered with a different record).
SftManifest aggregate(const SftManifest& prior, const CotDataset& new_set,
                      const std::vector<CotRecord>& prior_records);

struct Lineage {
  std::string base_model;     // empty for the base model itself
  std::string manifest_hash;  // empty for the base model itself
  nlohmann::json trainer;     // trainer description
  friend bool operator==(const Lineage&, const Lineage&) = default;
};

struct ModelRef {
  std::string id;
  Lineage lineage;
  std::string created_at;  // ISO 8601 UTC
  std::size_t training_records = 0;

  bool is_base() const { return lineage.base_model.empty() && lineage.manifest_hash.empty(); }
  static ModelRef base(std::string id);
  friend bool operator==(const ModelRef&, const ModelRef&) = default;
};

nlohmann::json to_json(const ModelRef& m);
ModelRef model_ref_from_json(const nlohmann::json& j);

// Runs one fine-tuning job and returns the new model id.
class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual std::string train(const std::string& base_id, const std::filesystem::path& data,
                            const SftManifest& manifest) = 0;
  virtual nlohmann::json describe() const = 0;
};

// Returns "<base>+<manifest_hash>" without training anything.
class MockTrainer : public Trainer {
 public:
  std::string train(const std::string& base_id, const std::filesystem::path& data,
                    const SftManifest& manifest) override;
  nlohmann::json describe() const override { return {{"kind", "mock"}}; }
};

// Runs `<argv...> --base <id> --data <path> --out-id-file <path>`; exit 0
// and a non-empty id file mean success. Throws TrainerFailed or
// TrainerTimeout (the child is killed).
class CommandTrainer : public Trainer {
 public:
  CommandTrainer(std::vector<std::string> argv, std::chrono::milliseconds timeout);
  std::string train(const std::string& base_id, const std::filesystem::path& data,
                    const SftManifest& manifest) override;
  nlohmann::json describe() const override;

 private:
  std::vector<std::string> argv_;
  std::chrono::milliseconds timeout_;
};

// POST {endpoint}/train {base, data_url, manifest_hash} returning either
// {model_id} or {job}; jobs are polled with GET {endpoint}/train/{job} until
// {status: "succeeded", model_id} or {status: "failed", error}.
class HttpTrainer : public Trainer {
 public:
  HttpTrainer(std::string endpoint, std::chrono::milliseconds timeout,
              std::chrono::milliseconds poll_interval = std::chrono::milliseconds(2000),
              std::string api_key = {});
  std::string train(const std::string& base_id, const std::filesystem::path& data,
                    const SftManifest& manifest) override;
  nlohmann::json describe() const override;

 private:
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::chrono::milliseconds timeout_;
  std::chrono::milliseconds poll_interval_;
  std::string api_key_;
};

struct TrainerConfig {
  std::string kind = "mock";  // mock | command | http
  std::vector<std::string> command;
  std::string endpoint;
  std::string api_key_env_var;
  std::chrono::milliseconds timeout{6 * 3600 * 1000};
  std::chrono::milliseconds poll_interval{2000};
};

TrainerConfig trainer_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainerConfig& c);
std::unique_ptr<Trainer> make_trainer(const TrainerConfig& c);

// Fixed system instruction of exported transcripts.
std::string sft_system_instruction();

// Layout under the root:
//   cot/iter_<k>.jsonl + .stats.json   sealed CoT datasets
//   manifests/sft_<k>.json             cumulative manifests
//   exports/sft_<k>.jsonl + .meta.json chat-transcript exports
//   models/<id>.json                   trained model references
class SftStore {
 public:
  explicit SftStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path cot_dir() const { return root_ / "cot"; }

  // Sealed datasets are immutable: writing different content for an
  // existing iteration throws ChecksumMismatch; identical content is a no-op.
  void put_cot_dataset(const CotDataset& ds);
  bool has_cot_dataset(int iteration) const;
  CotDataset cot_dataset(int iteration) const;

  std::optional<SftManifest> manifest(int upto) const;
  int latest_manifest() const;  // 0 when none
  // Manifest k from manifest k-1 (or the empty one) and sealed dataset k.
  SftManifest aggregate(int k, const std::string& base_model);
  // All records covered by `m`, verifying each constituent's hash.
  std::vector<CotRecord> records(const SftManifest& m) const;

  // Chat-transcript JSONL, ordered by (iteration, question_id). Throws
  // MissingConstituent if a dataset or a referenced question is absent.
  std::filesystem::path export_sft(const SftManifest& m, const QaDataset& corpus);

  // Enforces that `base` is the base model. Trains on the export of `m`
  // and records the result under models/.
  ModelRef train(const ModelRef& base, const SftManifest& m, const QaDataset& corpus,
                 Trainer& trainer);
  std::optional<ModelRef> model_for(const SftManifest& m) const;
  std::vector<ModelRef> models() const;

 private:
  std::filesystem::path manifest_path(int k) const;
  std::filesystem::path model_path(const std::string& id) const;

  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::mutex train_mu_;
};

}  // namespace cotloop
