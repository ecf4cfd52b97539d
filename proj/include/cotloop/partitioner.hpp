// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotloop/corpus_model.hpp"

namespace cotloop {

enum class PartitionStrategy {
  round_robin,
  stratified_by_subject,
  stratified_by_year,
  stratified_by_unit
};

std::string_view to_string(PartitionStrategy s);
PartitionStrategy partition_strategy_from_string(std::string_view s);

struct PartitionPlan {
  int k_count = 5;
  PartitionStrategy strategy = PartitionStrategy::stratified_by_subject;
  std::uint64_t seed = 0;
  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

struct Partition {
  PartitionPlan plan;
  std::string dataset_hash;
  std::vector<std::vector<std::string>> subsets;  // question ids, K lists
  friend bool operator==(const Partition&, const Partition&) = default;
};

// Splits the dataset into plan.k_count disjoint subsets covering every id.
// Items are shuffled with the seeded RNG (within each stratum for the
// stratified strategies) and dealt round-robin with one dealer position
// carried across strata, so subset sizes differ by at most one and each
// stratum lands floor or ceil of count/K items in every subset.
// Throws KExceedsDatasetSize when k_count > |dataset|.
Partition partition(const QaDataset& dataset, const PartitionPlan& plan);

// Stratum label of a question under the plan's strategy ("*" for round_robin).
std::string stratum_of(const Question& q, PartitionStrategy strategy);

nlohmann::json to_json(const PartitionPlan& p);
PartitionPlan partition_plan_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Partition& p);
Partition partition_from_json(const nlohmann::json& j);

}  // namespace cotloop
