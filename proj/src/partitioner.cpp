// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#include "cotloop/partitioner.hpp"

#include <algorithm>
#include <map>

#include "cotloop/errors.hpp"
#include "cotloop/rng.hpp"
#include "cotloop/text.hpp"

namespace cotloop {

std::string_view to_string(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::round_robin:
      return "round_robin";
    case PartitionStrategy::stratified_by_subject:
      return "stratified_by_subject";
    case PartitionStrategy::stratified_by_year:
      return "stratified_by_year";
    case PartitionStrategy::stratified_by_unit:
      return "stratified_by_unit";
  }
  return "round_robin";
}

PartitionStrategy partition_strategy_from_string(std::string_view s) {
  for (auto v : {PartitionStrategy::round_robin, PartitionStrategy::stratified_by_subject,
                 PartitionStrategy::stratified_by_year, PartitionStrategy::stratified_by_unit}) {
    if (to_string(v) == s) return v;
  }
  throw Error(Errc::ConfigError, "unknown partition strategy '" + std::string(s) + "'");
}

std::string stratum_of(const Question& q, PartitionStrategy strategy) {
  switch (strategy) {
    case PartitionStrategy::round_robin:
      return "*";
    case PartitionStrategy::stratified_by_subject:
      return std::string(to_string(q.subject));
    case PartitionStrategy::stratified_by_year:
      return q.year ? std::to_string(*q.year) : "none";
    case PartitionStrategy::stratified_by_unit:
      return q.unit ? std::to_string(*q.unit) : "none";
  }
  return "*";
}

Partition partition(const QaDataset& dataset, const PartitionPlan& plan) {
  if (plan.k_count < 1) throw Error(Errc::ConfigError, "k_count must be >= 1");
  if (static_cast<std::size_t>(plan.k_count) > dataset.items.size()) {
    throw Error(Errc::KExceedsDatasetSize, "K=" + std::to_string(plan.k_count) +
                                               " exceeds dataset size " +
                                               std::to_string(dataset.items.size()));
  }
  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& q : dataset.items) strata[stratum_of(q, plan.strategy)].push_back(q.id);

  Partition out;
  out.plan = plan;
  out.dataset_hash = dataset.manifest_hash;
  out.subsets.resize(static_cast<std::size_t>(plan.k_count));
  std::size_t dealer = 0;
  for (auto& [label, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    SplitMix64 rng(plan.seed ^ text::hash64(label));
    fisher_yates(ids, rng);
    for (auto& id : ids) {
      out.subsets[dealer].push_back(std::move(id));
      dealer = (dealer + 1) % out.subsets.size();
    }
  }
  return out;
}

nlohmann::json to_json(const PartitionPlan& p) {
  return {{"k_count", p.k_count}, {"strategy", to_string(p.strategy)}, {"seed", p.seed}};
}

PartitionPlan partition_plan_from_json(const nlohmann::json& j) {
  PartitionPlan p;
  p.k_count = j.value("k_count", p.k_count);
  if (j.contains("strategy")) {
    p.strategy = partition_strategy_from_string(j["strategy"].get<std::string>());
  }
  p.seed = j.value("seed", p.seed);
  if (p.k_count < 1) throw Error(Errc::ConfigError, "k_count must be >= 1");
  return p;
}

nlohmann::json to_json(const Partition& p) {
  return {{"plan", to_json(p.plan)}, {"dataset_hash", p.dataset_hash}, {"subsets", p.subsets}};
}

Partition partition_from_json(const nlohmann::json& j) {
  try {
    Partition p;
    p.plan = partition_plan_from_json(j.at("plan"));
    p.dataset_hash = j.value("dataset_hash", std::string{});
    p.subsets = j.at("subsets").get<std::vector<std::vector<std::string>>>();
    if (static_cast<int>(p.subsets.size()) != p.plan.k_count) {
      throw Error(Errc::ParseError, "partition has the wrong number of subsets");
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("malformed partition: ") + e.what());
  }
}

}  // namespace cotloop
