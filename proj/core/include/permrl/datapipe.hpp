// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "permrl/core.hpp"
#include "permrl/judge.hpp"
#include "permrl/policy.hpp"
#include "permrl/reward.hpp"
#include "permrl/rng.hpp"

namespace permrl {

// ---------------------------------------------------------------------------
// Rule-based filtering

struct RuleFilterConfig {
  std::optional<std::size_t> min_images;
  std::optional<std::size_t> max_images;
  std::optional<std::set<AnswerKind>> allowed_answer_kinds;
};

struct RuleFilterResult {
  std::vector<TaskInstance> kept;
  /// Rejections per predicate ("min_images", "max_images", "answer_kind"). An
  /// instance failing several predicates is counted under each of them.
  std::map<std::string, std::size_t> rejections;
  std::size_t rejected_total = 0;
};

/// Keeps exactly the instances satisfying every configured predicate, in order.
RuleFilterResult rule_filter(const std::vector<TaskInstance>& dataset, const RuleFilterConfig& cfg);

/// Open-ended to multiple-choice rephrasing stage. Synthetic data is generated
/// verifiable, so this passes instances through unchanged.
std::vector<TaskInstance> rephrase_passthrough(const std::vector<TaskInstance>& dataset);

// ---------------------------------------------------------------------------
// Rollout-based difficulty scoring

/// One accuracy bit per call. Exceptions mark the instance unscored.
using AccuracyScorer = std::function<bool(const TaskInstance&, Rng&)>;

/// Samples one response from `params` and checks its extracted answer.
AccuracyScorer make_policy_scorer(PolicyParams params, Vocabulary vocab, SampleOptions opts);

struct DifficultyEntry {
  std::string id;
  int correct = 0;
  int rollouts = 0;
  double score = 0.0;  // correct / rollouts
};

struct DifficultyReport {
  int m = 10;
  std::vector<DifficultyEntry> per_sample;  // dataset order
  std::vector<std::string> unscored;
  std::vector<std::size_t> histogram;  // ten bins over [0, 1], the last closed
  double mean_before = 0.0;
  std::optional<double> mean_after;
  std::optional<std::size_t> retained;

  const DifficultyEntry* find(const std::string& id) const;
  nlohmann::json to_json() const;
  std::string histogram_text() const;
};

/// S_bar(id) = correct/m. Each instance draws from its own stream derived from
/// `seed` and its index, so the result is independent of `num_workers`.
DifficultyReport difficulty_score(const std::vector<TaskInstance>& dataset, const AccuracyScorer& scorer, int m,
                                  std::uint64_t seed, int num_workers = 1);

struct KeepBand {
  double lo = 0.1;
  double hi = 0.8;
  void validate() const;
};

/// Keeps instances whose S_bar lies in the closed band, stamps difficulty_score,
/// and records mean_after/retained in `report`. Unscored instances are dropped.
/// An empty result is logged as a warning.
std::vector<TaskInstance> difficulty_filter(const std::vector<TaskInstance>& dataset, DifficultyReport& report,
                                            const KeepBand& band);

// ---------------------------------------------------------------------------
// Permutation augmentation

struct AugmentStats {
  std::size_t emitted = 0;
  std::size_t unmappable = 0;
  std::size_t judge_skipped = 0;
  std::size_t relabeled = 0;  // S = 0 variants
};

struct AugmentResult {
  std::vector<TaskInstance> variants;
  AugmentStats stats;
};

/// For each instance emits n_s permuted variants (x_hat, y_hat). Variants with
/// no admissible non-identity permutation are dropped and counted. When a judge
/// is supplied its S replaces the rule engine's in y_hat = S*y + (1-S)*Lambda;
/// instances the judge skips are dropped and counted.
AugmentResult augment_permute(const std::vector<TaskInstance>& dataset, int n_s, std::uint64_t seed,
                              JudgeClient* judge = nullptr);

}  // namespace permrl
