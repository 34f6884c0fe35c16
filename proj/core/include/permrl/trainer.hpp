// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "permrl/core.hpp"
#include "permrl/grpo.hpp"
#include "permrl/metrics.hpp"
#include "permrl/policy.hpp"
#include "permrl/reward.hpp"
#include "permrl/rng.hpp"

namespace permrl {

struct ScheduleState {
  std::int64_t t = 0;
  std::int64_t t_max = 1;
  double alpha_0 = 1.0;
};

/// alpha_0 * max(0, 1 - t/t_max). Throws ConfigError when t_max <= 0.
double schedule_alpha(const ScheduleState& state);

struct GroupInput {
  TaskInstance input;  // x_i, with y_i as its answer
  Permutation permutation;
};

struct BuildStats {
  std::size_t swaps_applied = 0;
  std::size_t single_image_passthrough = 0;
};

/// The original sample followed by n_s slots. Each slot holds, with probability
/// alpha_t, a uniformly drawn admissible non-identity permutation with the
/// answer mapped through y_hat, and otherwise an identity copy.
std::vector<GroupInput> build_groups(const TaskInstance& sample, int n_s, double alpha_t, Rng& rng,
                                     BuildStats* stats = nullptr);

/// As above with one coin shared by every slot (per-batch granularity).
std::vector<GroupInput> build_groups_with_coin(const TaskInstance& sample, int n_s, bool swap, Rng& rng,
                                               BuildStats* stats = nullptr);

struct StepResult {
  PolicyParams params;
  StepMetrics metrics;
  std::vector<MergedBatch> batches;
};

/// One iteration of the training loop: refresh pi_old, build groups, sample
/// n responses per group from pi_old, score, normalize, and apply
/// `inner_updates` gradient steps averaged over the batch. Deterministic in
/// (cfg.seed, state.t). Throws NumericalError (snapshots untouched) on a
/// non-finite loss or gradient.
StepResult train_step(const std::vector<TaskInstance>& batch, PolicySnapshots& snapshots, const TrainerConfig& cfg,
                      const ScheduleState& state, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Permutation gap

struct GapPair {
  TaskInstance original;
  TaskInstance permuted;  // answer already mapped to y_hat
};

/// Pairs each instance having a non-identity admissible permutation with one
/// permuted copy drawn from `seed`.
std::vector<GapPair> make_gap_eval_set(const std::vector<TaskInstance>& dataset, std::uint64_t seed);

/// Produces response text for an instance.
using Answerer = std::function<std::string(const TaskInstance&)>;

/// Greedy decoding with the toy policy.
Answerer greedy_answerer(const PolicyParams& params, const Vocabulary& vocab, int max_len);

/// accuracy(originals) - accuracy(permuted). Throws InputError on an empty set.
double permutation_gap(const Answerer& answer, const std::vector<GapPair>& eval_set);
double permutation_gap(const PolicyParams& params, const std::vector<GapPair>& eval_set, const Vocabulary& vocab,
                       int max_len);

// ---------------------------------------------------------------------------
// Run loop with metrics and checkpoints

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  /// Stop (after writing a checkpoint) once this many steps are complete.
  std::optional<std::int64_t> stop_after;
  /// Evaluated every `gap_interval` steps and at the end when non-empty.
  std::vector<GapPair> gap_eval_set;
  std::int64_t gap_interval = 0;
  std::function<void(const StepMetrics&)> on_step;
};

struct RunResult {
  PolicySnapshots snapshots;
  std::int64_t steps_completed = 0;
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
  std::vector<StepMetrics> metrics;  // steps executed by this call
};

/// Batches of `cfg.batch_size` drawn from a per-epoch shuffle derived from the seed.
std::vector<std::size_t> epoch_order(std::size_t dataset_size, std::uint64_t seed, std::int64_t epoch);
std::vector<TaskInstance> batch_for_step(const std::vector<TaskInstance>& dataset, const TrainerConfig& cfg,
                                         std::int64_t step);

/// Hash over the semantic config fields and the dataset records.
std::uint64_t run_hash(const TrainerConfig& cfg, const std::vector<TaskInstance>& dataset, const Vocabulary& vocab);

/// Writes <out>/metrics.jsonl, <out>/timing.jsonl and <out>/checkpoint.bin.
/// Resuming refuses checkpoints whose run hash differs and truncates the metrics
/// stream to the checkpointed step before appending.
RunResult run(const TrainerConfig& cfg, const std::vector<TaskInstance>& dataset, const RunOptions& opts);

// ---------------------------------------------------------------------------
// Ablation over n_s

enum class BudgetMode : std::uint8_t {
  FixedTotal,  // n = total_rollouts / (n_s + 1)
  FixedN,      // n unchanged
};

struct SweepPoint {
  int n_s = 0;
  int n = 0;
  double final_mean_reward = 0.0;
  std::optional<double> final_gap;
  std::vector<StepMetrics> metrics;
};

std::vector<SweepPoint> sweep_ns(const TrainerConfig& base, const std::vector<TaskInstance>& dataset,
                                 const std::vector<int>& ns_values, BudgetMode mode, int total_rollouts,
                                 const std::vector<GapPair>& gap_eval_set);

}  // namespace permrl
