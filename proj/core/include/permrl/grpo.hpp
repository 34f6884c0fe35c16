// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "permrl/core.hpp"
#include "permrl/policy.hpp"

namespace permrl {

/// (r_i - mean) / popstd over one group; all zeros when popstd <= eps_std.
std::vector<double> group_advantages(std::span<const double> rewards, double eps_std);

/// Grand mean of every reward over every group.
double merged_baseline(std::span<const RolloutGroup> groups);

/// Normalizes every reward of every group against the grand mean and grand
/// population standard deviation. Takes ownership of the groups.
MergedBatch merged_advantages(std::vector<RolloutGroup> groups, double eps_std);

/// Per-sequence k3 estimator exp(d) - d - 1 with d = logp_ref - logp_current.
double kl_penalty(double logp_current, double logp_ref);

struct ClipTerm {
  double value = 0.0;
  bool clipped = false;  // the clipped branch was selected and changed the product
};

/// min(ratio*A, clip(ratio, 1-eps, 1+eps)*A).
ClipTerm clipped_surrogate(double ratio, double advantage, double clip_eps);

struct RolloutDiagnostic {
  double ratio = 1.0;
  double advantage = 0.0;
  bool clipped = false;

  friend bool operator==(const RolloutDiagnostic&, const RolloutDiagnostic&) = default;
};

/// Objective values as written: total = surrogate - beta * kl, each averaged
/// over all rollouts.
struct LossReport {
  double surrogate = 0.0;
  double kl = 0.0;
  double total = 0.0;
  std::vector<RolloutDiagnostic> per_rollout;

  double fraction_clipped() const noexcept;
};

struct LossConfig {
  double clip_eps = 0.2;
  double beta = 0.01;
};

struct LossResult {
  LossReport report;
  /// Gradient of the minimized loss, i.e. of -report.total.
  std::vector<double> gradient;
};

/// Permutation-GRPO loss. Each rollout's ratio is evaluated on its own group's
/// prompt; the clip and min pass gradient through the selected branch only.
/// Throws UsageError when `snapshots.current` is empty.
LossResult perl_loss(const MergedBatch& batch, const PolicySnapshots& snapshots, const LossConfig& cfg);

/// Single-group GRPO with per-group advantages.
LossResult naive_grpo_loss(const RolloutGroup& group, const PolicySnapshots& snapshots, const LossConfig& cfg,
                           double eps_std);

}  // namespace permrl
