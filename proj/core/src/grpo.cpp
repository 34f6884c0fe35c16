// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "permrl/errors.hpp"

namespace permrl {
namespace {

struct Normalized {
  double mean = 0.0;
  double popstd = 0.0;
  std::vector<double> advantages;
};

Normalized normalize(std::span<const double> rewards, double eps_std) {
  if (rewards.empty()) throw StructuralError("cannot normalize an empty reward list");
  Normalized out;
  const auto n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  out.mean = sum / n;
  double sq = 0.0;
  for (double r : rewards) sq += (r - out.mean) * (r - out.mean);
  out.popstd = std::sqrt(sq / n);
  out.advantages.assign(rewards.size(), 0.0);
  if (out.popstd > eps_std) {
    for (std::size_t i = 0; i < rewards.size(); ++i) out.advantages[i] = (rewards[i] - out.mean) / out.popstd;
  }
  return out;
}

LossResult loss_over(const MergedBatch& batch, const PolicySnapshots& snapshots, const LossConfig& cfg) {
  const PolicyParams& current = snapshots.current;
  if (current.empty()) throw UsageError("loss requires a populated current policy snapshot");
  if (batch.advantages.size() != batch.groups.size()) throw UsageError("advantages have not been computed");

  const std::size_t total = batch.num_rollouts();
  LossResult out;
  out.gradient.assign(current.theta.size(), 0.0);
  out.report.per_rollout.reserve(total);
  std::vector<double> g(current.theta.size());
  double surrogate_sum = 0.0;
  double kl_sum = 0.0;

  for (std::size_t i = 0; i < batch.groups.size(); ++i) {
    const auto& group = batch.groups[i];
    const auto& adv = batch.advantages[i];
    if (adv.size() != group.responses.size()) throw StructuralError("advantage row does not match its group");
    for (std::size_t k = 0; k < group.responses.size(); ++k) {
      const Response& o = group.responses[k];
      const double lp = logprob_and_grad(current, group.prompt_tokens, o.tokens, g);
      const double ratio = std::exp(lp - o.logprob_old);
      const ClipTerm term = clipped_surrogate(ratio, adv[k], cfg.clip_eps);
      const double delta = o.logprob_ref - lp;
      const double kl = std::exp(delta) - delta - 1.0;
      surrogate_sum += term.value;
      kl_sum += kl;
      out.report.per_rollout.push_back({ratio, adv[k], term.clipped});

      // d(objective)/d(logprob): the selected min branch, then the KL term.
      const double surrogate_coef = term.clipped ? 0.0 : adv[k] * ratio;
      const double coef = surrogate_coef - cfg.beta * (1.0 - std::exp(delta));
      if (coef != 0.0) {
        for (std::size_t p = 0; p < g.size(); ++p) out.gradient[p] -= coef * g[p];
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(total);
  for (double& v : out.gradient) v *= inv_n;
  out.report.surrogate = surrogate_sum * inv_n;
  out.report.kl = kl_sum * inv_n;
  out.report.total = out.report.surrogate - cfg.beta * out.report.kl;
  return out;
}

}  // namespace

std::vector<double> group_advantages(std::span<const double> rewards, double eps_std) {
  return normalize(rewards, eps_std).advantages;
}

double merged_baseline(std::span<const RolloutGroup> groups) {
  if (groups.empty()) throw StructuralError("merged baseline needs at least one group");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& g : groups) {
    if (g.rewards.empty()) throw StructuralError("rollout group has no rewards");
    for (double r : g.rewards) sum += r;
    count += g.rewards.size();
  }
  return sum / static_cast<double>(count);
}

MergedBatch merged_advantages(std::vector<RolloutGroup> groups, double eps_std) {
  if (groups.empty()) throw StructuralError("merged advantages need at least one group");
  std::vector<double> flat;
  for (const auto& g : groups) {
    if (g.rewards.empty()) throw StructuralError("rollout group has no rewards");
    flat.insert(flat.end(), g.rewards.begin(), g.rewards.end());
  }
  Normalized norm = normalize(flat, eps_std);
  MergedBatch batch;
  batch.baseline = norm.mean;
  batch.popstd = norm.popstd;
  std::size_t offset = 0;
  for (const auto& g : groups) {
    const auto begin = norm.advantages.begin() + static_cast<std::ptrdiff_t>(offset);
    batch.advantages.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(g.rewards.size()));
    offset += g.rewards.size();
  }
  batch.groups = std::move(groups);
  return batch;
}

double kl_penalty(double logp_current, double logp_ref) {
  const double delta = logp_ref - logp_current;
  return std::exp(delta) - delta - 1.0;
}

ClipTerm clipped_surrogate(double ratio, double advantage, double clip_eps) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
  if (clipped < unclipped) return {clipped, true};
  return {unclipped, false};
}

double LossReport::fraction_clipped() const noexcept {
  if (per_rollout.empty()) return 0.0;
  const auto n = std::count_if(per_rollout.begin(), per_rollout.end(), [](const auto& d) { return d.clipped; });
  return static_cast<double>(n) / static_cast<double>(per_rollout.size());
}

LossResult perl_loss(const MergedBatch& batch, const PolicySnapshots& snapshots, const LossConfig& cfg) {
  return loss_over(batch, snapshots, cfg);
}

LossResult naive_grpo_loss(const RolloutGroup& group, const PolicySnapshots& snapshots, const LossConfig& cfg,
                           double eps_std) {
  if (group.rewards.empty()) throw StructuralError("rollout group has no rewards");
  Normalized norm = normalize(group.rewards, eps_std);
  MergedBatch batch;
  batch.baseline = norm.mean;
  batch.popstd = norm.popstd;
  batch.groups = {group};
  batch.advantages = {std::move(norm.advantages)};
  return loss_over(batch, snapshots, cfg);
}

}  // namespace permrl
