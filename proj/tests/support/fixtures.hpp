// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "permrl/core.hpp"
#include "permrl/env_synth.hpp"
#include "permrl/grpo.hpp"
#include "permrl/policy.hpp"
#include "permrl/rng.hpp"
#include "permrl/vocabulary.hpp"

namespace permrl::testing {

/// A small architecture with large output weights so that distributions are far from uniform.
inline ArchConfig small_arch() {
  ArchConfig a;
  a.embed_dim = 4;
  a.hidden_dim = 5;
  a.init_scale = 0.7;
  return a;
}

inline TokenSeq random_response(Rng& rng, int vocab_size, int max_len) {
  const auto len = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_len)));
  TokenSeq o;
  for (int i = 0; i < len; ++i) {
    o.push_back(static_cast<Token>(1 + uniform_index(rng, static_cast<std::uint64_t>(vocab_size - 1))));
  }
  if (bernoulli(rng, 0.5)) o.back() = Vocabulary::eos();
  return o;
}

inline TaskInstance random_instance(Rng& rng, const Vocabulary& vocab, std::uint64_t tag) {
  static const TaskTemplate shapes[] = {
      {TemplateKind::ReferenceComparison, 3},
      {TemplateKind::AttributeExtremum, 2},
      {TemplateKind::CountingInvariant, 3},
  };
  GeneratorConfig cfg;
  return generate_instance(shapes[tag % 3], cfg, vocab, rng, "fx" + std::to_string(tag));
}

/// Ratios drawn away from the clip kinks at 1 +- 0.2.
inline double kink_free_ratio(Rng& rng) {
  static const double choices[] = {0.5, 0.9, 1.1, 1.5};
  return choices[uniform_index(rng, 4)];
}

struct LossFixture {
  PolicySnapshots snapshots;
  std::vector<RolloutGroup> groups;
};

/// Groups of `n` rollouts over random prompts. logprob_old is set so that the
/// ratio under `snapshots.current` is kink free; logprob_ref comes from a
/// different initialization.
inline LossFixture make_loss_fixture(std::uint64_t seed, int num_groups, int n, const ArchConfig& arch) {
  const Vocabulary vocab;
  Rng rng = make_stream(seed, {0x66697874});
  LossFixture f;
  PolicyParams current = init_params(seed, arch);
  const PolicyParams reference = init_params(seed + 7919, arch);
  f.snapshots = {current, current, reference};
  const TaskInstance base = random_instance(rng, vocab, seed);
  for (int g = 0; g < num_groups; ++g) {
    RolloutGroup group;
    group.input = base;
    group.permutation = Permutation::identity(base.images.size());
    if (g > 0) {
      if (auto sigma = sample_admissible_permutation(base, rng)) {
        group.input = apply_permutation(base, *sigma);
        group.permutation = *sigma;
      }
    }
    group.prompt_tokens = tokenize(group.input);
    for (int k = 0; k < n; ++k) {
      Response r;
      r.tokens = random_response(rng, arch.vocab_size, 5);
      const double lp = logprob(current, group.prompt_tokens, r.tokens);
      r.logprob_old = lp - std::log(kink_free_ratio(rng));
      r.logprob_ref = logprob(reference, group.prompt_tokens, r.tokens);
      group.responses.push_back(r);
      group.rewards.push_back(std::round(uniform01(rng) * 11.0) / 10.0);
    }
    f.groups.push_back(std::move(group));
  }
  return f;
}

/// Elementwise max of |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace permrl::testing
