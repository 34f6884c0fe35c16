// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "permrl/core.hpp"

namespace permrl {

inline constexpr int kAdvantageBins = 12;
inline constexpr double kAdvantageRange = 3.0;  // bins span [-3, 3]; outliers go to the edge bins

struct AdvantageSummary {
  std::size_t count = 0;
  double mean_abs = 0.0;
  double fraction_near_zero = 0.0;  // |A| < 0.1
  std::array<std::size_t, kAdvantageBins> histogram{};

  void add(std::span<const double> advantages);
  void finalize();

 private:
  double sum_abs_ = 0.0;
  std::size_t near_zero_ = 0;
};

/// Fraction of advantages with |A| < threshold.
double fraction_near_zero(std::span<const double> advantages, double threshold = 0.1);

struct StepMetrics {
  std::int64_t step = 0;
  double alpha = 0.0;
  double mean_reward_original = 0.0;
  std::optional<double> mean_reward_permuted;  // absent when no permuted group was built
  double mean_accuracy_original = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double fraction_clipped = 0.0;
  double grad_norm = 0.0;
  AdvantageSummary advantages;
  std::optional<double> diversity;
  std::optional<double> permutation_gap;
  std::size_t swaps_applied = 0;
  std::size_t single_image_passthrough = 0;
  double wall_time_seconds = 0.0;  // written to the timing sidecar, not the metrics stream

  /// Deterministic record for the metrics stream (no wall time).
  nlohmann::json to_json() const;
  static StepMetrics from_json(const nlohmann::json& j);
  /// Throws NumericalError if any reported scalar is non-finite.
  void check_finite() const;
};

/// 1 - mean pairwise Jaccard similarity of token-bigram sets; nullopt for fewer
/// than two responses. Two responses without bigrams count as identical.
std::optional<double> diversity_proxy(std::span<const Response> responses);
std::optional<double> diversity_proxy(std::span<const TokenSeq> responses);

}  // namespace permrl
