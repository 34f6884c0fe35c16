// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "permrl/errors.hpp"

namespace permrl {
namespace {

using Bigrams = std::set<std::pair<Token, Token>>;

Bigrams bigrams_of(const TokenSeq& tokens) {
  Bigrams out;
  for (std::size_t i = 1; i < tokens.size(); ++i) out.emplace(tokens[i - 1], tokens[i]);
  return out;
}

double jaccard(const Bigrams& a, const Bigrams& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

void AdvantageSummary::add(std::span<const double> advantages) {
  for (double a : advantages) {
    ++count;
    sum_abs_ += std::abs(a);
    if (std::abs(a) < 0.1) ++near_zero_;
    const double u = (a + kAdvantageRange) / (2.0 * kAdvantageRange);
    const int bin = std::clamp(static_cast<int>(std::floor(u * kAdvantageBins)), 0, kAdvantageBins - 1);
    ++histogram[static_cast<std::size_t>(bin)];
  }
}

void AdvantageSummary::finalize() {
  if (count == 0) return;
  mean_abs = sum_abs_ / static_cast<double>(count);
  fraction_near_zero = static_cast<double>(near_zero_) / static_cast<double>(count);
}

double fraction_near_zero(std::span<const double> advantages, double threshold) {
  if (advantages.empty()) return 0.0;
  const auto n = std::count_if(advantages.begin(), advantages.end(),
                               [threshold](double a) { return std::abs(a) < threshold; });
  return static_cast<double>(n) / static_cast<double>(advantages.size());
}

nlohmann::json StepMetrics::to_json() const {
  return {
      {"step", step},
      {"alpha", alpha},
      {"mean_reward_original", mean_reward_original},
      {"mean_reward_permuted", optional_json(mean_reward_permuted)},
      {"mean_accuracy_original", mean_accuracy_original},
      {"surrogate", surrogate},
      {"kl", kl},
      {"total", total},
      {"fraction_clipped", fraction_clipped},
      {"grad_norm", grad_norm},
      {"advantage",
       {{"count", advantages.count},
        {"mean_abs", advantages.mean_abs},
        {"fraction_near_zero", advantages.fraction_near_zero},
        {"histogram", advantages.histogram}}},
      {"diversity", optional_json(diversity)},
      {"permutation_gap", optional_json(permutation_gap)},
      {"swaps_applied", swaps_applied},
      {"single_image_passthrough", single_image_passthrough},
  };
}

StepMetrics StepMetrics::from_json(const nlohmann::json& j) {
  StepMetrics m;
  m.step = j.at("step").get<std::int64_t>();
  m.alpha = j.at("alpha").get<double>();
  m.mean_reward_original = j.at("mean_reward_original").get<double>();
  m.mean_reward_permuted = optional_from(j, "mean_reward_permuted");
  m.mean_accuracy_original = j.value("mean_accuracy_original", 0.0);
  m.surrogate = j.at("surrogate").get<double>();
  m.kl = j.at("kl").get<double>();
  m.total = j.at("total").get<double>();
  m.fraction_clipped = j.at("fraction_clipped").get<double>();
  m.grad_norm = j.value("grad_norm", 0.0);
  if (auto it = j.find("advantage"); it != j.end()) {
    m.advantages.count = it->value("count", std::size_t{0});
    m.advantages.mean_abs = it->value("mean_abs", 0.0);
    m.advantages.fraction_near_zero = it->value("fraction_near_zero", 0.0);
    if (auto h = it->find("histogram"); h != it->end()) {
      m.advantages.histogram = h->get<std::array<std::size_t, kAdvantageBins>>();
    }
  }
  m.diversity = optional_from(j, "diversity");
  m.permutation_gap = optional_from(j, "permutation_gap");
  m.swaps_applied = j.value("swaps_applied", std::size_t{0});
  m.single_image_passthrough = j.value("single_image_passthrough", std::size_t{0});
  return m;
}

void StepMetrics::check_finite() const {
  const double scalars[] = {alpha, mean_reward_original, mean_accuracy_original, surrogate, kl,
                            total, fraction_clipped,     grad_norm,              advantages.mean_abs};
  for (double v : scalars) {
    if (!std::isfinite(v)) throw NumericalError("non-finite metric at step " + std::to_string(step));
  }
  for (const auto& o : {mean_reward_permuted, diversity, permutation_gap}) {
    if (o && !std::isfinite(*o)) throw NumericalError("non-finite metric at step " + std::to_string(step));
  }
}

std::optional<double> diversity_proxy(std::span<const TokenSeq> responses) {
  if (responses.size() < 2) return std::nullopt;
  std::vector<Bigrams> sets;
  sets.reserve(responses.size());
  for (const auto& r : responses) sets.push_back(bigrams_of(r));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      sum += jaccard(sets[i], sets[j]);
      ++pairs;
    }
  }
  return 1.0 - sum / static_cast<double>(pairs);
}

std::optional<double> diversity_proxy(std::span<const Response> responses) {
  std::vector<TokenSeq> tokens;
  tokens.reserve(responses.size());
  for (const auto& r : responses) tokens.push_back(r.tokens);
  return diversity_proxy(std::span<const TokenSeq>(tokens));
}

}  // namespace permrl
