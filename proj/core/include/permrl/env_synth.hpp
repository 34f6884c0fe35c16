// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "permrl/core.hpp"
#include "permrl/rng.hpp"

namespace permrl {

enum class TemplateKind : std::uint8_t { ReferenceComparison, AttributeExtremum, CountingInvariant };

std::string to_string(TemplateKind k);
TemplateKind template_kind_from_string(const std::string& s);

/// Task shapes:
///  - ReferenceComparison: "which is most similar to <image_1>? options <image_2>..."
///    by cosine similarity of features; choices reference positions 2..n.
///  - AttributeExtremum: "which has the largest attribute k?" over every image.
///  - CountingInvariant: "how many images have attribute k > 0?"; order invariant.
struct TaskTemplate {
  TemplateKind kind = TemplateKind::ReferenceComparison;
  int num_images = 3;

  int num_choices() const noexcept;
  OrderSensitivity order_sensitivity() const noexcept;
  /// Throws ConfigError for shapes the vocabulary cannot express.
  void validate() const;
};

struct WeightedTemplate {
  TaskTemplate shape;
  double weight = 1.0;
};

struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::size_t dataset_size = 256;
  std::vector<WeightedTemplate> templates = {
      {{TemplateKind::ReferenceComparison, 3}, 1.0},
      {{TemplateKind::AttributeExtremum, 3}, 1.0},
      {{TemplateKind::CountingInvariant, 3}, 1.0},
  };
  /// Minimum separation between the correct answer and the runner-up: a cosine
  /// gap, an attribute gap, or the distance of every attribute from the
  /// counting threshold.
  double margin = 0.2;
  int max_retries = 1000;
  /// When set, the probability that a choice task's correct answer is label A.
  /// Otherwise the correct label is uniform over the choices.
  std::optional<double> answer_a_probability;
  VocabularyConfig vocab;

  void validate() const;
};

/// Deterministic in `cfg.seed`. Throws GenerationError naming the template when
/// the margin cannot be met within `max_retries` draws.
std::vector<TaskInstance> generate_dataset(const GeneratorConfig& cfg);

/// Generates one instance of `shape` from `rng`.
TaskInstance generate_instance(const TaskTemplate& shape, const GeneratorConfig& cfg, const Vocabulary& vocab,
                               Rng& rng, const std::string& id);

/// Template kind recovered from the query tokens.
TemplateKind template_kind(const TaskInstance& x, const Vocabulary& vocab);

/// Ground truth computed from the features and query of `x` alone.
Answer oracle_answer(const TaskInstance& x, const Vocabulary& vocab);

/// Positions that the answer space refers to (empty for order-invariant tasks).
std::vector<std::size_t> answer_referenced_positions(const TaskInstance& x);

/// S in {0,1}: 1 iff the task is order invariant or sigma fixes every position
/// that a choice refers to.
int semantic_indicator(const TaskInstance& x, const Permutation& sigma);

/// Lambda(y, sigma): the label whose choice position holds the originally correct
/// image after sigma. Throws UnmappableAnswerError when no rule applies (choices
/// do not reference images, the correct image leaves the choice positions, or an
/// image that no choice refers to is moved).
Answer relabel_choices(const Answer& y, const Permutation& sigma, const TaskInstance& x);

/// y_hat = S*y + (1-S)*Lambda(y, sigma). Lambda relabels image-valued choices so
/// that the returned label refers to the position now holding the originally
/// correct image. Throws UnmappableAnswerError when no rule applies (choices do
/// not reference images, the correct image leaves the choice positions, or an
/// image that no choice refers to is moved).
Answer transform_answer(const Answer& y, const Permutation& sigma, const TaskInstance& x);

/// True when transform_answer succeeds for sigma.
bool is_admissible(const TaskInstance& x, const Permutation& sigma);

/// Uniform draw among non-identity admissible permutations; nullopt when none exists.
std::optional<Permutation> sample_admissible_permutation(const TaskInstance& x, Rng& rng);

/// Query tokens with each <image> placeholder replaced by its image's token block.
TokenSeq tokenize(const TaskInstance& x);

}  // namespace permrl
