// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "permrl/permutation.hpp"
#include "permrl/vocabulary.hpp"

namespace permrl {

enum class OrderSensitivity : std::uint8_t { OrderInvariant, PositionReferencing };
enum class AnswerKind : std::uint8_t { ChoiceLabel, ShortText };

struct ImageDescriptor {
  std::string image_id;  // survives permutation
  std::vector<double> features;
  TokenSeq token_block;  // Vocabulary::quantize(features)

  friend bool operator==(const ImageDescriptor&, const ImageDescriptor&) = default;
};

struct Answer {
  AnswerKind kind = AnswerKind::ChoiceLabel;
  std::string value;
  /// Choice label -> zero-based image position it refers to. Empty unless the
  /// choices denote images.
  std::map<std::string, std::size_t> choice_image_refs;

  friend bool operator==(const Answer&, const Answer&) = default;
};

/// One interleaved sample: the query with one <image> placeholder per image,
/// the ordered images, and the verifiable answer.
struct TaskInstance {
  std::string id;
  TokenSeq query_tokens;
  std::vector<ImageDescriptor> images;
  Answer answer;
  std::vector<std::string> answer_space;
  OrderSensitivity order_sensitivity = OrderSensitivity::OrderInvariant;
  std::optional<double> difficulty_score;
  /// Record fields this library does not interpret; written back unchanged.
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

/// Throws InputError when placeholder count, answer space or difficulty score
/// are inconsistent. `scoring_rollouts` > 0 also checks the 1/m granularity.
void validate(const TaskInstance& x, int scoring_rollouts = 0);

/// Id without any permutation annotation.
std::string base_id(const std::string& id);
/// Net permutation recorded in an id (identity when unannotated).
Permutation id_permutation(const std::string& id, std::size_t num_images);

/// Reorder images so position j holds original image sigma[j]. Query tokens and
/// the answer are untouched; the id records the net permutation from the base
/// instance, so sigma followed by its inverse restores the original id.
TaskInstance apply_permutation(const TaskInstance& x, const Permutation& sigma);

struct Response {
  TokenSeq tokens;
  std::string text;
  double logprob_old = 0.0;
  double logprob_ref = 0.0;
};

struct RolloutGroup {
  TaskInstance input;  // x_i with answer y_i
  TokenSeq prompt_tokens;  // tokenize(input)
  Permutation permutation;
  std::vector<Response> responses;
  std::vector<double> rewards;
};

/// Throws StructuralError if responses/rewards lengths differ or are empty, or
/// if a reward lies outside [0, r_max].
void validate(const RolloutGroup& g, double r_max);

/// All rollout groups for one original sample with the shared baseline and the
/// advantages normalized over every rollout of every group.
struct MergedBatch {
  std::vector<RolloutGroup> groups;  // groups[0] is the unpermuted original
  double baseline = 0.0;
  double popstd = 0.0;
  std::vector<std::vector<double>> advantages;  // [group][rollout]

  std::size_t num_rollouts() const noexcept;
};

enum class RewardMode : std::uint8_t { Additive, Gated };
enum class Algorithm : std::uint8_t { PeRL, NaiveGrpo };
enum class SwapGranularity : std::uint8_t { PerSample, PerBatch };

/// Toy policy architecture.
struct ArchConfig {
  int vocab_size = 32;
  int embed_dim = 8;
  int hidden_dim = 16;
  int num_segments = 4;  // text segment + up to three image slots; extra images share the last
  Token segment_marker = Vocabulary::image();  // -1 disables segmentation
  Token bos = Vocabulary::eos();
  double init_scale = 0.02;  // std of the output projection; 0 gives uniform distributions
  double embed_scale = 1.0;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct TrainerConfig {
  Algorithm algorithm = Algorithm::PeRL;
  int n_s = 1;
  int n = 6;
  double beta = 0.01;
  double clip_eps = 0.2;
  double alpha_0 = 1.0;
  std::int64_t t_max = 200;
  int epochs = 0;  // > 0 overrides t_max with epochs * ceil(N / batch_size)
  double learning_rate = 1e-2;  // toy scale; 1e-6 at 7B scale
  int batch_size = 16;
  std::uint64_t seed = 0;
  double w_acc = 1.0;
  double w_fmt = 0.1;
  RewardMode reward_mode = RewardMode::Additive;
  double epsilon_std = 1e-8;
  SwapGranularity swap_granularity = SwapGranularity::PerSample;
  int inner_updates = 1;
  int max_response_len = 6;
  double temperature = 1.0;
  ArchConfig arch;
  VocabularyConfig vocab;
  bool allow_unequal_groups = false;

  // Runtime-only knobs, excluded from the config hash.
  int num_workers = 1;
  std::int64_t checkpoint_interval = 0;  // 0: only final checkpoint

  double r_max() const noexcept { return w_acc + w_fmt; }
  /// Throws ConfigError on any violated constraint.
  void validate() const;
  /// Steps for a dataset of `dataset_size` items (epochs mode or t_max).
  std::int64_t total_steps(std::size_t dataset_size) const;
};

nlohmann::json to_json(const TrainerConfig& cfg);
/// Starts from `base` and overrides every field present in `j`.
TrainerConfig trainer_config_from_json(const nlohmann::json& j, TrainerConfig base = {});

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace permrl
