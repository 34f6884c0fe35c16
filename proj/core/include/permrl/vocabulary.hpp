// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace permrl {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

enum class Word : std::uint8_t { Which, Similar, Reference, Largest, Count, Options, Reason };
inline constexpr int kNumWords = 7;
inline constexpr int kMaxChoices = 4;  // labels A..D
inline constexpr int kMaxCount = 4;    // digits 0..4

struct VocabularyConfig {
  int feature_dim = 3;
  int num_buckets = 3;
  double feature_lo = -1.0;
  double feature_hi = 1.0;
};

/// The synthetic token space shared by tasks, tokenizer, policy and reward.
///
/// Layout: eos, <think>, </think>, <image>, \boxed{A}..\boxed{D},
/// \boxed{0}..\boxed{4}, the fixed words, one attribute token per feature
/// dimension, then feature_dim * num_buckets feature-bucket tokens. The default
/// configuration yields 32 tokens.
class Vocabulary {
 public:
  explicit Vocabulary(VocabularyConfig cfg = {});

  const VocabularyConfig& config() const noexcept { return cfg_; }
  int size() const noexcept { return static_cast<int>(texts_.size()); }

  static constexpr Token eos() noexcept { return 0; }
  static constexpr Token think_open() noexcept { return 1; }
  static constexpr Token think_close() noexcept { return 2; }
  static constexpr Token image() noexcept { return 3; }

  /// \boxed{label} token for a choice label "A".."D" or a digit "0".."4".
  std::optional<Token> boxed(std::string_view label) const;
  Token word(Word w) const noexcept;
  Token attribute(int dim) const;
  Token feature(int dim, int bucket) const;
  int bucket_of(double value) const noexcept;

  bool is_word(Token t) const noexcept;
  /// Dimension for an attribute token, or nullopt.
  std::optional<int> attribute_dim(Token t) const noexcept;

  bool contains(Token t) const noexcept { return t >= 0 && t < size(); }
  std::string_view text(Token t) const;
  std::optional<Token> lookup(std::string_view text) const;

  /// Image token block: the <image> marker followed by one bucket token per
  /// feature dimension. Deterministic in `features`.
  TokenSeq quantize(std::span<const double> features) const;

  /// Space-joined token texts, stopping at (and omitting) eos.
  std::string detokenize(std::span<const Token> tokens) const;

 private:
  VocabularyConfig cfg_;
  std::vector<std::string> texts_;
  Token boxed_base_ = 0;
  Token word_base_ = 0;
  Token attr_base_ = 0;
  Token feature_base_ = 0;
};

}  // namespace permrl
