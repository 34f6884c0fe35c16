// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/vocabulary.hpp"

#include <algorithm>
#include <cmath>

#include "permrl/errors.hpp"

namespace permrl {
namespace {

constexpr std::string_view kWordTexts[kNumWords] = {"which", "similar", "reference", "largest",
                                                     "count", "options", "reason"};
constexpr std::string_view kLabels = "ABCD";

}  // namespace

Vocabulary::Vocabulary(VocabularyConfig cfg) : cfg_(cfg) {
  if (cfg_.feature_dim < 1 || cfg_.num_buckets < 1) {
    throw ConfigError("vocabulary needs feature_dim >= 1 and num_buckets >= 1");
  }
  if (!(cfg_.feature_hi > cfg_.feature_lo)) throw ConfigError("vocabulary feature range is empty");

  texts_ = {"<eos>", "<think>", "</think>", "<image>"};
  boxed_base_ = static_cast<Token>(texts_.size());
  for (char c : kLabels) texts_.push_back(std::string("\\boxed{") + c + "}");
  for (int d = 0; d <= kMaxCount; ++d) texts_.push_back("\\boxed{" + std::to_string(d) + "}");
  word_base_ = static_cast<Token>(texts_.size());
  for (auto w : kWordTexts) texts_.emplace_back(w);
  attr_base_ = static_cast<Token>(texts_.size());
  for (int k = 0; k < cfg_.feature_dim; ++k) texts_.push_back("attr" + std::to_string(k));
  feature_base_ = static_cast<Token>(texts_.size());
  for (int k = 0; k < cfg_.feature_dim; ++k) {
    for (int b = 0; b < cfg_.num_buckets; ++b) {
      texts_.push_back("<f" + std::to_string(k) + "_" + std::to_string(b) + ">");
    }
  }
}

std::optional<Token> Vocabulary::boxed(std::string_view label) const {
  if (label.size() != 1) return std::nullopt;
  const char c = label[0];
  if (auto pos = kLabels.find(c); pos != std::string_view::npos) return boxed_base_ + static_cast<Token>(pos);
  if (c >= '0' && c <= '0' + kMaxCount) return boxed_base_ + kMaxChoices + (c - '0');
  return std::nullopt;
}

Token Vocabulary::word(Word w) const noexcept { return word_base_ + static_cast<Token>(w); }

Token Vocabulary::attribute(int dim) const {
  if (dim < 0 || dim >= cfg_.feature_dim) throw InputError("attribute dimension out of range");
  return attr_base_ + dim;
}

Token Vocabulary::feature(int dim, int bucket) const {
  if (dim < 0 || dim >= cfg_.feature_dim || bucket < 0 || bucket >= cfg_.num_buckets) {
    throw InputError("feature token out of range");
  }
  return feature_base_ + dim * cfg_.num_buckets + bucket;
}

int Vocabulary::bucket_of(double value) const noexcept {
  const double u = (value - cfg_.feature_lo) / (cfg_.feature_hi - cfg_.feature_lo);
  const int b = static_cast<int>(std::floor(u * cfg_.num_buckets));
  return std::clamp(b, 0, cfg_.num_buckets - 1);
}

bool Vocabulary::is_word(Token t) const noexcept { return t >= word_base_ && t < word_base_ + kNumWords; }

std::optional<int> Vocabulary::attribute_dim(Token t) const noexcept {
  if (t >= attr_base_ && t < attr_base_ + cfg_.feature_dim) return t - attr_base_;
  return std::nullopt;
}

std::string_view Vocabulary::text(Token t) const {
  if (!contains(t)) throw InputError("token " + std::to_string(t) + " is outside the vocabulary");
  return texts_[static_cast<std::size_t>(t)];
}

std::optional<Token> Vocabulary::lookup(std::string_view text) const {
  auto it = std::find(texts_.begin(), texts_.end(), text);
  if (it == texts_.end()) return std::nullopt;
  return static_cast<Token>(it - texts_.begin());
}

TokenSeq Vocabulary::quantize(std::span<const double> features) const {
  if (static_cast<int>(features.size()) != cfg_.feature_dim) {
    throw StructuralError("expected " + std::to_string(cfg_.feature_dim) + " features, got " +
                          std::to_string(features.size()));
  }
  TokenSeq block{image()};
  for (int k = 0; k < cfg_.feature_dim; ++k) block.push_back(feature(k, bucket_of(features[static_cast<std::size_t>(k)])));
  return block;
}

std::string Vocabulary::detokenize(std::span<const Token> tokens) const {
  std::string out;
  for (Token t : tokens) {
    if (t == eos()) break;
    if (!out.empty()) out += ' ';
    out += text(t);
  }
  return out;
}

}  // namespace permrl
