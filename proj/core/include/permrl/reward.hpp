// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "permrl/core.hpp"

namespace permrl {

struct RewardWeights {
  double w_acc = 1.0;
  double w_fmt = 0.1;
  RewardMode mode = RewardMode::Additive;
};

struct RewardBreakdown {
  bool format_ok = false;
  bool accuracy_ok = false;
  std::optional<Answer> extracted_answer;
  double total = 0.0;
};

/// Exactly one <think>...</think> pair followed by exactly one \boxed{...},
/// with only whitespace before, between and after.
bool check_format(std::string_view text);

/// Contents of every \boxed{...} in order of appearance.
std::vector<std::string> boxed_contents(std::string_view text);

/// Canonical form of an answer string: trimmed, upper-cased, and numerals
/// normalized ("02" and "2.0" become "2").
std::string canonicalize_answer(std::string_view raw);

/// The boxed answer (the last one when several are present), canonicalized,
/// when it belongs to `answer_space`.
std::optional<Answer> extract_answer(std::string_view text, std::span<const std::string> answer_space);

/// total = w_acc*[extracted == y] + w_fmt*[format]. In gated mode accuracy only
/// counts when the format is valid. Reads only the response text and y.
RewardBreakdown score(const TaskInstance& x, const Response& o, const Answer& y, const RewardWeights& weights);

}  // namespace permrl
