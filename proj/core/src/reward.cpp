// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/reward.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <regex>

namespace permrl {
namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kBoxOpen = "\\boxed{";

std::size_t count_of(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

/// Position one past the brace closing the box that opens at `open`, or npos.
std::size_t box_end(std::string_view text, std::size_t open) {
  int depth = 1;
  for (std::size_t i = open + kBoxOpen.size(); i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

}  // namespace

bool check_format(std::string_view text) {
  if (count_of(text, kThinkOpen) != 1 || count_of(text, kThinkClose) != 1 || count_of(text, kBoxOpen) != 1) {
    return false;
  }
  std::string_view rest = trim(text);
  if (!rest.starts_with(kThinkOpen)) return false;
  const auto close = rest.find(kThinkClose);
  rest = trim(rest.substr(close + kThinkClose.size()));
  if (!rest.starts_with(kBoxOpen)) return false;
  const auto end = box_end(rest, 0);
  if (end == std::string_view::npos) return false;
  return trim(rest.substr(end)).empty();
}

std::vector<std::string> boxed_contents(std::string_view text) {
  std::vector<std::string> out;
  for (auto pos = text.find(kBoxOpen); pos != std::string_view::npos; pos = text.find(kBoxOpen, pos + 1)) {
    const auto end = box_end(text, pos);
    if (end == std::string_view::npos) break;
    const auto begin = pos + kBoxOpen.size();
    out.emplace_back(text.substr(begin, end - 1 - begin));
  }
  return out;
}

std::string canonicalize_answer(std::string_view raw) {
  const std::string_view s = trim(raw);
  static const std::regex kNumber(R"([+-]?(\d+(\.\d*)?|\.\d+))");
  const std::string str(s);
  if (std::regex_match(str, kNumber)) {
    const double v = std::stod(str);
    if (v == std::floor(v) && std::abs(v) < 1e15) {
      return std::to_string(static_cast<long long>(v));
    }
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  }
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return out;
}

std::optional<Answer> extract_answer(std::string_view text, std::span<const std::string> answer_space) {
  const auto boxes = boxed_contents(text);
  if (boxes.empty()) return std::nullopt;
  const std::string candidate = canonicalize_answer(boxes.back());
  for (const auto& legal : answer_space) {
    if (canonicalize_answer(legal) != candidate) continue;
    Answer a;
    const bool is_label = legal.size() == 1 && std::isupper(static_cast<unsigned char>(legal[0]));
    a.kind = is_label ? AnswerKind::ChoiceLabel : AnswerKind::ShortText;
    a.value = legal;
    return a;
  }
  return std::nullopt;
}

RewardBreakdown score(const TaskInstance& x, const Response& o, const Answer& y, const RewardWeights& w) {
  RewardBreakdown r;
  r.format_ok = check_format(o.text);
  r.extracted_answer = extract_answer(o.text, x.answer_space);
  r.accuracy_ok =
      r.extracted_answer && canonicalize_answer(r.extracted_answer->value) == canonicalize_answer(y.value);
  const bool credit_accuracy = r.accuracy_ok && (w.mode == RewardMode::Additive || r.format_ok);
  r.total = (credit_accuracy ? w.w_acc : 0.0) + (r.format_ok ? w.w_fmt : 0.0);
  return r;
}

}  // namespace permrl
