// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "permrl/core.hpp"

namespace permrl {

// Line-delimited dataset records, one JSON object per line:
//   {"id", "query_tokens": [token text...], "images": [{"image_id", "features"}],
//    "answer": {"kind", "value", "choice_image_refs"?: {label: 1-based position}},
//    "answer_space", "order_sensitivity", "difficulty_score"?}
// Any other top-level field is carried in TaskInstance::extra.

nlohmann::json encode_record(const TaskInstance& x, const Vocabulary& vocab);
/// Token blocks are recomputed from features. Throws InputError on schema violations.
TaskInstance decode_record(const nlohmann::json& j, const Vocabulary& vocab);

void write_records(std::ostream& out, const std::vector<TaskInstance>& data, const Vocabulary& vocab);
std::vector<TaskInstance> read_records(std::istream& in, const Vocabulary& vocab);

void write_records(const std::filesystem::path& path, const std::vector<TaskInstance>& data,
                   const Vocabulary& vocab);
std::vector<TaskInstance> read_records(const std::filesystem::path& path, const Vocabulary& vocab);

std::string to_string(OrderSensitivity s);
std::string to_string(AnswerKind k);
OrderSensitivity order_sensitivity_from_string(const std::string& s);
AnswerKind answer_kind_from_string(const std::string& s);

}  // namespace permrl
