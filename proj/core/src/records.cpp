// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/records.hpp"

#include <fstream>
#include <set>

#include "permrl/errors.hpp"

namespace permrl {
namespace {

using nlohmann::json;

const std::set<std::string> kKnownFields = {"id",     "query_tokens", "images",           "answer",
                                            "answer_space", "order_sensitivity", "difficulty_score"};

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw InputError(std::string("record is missing field '") + key + "'");
  return *it;
}

}  // namespace

std::string to_string(OrderSensitivity s) {
  return s == OrderSensitivity::OrderInvariant ? "OrderInvariant" : "PositionReferencing";
}

std::string to_string(AnswerKind k) { return k == AnswerKind::ChoiceLabel ? "ChoiceLabel" : "ShortText"; }

OrderSensitivity order_sensitivity_from_string(const std::string& s) {
  if (s == "OrderInvariant") return OrderSensitivity::OrderInvariant;
  if (s == "PositionReferencing") return OrderSensitivity::PositionReferencing;
  throw InputError("unknown order_sensitivity '" + s + "'");
}

AnswerKind answer_kind_from_string(const std::string& s) {
  if (s == "ChoiceLabel") return AnswerKind::ChoiceLabel;
  if (s == "ShortText") return AnswerKind::ShortText;
  throw InputError("unknown answer kind '" + s + "'");
}

json encode_record(const TaskInstance& x, const Vocabulary& vocab) {
  json j = x.extra.is_object() ? x.extra : json::object();
  j["id"] = x.id;
  json query = json::array();
  for (Token t : x.query_tokens) query.push_back(std::string(vocab.text(t)));
  j["query_tokens"] = std::move(query);
  json images = json::array();
  for (const auto& img : x.images) images.push_back({{"image_id", img.image_id}, {"features", img.features}});
  j["images"] = std::move(images);
  json answer = {{"kind", to_string(x.answer.kind)}, {"value", x.answer.value}};
  if (!x.answer.choice_image_refs.empty()) {
    json refs = json::object();
    for (const auto& [label, pos] : x.answer.choice_image_refs) refs[label] = pos + 1;
    answer["choice_image_refs"] = std::move(refs);
  }
  j["answer"] = std::move(answer);
  j["answer_space"] = x.answer_space;
  j["order_sensitivity"] = to_string(x.order_sensitivity);
  if (x.difficulty_score) {
    j["difficulty_score"] = *x.difficulty_score;
  } else {
    j.erase("difficulty_score");
  }
  return j;
}

TaskInstance decode_record(const json& j, const Vocabulary& vocab) {
  if (!j.is_object()) throw InputError("record must be a JSON object");
  TaskInstance x;
  try {
    x.id = require(j, "id").get<std::string>();
    for (const auto& tok : require(j, "query_tokens")) {
      const auto text = tok.get<std::string>();
      auto id = vocab.lookup(text);
      if (!id) throw InputError(x.id + ": unknown query token '" + text + "'");
      x.query_tokens.push_back(*id);
    }
    for (const auto& img : require(j, "images")) {
      ImageDescriptor d;
      d.image_id = require(img, "image_id").get<std::string>();
      d.features = require(img, "features").get<std::vector<double>>();
      d.token_block = vocab.quantize(d.features);
      x.images.push_back(std::move(d));
    }
    const auto& answer = require(j, "answer");
    x.answer.kind = answer_kind_from_string(require(answer, "kind").get<std::string>());
    x.answer.value = require(answer, "value").get<std::string>();
    if (auto it = answer.find("choice_image_refs"); it != answer.end()) {
      for (const auto& [label, pos] : it->items()) {
        const int one_based = pos.get<int>();
        if (one_based < 1) throw InputError(x.id + ": choice_image_refs are one-based");
        x.answer.choice_image_refs[label] = static_cast<std::size_t>(one_based - 1);
      }
    }
    x.answer_space = require(j, "answer_space").get<std::vector<std::string>>();
    x.order_sensitivity = order_sensitivity_from_string(require(j, "order_sensitivity").get<std::string>());
    if (auto it = j.find("difficulty_score"); it != j.end() && !it->is_null()) {
      x.difficulty_score = it->get<double>();
    }
  } catch (const json::exception& e) {
    throw InputError("malformed record: " + std::string(e.what()));
  }
  for (const auto& [key, value] : j.items()) {
    if (!kKnownFields.contains(key)) x.extra[key] = value;
  }
  validate(x);
  return x;
}

void write_records(std::ostream& out, const std::vector<TaskInstance>& data, const Vocabulary& vocab) {
  for (const auto& x : data) out << encode_record(x, vocab).dump() << '\n';
}

std::vector<TaskInstance> read_records(std::istream& in, const Vocabulary& vocab) {
  std::vector<TaskInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(decode_record(j, vocab));
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<TaskInstance>& data,
                   const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_records(out, data, vocab);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<TaskInstance> read_records(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_records(in, vocab);
}

}  // namespace permrl
