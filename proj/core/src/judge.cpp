// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/judge.hpp"

#include <atomic>
#include <thread>

#include <spdlog/spdlog.h>

#include "httplib.h"
#include "permrl/env_synth.hpp"
#include "permrl/errors.hpp"

namespace permrl {

using nlohmann::json;

const std::string& judge_instruction() {
  static const std::string kText =
      "The question below refers to images through tokens. <image> stands for an image; <image_1>, "
      "<image_2>, ... name images by their position in the input. The images are about to be reordered "
      "with the given permutation (position j receives original image permutation[j]). Decide two things: "
      "(1) should_change: whether the correct answer changes when only the image order changes; "
      "(2) is_multichoice_images: whether one main image appears in the question body while the other "
      "images are the answer choices. Reply with a JSON object "
      "{\"should_change\": true|false, \"is_multichoice_images\": true|false} and nothing else. This "
      "applies to multiple-choice and fill-in-the-blank questions alike.";
  return kText;
}

json JudgeRequest::to_json() const {
  return {{"schema_version", schema_version}, {"id", id},
          {"instruction", instruction},       {"question_text", question_text},
          {"image_count", image_count},       {"permutation", permutation}};
}

JudgeRequest JudgeRequest::from_json(const json& j) {
  JudgeRequest r;
  try {
    r.schema_version = j.at("schema_version").get<int>();
    r.id = j.value("id", std::string{});
    r.instruction = j.value("instruction", std::string{});
    r.question_text = j.at("question_text").get<std::string>();
    r.image_count = j.at("image_count").get<int>();
    r.permutation = j.at("permutation").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed judge request: ") + e.what(), j.dump());
  }
  return r;
}

json JudgeResponse::to_json() const {
  return {{"should_change", should_change}, {"is_multichoice_images", is_multichoice_images}};
}

JudgeResponse JudgeResponse::parse(const std::string& raw) {
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("judge response is not JSON: ") + e.what(), raw);
  }
  if (!j.is_object()) throw ProtocolError("judge response is not an object", raw);
  auto field = [&](const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_boolean()) {
      throw ProtocolError(std::string("judge response field '") + key + "' missing or not a boolean", raw);
    }
    return it->get<bool>();
  };
  JudgeResponse r;
  r.should_change = field("should_change");
  r.is_multichoice_images = field("is_multichoice_images");
  return r;
}

std::string judge_question_text(const TaskInstance& x, const Vocabulary& vocab) {
  std::string out;
  int image_index = 0;
  for (Token t : x.query_tokens) {
    if (!out.empty()) out += ' ';
    if (t == Vocabulary::image()) {
      out += "<image_" + std::to_string(++image_index) + ">";
    } else {
      out += vocab.text(t);
    }
  }
  return out;
}

JudgeRequest make_judge_request(const TaskInstance& x, const Permutation& sigma, const Vocabulary& vocab) {
  if (sigma.size() != x.images.size()) throw StructuralError(x.id + ": permutation length differs from image count");
  JudgeRequest r;
  r.id = x.id;
  r.instruction = judge_instruction();
  r.question_text = judge_question_text(x, vocab);
  r.image_count = static_cast<int>(x.images.size());
  r.permutation = sigma.one_based();
  return r;
}

HttpJudgeTransport::HttpJudgeTransport(std::string url, int timeout_seconds) : timeout_seconds_(timeout_seconds) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("judge url needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string HttpJudgeTransport::post(const std::string& request_body) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);
  auto res = client.Post(path_, request_body, "application/json");
  if (!res) throw TransportError("judge request failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("judge endpoint returned HTTP " + std::to_string(res->status));
  }
  return res->body;
}

RuleEngineJudgeTransport::RuleEngineJudgeTransport(const std::vector<TaskInstance>& instances) {
  for (const auto& x : instances) by_id_.emplace(x.id, x);
}

std::string RuleEngineJudgeTransport::post(const std::string& request_body) {
  const JudgeRequest req = JudgeRequest::from_json(json::parse(request_body));
  auto it = by_id_.find(req.id);
  if (it == by_id_.end()) throw TransportError("rule engine has no instance '" + req.id + "'");
  const TaskInstance& x = it->second;
  const Permutation sigma = Permutation::from_one_based(req.permutation, true);
  JudgeResponse resp;
  resp.should_change = semantic_indicator(x, sigma) == 0;
  const auto& refs = x.answer.choice_image_refs;
  resp.is_multichoice_images = !refs.empty() && refs.size() < x.images.size();
  return resp.to_json().dump();
}

JudgeClient::JudgeClient(std::shared_ptr<JudgeTransport> transport, Vocabulary vocab, int max_attempts)
    : transport_(std::move(transport)), vocab_(std::move(vocab)), max_attempts_(max_attempts) {
  if (!transport_) throw ConfigError("judge client needs a transport");
  if (max_attempts_ < 1) throw ConfigError("judge client needs at least one attempt");
}

std::optional<JudgeVerdict> JudgeClient::check(const TaskInstance& x, const Permutation& sigma) {
  const std::string body = make_judge_request(x, sigma, vocab_).to_json().dump();
  for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
    {
      std::lock_guard lock(mu_);
      ++stats_.requests;
      if (attempt > 1) ++stats_.retries;
    }
    std::string raw;
    try {
      raw = transport_->post(body);
    } catch (const TransportError& e) {
      spdlog::warn("judge transport error for {} (attempt {}/{}): {}", x.id, attempt, max_attempts_, e.what());
      continue;
    }
    try {
      const JudgeResponse resp = JudgeResponse::parse(raw);
      return JudgeVerdict{resp.should_change ? 0 : 1, resp.is_multichoice_images};
    } catch (const ProtocolError& e) {
      spdlog::error("judge protocol error for {}: {}; raw payload: {}", x.id, e.what(), e.raw_payload());
      std::lock_guard lock(mu_);
      ++stats_.protocol_errors;
      ++stats_.skipped;
      return std::nullopt;
    }
  }
  spdlog::warn("judge retry budget exhausted for {}; instance skipped", x.id);
  std::lock_guard lock(mu_);
  ++stats_.skipped;
  return std::nullopt;
}

std::vector<std::optional<JudgeVerdict>> JudgeClient::check_all(
    const std::vector<std::pair<TaskInstance, Permutation>>& items, int max_in_flight) {
  std::vector<std::optional<JudgeVerdict>> out(items.size());
  const auto workers = static_cast<std::size_t>(std::max(1, max_in_flight));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) out[i] = check(items[i].first, items[i].second);
  };
  if (workers == 1) {
    work();
    return out;
  }
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, items.size()); ++w) pool.emplace_back(work);
  }
  return out;
}

JudgeStats JudgeClient::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

}  // namespace permrl
