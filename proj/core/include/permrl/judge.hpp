// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "permrl/core.hpp"

namespace permrl {

inline constexpr int kJudgeSchemaVersion = 1;

/// Request sent to a semantic-variation judge.
struct JudgeRequest {
  int schema_version = kJudgeSchemaVersion;
  std::string id;
  std::string instruction;
  std::string question_text;  // query with <image_j> position references
  int image_count = 0;
  std::vector<int> permutation;  // one-based

  nlohmann::json to_json() const;
  static JudgeRequest from_json(const nlohmann::json& j);
};

struct JudgeResponse {
  bool should_change = false;
  bool is_multichoice_images = false;

  nlohmann::json to_json() const;
  /// Throws ProtocolError when either boolean field is missing or mistyped.
  static JudgeResponse parse(const std::string& raw);
};

/// Instruction text carried in every request.
const std::string& judge_instruction();

/// Renders the query for a judge, numbering placeholders <image_1>, <image_2>, ...
std::string judge_question_text(const TaskInstance& x, const Vocabulary& vocab);

JudgeRequest make_judge_request(const TaskInstance& x, const Permutation& sigma, const Vocabulary& vocab);

/// Delivers a serialized request and returns the raw response payload. Throws
/// TransportError on retryable failures.
class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  virtual std::string post(const std::string& request_body) = 0;
};

/// POSTs JSON to http://host:port/path.
class HttpJudgeTransport final : public JudgeTransport {
 public:
  explicit HttpJudgeTransport(std::string url, int timeout_seconds = 30);
  std::string post(const std::string& request_body) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  int timeout_seconds_;
};

/// In-process transport backed by the deterministic rule engine; looks instances
/// up by request id.
class RuleEngineJudgeTransport final : public JudgeTransport {
 public:
  explicit RuleEngineJudgeTransport(const std::vector<TaskInstance>& instances);
  std::string post(const std::string& request_body) override;

 private:
  std::map<std::string, TaskInstance> by_id_;
};

/// Transport that delegates to a callable; used for mocks.
class CallbackJudgeTransport final : public JudgeTransport {
 public:
  explicit CallbackJudgeTransport(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string post(const std::string& request_body) override { return fn_(request_body); }

 private:
  std::function<std::string(const std::string&)> fn_;
};

struct JudgeStats {
  std::size_t requests = 0;
  std::size_t retries = 0;
  std::size_t protocol_errors = 0;
  std::size_t skipped = 0;
};

struct JudgeVerdict {
  int semantic_indicator = 1;  // S = 1 - should_change
  bool is_multichoice_images = false;
};

class JudgeClient {
 public:
  JudgeClient(std::shared_ptr<JudgeTransport> transport, Vocabulary vocab, int max_attempts = 3);

  /// S for (x, apply_permutation(x, sigma)). Returns nullopt when the instance
  /// must be skipped: malformed response (logged with the raw payload) or retry
  /// budget exhausted.
  std::optional<JudgeVerdict> check(const TaskInstance& x, const Permutation& sigma);

  /// check() over many pairs with at most `max_in_flight` concurrent requests.
  /// Results are in input order. The transport must be thread-safe when
  /// max_in_flight > 1.
  std::vector<std::optional<JudgeVerdict>> check_all(
      const std::vector<std::pair<TaskInstance, Permutation>>& items, int max_in_flight);

  JudgeStats stats() const;

 private:
  std::shared_ptr<JudgeTransport> transport_;
  Vocabulary vocab_;
  int max_attempts_;
  mutable std::mutex mu_;
  JudgeStats stats_;
};

}  // namespace permrl
