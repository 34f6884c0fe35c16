// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace permrl {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or length mismatch between objects that must agree (permutations, images, vectors).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Malformed caller input: out-of-vocabulary tokens, invalid records.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// API misuse such as calling a loss without populated snapshots.
class UsageError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

/// No rule maps the answer into the permuted context; the instance is excluded.
class UnmappableAnswerError : public Error {
 public:
  using Error::Error;
};

/// A judge endpoint answered with a payload that does not follow the wire schema.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::string raw_payload)
      : Error(what), raw_payload_(std::move(raw_payload)) {}
  const std::string& raw_payload() const noexcept { return raw_payload_; }

 private:
  std::string raw_payload_;
};

/// Retryable transport failure (connection refused, timeout, non-2xx status).
class TransportError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint was produced under a different configuration or dataset.
class ResumeMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace permrl
