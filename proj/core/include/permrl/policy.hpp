// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "permrl/core.hpp"
#include "permrl/rng.hpp"

namespace permrl {

/// Offsets of each parameter block inside the flat theta vector.
///
/// The policy pools token embeddings per input segment (text, then one segment
/// per image marker), concatenates the pooled vectors into a context c, and at
/// each step t computes
///   h_t = tanh(W_c c + b_h + W_p E[o_{t-1}]),  logits_t = W_o h_t + b_o,
/// with o_{-1} = bos. The embedding table E is shared by both paths.
struct ParamLayout {
  ArchConfig arch;
  std::size_t embed = 0;     // E      [vocab x embed]
  std::size_t w_ctx = 0;     // W_c    [hidden x segments*embed]
  std::size_t w_prev = 0;    // W_p    [hidden x embed]
  std::size_t b_hidden = 0;  // b_h    [hidden]
  std::size_t w_out = 0;     // W_o    [vocab x hidden]
  std::size_t b_out = 0;     // b_o    [vocab]
  std::size_t total = 0;

  explicit ParamLayout(const ArchConfig& arch);
  ParamLayout() = default;
  std::size_t context_dim() const noexcept {
    return static_cast<std::size_t>(arch.num_segments) * static_cast<std::size_t>(arch.embed_dim);
  }
};

struct PolicyParams {
  ParamLayout layout;
  std::vector<double> theta;

  bool empty() const noexcept { return theta.empty(); }
  bool all_finite() const noexcept;
  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    return a.layout.arch == b.layout.arch && a.theta == b.theta;
  }
};

/// pi_theta, pi_old and pi_ref. `old` is refreshed from `current` once per
/// training step before rollout; `reference` never changes after init.
struct PolicySnapshots {
  PolicyParams current;
  PolicyParams old;
  PolicyParams reference;

  static PolicySnapshots from_initial(const PolicyParams& init) { return {init, init, init}; }
  void refresh_old() { old = current; }
};

void validate(const ArchConfig& arch);

/// Deterministic in seed. Embeddings ~ N(0, embed_scale), hidden weights
/// ~ N(0, 1/fan_in), output weights ~ N(0, init_scale), biases zero.
PolicyParams init_params(std::uint64_t seed, const ArchConfig& arch);

/// Next-token distribution at every step of `o_tokens` (row t conditions on o_<t),
/// plus one extra row for the step after the last token.
std::vector<std::vector<double>> step_distributions(const PolicyParams& params, std::span<const Token> x_tokens,
                                                    std::span<const Token> o_tokens);

/// Sum over t of log p(o_t | x, o_<t). Throws InputError on empty o or
/// out-of-vocabulary tokens.
double logprob(const PolicyParams& params, std::span<const Token> x_tokens, std::span<const Token> o_tokens);

/// Analytic gradient of logprob with respect to theta.
std::vector<double> grad_logprob(const PolicyParams& params, std::span<const Token> x_tokens,
                                 std::span<const Token> o_tokens);

/// logprob and its gradient from one forward/backward pass; `grad` is overwritten.
double logprob_and_grad(const PolicyParams& params, std::span<const Token> x_tokens,
                        std::span<const Token> o_tokens, std::span<double> grad);

struct SampleOptions {
  int max_len = 6;
  double temperature = 1.0;  // 0 selects argmax decoding
  Token eos = Vocabulary::eos();
};

/// Ancestral sampling; stops after emitting eos or at max_len. logprob_old is the
/// log-probability of the emitted tokens under `params` at temperature 1; the
/// text field is left empty for the caller to detokenize.
Response sample(const PolicyParams& params, std::span<const Token> x_tokens, Rng& rng, const SampleOptions& opts);

/// theta - lr * g. Throws NumericalError (params unchanged) on non-finite
/// gradient entries, StructuralError on size mismatch.
PolicyParams update(const PolicyParams& params, std::span<const double> gradient, double learning_rate);

/// Versioned binary dump of arch + theta; round trip is bit-exact.
void write_params(std::ostream& out, const PolicyParams& params);
PolicyParams read_params(std::istream& in);

}  // namespace permrl
