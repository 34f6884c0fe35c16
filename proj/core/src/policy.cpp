// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/policy.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "permrl/errors.hpp"

namespace permrl {
namespace {

constexpr char kParamsMagic[9] = "PRMLPAR1";
constexpr std::uint32_t kParamsVersion = 1;

/// Forward state shared by scoring, gradients and sampling. The per-step
/// arithmetic is identical in all three, so a logprob recorded while sampling
/// matches a later recomputation bit for bit.
class Forward {
 public:
  Forward(const PolicyParams& params, std::span<const Token> x_tokens)
      : p_(params),
        L_(params.layout),
        V_(static_cast<std::size_t>(L_.arch.vocab_size)),
        D_(static_cast<std::size_t>(L_.arch.embed_dim)),
        H_(static_cast<std::size_t>(L_.arch.hidden_dim)),
        C_(L_.context_dim()),
        ctx_(C_, 0.0),
        pre_(H_, 0.0),
        z_(H_),
        h_(H_),
        logits_(V_) {
    if (p_.theta.size() != L_.total) throw StructuralError("theta size does not match its layout");
    const auto S = static_cast<std::size_t>(L_.arch.num_segments);
    segment_of_.reserve(x_tokens.size());
    counts_.assign(S, 0);
    std::size_t seg = 0;
    for (Token t : x_tokens) {
      check_token(t);
      if (S > 1 && t == L_.arch.segment_marker) seg = std::min(seg + 1, S - 1);
      segment_of_.push_back(seg);
      ++counts_[seg];
    }
    for (std::size_t i = 0; i < x_tokens.size(); ++i) {
      const std::size_t s = segment_of_[i];
      const double inv = 1.0 / static_cast<double>(counts_[s]);
      const double* e = embed(x_tokens[i]);
      for (std::size_t k = 0; k < D_; ++k) ctx_[s * D_ + k] += e[k] * inv;
    }
    const double* wc = &p_.theta[L_.w_ctx];
    const double* bh = &p_.theta[L_.b_hidden];
    for (std::size_t h = 0; h < H_; ++h) {
      double acc = bh[h];
      for (std::size_t c = 0; c < C_; ++c) acc += wc[h * C_ + c] * ctx_[c];
      pre_[h] = acc;
    }
  }

  void check_token(Token t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= V_) {
      throw InputError("token " + std::to_string(t) + " is outside the vocabulary of size " + std::to_string(V_));
    }
  }

  /// Computes hidden state and logits for the step whose previous token is `prev`;
  /// returns log-sum-exp of the logits.
  double step(Token prev) {
    const double* e = embed(prev);
    const double* wp = &p_.theta[L_.w_prev];
    for (std::size_t h = 0; h < H_; ++h) {
      double acc = pre_[h];
      for (std::size_t k = 0; k < D_; ++k) acc += wp[h * D_ + k] * e[k];
      z_[h] = acc;
      h_[h] = std::tanh(acc);
    }
    const double* wo = &p_.theta[L_.w_out];
    const double* bo = &p_.theta[L_.b_out];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < V_; ++v) {
      double acc = bo[v];
      for (std::size_t h = 0; h < H_; ++h) acc += wo[v * H_ + h] * h_[h];
      logits_[v] = acc;
      mx = std::max(mx, acc);
    }
    double sum = 0.0;
    for (double l : logits_) sum += std::exp(l - mx);
    return mx + std::log(sum);
  }

  /// Accumulates d log p(target)/d theta for the step just computed.
  void backward_step(Token prev, Token target, double lse, std::span<double> grad) {
    g_.resize(V_);
    for (std::size_t v = 0; v < V_; ++v) g_[v] = -std::exp(logits_[v] - lse);
    g_[static_cast<std::size_t>(target)] += 1.0;

    double* gwo = &grad[L_.w_out];
    double* gbo = &grad[L_.b_out];
    const double* wo = &p_.theta[L_.w_out];
    dz_.assign(H_, 0.0);
    for (std::size_t v = 0; v < V_; ++v) {
      const double gv = g_[v];
      gbo[v] += gv;
      for (std::size_t h = 0; h < H_; ++h) {
        gwo[v * H_ + h] += gv * h_[h];
        dz_[h] += wo[v * H_ + h] * gv;
      }
    }
    for (std::size_t h = 0; h < H_; ++h) dz_[h] *= 1.0 - h_[h] * h_[h];

    const double* e = embed(prev);
    const double* wp = &p_.theta[L_.w_prev];
    double* gwp = &grad[L_.w_prev];
    double* ge = &grad[L_.embed + static_cast<std::size_t>(prev) * D_];
    for (std::size_t h = 0; h < H_; ++h) {
      for (std::size_t k = 0; k < D_; ++k) {
        gwp[h * D_ + k] += dz_[h] * e[k];
        ge[k] += wp[h * D_ + k] * dz_[h];
      }
    }
    da_.resize(H_, 0.0);
    for (std::size_t h = 0; h < H_; ++h) da_[h] += dz_[h];
  }

  /// Propagates the accumulated gradient of the step pre-activations into
  /// b_h, W_c and the pooled input embeddings.
  void backward_context(std::span<const Token> x_tokens, std::span<double> grad) {
    if (da_.empty()) return;
    double* gbh = &grad[L_.b_hidden];
    double* gwc = &grad[L_.w_ctx];
    const double* wc = &p_.theta[L_.w_ctx];
    std::vector<double> dctx(C_, 0.0);
    for (std::size_t h = 0; h < H_; ++h) {
      gbh[h] += da_[h];
      for (std::size_t c = 0; c < C_; ++c) {
        gwc[h * C_ + c] += da_[h] * ctx_[c];
        dctx[c] += wc[h * C_ + c] * da_[h];
      }
    }
    for (std::size_t i = 0; i < x_tokens.size(); ++i) {
      const std::size_t s = segment_of_[i];
      const double inv = 1.0 / static_cast<double>(counts_[s]);
      double* ge = &grad[L_.embed + static_cast<std::size_t>(x_tokens[i]) * D_];
      for (std::size_t k = 0; k < D_; ++k) ge[k] += dctx[s * D_ + k] * inv;
    }
  }

  const std::vector<double>& logits() const noexcept { return logits_; }

 private:
  const double* embed(Token t) const { return &p_.theta[L_.embed + static_cast<std::size_t>(t) * D_]; }

  const PolicyParams& p_;
  const ParamLayout& L_;
  std::size_t V_, D_, H_, C_;
  std::vector<std::size_t> segment_of_;
  std::vector<std::size_t> counts_;
  std::vector<double> ctx_, pre_, z_, h_, logits_;
  std::vector<double> g_, dz_, da_;
};

void check_response(std::span<const Token> o_tokens) {
  if (o_tokens.empty()) throw InputError("response must contain at least one token");
}

}  // namespace

ParamLayout::ParamLayout(const ArchConfig& a) : arch(a) {
  validate(a);
  const auto V = static_cast<std::size_t>(a.vocab_size);
  const auto D = static_cast<std::size_t>(a.embed_dim);
  const auto H = static_cast<std::size_t>(a.hidden_dim);
  std::size_t off = 0;
  embed = off, off += V * D;
  w_ctx = off, off += H * context_dim();
  w_prev = off, off += H * D;
  b_hidden = off, off += H;
  w_out = off, off += V * H;
  b_out = off, off += V;
  total = off;
}

void validate(const ArchConfig& a) {
  if (a.vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
  if (a.embed_dim < 1 || a.hidden_dim < 1) throw ConfigError("embed_dim and hidden_dim must be >= 1");
  if (a.num_segments < 1) throw ConfigError("num_segments must be >= 1");
  if (a.bos < 0 || a.bos >= a.vocab_size) throw ConfigError("bos token outside the vocabulary");
  if (!(a.init_scale >= 0.0) || !(a.embed_scale >= 0.0)) throw ConfigError("init scales must be >= 0");
}

bool PolicyParams::all_finite() const noexcept {
  return std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); });
}

PolicyParams init_params(std::uint64_t seed, const ArchConfig& arch) {
  PolicyParams p{ParamLayout(arch), {}};
  const auto& L = p.layout;
  p.theta.assign(L.total, 0.0);
  Rng rng = make_stream(seed, {0x696e6974ULL});
  auto fill = [&](std::size_t begin, std::size_t end, double scale) {
    for (std::size_t i = begin; i < end; ++i) p.theta[i] = scale * standard_normal(rng);
  };
  fill(L.embed, L.w_ctx, arch.embed_scale);
  fill(L.w_ctx, L.w_prev, 1.0 / std::sqrt(static_cast<double>(L.context_dim())));
  fill(L.w_prev, L.b_hidden, 1.0 / std::sqrt(static_cast<double>(arch.embed_dim)));
  fill(L.w_out, L.b_out, arch.init_scale);
  return p;
}

std::vector<std::vector<double>> step_distributions(const PolicyParams& params, std::span<const Token> x_tokens,
                                                    std::span<const Token> o_tokens) {
  Forward fwd(params, x_tokens);
  std::vector<std::vector<double>> out;
  Token prev = params.layout.arch.bos;
  for (std::size_t t = 0; t <= o_tokens.size(); ++t) {
    if (t > 0) {
      fwd.check_token(o_tokens[t - 1]);
      prev = o_tokens[t - 1];
    }
    const double lse = fwd.step(prev);
    std::vector<double> probs;
    probs.reserve(fwd.logits().size());
    for (double l : fwd.logits()) probs.push_back(std::exp(l - lse));
    out.push_back(std::move(probs));
  }
  return out;
}

double logprob(const PolicyParams& params, std::span<const Token> x_tokens, std::span<const Token> o_tokens) {
  check_response(o_tokens);
  Forward fwd(params, x_tokens);
  double total = 0.0;
  Token prev = params.layout.arch.bos;
  for (Token target : o_tokens) {
    fwd.check_token(target);
    const double lse = fwd.step(prev);
    total += fwd.logits()[static_cast<std::size_t>(target)] - lse;
    prev = target;
  }
  return total;
}

double logprob_and_grad(const PolicyParams& params, std::span<const Token> x_tokens,
                        std::span<const Token> o_tokens, std::span<double> grad) {
  check_response(o_tokens);
  if (grad.size() != params.theta.size()) throw StructuralError("gradient buffer size does not match theta");
  std::fill(grad.begin(), grad.end(), 0.0);
  Forward fwd(params, x_tokens);
  double total = 0.0;
  Token prev = params.layout.arch.bos;
  for (Token target : o_tokens) {
    fwd.check_token(target);
    const double lse = fwd.step(prev);
    total += fwd.logits()[static_cast<std::size_t>(target)] - lse;
    fwd.backward_step(prev, target, lse, grad);
    prev = target;
  }
  fwd.backward_context(x_tokens, grad);
  return total;
}

std::vector<double> grad_logprob(const PolicyParams& params, std::span<const Token> x_tokens,
                                 std::span<const Token> o_tokens) {
  std::vector<double> grad(params.theta.size());
  logprob_and_grad(params, x_tokens, o_tokens, grad);
  return grad;
}

Response sample(const PolicyParams& params, std::span<const Token> x_tokens, Rng& rng, const SampleOptions& opts) {
  if (opts.max_len < 1) throw ConfigError("max_len must be >= 1");
  Forward fwd(params, x_tokens);
  Response r;
  Token prev = params.layout.arch.bos;
  std::vector<double> weights;
  for (int t = 0; t < opts.max_len; ++t) {
    const double lse = fwd.step(prev);
    const auto& logits = fwd.logits();
    std::size_t pick = 0;
    if (opts.temperature == 0.0) {
      pick = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    } else {
      const double inv_t = 1.0 / opts.temperature;
      const double mx = *std::max_element(logits.begin(), logits.end());
      weights.resize(logits.size());
      double sum = 0.0;
      for (std::size_t v = 0; v < logits.size(); ++v) sum += weights[v] = std::exp((logits[v] - mx) * inv_t);
      double u = uniform01(rng) * sum;
      pick = logits.size() - 1;
      for (std::size_t v = 0; v < logits.size(); ++v) {
        if (u < weights[v]) {
          pick = v;
          break;
        }
        u -= weights[v];
      }
    }
    r.logprob_old += logits[pick] - lse;
    const auto tok = static_cast<Token>(pick);
    r.tokens.push_back(tok);
    if (tok == opts.eos) break;
    prev = tok;
  }
  return r;
}

PolicyParams update(const PolicyParams& params, std::span<const double> gradient, double learning_rate) {
  if (gradient.size() != params.theta.size()) throw StructuralError("gradient size does not match theta");
  for (double g : gradient) {
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient entry; update refused");
  }
  PolicyParams out = params;
  for (std::size_t i = 0; i < gradient.size(); ++i) out.theta[i] -= learning_rate * gradient[i];
  return out;
}

void write_params(std::ostream& out, const PolicyParams& params) {
  using namespace detail;
  const auto& a = params.layout.arch;
  put_magic(out, kParamsMagic);
  put<std::uint32_t>(out, kParamsVersion);
  put<std::int32_t>(out, a.vocab_size);
  put<std::int32_t>(out, a.embed_dim);
  put<std::int32_t>(out, a.hidden_dim);
  put<std::int32_t>(out, a.num_segments);
  put<std::int32_t>(out, a.segment_marker);
  put<std::int32_t>(out, a.bos);
  put<double>(out, a.init_scale);
  put<double>(out, a.embed_scale);
  put_doubles(out, params.theta);
}

PolicyParams read_params(std::istream& in) {
  using namespace detail;
  expect_magic(in, kParamsMagic, "parameter block");
  if (get<std::uint32_t>(in) != kParamsVersion) throw IoError("unsupported parameter block version");
  ArchConfig a;
  a.vocab_size = get<std::int32_t>(in);
  a.embed_dim = get<std::int32_t>(in);
  a.hidden_dim = get<std::int32_t>(in);
  a.num_segments = get<std::int32_t>(in);
  a.segment_marker = get<std::int32_t>(in);
  a.bos = get<std::int32_t>(in);
  a.init_scale = get<double>(in);
  a.embed_scale = get<double>(in);
  PolicyParams p{ParamLayout(a), get_doubles(in)};
  if (p.theta.size() != p.layout.total) throw IoError("parameter count does not match the stored shape");
  return p;
}

}  // namespace permrl
