// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "permrl/errors.hpp"
#include "permrl/policy.hpp"

using namespace permrl;
using permrl::testing::random_instance;
using permrl::testing::random_response;
using permrl::testing::small_arch;

namespace {

// Direct transcription of the model: segment means of prompt embeddings, one
// tanh layer fed by the previous token, softmax output.
double naive_logprob(const PolicyParams& p, const TokenSeq& x, const TokenSeq& o) {
  const ArchConfig& a = p.layout.arch;
  const int V = a.vocab_size, D = a.embed_dim, H = a.hidden_dim, S = a.num_segments;
  auto E = [&](Token t, int k) { return p.theta[p.layout.embed + t * D + k]; };
  std::vector<std::vector<double>> sums(S, std::vector<double>(D, 0.0));
  std::vector<int> counts(S, 0);
  int seg = 0;
  for (Token t : x) {
    if (t == a.segment_marker && seg + 1 < S) ++seg;
    for (int k = 0; k < D; ++k) sums[seg][k] += E(t, k);
    ++counts[seg];
  }
  std::vector<double> c;
  for (int s = 0; s < S; ++s) {
    for (int k = 0; k < D; ++k) c.push_back(counts[s] ? sums[s][k] / counts[s] : 0.0);
  }
  double total = 0.0;
  Token prev = a.bos;
  for (Token target : o) {
    std::vector<double> h(H);
    for (int i = 0; i < H; ++i) {
      double z = p.theta[p.layout.b_hidden + i];
      for (int j = 0; j < S * D; ++j) z += p.theta[p.layout.w_ctx + i * S * D + j] * c[j];
      for (int k = 0; k < D; ++k) z += p.theta[p.layout.w_prev + i * D + k] * E(prev, k);
      h[i] = std::tanh(z);
    }
    std::vector<double> probs(V);
    double norm = 0.0;
    for (int v = 0; v < V; ++v) {
      double l = p.theta[p.layout.b_out + v];
      for (int i = 0; i < H; ++i) l += p.theta[p.layout.w_out + v * H + i] * h[i];
      probs[v] = std::exp(l);
      norm += probs[v];
    }
    total += std::log(probs[target] / norm);
    prev = target;
  }
  return total;
}

}  // namespace

TEST(InitParams, SeededAndShaped) {
  const ArchConfig arch;
  const PolicyParams a = init_params(3, arch), b = init_params(3, arch);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.theta, init_params(4, arch).theta);
  EXPECT_EQ(a.theta.size(), a.layout.total);
  EXPECT_EQ(a.layout.total, 32u * 8 + 16 * 32 + 16 * 8 + 16 + 32 * 16 + 32);
  EXPECT_TRUE(a.all_finite());
}

TEST(InitParams, ZeroScaleIsExactlyUniform) {
  ArchConfig arch;
  arch.init_scale = 0.0;
  const PolicyParams p = init_params(1, arch);
  const TokenSeq x{4, 5, Vocabulary::image(), 9};
  const TokenSeq o{7, 3, 0};
  EXPECT_DOUBLE_EQ(logprob(p, x, o), -3.0 * std::log(32.0));
  for (const auto& dist : step_distributions(p, x, o)) {
    for (double q : dist) EXPECT_DOUBLE_EQ(q, 1.0 / 32.0);
  }
}

TEST(InitParams, DefaultInitStaysNearUniform) {
  const Vocabulary vocab;
  const PolicyParams p = init_params(0, ArchConfig{});
  Rng rng(12);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const TokenSeq x = tokenize(random_instance(rng, vocab, i));
    const TokenSeq o = random_response(rng, 32, 6);
    for (const auto& dist : step_distributions(p, x, o)) {
      for (double q : dist) {
        EXPECT_GE(q, 1.0 / 64.0);
        EXPECT_LE(q, 1.0 / 16.0);
      }
    }
  }
}

TEST(Logprob, MatchesIndependentForwardPass) {
  const Vocabulary vocab;
  Rng rng(21);
  for (std::uint64_t i = 0; i < 50; ++i) {
    const PolicyParams p = init_params(i, small_arch());
    const TokenSeq x = tokenize(random_instance(rng, vocab, i));
    const TokenSeq o = random_response(rng, 32, 6);
    EXPECT_NEAR(logprob(p, x, o), naive_logprob(p, x, o), 1e-10);
  }
}

TEST(Logprob, SingleTokenIsOneCategoricalProbability) {
  const PolicyParams p = init_params(2, small_arch());
  const TokenSeq x{4, 5, 6};
  const auto dist = step_distributions(p, x, TokenSeq{9});
  EXPECT_NEAR(logprob(p, x, TokenSeq{9}), std::log(dist[0][9]), 1e-12);
}

TEST(Logprob, RejectsOutOfVocabularyTokens) {
  const PolicyParams p = init_params(2, ArchConfig{});
  EXPECT_THROW(logprob(p, TokenSeq{40}, TokenSeq{1}), InputError);
  EXPECT_THROW(logprob(p, TokenSeq{1}, TokenSeq{-1}), InputError);
  EXPECT_THROW(grad_logprob(p, TokenSeq{1}, TokenSeq{32}), InputError);
}

TEST(GradLogprob, AgreesWithLogprobAndIsAdditive) {
  const PolicyParams p = init_params(5, small_arch());
  const TokenSeq x{8, Vocabulary::image(), 20, 21, 22};
  const TokenSeq o{10, 11};
  std::vector<double> g(p.theta.size(), 0.0);
  const double lp = logprob_and_grad(p, x, o, g);
  EXPECT_EQ(lp, logprob(p, x, o));
  EXPECT_EQ(g, grad_logprob(p, x, o));

  // The sequence log-probability is the sum of its per-step terms.
  const auto dist = step_distributions(p, x, o);
  EXPECT_NEAR(lp, std::log(dist[0][10]) + std::log(dist[1][11]), 1e-12);
  EXPECT_NEAR(logprob(p, x, TokenSeq{10}), std::log(dist[0][10]), 1e-12);
}

TEST(GradLogprob, ConstantOutputArchitectureHasZeroGradient) {
  // With one token every distribution is the point mass.
  ArchConfig arch;
  arch.vocab_size = 1;
  arch.segment_marker = -1;
  const PolicyParams p = init_params(1, arch);
  const auto g = grad_logprob(p, TokenSeq{0, 0}, TokenSeq{0, 0, 0});
  for (double v : g) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(logprob(p, TokenSeq{0}, TokenSeq{0}), 0.0);
}

TEST(Sample, RecordsExactLogprobAndStopsAtEos) {
  const Vocabulary vocab;
  const PolicyParams p = init_params(8, small_arch());
  Rng rng(99);
  for (std::uint64_t i = 0; i < 50; ++i) {
    const TokenSeq x = tokenize(random_instance(rng, vocab, i));
    const Response r = sample(p, x, rng, {6, 1.0, Vocabulary::eos()});
    ASSERT_FALSE(r.tokens.empty());
    EXPECT_LE(r.tokens.size(), 6u);
    for (std::size_t k = 0; k + 1 < r.tokens.size(); ++k) EXPECT_NE(r.tokens[k], Vocabulary::eos());
    EXPECT_NEAR(r.logprob_old, logprob(p, x, r.tokens), 1e-12);
  }
}

TEST(Sample, ArgmaxDecodingIsDeterministic) {
  const PolicyParams p = init_params(8, small_arch());
  const TokenSeq x{4, Vocabulary::image(), 20};
  Rng a(1), b(2);
  EXPECT_EQ(sample(p, x, a, {6, 0.0}).tokens, sample(p, x, b, {6, 0.0}).tokens);
}

TEST(Sample, EmpiricalFrequenciesMatchCategorical) {
  const PolicyParams p = init_params(8, small_arch());
  const TokenSeq x{4, 5};
  const auto dist = step_distributions(p, x, TokenSeq{0})[0];
  std::vector<int> counts(dist.size(), 0);
  Rng rng(2024);
  constexpr int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[sample(p, x, rng, {1, 1.0}).tokens[0]];
  for (std::size_t v = 0; v < dist.size(); ++v) {
    const double se = std::sqrt(draws * dist[v] * (1 - dist[v]));
    EXPECT_NEAR(counts[v], draws * dist[v], 3 * se + 1) << "token " << v;
  }
}

TEST(Update, PlainGradientStep) {
  const PolicyParams p = init_params(1, small_arch());
  const std::vector<double> zero(p.theta.size(), 0.0);
  EXPECT_EQ(update(p, zero, 0.5), p);
  const PolicyParams z = update(p, p.theta, 1.0);
  for (double v : z.theta) EXPECT_EQ(v, 0.0);
  const std::vector<double> g(p.theta.size(), 0.25);
  const PolicyParams twice = update(update(p, g, 0.05), g, 0.05);
  const PolicyParams once = update(p, g, 0.1);
  for (std::size_t i = 0; i < p.theta.size(); ++i) EXPECT_NEAR(twice.theta[i], once.theta[i], 1e-15);
  std::vector<double> bad = zero;
  bad[3] = NAN;
  EXPECT_THROW(update(p, bad, 0.1), NumericalError);
}

TEST(Params, BinaryRoundTrip) {
  const PolicyParams p = init_params(6, small_arch());
  std::stringstream io;
  write_params(io, p);
  EXPECT_EQ(read_params(io), p);
  std::stringstream garbage("not a parameter file");
  EXPECT_THROW(read_params(garbage), IoError);
}
