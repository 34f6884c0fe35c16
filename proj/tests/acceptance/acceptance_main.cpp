// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <spdlog/spdlog.h>

#include "fixtures.hpp"
#include "permrl/datapipe.hpp"
#include "permrl/env_synth.hpp"
#include "permrl/errors.hpp"
#include "permrl/grpo.hpp"
#include "permrl/metrics.hpp"
#include "permrl/policy.hpp"
#include "permrl/trainer.hpp"

namespace {

using namespace permrl;
using permrl::testing::make_loss_fixture;
using permrl::testing::max_relative_error;
using permrl::testing::small_arch;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

RolloutGroup group_with_rewards(std::vector<double> rewards) {
  RolloutGroup g;
  g.responses.resize(rewards.size());
  g.rewards = std::move(rewards);
  return g;
}

// ---------------------------------------------------------------------------
// 1. Equation oracles

Outcome equation_oracles() {
  constexpr double tol = 1e-9;
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

  {
    const std::vector<double> r{1, 0};
    const auto a = group_advantages(r, 1e-8);
    check(a[0], 1.0);
    check(a[1], -1.0);
  }
  {
    // mean 1/3, population std sqrt(2)/3
    const std::vector<double> r{1, 1, 0, 0, 0, 0};
    const auto a = group_advantages(r, 1e-8);
    const double sd = std::sqrt(2.0) / 3.0;
    for (int i = 0; i < 6; ++i) check(a[i], (r[i] - 1.0 / 3.0) / sd);
    check(a[0], std::sqrt(2.0));
    check(a[2], -1.0 / std::sqrt(2.0));
  }
  {
    const std::vector<double> r{0.7, 0.7, 0.7};
    for (double v : group_advantages(r, 1e-8)) check(v, 0.0);
  }
  {
    std::vector<RolloutGroup> groups{group_with_rewards({1, 0}), group_with_rewards({0, 0})};
    check(merged_baseline(groups), 0.25);
    const MergedBatch b = merged_advantages(groups, 1e-8);
    check(b.baseline, 0.25);
    check(b.popstd, std::sqrt(3.0) / 4.0);
    check(b.advantages[0][0], std::sqrt(3.0));
    check(b.advantages[0][1], -1.0 / std::sqrt(3.0));
    check(b.advantages[1][0], -1.0 / std::sqrt(3.0));
    check(b.advantages[1][1], -1.0 / std::sqrt(3.0));
  }
  check(kl_penalty(-2.0, -2.0), 0.0);
  check(kl_penalty(-3.0, -3.0 + std::log(2.0)), 2.0 - std::log(2.0) - 1.0);
  {
    const ClipTerm up = clipped_surrogate(1.5, 1.0, 0.2);
    check(up.value, 1.2);
    if (!up.clipped) worst = INFINITY;
    // A < 0 below the band: min(0.5 * A, 0.8 * A) = 0.8 * A, the clipped branch.
    const ClipTerm down = clipped_surrogate(0.5, -1.0, 0.2);
    check(down.value, -0.8);
    if (!down.clipped) worst = INFINITY;
    const ClipTerm low = clipped_surrogate(0.5, 2.0, 0.2);
    check(low.value, 1.0);
    const ClipTerm neg = clipped_surrogate(1.5, -1.0, 0.2);
    check(neg.value, -1.5);
  }
  {
    // pi_theta == pi_old: objective = mean(A) - beta * mean(k3).
    auto f = make_loss_fixture(11, 2, 3, small_arch());
    for (auto& g : f.groups) {
      for (auto& r : g.responses) r.logprob_old = logprob(f.snapshots.current, g.prompt_tokens, r.tokens);
    }
    const MergedBatch b = merged_advantages(f.groups, 1e-8);
    const LossResult res = perl_loss(b, f.snapshots, {0.2, 0.01});
    double sum_a = 0.0, sum_kl = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < b.groups.size(); ++i) {
      for (std::size_t k = 0; k < b.groups[i].responses.size(); ++k) {
        const auto& r = b.groups[i].responses[k];
        const double d = r.logprob_ref - r.logprob_old;
        sum_a += b.advantages[i][k];
        sum_kl += std::exp(d) - d - 1.0;
        ++count;
      }
    }
    check(res.report.total, sum_a / count - 0.01 * sum_kl / count);
    check(res.report.fraction_clipped(), 0.0);
  }
  return {worst <= tol, fmt("max abs error %.3g (tol %.0e)", worst, tol)};
}

// ---------------------------------------------------------------------------
// 2. Reduction law

Outcome reduction_law() {
  constexpr double tol = 1e-12;
  double worst = 0.0;
  bool diagnostics_match = true;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const int n = 1 + static_cast<int>(s % 8);
    auto f = make_loss_fixture(1000 + s, 1, n, small_arch());
    const LossConfig lc{0.2, 0.01 * static_cast<double>(s % 4)};
    const LossResult naive = naive_grpo_loss(f.groups.front(), f.snapshots, lc, 1e-8);
    const LossResult perl = perl_loss(merged_advantages(f.groups, 1e-8), f.snapshots, lc);
    worst = std::max({worst, std::abs(naive.report.total - perl.report.total),
                      std::abs(naive.report.surrogate - perl.report.surrogate),
                      std::abs(naive.report.kl - perl.report.kl)});
    for (std::size_t i = 0; i < naive.gradient.size(); ++i) {
      worst = std::max(worst, std::abs(naive.gradient[i] - perl.gradient[i]));
    }
    if (naive.report.per_rollout.size() != perl.report.per_rollout.size()) {
      diagnostics_match = false;
      continue;
    }
    for (std::size_t k = 0; k < naive.report.per_rollout.size(); ++k) {
      const auto& a = naive.report.per_rollout[k];
      const auto& b = perl.report.per_rollout[k];
      worst = std::max({worst, std::abs(a.ratio - b.ratio), std::abs(a.advantage - b.advantage)});
      diagnostics_match = diagnostics_match && a.clipped == b.clipped;
    }
  }
  return {worst <= tol && diagnostics_match,
          fmt("100 fixtures, max abs difference %.3g (tol %.0e), clip flags %s", worst, tol,
              diagnostics_match ? "identical" : "differ")};
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness

constexpr double kFdStep = 1e-5;
constexpr double kFdFloor = 1e-6;

std::vector<double> central_difference(std::vector<double> theta, const std::function<double(const std::vector<double>&)>& f) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + kFdStep;
    const double up = f(theta);
    theta[i] = keep - kFdStep;
    const double down = f(theta);
    theta[i] = keep;
    g[i] = (up - down) / (2.0 * kFdStep);
  }
  return g;
}

Outcome gradient_correctness() {
  constexpr double tol = 1e-4;
  const Vocabulary vocab;
  double worst_logprob = 0.0, worst_loss = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng = make_stream(s, {0x6664});
    const ArchConfig arch = small_arch();
    PolicyParams p = init_params(500 + s, arch);
    const TokenSeq x = tokenize(permrl::testing::random_instance(rng, vocab, s));
    const TokenSeq o = permrl::testing::random_response(rng, arch.vocab_size, 5);
    const auto analytic = grad_logprob(p, x, o);
    const auto numeric = central_difference(p.theta, [&](const std::vector<double>& th) {
      PolicyParams q = p;
      q.theta = th;
      return logprob(q, x, o);
    });
    worst_logprob = std::max(worst_logprob, max_relative_error(analytic, numeric, kFdFloor));
  }
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto f = make_loss_fixture(2000 + s, 1 + static_cast<int>(s % 3), 2 + static_cast<int>(s % 2), small_arch());
    const MergedBatch b = merged_advantages(f.groups, 1e-8);
    const LossConfig lc{0.2, 0.05};
    const auto analytic = perl_loss(b, f.snapshots, lc).gradient;
    const auto numeric = central_difference(f.snapshots.current.theta, [&](const std::vector<double>& th) {
      PolicySnapshots snaps = f.snapshots;
      snaps.current.theta = th;
      return -perl_loss(b, snaps, lc).report.total;
    });
    worst_loss = std::max(worst_loss, max_relative_error(analytic, numeric, kFdFloor));
  }
  return {worst_logprob < tol && worst_loss < tol,
          fmt("max relative error grad_logprob %.3g, loss %.3g over 100 configs each (tol %.0e)", worst_logprob,
              worst_loss, tol)};
}

// ---------------------------------------------------------------------------
// 4. Normalization invariants

Outcome normalization_invariants() {
  constexpr double eps = 1e-8;
  Rng rng = make_stream(4, {0x6e6f726d});
  double worst_mean = 0.0, worst_var = 0.0, worst_shift = 0.0, worst_scale = 0.0;
  std::size_t guarded = 0;
  bool guard_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const int num_groups = 1 + static_cast<int>(uniform_index(rng, 4));
    const int n = 1 + static_cast<int>(uniform_index(rng, 8));
    const bool discrete = bernoulli(rng, 0.5);
    std::vector<RolloutGroup> groups;
    for (int g = 0; g < num_groups; ++g) {
      std::vector<double> r;
      for (int k = 0; k < n; ++k) {
        r.push_back(discrete ? std::vector<double>{0.0, 0.1, 1.0, 1.1}[uniform_index(rng, 4)] : 1.1 * uniform01(rng));
      }
      groups.push_back(group_with_rewards(std::move(r)));
    }
    const MergedBatch b = merged_advantages(groups, eps);
    std::vector<double> flat;
    for (const auto& a : b.advantages) flat.insert(flat.end(), a.begin(), a.end());
    if (b.popstd > eps) {
      const double mean = std::accumulate(flat.begin(), flat.end(), 0.0) / static_cast<double>(flat.size());
      double var = 0.0;
      for (double a : flat) var += (a - mean) * (a - mean);
      var /= static_cast<double>(flat.size());
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_var = std::max(worst_var, std::abs(var - 1.0));
    } else {
      ++guarded;
      guard_ok = guard_ok && std::all_of(flat.begin(), flat.end(), [](double a) { return a == 0.0; });
    }

    const double c = 5.0 * uniform01(rng) - 2.5;
    const double lambda = 0.1 + 4.0 * uniform01(rng);
    auto shifted = groups, scaled = groups;
    for (auto& g : shifted) for (double& r : g.rewards) r += c;
    for (auto& g : scaled) for (double& r : g.rewards) r *= lambda;
    const MergedBatch bs = merged_advantages(shifted, eps);
    const MergedBatch bl = merged_advantages(scaled, eps);
    worst_scale = std::max(worst_scale, std::abs(bl.baseline - lambda * b.baseline));
    if (b.popstd > eps) {
      for (std::size_t g = 0; g < flat.size() / n; ++g) {
        for (int k = 0; k < n; ++k) {
          worst_shift = std::max(worst_shift, std::abs(bs.advantages[g][k] - b.advantages[g][k]));
          worst_scale = std::max(worst_scale, std::abs(bl.advantages[g][k] - b.advantages[g][k]));
        }
      }
    }
  }
  const bool pass = worst_mean <= 1e-9 && worst_var <= 1e-6 && worst_shift <= 1e-9 && worst_scale <= 1e-9 && guard_ok;
  return {pass, fmt("1000 batches (%zu guarded): |mean| %.2g, |var-1| %.2g, shift %.2g, scale %.2g", guarded,
                    worst_mean, worst_var, worst_shift, worst_scale)};
}

// ---------------------------------------------------------------------------
// 5. Answer transformation against the oracle

Outcome answer_transformation() {
  const Vocabulary vocab;
  const std::vector<TaskTemplate> shapes = {
      {TemplateKind::ReferenceComparison, 3}, {TemplateKind::ReferenceComparison, 4},
      {TemplateKind::AttributeExtremum, 2},   {TemplateKind::AttributeExtremum, 3},
      {TemplateKind::AttributeExtremum, 4},   {TemplateKind::CountingInvariant, 2},
      {TemplateKind::CountingInvariant, 3},   {TemplateKind::CountingInvariant, 4},
  };
  GeneratorConfig cfg;
  std::size_t checked = 0, disagreements = 0, unmappable = 0, wrong_unmappable = 0;
  for (std::size_t si = 0; si < shapes.size(); ++si) {
    for (std::uint64_t i = 0; i < 20; ++i) {
      Rng rng = make_stream(55, {si, i});
      const TaskInstance x = generate_instance(shapes[si], cfg, vocab, rng, "c5");
      for (const auto& sigma : all_permutations(x.images.size())) {
        const TaskInstance permuted = apply_permutation(x, sigma);
        try {
          const Answer y_hat = transform_answer(x.answer, sigma, x);
          const Answer truth = oracle_answer(permuted, vocab);
          ++checked;
          if (y_hat.value != truth.value || y_hat.kind != truth.kind) ++disagreements;
        } catch (const UnmappableAnswerError&) {
          ++unmappable;
          // Only reference-comparison permutations that move the reference are refused.
          if (shapes[si].kind != TemplateKind::ReferenceComparison || sigma[0] == 0) ++wrong_unmappable;
        }
      }
    }
  }
  return {disagreements == 0 && wrong_unmappable == 0 && checked > 0,
          fmt("%zu (instance, permutation) pairs checked, %zu disagreements, %zu unmappable (%zu unexpected)", checked,
              disagreements, unmappable, wrong_unmappable)};
}

// ---------------------------------------------------------------------------
// 6. Difficulty filter direction

Outcome pipeline_direction() {
  // Correct counts out of m = 10 and how many instances get each.
  const std::vector<std::pair<int, int>> layout = {{10, 40}, {9, 20}, {8, 10}, {7, 5}, {6, 5}, {5, 5},
                                                   {4, 3},   {3, 3},  {2, 3},  {1, 3}, {0, 3}};
  constexpr int m = 10;
  GeneratorConfig gen;
  gen.seed = 6;
  gen.dataset_size = 100;
  auto dataset = generate_dataset(gen);
  std::map<std::string, int> hits;
  std::size_t idx = 0;
  int retained_hits = 0, retained = 0, total_hits = 0;
  for (const auto& [h, count] : layout) {
    for (int c = 0; c < count; ++c) {
      hits[dataset[idx++].id] = h;
      total_hits += h;
      if (h >= 1 && h <= 8) {
        retained_hits += h;
        ++retained;
      }
    }
  }
  std::map<std::string, int> calls;
  std::mutex mu;
  const AccuracyScorer scripted = [&](const TaskInstance& x, Rng&) {
    std::lock_guard lock(mu);
    return calls[x.id]++ < hits.at(x.id);
  };
  DifficultyReport report = difficulty_score(dataset, scripted, m, 6);
  const auto kept = difficulty_filter(dataset, report, KeepBand{});
  const double want_before = static_cast<double>(total_hits) / (100.0 * m);
  const double want_after = static_cast<double>(retained_hits) / (static_cast<double>(retained) * m);
  const bool pass = std::abs(report.mean_before - 0.78) <= 0.02 && report.mean_after &&
                    *report.mean_after < report.mean_before && std::abs(*report.mean_after - want_after) <= 1e-12 &&
                    std::abs(report.mean_before - want_before) <= 1e-12 &&
                    kept.size() == static_cast<std::size_t>(retained);
  return {pass, fmt("mean %.4f -> %.6f (analytic %d/%d = %.6f), retained %zu of 100", report.mean_before,
                    report.mean_after.value_or(NAN), retained_hits / m, retained, want_after, kept.size())};
}

// ---------------------------------------------------------------------------
// 7. Learning smoke test

std::vector<TaskInstance> two_choice_dataset(std::uint64_t seed) {
  GeneratorConfig g;
  g.seed = seed;
  g.dataset_size = 256;
  g.templates = {{{TemplateKind::ReferenceComparison, 3}, 1.0}, {{TemplateKind::AttributeExtremum, 2}, 1.0}};
  return generate_dataset(g);
}

Outcome learning_smoke() {
  int improved = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainerConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = 16;
    cfg.n = 6;
    cfg.n_s = 1;
    cfg.t_max = 200;
    cfg.learning_rate = 0.1;
    const RunResult r = run(cfg, two_choice_dataset(1000 + seed), {});
    const double first = r.metrics.front().mean_reward_original;
    const double last = r.metrics.back().mean_reward_original;
    if (last > first) ++improved;
    per_seed += fmt(" %.3f->%.3f", first, last);
  }
  return {improved >= 4, fmt("reward increased on %d/5 seeds (need 4):%s", improved, per_seed.c_str())};
}

// ---------------------------------------------------------------------------
// 8. Permutation gap, PeRL vs naive at 12 rollouts per input

GeneratorConfig biased_env(std::uint64_t seed) {
  GeneratorConfig g;
  g.seed = seed;
  g.dataset_size = 256;
  g.templates = {{{TemplateKind::AttributeExtremum, 2}, 1.0}};
  g.answer_a_probability = 0.9;
  g.vocab.feature_dim = 1;
  return g;
}

Outcome perl_gap() {
  int not_worse = 0, strictly_better = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GeneratorConfig env = biased_env(1000 + seed);
    const auto train_set = generate_dataset(env);
    GeneratorConfig held_out = env;
    held_out.seed = 5000 + seed;
    RunOptions opts;
    opts.gap_eval_set = make_gap_eval_set(generate_dataset(held_out), 77 + seed);

    TrainerConfig perl;
    perl.seed = seed;
    perl.vocab = env.vocab;
    perl.arch.vocab_size = Vocabulary(env.vocab).size();
    perl.t_max = 200;
    perl.learning_rate = 0.1;
    perl.n_s = 1;
    perl.n = 6;
    TrainerConfig naive = perl;
    naive.algorithm = Algorithm::NaiveGrpo;
    naive.n_s = 0;
    naive.n = 12;

    const double gap_naive = *run(naive, train_set, opts).metrics.back().permutation_gap;
    const double gap_perl = *run(perl, train_set, opts).metrics.back().permutation_gap;
    if (gap_perl <= gap_naive) ++not_worse;
    if (gap_perl < gap_naive) ++strictly_better;
    per_seed += fmt(" %.3f/%.3f", gap_perl, gap_naive);
  }
  return {not_worse >= 3, fmt("PeRL gap <= naive on %d/5 seeds (strictly lower on %d; need 3), perl/naive:%s",
                              not_worse, strictly_better, per_seed.c_str())};
}

// ---------------------------------------------------------------------------
// 9. Near-zero advantages, merged vs per-group

Outcome near_zero_fraction() {
  const std::vector<std::pair<std::vector<double>, std::vector<double>>> samples = {
      {{1.1, 1.1, 1.1, 1.1, 1.1, 1.1}, {0.1, 0.1, 0.1, 0.1, 0.1, 0.1}},
      {{1.1, 1.1, 1.1, 1.1, 1.1, 0.1}, {0.1, 0.1, 0.1, 0.1, 1.1, 0.1}},
      {{1.1, 1.1, 1.1, 1.1, 1.1, 1.1}, {0.1, 0.1, 1.1, 0.1, 0.1, 0.1}},
      {{0.0, 0.1, 0.1, 0.1, 0.1, 0.1}, {0.1, 0.1, 0.1, 0.1, 0.1, 0.1}},
  };
  std::vector<double> per_group, merged;
  for (const auto& [orig, perm] : samples) {
    for (const auto* r : {&orig, &perm}) {
      const auto a = group_advantages(*r, 1e-8);
      per_group.insert(per_group.end(), a.begin(), a.end());
    }
    const MergedBatch b = merged_advantages({group_with_rewards(orig), group_with_rewards(perm)}, 1e-8);
    for (const auto& a : b.advantages) merged.insert(merged.end(), a.begin(), a.end());
  }
  const double f_group = fraction_near_zero(per_group);
  const double f_merged = fraction_near_zero(merged);
  return {f_merged < f_group, fmt("fraction |A|<0.1: merged %.3f vs per-group %.3f", f_merged, f_group)};
}

// ---------------------------------------------------------------------------
// 10. Determinism and resume

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto root = std::filesystem::temp_directory_path() / fmt("permrl_acceptance_%d", static_cast<int>(::getpid()));
  std::filesystem::remove_all(root);
  TrainerConfig cfg;
  cfg.seed = 10;
  cfg.t_max = 40;
  cfg.batch_size = 8;
  cfg.checkpoint_interval = 10;
  const auto data = two_choice_dataset(10);
  RunOptions opts;
  opts.gap_eval_set = make_gap_eval_set(two_choice_dataset(11), 3);
  opts.gap_interval = 10;

  opts.out_dir = root / "a";
  run(cfg, data, opts);
  opts.out_dir = root / "b";
  run(cfg, data, opts);

  opts.out_dir = root / "c";
  opts.stop_after = 23;
  run(cfg, data, opts);
  opts.stop_after.reset();
  opts.resume_from = root / "c" / "checkpoint.bin";
  cfg.num_workers = 3;  // runtime-only knob
  run(cfg, data, opts);

  const std::string a = slurp(root / "a" / "metrics.jsonl");
  const std::string b = slurp(root / "b" / "metrics.jsonl");
  const std::string c = slurp(root / "c" / "metrics.jsonl");
  const bool same_ckpt = slurp(root / "a" / "checkpoint.bin") == slurp(root / "c" / "checkpoint.bin");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  std::filesystem::remove_all(root);
  return {!a.empty() && lines == 40 && a == b && a == c && same_ckpt,
          fmt("%ld metric lines; repeat run %s, resumed run %s, final checkpoints %s", static_cast<long>(lines),
              a == b ? "byte-identical" : "differs", a == c ? "byte-identical" : "differs",
              same_ckpt ? "identical" : "differ")};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  struct Criterion {
    const char* name;
    Outcome (*fn)();
  };
  const Criterion criteria[] = {
      {"equation oracles", equation_oracles},
      {"reduction law", reduction_law},
      {"gradient correctness", gradient_correctness},
      {"normalization invariants", normalization_invariants},
      {"answer transformation", answer_transformation},
      {"difficulty filter direction", pipeline_direction},
      {"learning smoke test", learning_smoke},
      {"permutation gap, PeRL vs naive", perl_gap},
      {"near-zero advantage fraction", near_zero_fraction},
      {"determinism and resume", determinism},
  };
  int failed = 0;
  int index = 0;
  for (const auto& c : criteria) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %2d %s: %s (%.1fs)\n", out.pass ? "PASS" : "FAIL", index, c.name, out.detail.c_str(), secs);
    std::fflush(stdout);
    if (!out.pass) ++failed;
  }
  std::printf("%d/%d criteria passed\n", index - failed, index);
  return failed == 0 ? 0 : 1;
}
