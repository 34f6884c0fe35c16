// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

#include "parallel.hpp"
#include "permrl/checkpoint.hpp"
#include "permrl/env_synth.hpp"
#include "permrl/errors.hpp"
#include "permrl/records.hpp"

namespace permrl {
namespace {

constexpr std::uint64_t kRolloutStream = 0x726f6c6cULL;
constexpr std::uint64_t kCoinStream = 0x636f696eULL;
constexpr std::uint64_t kEpochStream = 0x65706f63ULL;
constexpr std::uint64_t kGapStream = 0x67617073ULL;

struct SampleRollout {
  MergedBatch batch;
  BuildStats build;
  std::size_t correct_original = 0;
};

GroupInput identity_copy(const TaskInstance& sample) {
  return {sample, Permutation::identity(sample.images.size())};
}

void fill_slot(const TaskInstance& x, bool swap, Rng& rng, BuildStats* stats, std::vector<GroupInput>& out) {
  if (!swap) {
    out.push_back(identity_copy(x));
    return;
  }
  std::optional<Permutation> sigma;
  if (x.images.size() >= 2) sigma = sample_admissible_permutation(x, rng);
  if (!sigma) {
    if (stats) ++stats->single_image_passthrough;
    out.push_back(identity_copy(x));
    return;
  }
  GroupInput g{apply_permutation(x, *sigma), *sigma};
  g.input.answer = transform_answer(x.answer, *sigma, x);
  if (stats) ++stats->swaps_applied;
  out.push_back(std::move(g));
}

SampleRollout rollout_sample(const TaskInstance& x, const PolicySnapshots& snaps, const TrainerConfig& cfg,
                             const Vocabulary& vocab, double alpha, std::optional<bool> batch_coin, Rng& rng) {
  SampleRollout out;
  const auto specs = batch_coin ? build_groups_with_coin(x, cfg.n_s, *batch_coin, rng, &out.build)
                                : build_groups(x, cfg.n_s, alpha, rng, &out.build);
  const RewardWeights weights{cfg.w_acc, cfg.w_fmt, cfg.reward_mode};
  const SampleOptions opts{cfg.max_response_len, cfg.temperature, Vocabulary::eos()};

  std::vector<RolloutGroup> groups;
  groups.reserve(specs.size());
  for (std::size_t gi = 0; gi < specs.size(); ++gi) {
    RolloutGroup g;
    g.input = specs[gi].input;
    g.permutation = specs[gi].permutation;
    g.prompt_tokens = tokenize(g.input);
    for (int k = 0; k < cfg.n; ++k) {
      Response r = sample(snaps.old, g.prompt_tokens, rng, opts);
      r.text = vocab.detokenize(r.tokens);
      r.logprob_ref = logprob(snaps.reference, g.prompt_tokens, r.tokens);
      const RewardBreakdown rb = score(g.input, r, g.input.answer, weights);
      if (gi == 0 && rb.accuracy_ok) ++out.correct_original;
      g.responses.push_back(std::move(r));
      g.rewards.push_back(rb.total);
    }
    validate(g, cfg.r_max());
    groups.push_back(std::move(g));
  }
  if (!cfg.allow_unequal_groups) {
    for (const auto& g : groups) {
      if (g.responses.size() != groups.front().responses.size()) throw ConfigError("rollout groups differ in size");
    }
  }
  out.batch = merged_advantages(std::move(groups), cfg.epsilon_std);
  return out;
}

LossResult sample_loss(const MergedBatch& batch, const PolicySnapshots& snaps, const TrainerConfig& cfg) {
  const LossConfig lc{cfg.clip_eps, cfg.beta};
  if (cfg.algorithm == Algorithm::NaiveGrpo) return naive_grpo_loss(batch.groups.front(), snaps, lc, cfg.epsilon_std);
  return perl_loss(batch, snaps, lc);
}

bool is_correct(const std::string& text, const TaskInstance& x) {
  const auto extracted = extract_answer(text, x.answer_space);
  return extracted && canonicalize_answer(extracted->value) == canonicalize_answer(x.answer.value);
}

void append_line(std::ofstream& out, const std::string& line, std::int64_t step, const std::filesystem::path& path) {
  out << line << '\n';
  out.flush();
  if (!out) throw IoError("failed writing " + path.string() + " at step " + std::to_string(step));
}

/// Keeps the leading metrics lines whose step is <= last_step.
void truncate_metrics(const std::filesystem::path& path, std::int64_t last_step) {
  std::vector<std::string> keep;
  {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("step") || j["step"].get<std::int64_t>() > last_step) break;
      keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot rewrite " + path.string() + " for resume");
  for (const auto& l : keep) out << l << '\n';
}

}  // namespace

double schedule_alpha(const ScheduleState& s) {
  if (s.t_max <= 0) throw ConfigError("schedule needs t_max > 0");
  const double frac = static_cast<double>(s.t) / static_cast<double>(s.t_max);
  return s.alpha_0 * std::max(0.0, 1.0 - frac);
}

std::vector<GroupInput> build_groups(const TaskInstance& x, int n_s, double alpha_t, Rng& rng,
                                     BuildStats* stats) {
  if (n_s < 0) throw ConfigError("n_s must be >= 0");
  std::vector<GroupInput> out;
  out.reserve(static_cast<std::size_t>(n_s) + 1);
  out.push_back(identity_copy(x));
  for (int i = 0; i < n_s; ++i) fill_slot(x, bernoulli(rng, alpha_t), rng, stats, out);
  return out;
}

std::vector<GroupInput> build_groups_with_coin(const TaskInstance& x, int n_s, bool swap, Rng& rng,
                                               BuildStats* stats) {
  if (n_s < 0) throw ConfigError("n_s must be >= 0");
  std::vector<GroupInput> out;
  out.reserve(static_cast<std::size_t>(n_s) + 1);
  out.push_back(identity_copy(x));
  for (int i = 0; i < n_s; ++i) fill_slot(x, swap, rng, stats, out);
  return out;
}

StepResult train_step(const std::vector<TaskInstance>& batch, PolicySnapshots& snapshots, const TrainerConfig& cfg,
                      const ScheduleState& state, const Vocabulary& vocab) {
  if (batch.empty()) throw InputError("training batch is empty");
  if (snapshots.current.empty() || snapshots.reference.empty()) {
    throw UsageError("train_step needs current and reference snapshots");
  }
  const auto started = std::chrono::steady_clock::now();
  snapshots.refresh_old();

  const double alpha = state.t_max > 0 ? schedule_alpha(state) : 0.0;
  std::optional<bool> batch_coin;
  if (cfg.swap_granularity == SwapGranularity::PerBatch) {
    Rng coin = make_stream(cfg.seed, {kCoinStream, static_cast<std::uint64_t>(state.t)});
    batch_coin = bernoulli(coin, alpha);
  }

  std::vector<SampleRollout> rollouts(batch.size());
  detail::parallel_for(batch.size(), cfg.num_workers, [&](std::size_t b) {
    Rng rng = make_stream(cfg.seed, {kRolloutStream, static_cast<std::uint64_t>(state.t), b});
    rollouts[b] = rollout_sample(batch[b], snapshots, cfg, vocab, alpha, batch_coin, rng);
  });

  PolicySnapshots work = snapshots;
  StepResult result;
  StepMetrics& m = result.metrics;
  m.step = state.t + 1;
  m.alpha = alpha;

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (int u = 0; u < cfg.inner_updates; ++u) {
    std::vector<LossResult> losses(batch.size());
    detail::parallel_for(batch.size(), cfg.num_workers,
                         [&](std::size_t b) { losses[b] = sample_loss(rollouts[b].batch, work, cfg); });

    std::vector<double> grad(work.current.theta.size(), 0.0);
    double surrogate = 0.0, kl = 0.0, total = 0.0, clipped = 0.0;
    std::size_t rollouts_seen = 0;
    for (const auto& loss : losses) {
      for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += loss.gradient[p];
      surrogate += loss.report.surrogate;
      kl += loss.report.kl;
      total += loss.report.total;
      for (const auto& d : loss.report.per_rollout) clipped += d.clipped ? 1.0 : 0.0;
      rollouts_seen += loss.report.per_rollout.size();
    }
    for (double& g : grad) g *= inv_b;
    const double norm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
    if (!std::isfinite(total) || !std::isfinite(norm)) {
      throw NumericalError("non-finite loss at step " + std::to_string(m.step) + " (update " + std::to_string(u + 1) +
                           "): objective " + std::to_string(total * inv_b) + ", gradient norm " +
                           std::to_string(norm) + "; parameters left unchanged");
    }
    if (u == 0) {
      m.surrogate = surrogate * inv_b;
      m.kl = kl * inv_b;
      m.total = total * inv_b;
      m.fraction_clipped = rollouts_seen ? clipped / static_cast<double>(rollouts_seen) : 0.0;
      m.grad_norm = norm;
    }
    work.current = update(work.current, grad, cfg.learning_rate);
  }

  double reward_orig = 0.0, reward_perm = 0.0, diversity = 0.0;
  std::size_t n_orig = 0, n_perm = 0, n_div = 0, correct = 0;
  for (const auto& r : rollouts) {
    m.swaps_applied += r.build.swaps_applied;
    m.single_image_passthrough += r.build.single_image_passthrough;
    correct += r.correct_original;
    for (std::size_t gi = 0; gi < r.batch.groups.size(); ++gi) {
      const auto& g = r.batch.groups[gi];
      m.advantages.add(r.batch.advantages[gi]);
      if (gi == 0) {
        for (double v : g.rewards) reward_orig += v;
        n_orig += g.rewards.size();
      } else if (g.permutation.applied()) {
        for (double v : g.rewards) reward_perm += v;
        n_perm += g.rewards.size();
      }
      if (auto d = diversity_proxy(std::span<const Response>(g.responses))) {
        diversity += *d;
        ++n_div;
      }
    }
  }
  m.advantages.finalize();
  m.mean_reward_original = reward_orig / static_cast<double>(n_orig);
  m.mean_accuracy_original = static_cast<double>(correct) / static_cast<double>(n_orig);
  if (n_perm) m.mean_reward_permuted = reward_perm / static_cast<double>(n_perm);
  if (n_div) m.diversity = diversity / static_cast<double>(n_div);
  m.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  m.check_finite();

  result.params = std::move(work.current);
  result.batches.reserve(rollouts.size());
  for (auto& r : rollouts) result.batches.push_back(std::move(r.batch));
  return result;
}

std::vector<GapPair> make_gap_eval_set(const std::vector<TaskInstance>& dataset, std::uint64_t seed) {
  std::vector<GapPair> out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Rng rng = make_stream(seed, {kGapStream, i});
    const auto sigma = sample_admissible_permutation(dataset[i], rng);
    if (!sigma) continue;
    TaskInstance permuted = apply_permutation(dataset[i], *sigma);
    permuted.answer = transform_answer(dataset[i].answer, *sigma, dataset[i]);
    out.push_back({dataset[i], std::move(permuted)});
  }
  return out;
}

Answerer greedy_answerer(const PolicyParams& params, const Vocabulary& vocab, int max_len) {
  return [&params, &vocab, max_len](const TaskInstance& x) {
    Rng unused{0};
    const Response r = sample(params, tokenize(x), unused, {max_len, 0.0, Vocabulary::eos()});
    return vocab.detokenize(r.tokens);
  };
}

double permutation_gap(const Answerer& answer, const std::vector<GapPair>& eval_set) {
  if (eval_set.empty()) throw InputError("permutation gap needs a non-empty evaluation set");
  std::size_t orig = 0, perm = 0;
  for (const auto& pair : eval_set) {
    orig += is_correct(answer(pair.original), pair.original) ? 1 : 0;
    perm += is_correct(answer(pair.permuted), pair.permuted) ? 1 : 0;
  }
  const auto n = static_cast<double>(eval_set.size());
  return static_cast<double>(orig) / n - static_cast<double>(perm) / n;
}

double permutation_gap(const PolicyParams& params, const std::vector<GapPair>& eval_set, const Vocabulary& vocab,
                       int max_len) {
  return permutation_gap(greedy_answerer(params, vocab, max_len), eval_set);
}

std::vector<std::size_t> epoch_order(std::size_t dataset_size, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_stream(seed, {kEpochStream, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = dataset_size; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

std::vector<TaskInstance> batch_for_step(const std::vector<TaskInstance>& dataset, const TrainerConfig& cfg,
                                         std::int64_t step) {
  if (dataset.empty()) throw InputError("dataset is empty");
  const auto n = dataset.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  const auto order = epoch_order(n, cfg.seed, step / per_epoch);
  const auto begin = static_cast<std::size_t>(step % per_epoch) * bs;
  std::vector<TaskInstance> out;
  for (std::size_t i = begin; i < std::min(n, begin + bs); ++i) out.push_back(dataset[order[i]]);
  return out;
}

std::uint64_t run_hash(const TrainerConfig& cfg, const std::vector<TaskInstance>& dataset, const Vocabulary& vocab) {
  auto j = to_json(cfg);
  j.erase("num_workers");
  j.erase("checkpoint_interval");
  std::uint64_t h = fnv1a64(j.dump());
  for (const auto& x : dataset) h = fnv1a64(encode_record(x, vocab).dump(), h);
  return h;
}

RunResult run(const TrainerConfig& cfg, const std::vector<TaskInstance>& dataset, const RunOptions& opts) {
  cfg.validate();
  if (dataset.empty()) throw InputError("training dataset is empty");
  const Vocabulary vocab(cfg.vocab);
  const std::int64_t total_steps = cfg.total_steps(dataset.size());
  const std::uint64_t hash = run_hash(cfg, dataset, vocab);
  const bool write_files = !opts.out_dir.empty();

  RunResult result;
  std::int64_t start = 0;
  if (opts.resume_from) {
    Checkpoint ck = load_checkpoint(*opts.resume_from);
    if (ck.run_hash != hash) {
      throw ResumeMismatchError("checkpoint " + opts.resume_from->string() +
                                " was written for a different config or dataset");
    }
    result.snapshots = {ck.current, ck.current, ck.reference};
    start = ck.step;
  } else {
    result.snapshots = PolicySnapshots::from_initial(init_params(cfg.seed, cfg.arch));
  }

  std::ofstream metrics_out, timing_out;
  if (write_files) {
    std::filesystem::create_directories(opts.out_dir);
    result.metrics_path = opts.out_dir / "metrics.jsonl";
    result.checkpoint_path = opts.out_dir / "checkpoint.bin";
    const auto timing_path = opts.out_dir / "timing.jsonl";
    if (opts.resume_from) {
      truncate_metrics(result.metrics_path, start);
      truncate_metrics(timing_path, start);
    }
    const auto mode = opts.resume_from ? std::ios::app : std::ios::trunc;
    metrics_out.open(result.metrics_path, std::ios::out | mode);
    timing_out.open(timing_path, std::ios::out | mode);
    if (!metrics_out || !timing_out) throw IoError("cannot open metrics files in " + opts.out_dir.string());
  }

  auto checkpoint = [&](std::int64_t step) {
    if (!write_files) return;
    save_checkpoint(result.checkpoint_path,
                    {hash, cfg.seed, step, result.snapshots.current, result.snapshots.reference});
  };
  if (!opts.resume_from) checkpoint(0);

  std::int64_t completed = start;
  for (std::int64_t t = start; t < total_steps; ++t) {
    const auto batch = batch_for_step(dataset, cfg, t);
    StepResult step = train_step(batch, result.snapshots, cfg, {t, total_steps, cfg.alpha_0}, vocab);
    result.snapshots.current = std::move(step.params);
    completed = t + 1;

    const bool eval_now = !opts.gap_eval_set.empty() &&
                          ((opts.gap_interval > 0 && completed % opts.gap_interval == 0) || completed == total_steps);
    if (eval_now) {
      step.metrics.permutation_gap =
          permutation_gap(result.snapshots.current, opts.gap_eval_set, vocab, cfg.max_response_len);
    }
    if (write_files) {
      append_line(metrics_out, step.metrics.to_json().dump(), completed, result.metrics_path);
      append_line(timing_out,
                  nlohmann::json{{"step", completed}, {"wall_time_seconds", step.metrics.wall_time_seconds}}.dump(),
                  completed, opts.out_dir / "timing.jsonl");
    }
    if (opts.on_step) opts.on_step(step.metrics);
    result.metrics.push_back(std::move(step.metrics));

    if (cfg.checkpoint_interval > 0 && completed % cfg.checkpoint_interval == 0) checkpoint(completed);
    if (opts.stop_after && completed >= *opts.stop_after) break;
  }
  checkpoint(completed);
  result.steps_completed = completed;
  return result;
}

std::vector<SweepPoint> sweep_ns(const TrainerConfig& base, const std::vector<TaskInstance>& dataset,
                                 const std::vector<int>& ns_values, BudgetMode mode, int total_rollouts,
                                 const std::vector<GapPair>& gap_eval_set) {
  std::vector<SweepPoint> out;
  for (int ns : ns_values) {
    TrainerConfig cfg = base;
    cfg.n_s = ns;
    if (ns > 0) cfg.algorithm = Algorithm::PeRL;
    if (mode == BudgetMode::FixedTotal) {
      if (total_rollouts % (ns + 1) != 0) {
        throw ConfigError("total rollouts " + std::to_string(total_rollouts) + " is not divisible by n_s + 1 = " +
                          std::to_string(ns + 1));
      }
      cfg.n = total_rollouts / (ns + 1);
    }
    RunOptions opts;
    opts.gap_eval_set = gap_eval_set;
    RunResult r = run(cfg, dataset, opts);
    SweepPoint p;
    p.n_s = ns;
    p.n = cfg.n;
    if (!r.metrics.empty()) {
      p.final_mean_reward = r.metrics.back().mean_reward_original;
      p.final_gap = r.metrics.back().permutation_gap;
    }
    p.metrics = std::move(r.metrics);
    spdlog::info("sweep n_s={} n={} final reward {:.4f}", p.n_s, p.n, p.final_mean_reward);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace permrl
