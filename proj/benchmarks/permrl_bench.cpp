// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <spdlog/spdlog.h>

#include "permrl/env_synth.hpp"
#include "permrl/grpo.hpp"
#include "permrl/policy.hpp"
#include "permrl/trainer.hpp"

namespace {

using namespace permrl;

TaskInstance sample_instance(int images) {
  GeneratorConfig cfg;
  Rng rng(1);
  return generate_instance({TemplateKind::AttributeExtremum, images}, cfg, Vocabulary{}, rng, "bench");
}

void BM_LogprobAndGrad(benchmark::State& state) {
  ArchConfig arch;
  arch.hidden_dim = static_cast<int>(state.range(0));
  const PolicyParams p = init_params(0, arch);
  const TokenSeq x = tokenize(sample_instance(3));
  const TokenSeq o{1, 9, 2, 5, 0};
  std::vector<double> grad(p.theta.size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    benchmark::DoNotOptimize(logprob_and_grad(p, x, o, grad));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_LogprobAndGrad)->Arg(16)->Arg(64)->Arg(256);

void BM_Sample(benchmark::State& state) {
  const PolicyParams p = init_params(0, ArchConfig{});
  const TokenSeq x = tokenize(sample_instance(3));
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(sample(p, x, rng, {6, 1.0}));
}
BENCHMARK(BM_Sample);

void BM_MergedAdvantages(benchmark::State& state) {
  const auto groups_count = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<RolloutGroup> groups(groups_count);
  for (auto& g : groups) {
    g.responses.resize(64);
    for (int k = 0; k < 64; ++k) g.rewards.push_back(uniform01(rng));
  }
  for (auto _ : state) benchmark::DoNotOptimize(merged_advantages(groups, 1e-8));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(groups_count) * 64);
}
BENCHMARK(BM_MergedAdvantages)->Arg(2)->Arg(8)->Arg(32);

void BM_TrainStep(benchmark::State& state) {
  spdlog::set_level(spdlog::level::warn);
  GeneratorConfig gen;
  gen.dataset_size = 16;
  const auto batch = generate_dataset(gen);
  TrainerConfig cfg;
  cfg.num_workers = static_cast<int>(state.range(0));
  const Vocabulary vocab;
  auto snaps = PolicySnapshots::from_initial(init_params(0, cfg.arch));
  std::int64_t t = 0;
  for (auto _ : state) {
    auto r = train_step(batch, snaps, cfg, {t++ % 100, 100, 1.0}, vocab);
    benchmark::DoNotOptimize(r.params);
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
