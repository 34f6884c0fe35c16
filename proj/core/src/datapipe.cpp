// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/datapipe.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "permrl/env_synth.hpp"
#include "parallel.hpp"
#include "permrl/errors.hpp"

namespace permrl {
namespace {

constexpr int kHistogramBins = 10;
constexpr std::uint64_t kDifficultyStream = 0x64696666ULL;
constexpr std::uint64_t kAugmentStream = 0x61756711ULL;

}  // namespace

RuleFilterResult rule_filter(const std::vector<TaskInstance>& dataset, const RuleFilterConfig& cfg) {
  RuleFilterResult out;
  for (const auto& x : dataset) {
    bool keep = true;
    auto reject = [&](const char* predicate) {
      ++out.rejections[predicate];
      keep = false;
    };
    if (cfg.min_images && x.images.size() < *cfg.min_images) reject("min_images");
    if (cfg.max_images && x.images.size() > *cfg.max_images) reject("max_images");
    if (cfg.allowed_answer_kinds && !cfg.allowed_answer_kinds->contains(x.answer.kind)) reject("answer_kind");
    if (keep) {
      out.kept.push_back(x);
    } else {
      ++out.rejected_total;
    }
  }
  return out;
}

std::vector<TaskInstance> rephrase_passthrough(const std::vector<TaskInstance>& dataset) { return dataset; }

AccuracyScorer make_policy_scorer(PolicyParams params, Vocabulary vocab, SampleOptions opts) {
  return [params = std::move(params), vocab = std::move(vocab), opts](const TaskInstance& x, Rng& rng) {
    const TokenSeq prompt = tokenize(x);
    const Response r = sample(params, prompt, rng, opts);
    const auto extracted = extract_answer(vocab.detokenize(r.tokens), x.answer_space);
    return extracted && canonicalize_answer(extracted->value) == canonicalize_answer(x.answer.value);
  };
}

const DifficultyEntry* DifficultyReport::find(const std::string& id) const {
  auto it = std::find_if(per_sample.begin(), per_sample.end(), [&](const auto& e) { return e.id == id; });
  return it == per_sample.end() ? nullptr : &*it;
}

nlohmann::json DifficultyReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : per_sample) per.push_back({{"id", e.id}, {"correct", e.correct}, {"score", e.score}});
  nlohmann::json j = {{"m", m},
                      {"per_sample", std::move(per)},
                      {"unscored", unscored},
                      {"histogram", histogram},
                      {"mean_before", mean_before}};
  j["mean_after"] = mean_after ? nlohmann::json(*mean_after) : nlohmann::json();
  j["retained"] = retained ? nlohmann::json(*retained) : nlohmann::json();
  return j;
}

std::string DifficultyReport::histogram_text() const {
  std::ostringstream os;
  const std::size_t peak = histogram.empty() ? 0 : *std::max_element(histogram.begin(), histogram.end());
  for (std::size_t b = 0; b < histogram.size(); ++b) {
    const double lo = static_cast<double>(b) / kHistogramBins;
    const double hi = static_cast<double>(b + 1) / kHistogramBins;
    const std::size_t width = peak == 0 ? 0 : (histogram[b] * 50 + peak - 1) / peak;
    os << std::fixed << std::setprecision(1) << '[' << lo << ", " << hi << (b + 1 == histogram.size() ? ']' : ')')
       << ' ' << std::setw(6) << histogram[b] << ' ' << std::string(width, '#') << '\n';
  }
  os << std::setprecision(4) << "mean_before " << mean_before << '\n';
  if (mean_after) os << "mean_after  " << *mean_after << " (retained " << retained.value_or(0) << ")\n";
  return os.str();
}

DifficultyReport difficulty_score(const std::vector<TaskInstance>& dataset, const AccuracyScorer& scorer, int m,
                                  std::uint64_t seed, int num_workers) {
  if (m < 1) throw ConfigError("difficulty scoring needs m >= 1");
  std::vector<std::optional<int>> correct(dataset.size());
  detail::parallel_for(dataset.size(), num_workers, [&](std::size_t i) {
    Rng rng = make_stream(seed, {kDifficultyStream, i});
    try {
      int hits = 0;
      for (int k = 0; k < m; ++k) hits += scorer(dataset[i], rng) ? 1 : 0;
      correct[i] = hits;
    } catch (const std::exception& e) {
      spdlog::warn("scoring failed for {}: {}; instance left unscored", dataset[i].id, e.what());
    }
  });

  DifficultyReport report;
  report.m = m;
  report.histogram.assign(kHistogramBins, 0);
  double sum = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!correct[i]) {
      report.unscored.push_back(dataset[i].id);
      continue;
    }
    const int hits = *correct[i];
    const double s = static_cast<double>(hits) / static_cast<double>(m);
    report.per_sample.push_back({dataset[i].id, hits, m, s});
    sum += s;
    ++report.histogram[static_cast<std::size_t>(std::min(hits * kHistogramBins / m, kHistogramBins - 1))];
  }
  if (!report.per_sample.empty()) report.mean_before = sum / static_cast<double>(report.per_sample.size());
  return report;
}

void KeepBand::validate() const {
  if (!(lo >= 0.0 && lo <= hi && hi <= 1.0)) throw ConfigError("keep band must satisfy 0 <= lo <= hi <= 1");
}

std::vector<TaskInstance> difficulty_filter(const std::vector<TaskInstance>& dataset, DifficultyReport& report,
                                            const KeepBand& band) {
  band.validate();
  std::unordered_map<std::string, const DifficultyEntry*> index;
  for (const auto& e : report.per_sample) index.emplace(e.id, &e);

  std::vector<TaskInstance> kept;
  double sum = 0.0;
  for (const auto& x : dataset) {
    auto it = index.find(x.id);
    if (it == index.end()) continue;
    const double s = it->second->score;
    if (s < band.lo || s > band.hi) continue;
    TaskInstance y = x;
    y.difficulty_score = s;
    kept.push_back(std::move(y));
    sum += s;
  }
  report.retained = kept.size();
  if (kept.empty()) {
    report.mean_after.reset();
    spdlog::warn("difficulty filter retained no instances (band [{}, {}])", band.lo, band.hi);
  } else {
    report.mean_after = sum / static_cast<double>(kept.size());
  }
  return kept;
}

AugmentResult augment_permute(const std::vector<TaskInstance>& dataset, int n_s, std::uint64_t seed,
                              JudgeClient* judge) {
  if (n_s < 1) throw ConfigError("augmentation needs n_s >= 1");
  AugmentResult out;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const TaskInstance& x = dataset[i];
    for (int v = 0; v < n_s; ++v) {
      Rng rng = make_stream(seed, {kAugmentStream, i, static_cast<std::uint64_t>(v)});
      const auto sigma = sample_admissible_permutation(x, rng);
      if (!sigma) {
        ++out.stats.unmappable;
        continue;
      }
      int s = semantic_indicator(x, *sigma);
      if (judge) {
        const auto verdict = judge->check(x, *sigma);
        if (!verdict) {
          ++out.stats.judge_skipped;
          continue;
        }
        s = verdict->semantic_indicator;
      }
      Answer y_hat = x.answer;
      if (s == 0) {
        try {
          y_hat = relabel_choices(x.answer, *sigma, x);
        } catch (const UnmappableAnswerError& e) {
          spdlog::debug("{}", e.what());
          ++out.stats.unmappable;
          continue;
        }
        ++out.stats.relabeled;
      }
      TaskInstance x_hat = apply_permutation(x, *sigma);
      x_hat.answer = std::move(y_hat);
      out.variants.push_back(std::move(x_hat));
      ++out.stats.emitted;
    }
  }
  return out;
}

}  // namespace permrl
