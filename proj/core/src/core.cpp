// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "permrl/errors.hpp"
#include "permrl/rng.hpp"

namespace permrl {
namespace {

constexpr std::string_view kPermTag = "@p";

}  // namespace

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void validate(const TaskInstance& x, int scoring_rollouts) {
  const auto markers =
      static_cast<std::size_t>(std::count(x.query_tokens.begin(), x.query_tokens.end(), Vocabulary::image()));
  if (markers != x.images.size()) {
    throw InputError(x.id + ": " + std::to_string(markers) + " image placeholders but " +
                     std::to_string(x.images.size()) + " images");
  }
  if (std::find(x.answer_space.begin(), x.answer_space.end(), x.answer.value) == x.answer_space.end()) {
    throw InputError(x.id + ": answer '" + x.answer.value + "' is not in the answer space");
  }
  if (x.answer.kind == AnswerKind::ChoiceLabel) {
    const auto& v = x.answer.value;
    if (v.size() != 1 || v[0] < 'A' || v[0] > 'Z') {
      throw InputError(x.id + ": choice labels are single uppercase letters");
    }
  }
  for (const auto& [label, pos] : x.answer.choice_image_refs) {
    if (pos >= x.images.size()) throw InputError(x.id + ": choice " + label + " refers to a missing image");
  }
  if (x.difficulty_score) {
    const double s = *x.difficulty_score;
    if (!(s >= 0.0 && s <= 1.0)) throw InputError(x.id + ": difficulty_score outside [0, 1]");
    if (scoring_rollouts > 0) {
      const double k = s * scoring_rollouts;
      if (std::abs(k - std::round(k)) > 1e-9) {
        throw InputError(x.id + ": difficulty_score is not a multiple of 1/" + std::to_string(scoring_rollouts));
      }
    }
  }
}

std::string base_id(const std::string& id) {
  const auto pos = id.rfind(kPermTag);
  return pos == std::string::npos ? id : id.substr(0, pos);
}

Permutation id_permutation(const std::string& id, std::size_t num_images) {
  const auto pos = id.rfind(kPermTag);
  if (pos == std::string::npos) return Permutation::identity(num_images);
  std::vector<int> one_based;
  std::stringstream ss(id.substr(pos + kPermTag.size()));
  std::string item;
  while (std::getline(ss, item, '-')) {
    try {
      one_based.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw InputError("malformed permutation annotation in id '" + id + "'");
    }
  }
  if (one_based.size() != num_images) throw StructuralError("id annotation length differs from image count");
  return Permutation::from_one_based(one_based);
}

TaskInstance apply_permutation(const TaskInstance& x, const Permutation& sigma) {
  if (sigma.size() != x.images.size()) {
    throw StructuralError(x.id + ": permutation of length " + std::to_string(sigma.size()) + " applied to " +
                          std::to_string(x.images.size()) + " images");
  }
  TaskInstance out = x;
  for (std::size_t j = 0; j < sigma.size(); ++j) out.images[j] = x.images[sigma[j]];
  const Permutation net = compose(id_permutation(x.id, x.images.size()), sigma);
  out.id = base_id(x.id);
  if (!net.is_identity()) out.id += std::string(kPermTag) + net.to_string();
  return out;
}

void validate(const RolloutGroup& g, double r_max) {
  if (g.responses.empty()) throw StructuralError("rollout group has no responses");
  if (g.responses.size() != g.rewards.size()) throw StructuralError("responses and rewards differ in length");
  for (double r : g.rewards) {
    if (!(r >= 0.0 && r <= r_max)) throw StructuralError("reward " + std::to_string(r) + " outside [0, r_max]");
  }
}

std::size_t MergedBatch::num_rollouts() const noexcept {
  std::size_t n = 0;
  for (const auto& a : advantages) n += a.size();
  return n;
}

void TrainerConfig::validate() const {
  if (n_s < 0) throw ConfigError("n_s must be >= 0");
  if (n < 1) throw ConfigError("n must be >= 1");
  if (!(alpha_0 >= 0.0 && alpha_0 <= 1.0)) throw ConfigError("alpha_0 must lie in [0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be > 0");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (t_max < 0) throw ConfigError("t_max must be >= 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be finite");
  if (!(w_acc >= 0.0 && w_fmt >= 0.0)) throw ConfigError("reward weights must be >= 0");
  if (!(epsilon_std >= 0.0)) throw ConfigError("epsilon_std must be >= 0");
  if (inner_updates < 1) throw ConfigError("inner_updates must be >= 1");
  if (max_response_len < 1) throw ConfigError("max_response_len must be >= 1");
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (num_workers < 1) throw ConfigError("num_workers must be >= 1");
  if (algorithm == Algorithm::NaiveGrpo && n_s != 0) throw ConfigError("naive GRPO runs use n_s = 0");
  const Vocabulary vocab(this->vocab);
  if (arch.vocab_size != vocab.size()) {
    throw ConfigError("arch.vocab_size " + std::to_string(arch.vocab_size) + " differs from the vocabulary size " +
                      std::to_string(vocab.size()));
  }
}

std::int64_t TrainerConfig::total_steps(std::size_t dataset_size) const {
  if (epochs > 0) {
    const auto per_epoch =
        static_cast<std::int64_t>((dataset_size + static_cast<std::size_t>(batch_size) - 1) / batch_size);
    return epochs * per_epoch;
  }
  return t_max;
}

namespace {

std::string to_string(Algorithm a) { return a == Algorithm::PeRL ? "perl" : "naive"; }
std::string to_string(RewardMode m) { return m == RewardMode::Additive ? "additive" : "gated"; }
std::string to_string(SwapGranularity g) { return g == SwapGranularity::PerSample ? "per_sample" : "per_batch"; }

Algorithm algorithm_from(const std::string& s) {
  if (s == "perl") return Algorithm::PeRL;
  if (s == "naive") return Algorithm::NaiveGrpo;
  throw ConfigError("unknown algorithm '" + s + "'");
}
RewardMode reward_mode_from(const std::string& s) {
  if (s == "additive") return RewardMode::Additive;
  if (s == "gated") return RewardMode::Gated;
  throw ConfigError("unknown reward mode '" + s + "'");
}
SwapGranularity granularity_from(const std::string& s) {
  if (s == "per_sample") return SwapGranularity::PerSample;
  if (s == "per_batch") return SwapGranularity::PerBatch;
  throw ConfigError("unknown swap granularity '" + s + "'");
}

template <class T>
void take(const nlohmann::json& j, const char* key, T& field) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      field = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
  }
}

}  // namespace

nlohmann::json to_json(const TrainerConfig& c) {
  return {
      {"algorithm", to_string(c.algorithm)},
      {"n_s", c.n_s},
      {"n", c.n},
      {"beta", c.beta},
      {"clip_eps", c.clip_eps},
      {"alpha_0", c.alpha_0},
      {"t_max", c.t_max},
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"w_acc", c.w_acc},
      {"w_fmt", c.w_fmt},
      {"reward_mode", to_string(c.reward_mode)},
      {"epsilon_std", c.epsilon_std},
      {"swap_granularity", to_string(c.swap_granularity)},
      {"inner_updates", c.inner_updates},
      {"max_response_len", c.max_response_len},
      {"temperature", c.temperature},
      {"allow_unequal_groups", c.allow_unequal_groups},
      {"arch",
       {{"vocab_size", c.arch.vocab_size},
        {"embed_dim", c.arch.embed_dim},
        {"hidden_dim", c.arch.hidden_dim},
        {"num_segments", c.arch.num_segments},
        {"segment_marker", c.arch.segment_marker},
        {"bos", c.arch.bos},
        {"init_scale", c.arch.init_scale},
        {"embed_scale", c.arch.embed_scale}}},
      {"vocab",
       {{"feature_dim", c.vocab.feature_dim},
        {"num_buckets", c.vocab.num_buckets},
        {"feature_lo", c.vocab.feature_lo},
        {"feature_hi", c.vocab.feature_hi}}},
      {"num_workers", c.num_workers},
      {"checkpoint_interval", c.checkpoint_interval},
  };
}

TrainerConfig trainer_config_from_json(const nlohmann::json& j, TrainerConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (auto it = j.find("algorithm"); it != j.end()) c.algorithm = algorithm_from(it->get<std::string>());
  if (auto it = j.find("reward_mode"); it != j.end()) c.reward_mode = reward_mode_from(it->get<std::string>());
  if (auto it = j.find("swap_granularity"); it != j.end()) {
    c.swap_granularity = granularity_from(it->get<std::string>());
  }
  take(j, "n_s", c.n_s);
  take(j, "n", c.n);
  take(j, "beta", c.beta);
  take(j, "clip_eps", c.clip_eps);
  take(j, "alpha_0", c.alpha_0);
  take(j, "t_max", c.t_max);
  take(j, "epochs", c.epochs);
  take(j, "learning_rate", c.learning_rate);
  take(j, "batch_size", c.batch_size);
  take(j, "seed", c.seed);
  take(j, "w_acc", c.w_acc);
  take(j, "w_fmt", c.w_fmt);
  take(j, "epsilon_std", c.epsilon_std);
  take(j, "inner_updates", c.inner_updates);
  take(j, "max_response_len", c.max_response_len);
  take(j, "temperature", c.temperature);
  take(j, "allow_unequal_groups", c.allow_unequal_groups);
  take(j, "num_workers", c.num_workers);
  take(j, "checkpoint_interval", c.checkpoint_interval);
  if (auto it = j.find("arch"); it != j.end()) {
    take(*it, "vocab_size", c.arch.vocab_size);
    take(*it, "embed_dim", c.arch.embed_dim);
    take(*it, "hidden_dim", c.arch.hidden_dim);
    take(*it, "num_segments", c.arch.num_segments);
    take(*it, "segment_marker", c.arch.segment_marker);
    take(*it, "bos", c.arch.bos);
    take(*it, "init_scale", c.arch.init_scale);
    take(*it, "embed_scale", c.arch.embed_scale);
  }
  if (auto it = j.find("vocab"); it != j.end()) {
    take(*it, "feature_dim", c.vocab.feature_dim);
    take(*it, "num_buckets", c.vocab.num_buckets);
    take(*it, "feature_lo", c.vocab.feature_lo);
    take(*it, "feature_hi", c.vocab.feature_hi);
  }
  return c;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace permrl
