// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/env_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "permrl/errors.hpp"

namespace permrl {
namespace {

constexpr double kCountThreshold = 0.0;
constexpr std::size_t kEnumerateUpTo = 6;
constexpr int kRejectionTries = 256;

std::string label_for(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

std::vector<double> draw_features(const VocabularyConfig& vc, Rng& rng) {
  std::vector<double> f(static_cast<std::size_t>(vc.feature_dim));
  for (auto& v : f) v = vc.feature_lo + (vc.feature_hi - vc.feature_lo) * uniform01(rng);
  return f;
}

/// Index of the maximum and the gap to the runner-up.
std::pair<std::size_t, double> best_with_gap(const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  double second = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != best) second = std::max(second, scores[i]);
  }
  return {best, scores[best] - second};
}

std::size_t target_choice(std::size_t num_choices, const GeneratorConfig& cfg, Rng& rng) {
  if (!cfg.answer_a_probability) return uniform_index(rng, num_choices);
  if (bernoulli(rng, *cfg.answer_a_probability)) return 0;
  return 1 + uniform_index(rng, num_choices - 1);
}

int query_attribute(const TaskInstance& x, const Vocabulary& vocab) {
  for (Token t : x.query_tokens) {
    if (auto d = vocab.attribute_dim(t)) return *d;
  }
  throw InputError(x.id + ": query names no attribute");
}

}  // namespace

std::string to_string(TemplateKind k) {
  switch (k) {
    case TemplateKind::ReferenceComparison:
      return "ReferenceComparison";
    case TemplateKind::AttributeExtremum:
      return "AttributeExtremum";
    case TemplateKind::CountingInvariant:
      return "CountingInvariant";
  }
  return "?";
}

TemplateKind template_kind_from_string(const std::string& s) {
  if (s == "ReferenceComparison") return TemplateKind::ReferenceComparison;
  if (s == "AttributeExtremum") return TemplateKind::AttributeExtremum;
  if (s == "CountingInvariant") return TemplateKind::CountingInvariant;
  throw ConfigError("unknown template '" + s + "'");
}

int TaskTemplate::num_choices() const noexcept {
  switch (kind) {
    case TemplateKind::ReferenceComparison:
      return num_images - 1;
    case TemplateKind::AttributeExtremum:
      return num_images;
    case TemplateKind::CountingInvariant:
      return num_images + 1;
  }
  return 0;
}

OrderSensitivity TaskTemplate::order_sensitivity() const noexcept {
  return kind == TemplateKind::CountingInvariant ? OrderSensitivity::OrderInvariant
                                                 : OrderSensitivity::PositionReferencing;
}

void TaskTemplate::validate() const {
  const std::string name = to_string(kind);
  if (num_images < 2) throw ConfigError(name + " needs at least 2 images");
  if (kind == TemplateKind::ReferenceComparison && num_images < 3) {
    throw ConfigError(name + " needs a reference and at least 2 options");
  }
  if (kind != TemplateKind::CountingInvariant && num_choices() > kMaxChoices) {
    throw ConfigError(name + " supports at most " + std::to_string(kMaxChoices) + " choices");
  }
  if (kind == TemplateKind::CountingInvariant && num_images > kMaxCount) {
    throw ConfigError(name + " supports at most " + std::to_string(kMaxCount) + " images");
  }
}

void GeneratorConfig::validate() const {
  if (!(margin > 0.0)) throw ConfigError("margin must be > 0");
  if (templates.empty()) throw ConfigError("at least one template is required");
  double total = 0.0;
  for (const auto& t : templates) {
    t.shape.validate();
    if (!(t.weight >= 0.0)) throw ConfigError("template weights must be >= 0");
    total += t.weight;
  }
  if (!(total > 0.0)) throw ConfigError("template weights sum to zero");
  if (answer_a_probability && !(*answer_a_probability >= 0.0 && *answer_a_probability <= 1.0)) {
    throw ConfigError("answer_a_probability must lie in [0, 1]");
  }
  if (max_retries < 1) throw ConfigError("max_retries must be >= 1");
}

TaskInstance generate_instance(const TaskTemplate& shape, const GeneratorConfig& cfg, const Vocabulary& vocab,
                               Rng& rng, const std::string& id) {
  const auto n = static_cast<std::size_t>(shape.num_images);
  const auto& vc = vocab.config();
  TaskInstance x;
  x.id = id;
  x.order_sensitivity = shape.order_sensitivity();

  std::vector<std::vector<double>> feats;
  bool ok = false;
  switch (shape.kind) {
    case TemplateKind::ReferenceComparison: {
      for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
        feats.clear();
        for (std::size_t j = 0; j < n; ++j) feats.push_back(draw_features(vc, rng));
        std::vector<double> sims;
        for (std::size_t j = 1; j < n; ++j) sims.push_back(cosine(feats[0], feats[j]));
        auto [best, gap] = best_with_gap(sims);
        if (gap < cfg.margin) continue;
        const std::size_t target = target_choice(n - 1, cfg, rng);
        std::swap(feats[1 + best], feats[1 + target]);
        ok = true;
      }
      x.query_tokens = {vocab.word(Word::Which), vocab.word(Word::Similar), vocab.word(Word::Reference),
                        Vocabulary::image(), vocab.word(Word::Options)};
      for (std::size_t j = 1; j < n; ++j) x.query_tokens.push_back(Vocabulary::image());
      x.answer.kind = AnswerKind::ChoiceLabel;
      for (std::size_t c = 0; c + 1 < n; ++c) {
        x.answer.choice_image_refs[label_for(c)] = c + 1;
        x.answer_space.push_back(label_for(c));
      }
      break;
    }
    case TemplateKind::AttributeExtremum: {
      const int dim = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(vc.feature_dim)));
      for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
        feats.clear();
        std::vector<double> vals;
        for (std::size_t j = 0; j < n; ++j) {
          feats.push_back(draw_features(vc, rng));
          vals.push_back(feats.back()[static_cast<std::size_t>(dim)]);
        }
        auto [best, gap] = best_with_gap(vals);
        if (gap < cfg.margin) continue;
        const std::size_t target = target_choice(n, cfg, rng);
        std::swap(feats[best], feats[target]);
        ok = true;
      }
      x.query_tokens = {vocab.word(Word::Which), vocab.word(Word::Largest), vocab.attribute(dim),
                        vocab.word(Word::Options)};
      for (std::size_t j = 0; j < n; ++j) x.query_tokens.push_back(Vocabulary::image());
      x.answer.kind = AnswerKind::ChoiceLabel;
      for (std::size_t c = 0; c < n; ++c) {
        x.answer.choice_image_refs[label_for(c)] = c;
        x.answer_space.push_back(label_for(c));
      }
      break;
    }
    case TemplateKind::CountingInvariant: {
      const int dim = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(vc.feature_dim)));
      for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
        feats.clear();
        ok = true;
        for (std::size_t j = 0; j < n; ++j) {
          feats.push_back(draw_features(vc, rng));
          if (std::abs(feats.back()[static_cast<std::size_t>(dim)] - kCountThreshold) < cfg.margin) ok = false;
        }
      }
      x.query_tokens = {vocab.word(Word::Count), vocab.attribute(dim)};
      for (std::size_t j = 0; j < n; ++j) x.query_tokens.push_back(Vocabulary::image());
      x.answer.kind = AnswerKind::ShortText;
      for (std::size_t c = 0; c <= n; ++c) x.answer_space.push_back(std::to_string(c));
      break;
    }
  }
  if (!ok) {
    throw GenerationError(to_string(shape.kind) + ": margin " + std::to_string(cfg.margin) + " not reached after " +
                          std::to_string(cfg.max_retries) + " draws");
  }
  for (std::size_t j = 0; j < n; ++j) {
    ImageDescriptor img;
    img.image_id = id + "/img" + std::to_string(j + 1);
    img.features = std::move(feats[j]);
    img.token_block = vocab.quantize(img.features);
    x.images.push_back(std::move(img));
  }
  x.answer.value = oracle_answer(x, vocab).value;
  validate(x);
  return x;
}

std::vector<TaskInstance> generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  const Vocabulary vocab(cfg.vocab);
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& t : cfg.templates) cumulative.push_back(total += t.weight);

  std::vector<TaskInstance> out;
  out.reserve(cfg.dataset_size);
  for (std::size_t i = 0; i < cfg.dataset_size; ++i) {
    Rng rng = make_stream(cfg.seed, {0x67656eULL, i});
    const double u = uniform01(rng) * total;
    std::size_t pick = 0;
    while (pick + 1 < cumulative.size() && u >= cumulative[pick]) ++pick;
    out.push_back(generate_instance(cfg.templates[pick].shape, cfg, vocab, rng, "syn" + std::to_string(i)));
  }
  return out;
}

TemplateKind template_kind(const TaskInstance& x, const Vocabulary& vocab) {
  for (Token t : x.query_tokens) {
    if (t == vocab.word(Word::Similar)) return TemplateKind::ReferenceComparison;
    if (t == vocab.word(Word::Largest)) return TemplateKind::AttributeExtremum;
    if (t == vocab.word(Word::Count)) return TemplateKind::CountingInvariant;
  }
  throw InputError(x.id + ": query matches no task template");
}

Answer oracle_answer(const TaskInstance& x, const Vocabulary& vocab) {
  Answer out;
  out.kind = x.answer.kind;
  out.choice_image_refs = x.answer.choice_image_refs;
  switch (template_kind(x, vocab)) {
    case TemplateKind::ReferenceComparison: {
      std::vector<bool> is_choice(x.images.size(), false);
      for (const auto& [label, pos] : x.answer.choice_image_refs) is_choice.at(pos) = true;
      auto ref = std::find(is_choice.begin(), is_choice.end(), false);
      if (ref == is_choice.end()) throw InputError(x.id + ": no reference image");
      const auto& ref_features = x.images[static_cast<std::size_t>(ref - is_choice.begin())].features;
      std::string best;
      double best_sim = -std::numeric_limits<double>::infinity();
      for (const auto& [label, pos] : x.answer.choice_image_refs) {
        const double s = cosine(ref_features, x.images[pos].features);
        if (s > best_sim) best_sim = s, best = label;
      }
      out.value = best;
      break;
    }
    case TemplateKind::AttributeExtremum: {
      const auto dim = static_cast<std::size_t>(query_attribute(x, vocab));
      std::string best;
      double best_val = -std::numeric_limits<double>::infinity();
      for (const auto& [label, pos] : x.answer.choice_image_refs) {
        const double v = x.images[pos].features.at(dim);
        if (v > best_val) best_val = v, best = label;
      }
      out.value = best;
      break;
    }
    case TemplateKind::CountingInvariant: {
      const auto dim = static_cast<std::size_t>(query_attribute(x, vocab));
      int count = 0;
      for (const auto& img : x.images) count += img.features.at(dim) > kCountThreshold ? 1 : 0;
      out.value = std::to_string(count);
      break;
    }
  }
  return out;
}

std::vector<std::size_t> answer_referenced_positions(const TaskInstance& x) {
  if (x.order_sensitivity == OrderSensitivity::OrderInvariant) return {};
  std::vector<std::size_t> out;
  if (x.answer.choice_image_refs.empty()) {
    out.resize(x.images.size());
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  for (const auto& [label, pos] : x.answer.choice_image_refs) out.push_back(pos);
  std::sort(out.begin(), out.end());
  return out;
}

int semantic_indicator(const TaskInstance& x, const Permutation& sigma) {
  if (sigma.size() != x.images.size()) throw StructuralError(x.id + ": permutation length differs from image count");
  if (x.order_sensitivity == OrderSensitivity::OrderInvariant) return 1;
  for (std::size_t pos : answer_referenced_positions(x)) {
    if (sigma[pos] != pos) return 0;
  }
  return 1;
}

Answer transform_answer(const Answer& y, const Permutation& sigma, const TaskInstance& x) {
  if (semantic_indicator(x, sigma) == 1) return y;
  return relabel_choices(y, sigma, x);
}

Answer relabel_choices(const Answer& y, const Permutation& sigma, const TaskInstance& x) {
  if (sigma.size() != x.images.size()) throw StructuralError(x.id + ": permutation length differs from image count");
  const auto& refs = y.choice_image_refs;
  if (y.kind != AnswerKind::ChoiceLabel || refs.empty()) {
    throw UnmappableAnswerError(x.id + ": no rule maps answer '" + y.value + "' under " + sigma.to_string());
  }
  std::vector<bool> is_choice(sigma.size(), false);
  for (const auto& [label, pos] : refs) is_choice.at(pos) = true;
  for (std::size_t j = 0; j < sigma.size(); ++j) {
    if (!is_choice[j] && sigma[j] != j) {
      throw UnmappableAnswerError(x.id + ": permutation " + sigma.to_string() +
                                  " moves an image no choice refers to");
    }
  }
  auto correct = refs.find(y.value);
  if (correct == refs.end()) throw UnmappableAnswerError(x.id + ": answer '" + y.value + "' refers to no image");
  const std::size_t new_pos = sigma.inverse()[correct->second];
  for (const auto& [label, pos] : refs) {
    if (pos == new_pos) {
      Answer out = y;
      out.value = label;
      return out;
    }
  }
  throw UnmappableAnswerError(x.id + ": correct image leaves the choice positions under " + sigma.to_string());
}

bool is_admissible(const TaskInstance& x, const Permutation& sigma) {
  try {
    transform_answer(x.answer, sigma, x);
    return true;
  } catch (const UnmappableAnswerError&) {
    return false;
  }
}

std::optional<Permutation> sample_admissible_permutation(const TaskInstance& x, Rng& rng) {
  const std::size_t n = x.images.size();
  if (n < 2) return std::nullopt;
  if (n <= kEnumerateUpTo) {
    std::vector<Permutation> candidates;
    for (auto& p : all_permutations(n)) {
      if (!p.is_identity() && is_admissible(x, p)) candidates.push_back(std::move(p));
    }
    if (candidates.empty()) return std::nullopt;
    return candidates[uniform_index(rng, candidates.size())];
  }
  std::vector<std::size_t> m(n);
  for (int attempt = 0; attempt < kRejectionTries; ++attempt) {
    std::iota(m.begin(), m.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(m[i], m[uniform_index(rng, i + 1)]);
    Permutation p(m, true);
    if (!p.is_identity() && is_admissible(x, p)) return p;
  }
  return std::nullopt;
}

TokenSeq tokenize(const TaskInstance& x) {
  TokenSeq out;
  std::size_t next_image = 0;
  for (Token t : x.query_tokens) {
    if (t == Vocabulary::image()) {
      if (next_image >= x.images.size()) throw InputError(x.id + ": more placeholders than images");
      const auto& block = x.images[next_image++].token_block;
      out.insert(out.end(), block.begin(), block.end());
    } else {
      out.push_back(t);
    }
  }
  return out;
}

}  // namespace permrl
