// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0
//
// permrl: generate synthetic tasks, run the data pipeline, train, and report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "permrl/checkpoint.hpp"
#include "permrl/datapipe.hpp"
#include "permrl/env_synth.hpp"
#include "permrl/errors.hpp"
#include "permrl/judge.hpp"
#include "permrl/records.hpp"
#include "permrl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace permrl;

namespace {

constexpr const char* kOutDirEnv = "PERMRL_OUT_DIR";

// ---------------------------------------------------------------------------
// Trainer configuration: one flag per config field, then the config file.

void collect_leaves(const json& j, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      collect_leaves(value, path, out);
    } else {
      out.emplace_back(path, value);
    }
  }
}

std::string flag_name(const std::string& path) {
  std::string f = "--" + path;
  for (char& c : f) {
    if (c == '_' || c == '.') c = '-';
  }
  return f;
}

json parse_like(const std::string& text, const json& like, const std::string& flag) {
  try {
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("");
    }
    if (like.is_number_unsigned()) return std::stoull(text);
    if (like.is_number_integer()) return std::stoll(text);
    if (like.is_number_float()) return std::stod(text);
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + text + "' for " + flag);
  }
  return text;
}

void set_path(json& j, const std::string& path, json value) {
  json* node = &j;
  std::size_t start = 0;
  for (auto dot = path.find('.'); dot != std::string::npos; dot = path.find('.', start)) {
    node = &(*node)[path.substr(start, dot - start)];
    start = dot + 1;
  }
  (*node)[path.substr(start)] = std::move(value);
}

struct ConfigFlags {
  std::vector<std::pair<std::string, json>> leaves;
  std::map<std::string, std::string> values;
  std::string config_file;

  void attach(CLI::App& cmd) {
    collect_leaves(to_json(TrainerConfig{}), "", leaves);
    for (const auto& [path, def] : leaves) {
      cmd.add_option(flag_name(path), values[path], "trainer config field " + path + " (default " + def.dump() + ")");
    }
    cmd.add_option("--config", config_file, "JSON config file; its fields override flags")->check(CLI::ExistingFile);
  }

  TrainerConfig resolve(CLI::App& cmd) const {
    json overrides = json::object();
    for (const auto& [path, def] : leaves) {
      if (cmd.count(flag_name(path)) > 0) set_path(overrides, path, parse_like(values.at(path), def, flag_name(path)));
    }
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError(config_file + ": " + e.what());
      }
      overrides.merge_patch(file);
    }
    TrainerConfig cfg = trainer_config_from_json(overrides);
    const bool vocab_size_given = overrides.contains("arch") && overrides["arch"].contains("vocab_size");
    if (!vocab_size_given) cfg.arch.vocab_size = Vocabulary(cfg.vocab).size();
    cfg.validate();
    return cfg;
  }
};

fs::path output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  throw UsageError(std::string("no output directory: pass --out or set ") + kOutDirEnv);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t size = 256;
  std::vector<std::string> templates;
  double margin = 0.2;
  double answer_a = -1.0;
  int feature_dim = 3;
  int num_buckets = 3;
};

WeightedTemplate parse_template(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() < 2 || parts.size() > 3) throw ConfigError("template spec '" + spec + "' is not KIND:IMAGES[:WEIGHT]");
  WeightedTemplate t;
  t.shape.kind = template_kind_from_string(parts[0]);
  t.shape.num_images = std::stoi(parts[1]);
  if (parts.size() == 3) t.weight = std::stod(parts[2]);
  return t;
}

void run_gen(const GenArgs& a) {
  GeneratorConfig cfg;
  cfg.seed = a.seed;
  cfg.dataset_size = a.size;
  cfg.margin = a.margin;
  cfg.vocab.feature_dim = a.feature_dim;
  cfg.vocab.num_buckets = a.num_buckets;
  if (a.answer_a >= 0.0) cfg.answer_a_probability = a.answer_a;
  if (!a.templates.empty()) {
    cfg.templates.clear();
    for (const auto& t : a.templates) cfg.templates.push_back(parse_template(t));
  }
  const auto data = generate_dataset(cfg);
  write_records(fs::path(a.out), data, Vocabulary(cfg.vocab));
  spdlog::info("wrote {} instances to {}", data.size(), a.out);
}

// ---------------------------------------------------------------------------
// prep

struct PrepArgs {
  std::string in, out, report;
  int min_images = -1, max_images = -1;
  std::vector<std::string> answer_kinds;
  bool difficulty = false;
  int m = 10;
  double band_lo = 0.1, band_hi = 0.8;
  std::string scorer_checkpoint;
  int augment = 0;
  std::string judge_url;
  int judge_in_flight = 4;
  std::uint64_t seed = 0;
  int workers = 1;
};

void run_prep(const PrepArgs& a, const TrainerConfig& cfg) {
  const Vocabulary vocab(cfg.vocab);
  auto data = read_records(fs::path(a.in), vocab);
  json summary = {{"input", data.size()}};

  RuleFilterConfig rules;
  if (a.min_images >= 0) rules.min_images = static_cast<std::size_t>(a.min_images);
  if (a.max_images >= 0) rules.max_images = static_cast<std::size_t>(a.max_images);
  if (!a.answer_kinds.empty()) {
    std::set<AnswerKind> kinds;
    for (const auto& k : a.answer_kinds) kinds.insert(answer_kind_from_string(k));
    rules.allowed_answer_kinds = kinds;
  }
  auto filtered = rule_filter(data, rules);
  summary["rule_filter"] = {{"kept", filtered.kept.size()}, {"rejections", filtered.rejections}};
  data = rephrase_passthrough(filtered.kept);

  if (a.difficulty) {
    PolicyParams scorer_params = a.scorer_checkpoint.empty() ? init_params(a.seed, cfg.arch)
                                                             : load_checkpoint(a.scorer_checkpoint).current;
    const auto scorer = make_policy_scorer(scorer_params, vocab, {cfg.max_response_len, cfg.temperature, Vocabulary::eos()});
    DifficultyReport report = difficulty_score(data, scorer, a.m, a.seed, a.workers);
    data = difficulty_filter(data, report, {a.band_lo, a.band_hi});
    std::cout << report.histogram_text();
    summary["difficulty"] = report.to_json();
    if (!a.report.empty()) write_text(fs::path(a.report).replace_extension(".txt"), report.histogram_text());
  }

  if (a.augment > 0) {
    std::unique_ptr<JudgeClient> judge;
    if (!a.judge_url.empty()) judge = std::make_unique<JudgeClient>(std::make_shared<HttpJudgeTransport>(a.judge_url), vocab);
    auto aug = augment_permute(data, a.augment, a.seed, judge.get());
    summary["augment"] = {{"emitted", aug.stats.emitted},
                          {"unmappable", aug.stats.unmappable},
                          {"judge_skipped", aug.stats.judge_skipped},
                          {"relabeled", aug.stats.relabeled}};
    if (judge) {
      const auto s = judge->stats();
      summary["judge"] = {{"requests", s.requests}, {"retries", s.retries}, {"protocol_errors", s.protocol_errors},
                          {"skipped", s.skipped}};
    }
    data.insert(data.end(), std::make_move_iterator(aug.variants.begin()), std::make_move_iterator(aug.variants.end()));
  }

  summary["output"] = data.size();
  write_records(fs::path(a.out), data, vocab);
  if (!a.report.empty()) write_json(a.report, summary);
  spdlog::info("prep: {} -> {} instances written to {}", summary["input"].get<std::size_t>(), data.size(), a.out);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data, out, resume, gap_data;
  std::int64_t stop_after = -1;
  std::int64_t gap_interval = 0;
  std::uint64_t gap_seed = 0;
  std::vector<int> sweep_ns;
  std::string budget = "fixed-total";
  int total_rollouts = 12;
};

void run_train(const TrainArgs& a, const TrainerConfig& cfg) {
  const Vocabulary vocab(cfg.vocab);
  const auto data = read_records(fs::path(a.data), vocab);
  const fs::path out = output_dir(a.out);
  fs::create_directories(out);
  std::vector<GapPair> gap_set;
  if (!a.gap_data.empty()) gap_set = make_gap_eval_set(read_records(fs::path(a.gap_data), vocab), a.gap_seed);

  if (!a.sweep_ns.empty()) {
    if (a.budget != "fixed-total" && a.budget != "fixed-n") throw UsageError("--budget must be fixed-total or fixed-n");
    const auto mode = a.budget == "fixed-total" ? BudgetMode::FixedTotal : BudgetMode::FixedN;
    const auto points = sweep_ns(cfg, data, a.sweep_ns, mode, a.total_rollouts, gap_set);
    json rows = json::array();
    for (const auto& p : points) {
      json row = {{"n_s", p.n_s}, {"n", p.n}, {"final_mean_reward", p.final_mean_reward}};
      row["final_gap"] = p.final_gap ? json(*p.final_gap) : json(nullptr);
      rows.push_back(row);
      std::ofstream m(out / ("sweep_ns" + std::to_string(p.n_s) + ".jsonl"));
      for (const auto& s : p.metrics) m << s.to_json().dump() << '\n';
    }
    write_json(out / "sweep.json", rows);
    std::cout << rows.dump(2) << '\n';
    return;
  }

  write_json(out / "config.json", to_json(cfg));
  RunOptions opts;
  opts.out_dir = out;
  if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
  if (a.stop_after >= 0) opts.stop_after = a.stop_after;
  opts.gap_eval_set = std::move(gap_set);
  opts.gap_interval = a.gap_interval;
  opts.on_step = [](const StepMetrics& m) {
    spdlog::info("step {:4d} alpha {:.3f} reward {:.4f} objective {:+.5f} kl {:.5f}", m.step, m.alpha,
                 m.mean_reward_original, m.total, m.kl);
  };
  const RunResult r = run(cfg, data, opts);
  spdlog::info("completed {} steps; metrics {}, checkpoint {}", r.steps_completed, r.metrics_path.string(),
               r.checkpoint_path.string());
}

// ---------------------------------------------------------------------------
// eval-gap

struct EvalArgs {
  std::string checkpoint, data;
  std::uint64_t seed = 0;
};

void run_eval_gap(const EvalArgs& a, const TrainerConfig& cfg) {
  const Vocabulary vocab(cfg.vocab);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const auto pairs = make_gap_eval_set(read_records(fs::path(a.data), vocab), a.seed);
  const double gap = permutation_gap(ck.current, pairs, vocab, cfg.max_response_len);
  std::cout << json{{"checkpoint_step", ck.step}, {"pairs", pairs.size()}, {"permutation_gap", gap}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// report

std::string csv_value(const json& v) { return v.is_null() ? "" : v.dump(); }

void run_report(const std::string& metrics_path, const std::string& out_flag) {
  std::ifstream in(metrics_path);
  if (!in) throw IoError("cannot open " + metrics_path);
  std::vector<StepMetrics> steps;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) steps.push_back(StepMetrics::from_json(json::parse(line)));
  }
  std::ostringstream curves, advantages;
  curves << "step,alpha,mean_reward_original,mean_reward_permuted,mean_accuracy_original,surrogate,kl,objective,"
            "fraction_clipped,grad_norm,diversity,permutation_gap\n";
  advantages << "step,mean_abs,fraction_near_zero";
  for (int b = 0; b < kAdvantageBins; ++b) advantages << ",bin" << b;
  advantages << '\n';
  for (const auto& m : steps) {
    const json j = m.to_json();
    curves << m.step;
    for (const char* key : {"alpha", "mean_reward_original", "mean_reward_permuted", "mean_accuracy_original",
                            "surrogate", "kl", "total", "fraction_clipped", "grad_norm", "diversity",
                            "permutation_gap"}) {
      curves << ',' << csv_value(j.value(key, json()));
    }
    curves << '\n';
    advantages << m.step << ',' << json(m.advantages.mean_abs).dump() << ',' << json(m.advantages.fraction_near_zero).dump();
    for (auto c : m.advantages.histogram) advantages << ',' << c;
    advantages << '\n';
  }
  if (out_flag.empty()) {
    std::cout << curves.str();
    return;
  }
  fs::create_directories(out_flag);
  write_text(fs::path(out_flag) / "curves.csv", curves.str());
  write_text(fs::path(out_flag) / "advantages.csv", advantages.str());
  spdlog::info("wrote {} rows to {}", steps.size(), out_flag);
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const ResumeMismatchError*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"permrl: permutation-augmented group-relative policy optimization at desk scale"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic multi-image task dataset");
  gen_cmd->add_option("--out", gen.out, "output records file (JSONL)")->required();
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--size", gen.size, "number of instances");
  gen_cmd->add_option("--template", gen.templates,
                      "KIND:IMAGES[:WEIGHT], KIND in ReferenceComparison|AttributeExtremum|CountingInvariant");
  gen_cmd->add_option("--margin", gen.margin, "minimum answer separation");
  gen_cmd->add_option("--answer-a-prob", gen.answer_a, "probability that a choice answer is A (positional bias)");
  gen_cmd->add_option("--feature-dim", gen.feature_dim, "features per image");
  gen_cmd->add_option("--num-buckets", gen.num_buckets, "quantization buckets per feature");

  PrepArgs prep;
  ConfigFlags prep_cfg;
  auto* prep_cmd = app.add_subcommand("prep", "rule filter, difficulty filter and permutation augmentation");
  prep_cmd->add_option("--in", prep.in, "input records")->required()->check(CLI::ExistingFile);
  prep_cmd->add_option("--out", prep.out, "output records")->required();
  prep_cmd->add_option("--report", prep.report, "summary JSON path (histogram written next to it as .txt)");
  prep_cmd->add_option("--min-images", prep.min_images);
  prep_cmd->add_option("--max-images", prep.max_images);
  prep_cmd->add_option("--answer-kind", prep.answer_kinds, "allowed answer kinds (ChoiceLabel, ShortText)");
  prep_cmd->add_flag("--difficulty", prep.difficulty, "score and filter by rollout accuracy");
  prep_cmd->add_option("--m", prep.m, "scoring rollouts per instance");
  prep_cmd->add_option("--band-lo", prep.band_lo, "lowest difficulty score kept");
  prep_cmd->add_option("--band-hi", prep.band_hi, "highest difficulty score kept");
  prep_cmd->add_option("--scorer-checkpoint", prep.scorer_checkpoint, "checkpoint whose policy scores difficulty");
  prep_cmd->add_option("--augment", prep.augment, "permuted variants per instance (0 disables)");
  prep_cmd->add_option("--judge-url", prep.judge_url, "HTTP judge endpoint deciding answer changes");
  prep_cmd->add_option("--prep-seed", prep.seed, "seed for scoring and augmentation");
  prep_cmd->add_option("--workers", prep.workers, "scoring threads");
  prep_cfg.attach(*prep_cmd);

  TrainArgs train;
  ConfigFlags train_cfg;
  auto* train_cmd = app.add_subcommand("train", "run the training loop");
  train_cmd->add_option("--data", train.data, "training records")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out, std::string("output directory (default $") + kOutDirEnv + ")");
  train_cmd->add_option("--resume", train.resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--stop-after", train.stop_after, "stop after this many completed steps");
  train_cmd->add_option("--gap-data", train.gap_data, "records used to measure the permutation gap");
  train_cmd->add_option("--gap-interval", train.gap_interval, "steps between gap evaluations (0: final only)");
  train_cmd->add_option("--gap-seed", train.gap_seed, "seed for the gap permutations");
  train_cmd->add_option("--sweep-ns", train.sweep_ns, "run one training per n_s value")->delimiter(',');
  train_cmd->add_option("--budget", train.budget, "fixed-total or fixed-n rollouts per input during a sweep");
  train_cmd->add_option("--total-rollouts", train.total_rollouts, "rollouts per input in fixed-total sweeps");
  train_cfg.attach(*train_cmd);

  EvalArgs eval;
  ConfigFlags eval_cfg;
  auto* eval_cmd = app.add_subcommand("eval-gap", "permutation gap of a checkpoint under greedy decoding");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval.data, "evaluation records")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--gap-seed", eval.seed, "seed for the gap permutations");
  eval_cfg.attach(*eval_cmd);

  std::string metrics_path, report_out;
  auto* report_cmd = app.add_subcommand("report", "turn a metrics stream into CSV tables");
  report_cmd->add_option("--metrics", metrics_path, "metrics.jsonl")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out", report_out, "directory for curves.csv and advantages.csv (default: stdout)");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (gen_cmd->parsed()) run_gen(gen);
    if (prep_cmd->parsed()) run_prep(prep, prep_cfg.resolve(*prep_cmd));
    if (train_cmd->parsed()) run_train(train, train_cfg.resolve(*train_cmd));
    if (eval_cmd->parsed()) run_eval_gap(eval, eval_cfg.resolve(*eval_cmd));
    if (report_cmd->parsed()) run_report(metrics_path, report_out);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
