// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// The `peftkit` command: dataset generation, splitting, training, prediction, evaluation,
// reporting and quantization inspection. Exit codes: 0 ok, 2 usage or validation,
// 3 external-service failure, 4 numeric failure. Failures print one line to stderr:
//   error kind=<kind> exit=<code> [key=<config key>] [step=<n>] msg="<json-escaped text>"

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "peftkit/adapters.hpp"
#include "peftkit/config.hpp"
#include "peftkit/errors.hpp"
#include "peftkit/eval.hpp"
#include "peftkit/hazardqa.hpp"
#include "peftkit/http_client.hpp"
#include "peftkit/model.hpp"
#include "peftkit/quant.hpp"
#include "peftkit/synthetic.hpp"
#include "peftkit/text.hpp"
#include "peftkit/tokenizer.hpp"
#include "peftkit/trainer.hpp"

namespace peftkit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitExternal = 3;
inline constexpr int kExitNumeric = 4;

namespace cli_detail {

namespace fs = std::filesystem;

inline std::string error_line(std::string_view kind, int code, const std::string& msg, const std::string& extra = {}) {
  return fmt::format("error kind={} exit={}{} msg={}\n", kind, code, extra, nlohmann::json(msg).dump());
}

inline void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw InputError(fmt::format("cannot read '{}': no such file", p.string()));
}

inline std::string json_lines(const std::vector<nlohmann::ordered_json>& items) {
  std::string out;
  for (const auto& j : items) out += j.dump() + "\n";
  return out;
}

inline RunConfig load_run_config(const std::string& config_path, const std::vector<std::string>& overrides,
                                 std::optional<std::uint64_t> seed) {
  RunConfig cfg;
  if (!config_path.empty()) {
    require_file(config_path);
    apply_config_text(cfg, read_text_file(config_path));
  }
  apply_overrides(cfg, overrides);
  if (seed) cfg.train.seed = *seed;
  cfg.validate();
  return cfg;
}

/// Canonical labels of one category, from DIR/<category>.txt.
inline std::optional<LabelSet> load_label_set(const fs::path& dir, Category c) {
  const fs::path p = dir / (std::string(category_name(c)) + ".txt");
  if (!fs::exists(p)) return std::nullopt;
  LabelSet ls{c, read_list_file(p)};
  ls.validate();
  return ls;
}

inline std::map<std::string, std::string> load_context(const fs::path& path) {
  std::map<std::string, std::string> ctx;
  if (!fs::exists(path)) return ctx;
  for (const auto& line : split_lines(read_text_file(path))) {
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ctx[j.at("scenario_id").get<std::string>()] = j.at("caption").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError(fmt::format("'{}': {}", path.string(), e.what()));
    }
  }
  return ctx;
}

inline std::vector<TokenId> record_tokens(const QARecord& r, const std::map<std::string, std::string>& ctx,
                                          const ToyModelSpec& spec) {
  std::string text(category_name(r.category));
  if (auto it = ctx.find(r.scenario_id); it != ctx.end()) text += " " + it->second;
  text += " " + r.question;
  return hash_tokenize(text, spec.vocab_size, spec.max_seq_len);
}

struct ClassVocab {
  std::vector<std::pair<Category, std::string>> classes;
  std::map<Category, LabelSet> label_sets;

  std::optional<std::size_t> index_of(Category c, const std::string& label) const {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i].first == c && classes[i].second == label) return i;
    }
    return std::nullopt;
  }
};

inline ClassVocab load_class_vocab(const fs::path& labels_dir) {
  ClassVocab v;
  for (Category c : kCategories) {
    auto ls = load_label_set(labels_dir, c);
    if (!ls) continue;
    for (const auto& l : ls->labels) v.classes.emplace_back(c, l);
    v.label_sets.emplace(c, std::move(*ls));
  }
  if (v.classes.size() < 2) throw InputError(fmt::format("no label files found in '{}'", labels_dir.string()));
  return v;
}

inline std::vector<QARecord> load_corpus(const fs::path& path, const std::string& ids_path) {
  require_file(path);
  auto records = parse_records_jsonl(read_text_file(path));
  if (!ids_path.empty()) {
    require_file(ids_path);
    records = filter_by_ids(records, read_list_file(ids_path));
  }
  if (records.empty()) throw InputError(fmt::format("no QA records selected from '{}'", path.string()));
  return records;
}

inline std::string loss_trace_csv(const std::vector<LossPoint>& trace) {
  std::string out = "step,lr,loss\n";
  for (const auto& p : trace) out += fmt::format("{},{},{}\n", p.step, p.lr, p.loss);
  return out;
}

/// 4-bit storage of the quantized entries against 32-bit storage of the same entries, and of the whole base.
inline nlohmann::ordered_json footprint_report(const ModelParams& model) {
  std::size_t q_count = 0, q_fp32 = 0, q_payload = 0, q_total = 0, dense_fp32 = 0;
  for (const auto& [key, entry] : model.entries) {
    if (const auto* q = std::get_if<Q4BlockMatrix>(&entry.value)) {
      ++q_count;
      q_fp32 += 4 * q->size();
      q_payload += payload_bytes(*q);
      q_total += memory_footprint(*q);
    } else {
      dense_fp32 += 4 * entry.dense().size();
    }
  }
  nlohmann::ordered_json j;
  j["quantized_matrices"] = q_count;
  j["quantized_fp32_bytes"] = q_fp32;
  j["quantized_q4_payload_bytes"] = q_payload;
  j["quantized_q4_total_bytes"] = q_total;
  j["quantized_reduction_vs_fp32"] = q_payload == 0 ? 0.0 : static_cast<double>(q_fp32) / static_cast<double>(q_payload);
  j["dense_fp32_bytes"] = dense_fp32;
  const double whole = static_cast<double>(q_fp32 + dense_fp32) / static_cast<double>(q_payload + dense_fp32);
  j["whole_base_reduction_vs_fp32"] = whole;
  return j;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct SynthScenarioArgs {
  std::size_t n = 100;
  std::uint64_t seed = 42;
  std::string out;
  std::size_t malformed_every = 0;
  std::size_t malformed_attempts = 1;
};

inline std::vector<ScenarioAnnotation> synth_scenarios(const SynthScenarioArgs& a) {
  static const std::vector<std::string> roads = {"urban road", "highway", "intersection", "residential street",
                                                 "parking lot"};
  static const std::vector<std::string> agents = {"pedestrian", "cyclist", "truck", "motorcyclist", "vehicle"};
  static const std::vector<std::string> actions = {"slow down", "stop", "change lanes", "keep distance",
                                                   "proceed with caution"};
  static const std::vector<std::string> verbs = {"crossing", "merging", "stopped", "turning", "approaching"};
  std::mt19937_64 rng(derive_seed(a.seed, "synth-scenarios"));
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  std::vector<ScenarioAnnotation> out;
  for (std::size_t i = 0; i < a.n; ++i) {
    ScenarioAnnotation s;
    s.scenario_id = fmt::format("scn_{:05d}", i);
    s.image_ref = fmt::format("frames/{}.png", s.scenario_id);
    const auto road = pick(roads), agent = pick(agents), verb = pick(verbs);
    s.caption = fmt::format("A {} is {} ahead of the ego-car on the {}.", agent, verb, road);
    s.risk_present = std::bernoulli_distribution(0.5)(rng);
    s.suggested_action = s.risk_present ? pick(actions) : "proceed with caution";
    s.road_type = road;
    s.extra["agent"] = agent;
    if (a.malformed_every > 0 && i % a.malformed_every == 0) {
      s.extra["mock_malformed"] = std::to_string(a.malformed_attempts);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline int cmd_synth_scenarios(const SynthScenarioArgs& a, std::ostream& out) {
  std::vector<nlohmann::ordered_json> lines;
  for (const auto& s : synth_scenarios(a)) lines.push_back(scenario_to_json(s));
  write_text_file(a.out, json_lines(lines));
  out << fmt::format("wrote {} scenarios to {}\n", a.n, a.out);
  return kExitOk;
}

struct GenDataArgs {
  std::string scenarios;
  std::string out;
  std::string backend;
  std::optional<std::uint64_t> seed;
  std::string config;
  std::vector<std::string> overrides;
};

inline int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  auto overrides = a.overrides;
  if (!a.backend.empty()) overrides.push_back("llm_backend=" + a.backend);
  const RunConfig cfg = load_run_config(a.config, overrides, a.seed);
  require_file(a.scenarios);
  const auto scenarios = parse_scenarios_jsonl(read_text_file(a.scenarios));
  auto client = make_llm_client(cfg.llm, derive_seed(cfg.train.seed, "mock-llm"));
  const auto result = generate_dataset(scenarios, *client, cfg.llm);

  const fs::path dir(a.out);
  write_text_file(dir / "corpus.jsonl", records_to_jsonl(result.records));
  std::vector<nlohmann::ordered_json> rejects;
  for (const auto& r : result.rejects) rejects.push_back(reject_to_json(r));
  write_text_file(dir / "rejects.jsonl", json_lines(rejects));

  std::set<std::string> accepted;
  for (const auto& r : result.records) accepted.insert(r.scenario_id);
  std::vector<nlohmann::ordered_json> ctx;
  for (const auto& s : scenarios) {
    if (accepted.contains(s.scenario_id)) ctx.push_back({{"scenario_id", s.scenario_id}, {"caption", s.caption}});
  }
  std::sort(ctx.begin(), ctx.end(), [](const auto& x, const auto& y) {
    return x["scenario_id"].template get<std::string>() < y["scenario_id"].template get<std::string>();
  });
  write_text_file(dir / "context.jsonl", json_lines(ctx));

  // Canonical labels: distinct answers per category, deduplicated after normalization.
  for (Category c : kCategories) {
    std::map<std::string, std::string> by_norm;
    for (const auto& r : result.records) {
      const auto n = normalize_text(r.answer);
      if (r.category == c && !n.empty() && n != kUnknownLabel) by_norm.emplace(n, std::string(trim(r.answer)));
    }
    std::vector<std::string> labels;
    for (const auto& [n, l] : by_norm) labels.push_back(l);
    write_text_file(dir / "labels" / (std::string(category_name(c)) + ".txt"), join_lines(labels));
  }

  nlohmann::ordered_json summary;
  summary["scenarios"] = result.scenarios;
  summary["accepted"] = result.accepted;
  summary["rejected"] = result.rejects.size();
  summary["records"] = result.records.size();
  summary["requests"] = result.requests;
  summary["retries"] = result.retries;
  summary["parse_failures"] = result.parse_failures;
  summary["transport_failures"] = result.transport_failures;
  summary["backend"] = cfg.llm.backend == LlmBackend::Http ? "http" : "mock";
  summary["effective_config"] = config_to_json(cfg);
  write_text_file(dir / "generation_summary.json", summary.dump(2) + "\n");
  write_text_file(dir / "config.effective", config_to_text(cfg));
  out << fmt::format("accepted {}/{} scenarios, {} records, {} rejected\n", result.accepted, result.scenarios,
                     result.records.size(), result.rejects.size());
  return kExitOk;
}

struct SplitArgs {
  std::string corpus;
  std::string out;
  double test_fraction = 0.2;
  std::uint64_t seed = 42;
};

inline int cmd_split(const SplitArgs& a, std::ostream& out) {
  const auto records = load_corpus(a.corpus, {});
  const auto m = split_dataset(records, a.test_fraction, derive_seed(a.seed, "split"));
  const fs::path dir(a.out);
  write_text_file(dir / "train_ids.txt", join_lines(m.train_ids));
  write_text_file(dir / "test_ids.txt", join_lines(m.test_ids));
  write_text_file(dir / "train.jsonl", records_to_jsonl(filter_by_ids(records, m.train_ids)));
  write_text_file(dir / "test.jsonl", records_to_jsonl(filter_by_ids(records, m.test_ids)));
  out << fmt::format("{} train scenarios, {} test scenarios\n", m.train_ids.size(), m.test_ids.size());
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string ids;
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool qlora = false;
  bool synthetic = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.synthetic == !a.data.empty()) throw InputError("train needs exactly one of --data DIR or --synthetic");
  RunConfig cfg = load_run_config(a.config, a.overrides, a.seed);
  nlohmann::ordered_json model_info;
  std::vector<Example> train_set, test_set;
  std::size_t skipped = 0;

  if (a.synthetic) {
    train_set = make_token_task(cfg.synthetic_examples, cfg.model, derive_seed(cfg.train.seed, "synthetic-train"));
    test_set = make_token_task(cfg.synthetic_test_examples, cfg.model, derive_seed(cfg.train.seed, "synthetic-test"));
    model_info["task"] = "synthetic";
  } else {
    const fs::path dir(a.data);
    const auto vocab = load_class_vocab(dir / "labels");
    cfg.model.n_classes = vocab.classes.size();
    cfg.validate();
    const auto ctx = load_context(dir / "context.jsonl");
    for (const auto& r : load_corpus(dir / "corpus.jsonl", a.ids)) {
      auto ls = vocab.label_sets.find(r.category);
      if (ls == vocab.label_sets.end()) {
        ++skipped;
        continue;
      }
      const auto idx = vocab.index_of(r.category, normalize_answer(r.answer, ls->second));
      if (!idx) {
        ++skipped;
        continue;
      }
      train_set.push_back({record_tokens(r, ctx, cfg.model), *idx});
    }
    if (train_set.empty()) throw InputError("no training examples map onto the label files");
    model_info["task"] = "corpus";
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (const auto& [c, l] : vocab.classes) classes.push_back({{"category", category_name(c)}, {"label", l}});
    model_info["classes"] = classes;
  }
  model_info["qlora"] = a.qlora;

  ModelParams base = init_base_model(cfg.model, derive_seed(cfg.train.seed, "base"));
  if (a.qlora) base = quantize_base(base, cfg.train.state_block_size);
  const auto base_before = serialize_base(base);
  AdapterSet adapters = init_adapters(cfg.model, cfg.train.rank, cfg.train.alpha, derive_seed(cfg.train.seed, "adapters"));
  const TrainResult result = train(train_set, base, cfg.model, std::move(adapters), cfg.train);
  if (serialize_base(base) != base_before) throw NumericError("base weights changed during training");

  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_adapters(dir / "adapters.pkla", result.adapters);
  write_text_file(dir / "loss_trace.csv", loss_trace_csv(result.trace));
  write_text_file(dir / "config.effective", config_to_text(cfg));
  write_text_file(dir / "model.json", model_info.dump(2) + "\n");

  const auto& s = result.summary;
  nlohmann::ordered_json summary;
  summary["task"] = model_info["task"];
  summary["qlora"] = a.qlora;
  summary["examples"] = s.examples;
  summary["skipped_examples"] = skipped;
  summary["epochs"] = s.epochs;
  summary["optimizer_steps"] = s.optimizer_steps;
  summary["micro_batches"] = s.micro_batches;
  summary["trainable_params"] = s.trainable.count;
  summary["base_params"] = s.trainable.base_total;
  summary["trainable_percent"] = s.trainable.percent_of_base;
  summary["initial_loss"] = s.initial_loss;
  summary["final_loss"] = s.final_loss;
  summary["final_lr"] = s.final_lr;
  summary["shuffle"] = s.shuffle;
  summary["shuffle_seed"] = s.shuffle_seed;
  summary["optimizer_state_bits"] = cfg.train.state_bits;
  summary["optimizer_state_bytes"] = s.optimizer_state_bytes;
  if (a.synthetic) summary["test_accuracy"] = accuracy(base, cfg.model, test_set, &result.adapters);
  if (a.qlora) summary["base_footprint"] = footprint_report(base);
  summary["wall_seconds"] = s.wall_seconds;
  summary["effective_config"] = config_to_json(cfg);
  write_text_file(dir / "summary.json", summary.dump(2) + "\n");

  out << fmt::format("trained {} adapter parameters ({:.4f}% of {} base) in {} steps, loss {:.4f} -> {:.4f}\n",
                     s.trainable.count, s.trainable.percent_of_base, s.trainable.base_total, s.optimizer_steps,
                     s.initial_loss, s.final_loss);
  if (a.qlora) {
    out << fmt::format("4-bit base footprint reduction vs 32-bit: {:.2f}x\n",
                       summary["base_footprint"]["quantized_reduction_vs_fp32"].get<double>());
  }
  return kExitOk;
}

struct PredictArgs {
  std::string model;
  std::string data;
  std::string ids;
  std::string out;
};

inline int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const fs::path mdir(a.model);
  require_file(mdir / "model.json");
  require_file(mdir / "config.effective");
  const auto info = nlohmann::json::parse(read_text_file(mdir / "model.json"));
  if (info.at("task") != "corpus") throw InputError("predict needs a model trained with --data");
  RunConfig cfg;
  apply_config_text(cfg, read_text_file(mdir / "config.effective"));
  cfg.validate();

  std::vector<std::pair<Category, std::string>> classes;
  for (const auto& c : info.at("classes")) {
    const auto cat = parse_category(c.at("category").get<std::string>());
    if (!cat) throw InputError("model.json: unknown category");
    classes.emplace_back(*cat, c.at("label").get<std::string>());
  }
  if (classes.size() != cfg.model.n_classes) throw InputError("model.json class list does not match n_classes");

  ModelParams base = init_base_model(cfg.model, derive_seed(cfg.train.seed, "base"));
  if (info.at("qlora").get<bool>()) base = quantize_base(base, cfg.train.state_block_size);
  const AdapterSet adapters = load_adapters(mdir / "adapters.pkla");

  const fs::path ddir(a.data);
  const auto ctx = load_context(ddir / "context.jsonl");
  std::vector<nlohmann::ordered_json> lines;
  for (const auto& r : load_corpus(ddir / "corpus.jsonl", a.ids)) {
    const auto logits = forward(base, cfg.model, record_tokens(r, ctx, cfg.model), &adapters);
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      if (classes[k].first == r.category && (!best || logits[k] > logits[*best])) best = k;
    }
    nlohmann::ordered_json j;
    j["scenario_id"] = r.scenario_id;
    j["pair_index"] = r.pair_index;
    j["raw_answer"] = best ? classes[*best].second : std::string(kUnknownLabel);
    lines.push_back(std::move(j));
  }
  write_text_file(a.out, json_lines(lines));
  out << fmt::format("wrote {} predictions to {}\n", lines.size(), a.out);
  return kExitOk;
}

struct EvalArgs {
  std::string preds;
  std::string gold;
  std::string labels;
  std::string ids;
  std::string out;
  std::string name = "model";
  std::string mode = "macro";
  std::size_t n = 500;
  std::uint64_t seed = 42;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Averaging mode = parse_averaging(a.mode);
  if (a.name.empty() || a.name.find_first_of(",/\\\n") != std::string::npos) {
    throw InputError(fmt::format("model name '{}' must be non-empty without ',', '/', '\\\\'", a.name));
  }
  const auto gold = load_corpus(a.gold, a.ids);
  require_file(a.preds);

  using Key = std::pair<std::string, std::size_t>;
  std::set<Key> gold_keys;
  for (const auto& g : gold) gold_keys.insert({g.scenario_id, g.pair_index});
  std::map<Key, std::string> preds;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_text_file(a.preds))) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Key k{j.at("scenario_id").get<std::string>(), j.at("pair_index").get<std::size_t>()};
      const auto& ans = j.contains("raw_answer") ? j.at("raw_answer") : j.at("answer");
      if (!gold_keys.contains(k)) {
        throw InputError(fmt::format("prediction for {}#{} has no gold record", k.first, k.second));
      }
      preds[k] = ans.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError(fmt::format("predictions line {}: {}", lineno, e.what()));
    }
  }
  const auto sample = sample_eval_set<QARecord>(gold, a.n, derive_seed(a.seed, "eval-sample"));

  std::map<Category, std::pair<std::vector<std::string>, std::vector<std::string>>> per_task;  // (preds, golds)
  std::map<Category, LabelSet> label_sets;
  for (const auto& g : sample) {
    auto it = preds.find({g.scenario_id, g.pair_index});
    if (it == preds.end()) throw InputError(fmt::format("no prediction for {}#{}", g.scenario_id, g.pair_index));
    if (!label_sets.contains(g.category)) {
      auto ls = load_label_set(a.labels, g.category);
      if (!ls) throw InputError(fmt::format("no label file for category '{}' in '{}'", category_name(g.category), a.labels));
      label_sets.emplace(g.category, std::move(*ls));
    }
    const LabelSet& ls = label_sets.at(g.category);
    per_task[g.category].first.push_back(normalize_answer(it->second, ls));
    per_task[g.category].second.push_back(normalize_answer(g.answer, ls));
  }

  ModelReport report{a.name, {}};
  nlohmann::ordered_json mj;
  mj["model"] = a.name;
  mj["mode"] = averaging_name(mode);
  mj["samples"] = sample.size();
  for (const auto& [c, pg] : per_task) {
    const auto cm = build_confusion(pg.first, pg.second, label_sets.at(c));
    const auto m = compute_metrics(cm, mode);
    report.tasks[c] = m;
    mj["tasks"][std::string(category_name(c))] = {{"accuracy", m.accuracy}, {"precision", m.precision},
                                                  {"recall", m.recall},     {"f1", m.f1},
                                                  {"samples", m.samples}};
  }
  const fs::path dir(a.out);
  const std::vector<ModelReport> reports = {report};
  write_text_file(dir / (a.name + ".metrics.json"), mj.dump(2) + "\n");
  write_text_file(dir / (a.name + ".report.txt"), render_report(reports));
  write_text_file(dir / (a.name + ".report.csv"), render_report_csv(reports));
  out << render_report(reports);
  return kExitOk;
}

inline std::vector<ModelReport> load_model_reports(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError(fmt::format("cannot read '{}': not a directory", dir.string()));
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > 13 && name.ends_with(".metrics.json")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError(fmt::format("no *.metrics.json files in '{}'", dir.string()));
  std::vector<ModelReport> out;
  for (const auto& f : files) {
    try {
      const auto j = nlohmann::json::parse(read_text_file(f));
      ModelReport r;
      r.model = j.at("model").get<std::string>();
      const Averaging mode = parse_averaging(j.at("mode").get<std::string>());
      for (const auto& [cat, m] : j.at("tasks").items()) {
        const auto c = parse_category(cat);
        if (!c) throw InputError(fmt::format("'{}': unknown task '{}'", f.string(), cat));
        r.tasks[*c] = {m.at("accuracy").get<double>(), m.at("precision").get<double>(), m.at("recall").get<double>(),
                       m.at("f1").get<double>(), mode, m.at("samples").get<std::uint64_t>()};
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(fmt::format("'{}': {}", f.string(), e.what()));
    }
  }
  return out;
}

inline int cmd_report(const std::string& in_dir, std::ostream& out) {
  const auto reports = load_model_reports(in_dir);
  const fs::path dir(in_dir);
  write_text_file(dir / "report.txt", render_report(reports));
  write_text_file(dir / "report.csv", render_report_csv(reports));
  out << render_report(reports);
  return kExitOk;
}

/// Whitespace- or comma-separated numbers, one matrix row per non-blank line.
inline Matrix read_matrix_text(const fs::path& path) {
  require_file(path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  for (const auto& line : split_lines(read_text_file(path))) {
    std::string l(trim(line));
    if (l.empty() || l.front() == '#') continue;
    std::replace(l.begin(), l.end(), ',', ' ');
    std::istringstream ss(l);
    std::size_t n = 0;
    std::string tok;
    while (ss >> tok) {
      values.push_back(detail::parse_real("weights", tok));
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw InputError(fmt::format("'{}': row {} has {} values, expected {}", path.string(), rows + 1, n, cols));
    ++rows;
  }
  if (rows == 0) throw InputError(fmt::format("'{}' holds no matrix rows", path.string()));
  return Matrix(rows, cols, std::move(values));
}

inline int cmd_inspect_quant(const std::string& weights, std::size_t block, const std::string& csv, std::ostream& out) {
  if (block < 1) throw ConfigError("block", "must be >= 1");
  const Matrix w = read_matrix_text(weights);
  const auto s = inspect_quantization(w, block);
  out << fmt::format("matrix: {}x{}\n", s.rows, s.cols);
  out << fmt::format("block_size: {}\n", s.block_size);
  out << fmt::format("blocks: {}\n", s.num_blocks);
  out << fmt::format("zero_blocks: {}\n", s.zero_blocks);
  out << fmt::format("scale_min: {:.9g}\n", s.min_scale);
  out << fmt::format("scale_mean: {:.9g}\n", s.mean_scale);
  out << fmt::format("scale_max: {:.9g}\n", s.max_scale);
  out << fmt::format("max_abs_error: {:.9g}\n", s.max_abs_error);
  out << fmt::format("max_error_over_half_scale: {:.9g}\n", s.max_error_over_half_scale);
  out << fmt::format("fp32_bytes: {}\n", s.fp32_bytes);
  out << fmt::format("q4_payload_bytes: {}\n", s.payload_bytes);
  out << fmt::format("q4_total_bytes: {}\n", s.total_bytes);
  out << fmt::format("reduction_vs_fp32: {:.2f}x\n", s.ratio_vs_fp32);
  if (!csv.empty()) {
    std::string t = "block,scale,max_abs_error\n";
    for (std::size_t b = 0; b < s.num_blocks; ++b) {
      t += fmt::format("{},{:.9g},{:.9g}\n", b, s.block_scales[b], s.block_max_errors[b]);
    }
    write_text_file(csv, t);
  }
  return kExitOk;
}

}  // namespace cli_detail

/// Runs the command line `args` (without the program name). Never throws.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  using namespace cli_detail;
  CLI::App app{"peftkit: adapter fine-tuning, hazard QA generation and evaluation"};
  app.require_subcommand(1);

  SynthScenarioArgs synth;
  auto* c_synth = app.add_subcommand("synth-scenarios", "Write synthetic scenario annotations (JSONL)");
  c_synth->add_option("--n", synth.n, "Number of scenarios");
  c_synth->add_option("--seed", synth.seed, "Master seed");
  c_synth->add_option("--out", synth.out, "Output JSONL file")->required();
  c_synth->add_option("--malformed-every", synth.malformed_every, "Mark every k-th scenario for malformed mock responses");
  c_synth->add_option("--malformed-attempts", synth.malformed_attempts, "Malformed attempts per marked scenario");

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate the QA corpus from scenario annotations");
  c_gen->add_option("--scenarios", gen.scenarios, "Scenario JSONL file")->required();
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_option("--backend", gen.backend, "mock or http")->check(CLI::IsMember({"mock", "http"}));
  c_gen->add_option("--seed", gen.seed, "Master seed");
  c_gen->add_option("--config", gen.config, "Run configuration file");
  c_gen->add_option("--set", gen.overrides, "Override key=value (repeatable)");

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Split a corpus into train/test manifests by scenario");
  c_split->add_option("--corpus", split.corpus, "Corpus JSONL")->required();
  c_split->add_option("--out", split.out, "Output directory")->required();
  c_split->add_option("--test-fraction", split.test_fraction, "Share of scenarios in the test side");
  c_split->add_option("--seed", split.seed, "Master seed");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train adapters on a corpus or on the synthetic token task");
  c_train->add_option("--data", tr.data, "gen-data output directory");
  c_train->add_option("--ids", tr.ids, "Scenario id manifest restricting the corpus");
  c_train->add_flag("--synthetic", tr.synthetic, "Train on the synthetic token-classification task");
  c_train->add_option("--config", tr.config, "Run configuration file");
  c_train->add_option("--set", tr.overrides, "Override key=value (repeatable)");
  c_train->add_option("--seed", tr.seed, "Master seed");
  c_train->add_option("--out", tr.out, "Output directory")->required();
  c_train->add_flag("--qlora", tr.qlora, "Quantize the frozen base to 4 bits before training");

  PredictArgs pr;
  auto* c_pred = app.add_subcommand("predict", "Answer corpus questions with a trained model");
  c_pred->add_option("--model", pr.model, "train output directory")->required();
  c_pred->add_option("--data", pr.data, "gen-data output directory")->required();
  c_pred->add_option("--ids", pr.ids, "Scenario id manifest");
  c_pred->add_option("--out", pr.out, "Predictions JSONL")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Score predictions against gold records");
  c_eval->add_option("--preds", ev.preds, "Predictions JSONL")->required();
  c_eval->add_option("--gold", ev.gold, "Gold corpus JSONL")->required();
  c_eval->add_option("--labels", ev.labels, "Directory of <category>.txt label files")->required();
  c_eval->add_option("--ids", ev.ids, "Scenario id manifest restricting the gold records");
  c_eval->add_option("--n", ev.n, "Evaluation sample size");
  c_eval->add_option("--seed", ev.seed, "Master seed");
  c_eval->add_option("--mode", ev.mode, "micro, macro or weighted");
  c_eval->add_option("--name", ev.name, "Model column name");
  c_eval->add_option("--out", ev.out, "Output directory")->required();

  std::string report_in;
  auto* c_report = app.add_subcommand("report", "Render all *.metrics.json in a directory as one table");
  c_report->add_option("--in", report_in, "Directory holding eval outputs")->required();

  std::string weights, quant_csv;
  std::size_t block = kDefaultQuantBlock;
  auto* c_quant = app.add_subcommand("inspect-quant", "4-bit quantization statistics and footprint of a matrix");
  c_quant->add_option("--weights", weights, "Matrix text file (rows of numbers)")->required();
  c_quant->add_option("--block", block, "Block size");
  c_quant->add_option("--csv", quant_csv, "Write per-block statistics to this CSV");

  std::vector<std::string> argv_store = {"peftkit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", kExitUsage, e.what());
    return kExitUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth_scenarios(synth, out);
    if (c_gen->parsed()) return cmd_gen_data(gen, out);
    if (c_split->parsed()) return cmd_split(split, out);
    if (c_train->parsed()) return cmd_train(tr, out);
    if (c_pred->parsed()) return cmd_predict(pr, out);
    if (c_eval->parsed()) return cmd_eval(ev, out);
    if (c_report->parsed()) return cmd_report(report_in, out);
    if (c_quant->parsed()) return cmd_inspect_quant(weights, block, quant_csv, out);
  } catch (const ConfigError& e) {
    err << error_line("config", kExitUsage, e.what(), e.key().empty() ? "" : " key=" + e.key());
    return kExitUsage;
  } catch (const TransportError& e) {
    err << error_line("transport", kExitExternal, e.what(), " endpoint=" + nlohmann::json(e.endpoint()).dump());
    return kExitExternal;
  } catch (const NumericError& e) {
    err << error_line("numeric", kExitNumeric, e.what(), e.step() ? fmt::format(" step={}", *e.step()) : "");
    return kExitNumeric;
  } catch (const ParseError& e) {
    err << error_line("parse", kExitUsage, e.what());
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << error_line("shape", kExitUsage, e.what());
    return kExitUsage;
  } catch (const InputError& e) {
    err << error_line("input", kExitUsage, e.what());
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << error_line("input", kExitUsage, e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    err << error_line("internal", 1, e.what());
    return 1;
  }
  err << error_line("usage", kExitUsage, "no subcommand given");
  return kExitUsage;
}

}  // namespace peftkit
