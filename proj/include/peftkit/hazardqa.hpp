// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Scenario annotations -> five categorized QA pairs per scenario through a pluggable
// LLM client, with retry/reject accounting and a leakage-free split by scenario.

#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "peftkit/category.hpp"
#include "peftkit/errors.hpp"
#include "peftkit/random.hpp"
#include "peftkit/text.hpp"

namespace peftkit {

inline constexpr std::size_t kPairsPerScenario = 5;

struct ScenarioAnnotation {
  std::string scenario_id;
  std::string image_ref;
  std::string caption;
  bool risk_present = false;
  std::string suggested_action;
  std::string road_type;
  std::map<std::string, std::string> extra;

  void validate() const {
    if (scenario_id.empty()) throw InputError("scenario_id must not be empty");
    if (trim(caption).empty()) throw InputError(fmt::format("scenario '{}': caption must not be empty", scenario_id));
  }
};

inline ScenarioAnnotation scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("scenario annotation must be a JSON object");
  static const std::set<std::string> known = {"scenario_id", "image_ref",  "caption", "risk_present",
                                              "suggested_action", "road_type", "extra"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw InputError(fmt::format("unknown scenario field '{}'", key));
  }
  auto text = [&](const char* key) -> std::string {
    if (!j.contains(key)) throw InputError(fmt::format("scenario field '{}' is missing", key));
    if (!j.at(key).is_string()) throw InputError(fmt::format("scenario field '{}' must be a string", key));
    return j.at(key).get<std::string>();
  };
  ScenarioAnnotation s;
  s.scenario_id = text("scenario_id");
  s.image_ref = text("image_ref");
  s.caption = text("caption");
  s.suggested_action = text("suggested_action");
  s.road_type = text("road_type");
  if (!j.contains("risk_present") || !j.at("risk_present").is_boolean()) {
    throw InputError(fmt::format("scenario '{}': risk_present must be a boolean", s.scenario_id));
  }
  s.risk_present = j.at("risk_present").get<bool>();
  if (j.contains("extra")) {
    if (!j.at("extra").is_object()) throw InputError("scenario field 'extra' must be an object");
    for (const auto& [key, value] : j.at("extra").items()) {
      s.extra[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }
  s.validate();
  return s;
}

inline nlohmann::ordered_json scenario_to_json(const ScenarioAnnotation& s) {
  nlohmann::ordered_json j;
  j["scenario_id"] = s.scenario_id;
  j["image_ref"] = s.image_ref;
  j["caption"] = s.caption;
  j["risk_present"] = s.risk_present;
  j["suggested_action"] = s.suggested_action;
  j["road_type"] = s.road_type;
  if (!s.extra.empty()) j["extra"] = s.extra;
  return j;
}

/// One annotation per non-blank line; scenario ids must be unique.
inline std::vector<ScenarioAnnotation> parse_scenarios_jsonl(std::string_view text) {
  std::vector<ScenarioAnnotation> out;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(text)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(fmt::format("scenarios line {}: {}", lineno, e.what()));
    }
    auto s = scenario_from_json(j);
    if (!seen.insert(s.scenario_id).second) {
      throw InputError(fmt::format("scenarios line {}: duplicate scenario_id '{}'", lineno, s.scenario_id));
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct QAPair {
  std::string question;
  std::string answer;
  Category category = Category::Scene;
};

struct QARecord {
  std::string scenario_id;
  std::string image_ref;
  std::string question;
  std::string answer;
  Category category = Category::Scene;
  std::size_t pair_index = 1;

  bool operator==(const QARecord&) const = default;
};

/// Fixed key order: scenario_id, image_ref, question, answer, category, pair_index.
inline nlohmann::ordered_json record_to_json(const QARecord& r) {
  nlohmann::ordered_json j;
  j["scenario_id"] = r.scenario_id;
  j["image_ref"] = r.image_ref;
  j["question"] = r.question;
  j["answer"] = r.answer;
  j["category"] = category_name(r.category);
  j["pair_index"] = r.pair_index;
  return j;
}

inline QARecord record_from_json(const nlohmann::json& j) {
  try {
    QARecord r;
    r.scenario_id = j.at("scenario_id").get<std::string>();
    r.image_ref = j.at("image_ref").get<std::string>();
    r.question = j.at("question").get<std::string>();
    r.answer = j.at("answer").get<std::string>();
    const auto cat = j.at("category").get<std::string>();
    const auto c = parse_category(cat);
    if (!c) throw InputError(fmt::format("record '{}': unknown category '{}'", r.scenario_id, cat));
    r.category = *c;
    r.pair_index = j.at("pair_index").get<std::size_t>();
    if (r.pair_index < 1 || r.pair_index > kPairsPerScenario) {
      throw InputError(fmt::format("record '{}': pair_index {} outside 1..5", r.scenario_id, r.pair_index));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(fmt::format("malformed QA record: {}", e.what()));
  }
}

inline std::string records_to_jsonl(std::span<const QARecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<QARecord> parse_records_jsonl(std::string_view text) {
  std::vector<QARecord> out;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(text)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(fmt::format("corpus line {}: {}", lineno, e.what()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt and response grammar
//
//   Q<n> [<category>]: <question>
//   A<n>: <answer>
//
// for n = 1..5 in order. Lines that start with neither "Q<digit>" nor "A<digit>" are ignored.
// ---------------------------------------------------------------------------

inline std::string build_prompt(const ScenarioAnnotation& s) {
  std::string p;
  p += "You are annotating a driving scene for a hazard-awareness visual question answering dataset.\n\n";
  p += "Scenario annotation:\n";
  p += fmt::format("- scenario_id: {}\n", s.scenario_id);
  p += fmt::format("- image_ref: {}\n", s.image_ref);
  p += fmt::format("- caption: {}\n", s.caption);
  p += fmt::format("- risk_present: {}\n", s.risk_present ? "true" : "false");
  p += fmt::format("- suggested_action: {}\n", s.suggested_action);
  p += fmt::format("- road_type: {}\n", s.road_type);
  for (const auto& [key, value] : s.extra) p += fmt::format("- extra.{}: {}\n", key, value);
  p += "\nWrite exactly five question-answer pairs about this scene.\n";
  p += "Tag every question with exactly one of the four categories: scene, agent, suggested_action, risk.\n";
  p += "Use every category at least once; one category appears twice.\n";
  p += "Answer each question with a short phrase grounded in the annotation.\n\n";
  p += "Respond with exactly ten lines and nothing else, in this format:\n";
  p += "Q1 [category]: question\nA1: answer\n...\nQ5 [category]: question\nA5: answer\n";
  return p;
}

/// Parses the response grammar into exactly five pairs, preserving order.
inline std::vector<QAPair> parse_qa_response(const std::string& text) {
  static const std::regex q_line(R"(^Q(\d+)\s*\[([^\]]*)\]\s*:\s*(.*)$)");
  static const std::regex a_line(R"(^A(\d+)\s*:\s*(.*)$)");
  auto fail = [&](const std::string& why) { throw ParseError("QA response: " + why, text); };

  std::vector<QAPair> pairs;
  bool awaiting_answer = false;
  for (const auto& raw_line : split_lines(text)) {
    const std::string line(trim(raw_line));
    if (line.size() < 2 || (line[0] != 'Q' && line[0] != 'A') || !std::isdigit(static_cast<unsigned char>(line[1]))) {
      continue;
    }
    std::smatch m;
    if (line[0] == 'Q') {
      if (awaiting_answer) fail(fmt::format("question {} has no answer", pairs.size()));
      if (!std::regex_match(line, m, q_line)) fail(fmt::format("malformed question line '{}'", line));
      if (std::stoul(m[1].str()) != pairs.size() + 1) fail(fmt::format("question numbered {} out of order", m[1].str()));
      std::string cat = ascii_lower(trim(m[2].str()));
      std::replace(cat.begin(), cat.end(), ' ', '_');
      const auto c = parse_category(cat);
      if (!c) fail(fmt::format("unknown category '{}'", m[2].str()));
      const std::string q(trim(m[3].str()));
      if (q.empty()) fail(fmt::format("question {} is empty", pairs.size() + 1));
      pairs.push_back({q, "", *c});
      awaiting_answer = true;
    } else {
      if (!std::regex_match(line, m, a_line)) fail(fmt::format("malformed answer line '{}'", line));
      if (!awaiting_answer || std::stoul(m[1].str()) != pairs.size()) {
        fail(fmt::format("answer numbered {} does not follow its question", m[1].str()));
      }
      const std::string a(trim(m[2].str()));
      if (a.empty()) fail(fmt::format("answer {} is empty", pairs.size()));
      pairs.back().answer = a;
      awaiting_answer = false;
    }
  }
  if (awaiting_answer) fail(fmt::format("question {} has no answer", pairs.size()));
  if (pairs.size() != kPairsPerScenario) fail(fmt::format("expected 5 QA pairs, got {}", pairs.size()));
  return pairs;
}

inline std::string format_qa_response(std::span<const QAPair> pairs) {
  std::string out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out += fmt::format("Q{} [{}]: {}\nA{}: {}\n", i + 1, category_name(pairs[i].category), pairs[i].question, i + 1,
                       pairs[i].answer);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clients
// ---------------------------------------------------------------------------

enum class LlmBackend { Mock, Http };

struct LLMClientSpec {
  LlmBackend backend = LlmBackend::Mock;
  std::string endpoint;
  std::string model = "gpt-4o";
  std::string credential_env = "PEFTKIT_LLM_API_KEY";
  std::size_t max_retries = 2;
  std::size_t timeout_ms = 30000;
  std::size_t max_concurrency = 4;
  std::size_t max_tokens = 512;

  void validate() const {
    if (backend == LlmBackend::Http) {
      if (endpoint.empty()) throw ConfigError("llm_endpoint", "required for the http backend");
      if (credential_env.empty()) throw ConfigError("llm_credential_env", "required for the http backend");
    }
    if (max_concurrency < 1) throw ConfigError("llm_max_concurrency", "must be >= 1");
    if (timeout_ms < 1) throw ConfigError("llm_timeout_ms", "must be >= 1");
  }
};

struct LlmRequest {
  std::string prompt;
  const ScenarioAnnotation* scenario = nullptr;
  std::size_t attempt = 0;  // 0-based
};

/// Completion backend. Implementations must be safe to call from several threads.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const LlmRequest& request) = 0;
  virtual std::string endpoint() const = 0;
};

/// Deterministic offline backend that answers from the annotation fields.
///
/// Extra attributes steer failure modes for tests: "mock_malformed" = k returns four pairs for
/// the first k attempts, "mock_unreachable" = "true" fails every attempt with a transport error.
class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(std::uint64_t seed) : seed_(seed) {}

  std::string endpoint() const override { return "mock://local"; }

  std::string complete(const LlmRequest& request) override {
    if (request.scenario == nullptr) throw InputError("mock client needs the scenario annotation");
    const ScenarioAnnotation& s = *request.scenario;
    if (auto it = s.extra.find("mock_unreachable"); it != s.extra.end() && it->second == "true") {
      throw TransportError(endpoint(), "simulated connection failure");
    }
    std::size_t malformed = 0;
    if (auto it = s.extra.find("mock_malformed"); it != s.extra.end()) malformed = std::stoul(it->second);

    std::mt19937_64 rng(derive_seed(seed_, s.scenario_id));
    std::vector<Category> order(kCategories.begin(), kCategories.end());
    std::uniform_int_distribution<std::size_t> pick(0, kCategories.size() - 1);
    order.push_back(kCategories[pick(rng)]);
    fisher_yates(order, rng);

    std::vector<QAPair> pairs;
    for (Category c : order) {
      std::uniform_int_distribution<std::size_t> variant(0, 1);
      pairs.push_back({question_template(c, variant(rng)), answer_for(s, c), c});
    }
    if (request.attempt < malformed) pairs.pop_back();
    return "Here are the question-answer pairs.\n" + format_qa_response(pairs);
  }

  static std::string agent_of(const ScenarioAnnotation& s) {
    if (auto it = s.extra.find("agent"); it != s.extra.end() && !it->second.empty()) return it->second;
    static const std::array<std::string_view, 6> keywords = {"pedestrian", "cyclist", "motorcyclist",
                                                             "truck",      "bus",     "vehicle"};
    const std::string caption = ascii_lower(s.caption);
    for (auto k : keywords) {
      if (caption.find(k) != std::string::npos) return std::string(k);
    }
    return "vehicle";
  }

 private:
  static std::string question_template(Category c, std::size_t variant) {
    switch (c) {
      case Category::Scene:
        return variant == 0 ? "What type of road is the ego-car driving on?" : "Which road environment does the scene show?";
      case Category::Agent:
        return variant == 0 ? "Which road user poses the main hazard?" : "Which agent should the driver watch most closely?";
      case Category::SuggestedAction:
        return variant == 0 ? "What should the ego-car do next?" : "Which action is suggested for the driver?";
      case Category::Risk:
        return variant == 0 ? "Is there a risk in this scene?" : "Does the scene contain a safety-critical event?";
    }
    return {};
  }

  static std::string answer_for(const ScenarioAnnotation& s, Category c) {
    switch (c) {
      case Category::Scene: return s.road_type.empty() ? "unspecified road" : s.road_type;
      case Category::Agent: return agent_of(s);
      case Category::SuggestedAction: return s.suggested_action.empty() ? "proceed with caution" : s.suggested_action;
      case Category::Risk: return s.risk_present ? "yes" : "no";
    }
    return {};
  }

  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct RejectRecord {
  std::string scenario_id;
  std::size_t attempts = 0;
  std::string reason;
  std::string raw_response;
};

inline nlohmann::ordered_json reject_to_json(const RejectRecord& r) {
  nlohmann::ordered_json j;
  j["scenario_id"] = r.scenario_id;
  j["attempts"] = r.attempts;
  j["reason"] = r.reason;
  j["raw_response"] = r.raw_response;
  return j;
}

struct GenerationResult {
  std::vector<QARecord> records;  // sorted by (scenario_id, pair_index)
  std::vector<RejectRecord> rejects;  // sorted by scenario_id
  std::size_t scenarios = 0;
  std::size_t accepted = 0;
  std::size_t requests = 0;
  std::size_t retries = 0;
  std::size_t parse_failures = 0;
  std::size_t transport_failures = 0;
};

/// Runs every scenario through `client` with up to max_concurrency requests in flight.
/// A scenario gets 1 + max_retries attempts; if none parses it is rejected and excluded.
/// Throws TransportError when no scenario was accepted at all.
inline GenerationResult generate_dataset(std::span<const ScenarioAnnotation> scenarios, LlmClient& client,
                                         const LLMClientSpec& spec) {
  if (scenarios.empty()) throw InputError("generate_dataset: no scenarios");
  spec.validate();
  std::set<std::string> ids;
  for (const auto& s : scenarios) {
    s.validate();
    if (!ids.insert(s.scenario_id).second) throw InputError(fmt::format("duplicate scenario_id '{}'", s.scenario_id));
  }

  struct Outcome {
    std::vector<QAPair> pairs;
    RejectRecord reject;
    bool accepted = false;
    std::size_t requests = 0;
    std::size_t parse_failures = 0;
    std::size_t transport_failures = 0;
  };
  std::vector<Outcome> outcomes(scenarios.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (std::size_t i = next++; i < scenarios.size(); i = next++) {
      const ScenarioAnnotation& s = scenarios[i];
      Outcome& out = outcomes[i];
      try {
        const std::string prompt = build_prompt(s);
        for (std::size_t attempt = 0; attempt <= spec.max_retries && !out.accepted; ++attempt) {
          ++out.requests;
          std::string raw;
          try {
            raw = client.complete({prompt, &s, attempt});
            out.pairs = parse_qa_response(raw);
            out.accepted = true;
          } catch (const ParseError& e) {
            ++out.parse_failures;
            out.reject = {s.scenario_id, attempt + 1, e.what(), e.raw()};
          } catch (const TransportError& e) {
            ++out.transport_failures;
            out.reject = {s.scenario_id, attempt + 1, e.what(), raw};
          }
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(spec.max_concurrency, scenarios.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t + 1 < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);

  GenerationResult result;
  result.scenarios = scenarios.size();
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const Outcome& o = outcomes[i];
    result.requests += o.requests;
    result.retries += o.requests - 1;
    result.parse_failures += o.parse_failures;
    result.transport_failures += o.transport_failures;
    if (!o.accepted) {
      result.rejects.push_back(o.reject);
      continue;
    }
    ++result.accepted;
    for (std::size_t k = 0; k < o.pairs.size(); ++k) {
      result.records.push_back({scenarios[i].scenario_id, scenarios[i].image_ref, o.pairs[k].question,
                                o.pairs[k].answer, o.pairs[k].category, k + 1});
    }
  }
  if (result.accepted == 0) {
    throw TransportError(client.endpoint(),
                         fmt::format("no scenario succeeded after {} attempts each ({} transport, {} parse failures)",
                                     spec.max_retries + 1, result.transport_failures, result.parse_failures));
  }
  std::sort(result.records.begin(), result.records.end(), [](const QARecord& a, const QARecord& b) {
    return std::tie(a.scenario_id, a.pair_index) < std::tie(b.scenario_id, b.pair_index);
  });
  std::sort(result.rejects.begin(), result.rejects.end(),
            [](const RejectRecord& a, const RejectRecord& b) { return a.scenario_id < b.scenario_id; });
  return result;
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

struct SplitManifest {
  std::vector<std::string> train_ids;  // sorted
  std::vector<std::string> test_ids;   // sorted
};

/// Splits by scenario id so all pairs of a scenario land on the same side.
/// The test side gets round(n · test_fraction) ids, clamped to [1, n - 1].
inline SplitManifest split_dataset(std::span<const QARecord> corpus, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction", "must be in (0, 1)");
  std::set<std::string> unique;
  for (const auto& r : corpus) unique.insert(r.scenario_id);
  if (unique.size() < 2) throw InputError(fmt::format("split needs at least 2 scenarios, corpus has {}", unique.size()));
  std::vector<std::string> ids(unique.begin(), unique.end());
  std::mt19937_64 rng(seed);
  fisher_yates(ids, rng);
  const auto n = ids.size();
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction)),
                                         1, n - 1);
  SplitManifest m;
  m.test_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
  m.train_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end());
  std::sort(m.test_ids.begin(), m.test_ids.end());
  std::sort(m.train_ids.begin(), m.train_ids.end());
  return m;
}

inline std::vector<QARecord> filter_by_ids(std::span<const QARecord> corpus, const std::vector<std::string>& ids) {
  const std::set<std::string> keep(ids.begin(), ids.end());
  std::vector<QARecord> out;
  for (const auto& r : corpus) {
    if (keep.contains(r.scenario_id)) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Source-annotation converter (stub)
// ---------------------------------------------------------------------------

/// Field names of a per-clip risk-annotation JSON record. The defaults follow the common
/// integrated-annotation layout; adjust them when a release names fields differently.
struct SourceFieldMap {
  std::string id = "id";
  std::string image = "img_path";
  std::string caption = "Caption";
  std::string risk = "Risk";
  std::string suggestion = "Suggestions";
  std::string road_type = "Road_type";
};

/// Maps one source record onto a ScenarioAnnotation. Risk accepts booleans or "yes"/"no";
/// any other string-valued fields are carried in `extra`.
// TODO: handle multi-object records (one scenario per annotated object) once a sample file is available.
inline ScenarioAnnotation convert_source_record(const nlohmann::json& j, const SourceFieldMap& map = {}) {
  if (!j.is_object()) throw InputError("source record must be a JSON object");
  auto get = [&](const std::string& key) -> std::string {
    if (!j.contains(key)) return {};
    const auto& v = j.at(key);
    return v.is_string() ? v.get<std::string>() : v.dump();
  };
  ScenarioAnnotation s;
  s.image_ref = get(map.image);
  s.scenario_id = get(map.id);
  if (s.scenario_id.empty()) s.scenario_id = s.image_ref;
  s.caption = get(map.caption);
  s.suggested_action = get(map.suggestion);
  s.road_type = get(map.road_type);
  if (j.contains(map.risk)) {
    const auto& r = j.at(map.risk);
    s.risk_present = r.is_boolean() ? r.get<bool>() : ascii_lower(trim(get(map.risk))) == "yes";
  }
  const std::set<std::string> mapped = {map.id, map.image, map.caption, map.risk, map.suggestion, map.road_type};
  for (const auto& [key, value] : j.items()) {
    if (!mapped.contains(key) && value.is_string()) s.extra[key] = value.get<std::string>();
  }
  s.validate();
  return s;
}

}  // namespace peftkit
