// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` run configuration. Every key has a default; unknown keys are rejected.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "peftkit/errors.hpp"
#include "peftkit/hazardqa.hpp"
#include "peftkit/model_spec.hpp"
#include "peftkit/optim.hpp"
#include "peftkit/text.hpp"

namespace peftkit {

struct RunConfig {
  TrainConfig train;
  ToyModelSpec model;
  LLMClientSpec llm;
  std::size_t synthetic_examples = 2000;
  std::size_t synthetic_test_examples = 500;

  void validate() const {
    train.validate();
    model.validate();
    llm.validate();
    if (synthetic_examples < 1) throw ConfigError("synthetic_examples", "must be >= 1");
    if (synthetic_test_examples < 1) throw ConfigError("synthetic_test_examples", "must be >= 1");
    for (Role r : model.adapter_targets) {
      const auto [d_in, d_out] = model.shape_of(r);
      if (train.rank > std::min(d_in, d_out)) {
        throw ConfigError("rank", fmt::format("{} exceeds min(d_in, d_out) = {} of '{}'", train.rank,
                                              std::min(d_in, d_out), role_name(r)));
      }
    }
  }
};

namespace detail {

inline std::size_t parse_count(const std::string& key, std::string_view v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(key, fmt::format("'{}' is not a non-negative integer", v));
  }
  return out;
}

inline double parse_real(const std::string& key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, fmt::format("'{}' is not a number", v));
  }
  if (used != s.size() || !std::isfinite(out)) throw ConfigError(key, fmt::format("'{}' is not a finite number", v));
  return out;
}

struct ConfigKey {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <class T>
ConfigKey count_key(std::string name, T RunConfig::*group, std::size_t T::*field) {
  return {name, [=](const RunConfig& c) { return fmt::format("{}", c.*group.*field); },
          [=](RunConfig& c, std::string_view v) { c.*group.*field = parse_count(name, v); }};
}

template <class T>
ConfigKey real_key(std::string name, T RunConfig::*group, double T::*field) {
  return {name, [=](const RunConfig& c) { return fmt::format("{}", c.*group.*field); },
          [=](RunConfig& c, std::string_view v) { c.*group.*field = parse_real(name, v); }};
}

template <class T>
ConfigKey text_key(std::string name, T RunConfig::*group, std::string T::*field) {
  return {name, [=](const RunConfig& c) { return c.*group.*field; },
          [=](RunConfig& c, std::string_view v) { c.*group.*field = std::string(v); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    using R = RunConfig;
    std::vector<ConfigKey> k;
    k.push_back(real_key("learning_rate", &R::train, &TrainConfig::learning_rate));
    k.push_back(count_key("rank", &R::train, &TrainConfig::rank));
    k.push_back(real_key("alpha", &R::train, &TrainConfig::alpha));
    k.push_back(count_key("batch_size", &R::train, &TrainConfig::batch_size));
    k.push_back(count_key("grad_accum_steps", &R::train, &TrainConfig::grad_accum_steps));
    k.push_back(count_key("warmup_steps", &R::train, &TrainConfig::warmup_steps));
    k.push_back(real_key("weight_decay", &R::train, &TrainConfig::weight_decay));
    k.push_back(count_key("epochs", &R::train, &TrainConfig::epochs));
    k.push_back({"seed", [](const R& c) { return fmt::format("{}", c.train.seed); },
                 [](R& c, std::string_view v) { c.train.seed = parse_count("seed", v); }});
    k.push_back(real_key("adam_beta1", &R::train, &TrainConfig::adam_beta1));
    k.push_back(real_key("adam_beta2", &R::train, &TrainConfig::adam_beta2));
    k.push_back(real_key("adam_epsilon", &R::train, &TrainConfig::adam_epsilon));
    k.push_back({"state_bits", [](const R& c) { return fmt::format("{}", c.train.state_bits); },
                 [](R& c, std::string_view v) { c.train.state_bits = static_cast<int>(parse_count("state_bits", v)); }});
    k.push_back(count_key("quant_block_size", &R::train, &TrainConfig::state_block_size));
    k.push_back(count_key("vocab_size", &R::model, &ToyModelSpec::vocab_size));
    k.push_back(count_key("d_model", &R::model, &ToyModelSpec::d_model));
    k.push_back(count_key("n_layers", &R::model, &ToyModelSpec::n_layers));
    k.push_back(count_key("n_heads", &R::model, &ToyModelSpec::n_heads));
    k.push_back(count_key("d_ff", &R::model, &ToyModelSpec::d_ff));
    k.push_back(count_key("n_classes", &R::model, &ToyModelSpec::n_classes));
    k.push_back(count_key("max_seq_len", &R::model, &ToyModelSpec::max_seq_len));
    k.push_back({"adapter_targets",
                 [](const R& c) {
                   std::string s;
                   for (Role r : c.model.adapter_targets) s += (s.empty() ? "" : ",") + std::string(role_name(r));
                   return s;
                 },
                 [](R& c, std::string_view v) {
                   std::set<Role> roles;
                   std::size_t start = 0;
                   while (start <= v.size()) {
                     auto end = v.find(',', start);
                     if (end == std::string_view::npos) end = v.size();
                     const auto item = trim(v.substr(start, end - start));
                     if (!item.empty()) {
                       try {
                         roles.insert(parse_role(item));
                       } catch (const Error& e) {
                         throw ConfigError("adapter_targets", e.what());
                       }
                     }
                     start = end + 1;
                   }
                   c.model.adapter_targets = roles;
                 }});
    k.push_back({"synthetic_examples", [](const R& c) { return fmt::format("{}", c.synthetic_examples); },
                 [](R& c, std::string_view v) { c.synthetic_examples = parse_count("synthetic_examples", v); }});
    k.push_back({"synthetic_test_examples", [](const R& c) { return fmt::format("{}", c.synthetic_test_examples); },
                 [](R& c, std::string_view v) { c.synthetic_test_examples = parse_count("synthetic_test_examples", v); }});
    k.push_back({"llm_backend", [](const R& c) { return std::string(c.llm.backend == LlmBackend::Http ? "http" : "mock"); },
                 [](R& c, std::string_view v) {
                   if (v == "mock") {
                     c.llm.backend = LlmBackend::Mock;
                   } else if (v == "http") {
                     c.llm.backend = LlmBackend::Http;
                   } else {
                     throw ConfigError("llm_backend", fmt::format("'{}' is not one of mock, http", v));
                   }
                 }});
    k.push_back(text_key("llm_endpoint", &R::llm, &LLMClientSpec::endpoint));
    k.push_back(text_key("llm_model", &R::llm, &LLMClientSpec::model));
    k.push_back(text_key("llm_credential_env", &R::llm, &LLMClientSpec::credential_env));
    k.push_back(count_key("llm_max_retries", &R::llm, &LLMClientSpec::max_retries));
    k.push_back(count_key("llm_timeout_ms", &R::llm, &LLMClientSpec::timeout_ms));
    k.push_back(count_key("llm_max_concurrency", &R::llm, &LLMClientSpec::max_concurrency));
    k.push_back(count_key("llm_max_tokens", &R::llm, &LLMClientSpec::max_tokens));
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Sets one key from its text form.
inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError(std::string(key), "unknown configuration key");
}

/// Applies `key = value` lines on top of `cfg`. Blank lines and lines starting with '#' are skipped.
inline void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::size_t lineno = 0;
  for (const auto& raw : split_lines(text)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(fmt::format("config line {}: expected 'key = value', got '{}'", lineno, line));
    }
    set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

/// Applies "key=value" overrides (flags win over file values).
inline void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("override '{}' is not key=value", o));
    set_config_value(cfg, trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

/// Every key with its effective value, in documented order; feeding it back reproduces `cfg`.
inline std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += fmt::format("{} = {}\n", k.name, k.get(cfg));
  return out;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& k : detail::config_keys()) j[k.name] = k.get(cfg);
  return j;
}

}  // namespace peftkit
