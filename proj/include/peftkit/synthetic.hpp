// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <fmt/format.h>

#include "peftkit/errors.hpp"
#include "peftkit/model.hpp"

namespace peftkit {

/// Separable token-pattern classification task.
///
/// Class c owns `signature_tokens` ids starting at 1 + c * signature_tokens; ids above the
/// last signature block are shared noise. Each position draws a signature token of the
/// example's class with probability `signal_prob`, otherwise noise; every sequence carries
/// at least two signature tokens.
struct SyntheticTaskSpec {
  std::size_t n_classes = 4;
  std::size_t signature_tokens = 2;
  std::size_t min_len = 8;
  std::size_t max_len = 16;
  double signal_prob = 0.4;
};

inline std::vector<Example> make_token_task(std::size_t n, const ToyModelSpec& model, std::uint64_t seed,
                                            const SyntheticTaskSpec& task = {}) {
  const std::size_t first_noise = 1 + task.n_classes * task.signature_tokens;
  if (first_noise >= model.vocab_size) {
    throw ConfigError("vocab_size", fmt::format("synthetic task needs vocab_size > {}", first_noise));
  }
  if (task.n_classes > model.n_classes) throw ConfigError("n_classes", "model has fewer classes than the task");
  if (task.min_len < 2 || task.min_len > task.max_len || task.max_len > model.max_seq_len) {
    throw ConfigError("max_seq_len", "synthetic sequence lengths do not fit the model");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> cls(0, task.n_classes - 1);
  std::uniform_int_distribution<std::size_t> len(task.min_len, task.max_len);
  std::uniform_int_distribution<std::size_t> sig(0, task.signature_tokens - 1);
  std::uniform_int_distribution<std::size_t> noise(first_noise, model.vocab_size - 1);
  std::bernoulli_distribution signal(task.signal_prob);

  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.label = cls(rng);
    const std::size_t L = len(rng);
    const auto base = 1 + ex.label * task.signature_tokens;
    ex.tokens.resize(L);
    std::size_t signals = 0;
    for (auto& t : ex.tokens) {
      if (signal(rng)) {
        t = static_cast<TokenId>(base + sig(rng));
        ++signals;
      } else {
        t = static_cast<TokenId>(noise(rng));
      }
    }
    for (std::size_t p = 0; signals < 2; p = (p + 1) % L) {
      if (ex.tokens[p] >= first_noise) {
        ex.tokens[p] = static_cast<TokenId>(base + sig(rng));
        ++signals;
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace peftkit
