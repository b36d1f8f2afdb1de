// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch training of adapters with gradient accumulation and a one-off schedule horizon.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "peftkit/adapters.hpp"
#include "peftkit/errors.hpp"
#include "peftkit/model.hpp"
#include "peftkit/optim.hpp"
#include "peftkit/random.hpp"

namespace peftkit {

struct LossPoint {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainSummary {
  std::size_t examples = 0;
  std::size_t epochs = 0;
  std::size_t optimizer_steps = 0;
  std::size_t micro_batches = 0;
  TrainableParams trainable;
  double wall_seconds = 0.0;
  double final_lr = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::uint64_t shuffle_seed = 0;
  std::string shuffle = "fisher-yates";
  std::size_t optimizer_state_bytes = 0;
};

struct TrainResult {
  AdapterSet adapters;
  std::vector<LossPoint> trace;
  TrainSummary summary;
};

/// ceil(n / (batch_size · grad_accum_steps)) · epochs.
inline std::size_t total_optimizer_steps(std::size_t n_examples, const TrainConfig& cfg) {
  const std::size_t window = cfg.batch_size * cfg.grad_accum_steps;
  return (n_examples + window - 1) / window * cfg.epochs;
}

/// Mean of the last max(1, n/10) trace entries.
inline double tail_mean_loss(const std::vector<LossPoint>& trace) {
  if (trace.empty()) return 0.0;
  const std::size_t k = std::max<std::size_t>(1, trace.size() / 10);
  double s = 0.0;
  for (std::size_t i = trace.size() - k; i < trace.size(); ++i) s += trace[i].loss;
  return s / static_cast<double>(k);
}

/// Trains `adapters` on `dataset` with the base in `model` frozen.
///
/// Each epoch visits a Fisher–Yates permutation (seed derived from cfg.seed and the epoch),
/// cut into micro-batches of batch_size. Every grad_accum_steps micro-batches the gradients,
/// weighted by micro-batch size, are averaged over the window's examples and one AdamW step
/// is taken, so the update equals a single step on the concatenated window. The loss trace
/// records the window's mean loss before the update.
inline TrainResult train(std::span<const Example> dataset, const ModelParams& model, const ToyModelSpec& spec,
                         AdapterSet adapters, const TrainConfig& cfg) {
  if (dataset.empty()) throw InputError("train: empty dataset");
  if (adapters.empty()) throw InputError("train: no adapters attached");
  cfg.validate();
  spec.validate();
  model.validate(spec);

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t total = total_optimizer_steps(dataset.size(), cfg);
  if (total <= cfg.warmup_steps) {
    throw ConfigError("warmup_steps", fmt::format("dataset yields {} optimizer steps, not more than warmup_steps {}",
                                                  total, cfg.warmup_steps));
  }

  TrainResult result;
  OptimizerState state(cfg.state_bits, cfg.state_block_size);
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");
  std::size_t step = 0;
  std::size_t micro = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(dataset.size(), derive_seed(shuffle_seed, fmt::format("epoch{}", epoch)));
    std::size_t pos = 0;
    while (pos < order.size()) {
      GradientMap window = zero_gradients(adapters);
      double window_loss = 0.0;
      std::size_t window_examples = 0;
      for (std::size_t k = 0; k < cfg.grad_accum_steps && pos < order.size(); ++k) {
        std::vector<Example> batch;
        for (std::size_t b = 0; b < cfg.batch_size && pos < order.size(); ++b) batch.push_back(dataset[order[pos++]]);
        LossAndGrads lg;
        try {
          lg = loss_and_grads(model, spec, batch, adapters);
        } catch (const NumericError& e) {
          throw NumericError(fmt::format("{} at optimizer step {}", e.what(), step), step);
        }
        if (!std::isfinite(lg.loss)) {
          throw NumericError(fmt::format("non-finite loss at optimizer step {}", step), step);
        }
        const auto m = static_cast<double>(batch.size());
        window_loss += lg.loss * m;
        window_examples += batch.size();
        for (auto& [key, g] : window) {
          const LoraGrad& gb = lg.grads.at(key);
          axpy(m, gb.b_factor, g.b_factor);
          axpy(m, gb.a_factor, g.a_factor);
        }
        ++micro;
      }
      const double inv = 1.0 / static_cast<double>(window_examples);
      for (auto& [key, g] : window) {
        for (double& v : g.b_factor.data()) v *= inv;
        for (double& v : g.a_factor.data()) v *= inv;
      }
      const double lr = lr_at(step, total, cfg);
      adamw_step(adapters, window, state, lr, cfg);
      for (const auto& [key, ad] : adapters) {
        if (!all_finite(ad.b_factor.data()) || !all_finite(ad.a_factor.data())) {
          throw NumericError(fmt::format("adapter '{}' became non-finite at optimizer step {}", key.name(), step), step);
        }
      }
      result.trace.push_back({step, lr, window_loss * inv});
      ++step;
    }
  }

  auto& s = result.summary;
  s.examples = dataset.size();
  s.epochs = cfg.epochs;
  s.optimizer_steps = step;
  s.micro_batches = micro;
  s.trainable = count_trainable_params(spec, cfg.rank);
  s.final_lr = result.trace.back().lr;
  s.initial_loss = result.trace.front().loss;
  s.final_loss = tail_mean_loss(result.trace);
  s.shuffle_seed = shuffle_seed;
  s.optimizer_state_bytes = state.bytes();
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.adapters = std::move(adapters);
  return result;
}

/// Fraction of examples whose argmax class equals the label.
inline double accuracy(const ModelParams& model, const ToyModelSpec& spec, std::span<const Example> data,
                       const AdapterSet* adapters) {
  if (data.empty()) return 0.0;
  std::vector<std::vector<TokenId>> inputs;
  inputs.reserve(data.size());
  for (const auto& ex : data) inputs.push_back(ex.tokens);
  const auto pred = predict_classes(model, spec, inputs, adapters);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hit += pred[i] == data[i].label;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

}  // namespace peftkit
