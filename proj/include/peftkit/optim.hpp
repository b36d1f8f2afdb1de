// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay and optionally 8-bit blockwise moments,
// plus the linear warmup / linear decay learning-rate schedule.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "peftkit/adapters.hpp"
#include "peftkit/errors.hpp"
#include "peftkit/quant.hpp"

namespace peftkit {

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t rank = 16;
  double alpha = 16.0;
  std::size_t batch_size = 2;
  std::size_t grad_accum_steps = 4;
  std::size_t warmup_steps = 5;
  double weight_decay = 0.01;
  std::size_t epochs = 1;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int state_bits = 8;
  std::size_t state_block_size = kDefaultQuantBlock;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate", "must be > 0");
    if (rank < 1) throw ConfigError("rank", "must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    if (grad_accum_steps < 1) throw ConfigError("grad_accum_steps", "must be >= 1");
    if (!(weight_decay >= 0.0 && weight_decay < 1.0)) throw ConfigError("weight_decay", "must be in [0, 1)");
    if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1", "must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2", "must be in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon", "must be > 0");
    if (state_bits != 8 && state_bits != 32) throw ConfigError("state_bits", "must be 8 or 32");
    if (state_block_size < 1) throw ConfigError("state_block_size", "must be >= 1");
  }
};

/// Linear warmup to the peak over `warmup_steps`, then linear decay towards zero at `total_steps`.
inline double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps <= cfg.warmup_steps) {
    throw ConfigError("warmup_steps", fmt::format("total optimizer steps {} must exceed warmup_steps {}", total_steps,
                                                  cfg.warmup_steps));
  }
  if (step >= total_steps) throw InputError(fmt::format("step {} outside schedule of {} steps", step, total_steps));
  const double peak = cfg.learning_rate;
  if (step < cfg.warmup_steps) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - cfg.warmup_steps);
}

/// One optimizer moment, held either at full precision or as a Q8Vector.
class MomentBuffer {
 public:
  MomentBuffer() = default;
  MomentBuffer(std::size_t n, int bits, std::size_t block_size) : bits_(bits), block_size_(block_size) {
    store(std::vector<double>(n, 0.0));
  }

  std::vector<double> load() const {
    if (const auto* q = std::get_if<Q8Vector>(&data_)) return dequantize_8bit(*q);
    return std::get<std::vector<double>>(data_);
  }

  void store(std::vector<double> values) {
    if (bits_ == 8) {
      data_ = quantize_8bit(values, block_size_);
    } else {
      data_ = std::move(values);
    }
  }

  std::size_t size() const {
    if (const auto* q = std::get_if<Q8Vector>(&data_)) return q->size();
    return std::get<std::vector<double>>(data_).size();
  }

  int bits() const noexcept { return bits_; }
  const Q8Vector* quantized() const noexcept { return std::get_if<Q8Vector>(&data_); }

  /// Storage bytes of the moment (codes + scales, or doubles).
  std::size_t bytes() const {
    if (const auto* q = std::get_if<Q8Vector>(&data_)) return q->payload_bytes();
    return 8 * std::get<std::vector<double>>(data_).size();
  }

 private:
  int bits_ = 32;
  std::size_t block_size_ = kDefaultQuantBlock;
  std::variant<std::vector<double>, Q8Vector> data_;
};

struct MomentPair {
  MomentBuffer first;
  MomentBuffer second;
};

class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(int state_bits, std::size_t block_size) : bits_(state_bits), block_size_(block_size) {}

  std::uint64_t step() const noexcept { return step_; }
  int bits() const noexcept { return bits_; }
  const std::map<std::string, MomentPair>& slots() const noexcept { return slots_; }

  MomentPair& slot(const std::string& name, std::size_t n) {
    auto it = slots_.find(name);
    if (it == slots_.end()) {
      it = slots_.emplace(name, MomentPair{MomentBuffer(n, bits_, block_size_), MomentBuffer(n, bits_, block_size_)}).first;
    }
    if (it->second.first.size() != n) {
      throw ShapeError(fmt::format("optimizer state for '{}' holds {} values, parameter has {}", name,
                                   it->second.first.size(), n));
    }
    return it->second;
  }

  void advance() noexcept { ++step_; }

  std::size_t bytes() const {
    std::size_t b = 0;
    for (const auto& [name, p] : slots_) b += p.first.bytes() + p.second.bytes();
    return b;
  }

 private:
  int bits_ = 32;
  std::size_t block_size_ = kDefaultQuantBlock;
  std::uint64_t step_ = 0;
  std::map<std::string, MomentPair> slots_;
};

/// A named parameter tensor and its gradient.
struct TensorRef {
  std::string name;
  std::span<double> param;
  std::span<const double> grad;
};

/// One AdamW update over `tensors`:
///   p <- p (1 - lr wd);  m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g²
///   p <- p - lr m̂ / (sqrt(v̂) + eps)
/// With 8-bit state the moments are dequantized, updated, used, then requantized.
inline void adamw_step(std::span<const TensorRef> tensors, OptimizerState& state, double lr, const TrainConfig& cfg) {
  for (const TensorRef& t : tensors) {
    if (t.param.size() != t.grad.size()) {
      throw ShapeError(fmt::format("'{}': {} parameters but {} gradients", t.name, t.param.size(), t.grad.size()));
    }
    for (std::size_t i = 0; i < t.grad.size(); ++i) {
      if (!std::isfinite(t.grad[i])) {
        throw NumericError(fmt::format("non-finite gradient in '{}' at index {}", t.name, i), state.step());
      }
    }
  }
  state.advance();
  const auto step = static_cast<double>(state.step());
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, step);
  const double bc2 = 1.0 - std::pow(b2, step);
  const double decay = 1.0 - lr * cfg.weight_decay;
  // Exact EMAs satisfy m² <= kappa · v (Cauchy–Schwarz over the EMA weights); quantized
  // moments can break it when v rounds to zero, so v is projected back onto that set.
  const double kappa = b1 * b1 < b2 ? (1.0 - b1) * (1.0 - b1) / ((1.0 - b2) * (1.0 - b1 * b1 / b2)) : 0.0;

  for (const TensorRef& t : tensors) {
    MomentPair& mp = state.slot(t.name, t.param.size());
    std::vector<double> m = mp.first.load();
    std::vector<double> v = mp.second.load();
    for (std::size_t i = 0; i < t.param.size(); ++i) {
      if (state.bits() == 8 && kappa > 0.0) v[i] = std::max(v[i], m[i] * m[i] / kappa);
      const double g = t.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      t.param[i] *= decay;
      t.param[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
    mp.first.store(std::move(m));
    mp.second.store(std::move(v));
  }
}

/// AdamW over every adapter factor. `grads` must cover exactly the adapters.
inline void adamw_step(AdapterSet& adapters, const GradientMap& grads, OptimizerState& state, double lr,
                       const TrainConfig& cfg) {
  if (grads.size() != adapters.size()) {
    throw InputError(fmt::format("{} gradient entries for {} adapters", grads.size(), adapters.size()));
  }
  std::vector<TensorRef> refs;
  refs.reserve(2 * adapters.size());
  for (auto& [key, ad] : adapters) {
    auto it = grads.find(key);
    if (it == grads.end()) throw InputError("missing gradient for " + key.name());
    refs.push_back({key.name() + ".lora_b", ad.b_factor.data(), it->second.b_factor.data()});
    refs.push_back({key.name() + ".lora_a", ad.a_factor.data(), it->second.a_factor.data()});
  }
  adamw_step(refs, state, lr, cfg);
}

}  // namespace peftkit
