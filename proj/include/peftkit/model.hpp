// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Fixed-topology toy transformer classifier with hand-written reverse mode.
//
//   h0 = tok_emb[tokens] + pos_emb[0..T)
//   per layer:  h1 = h + MHA(h) W_o        (bidirectional attention, no masking)
//               h2 = h1 + gelu(h1 W_up) W_down
//   pooled = mean over positions; logits = pooled W_head
//
// Any linear projection may carry a LoraAdapter. Gradients are produced for adapter
// factors only; base weights (dense or 4-bit) are read-only.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "peftkit/adapters.hpp"
#include "peftkit/errors.hpp"
#include "peftkit/lora.hpp"
#include "peftkit/matrix.hpp"
#include "peftkit/model_spec.hpp"
#include "peftkit/quant.hpp"
#include "peftkit/random.hpp"

namespace peftkit {

using TokenId = std::uint32_t;

struct Example {
  std::vector<TokenId> tokens;
  std::size_t label = 0;
};

struct WeightEntry {
  std::variant<Matrix, Q4BlockMatrix> value;
  bool frozen = true;

  bool quantized() const noexcept { return std::holds_alternative<Q4BlockMatrix>(value); }

  /// The dense values the forward pass uses (dequantized for 4-bit entries).
  Matrix dense() const {
    if (const auto* q = std::get_if<Q4BlockMatrix>(&value)) return dequantize_4bit(*q);
    return std::get<Matrix>(value);
  }

  std::pair<std::size_t, std::size_t> shape() const {
    return std::visit([](const auto& m) { return std::pair{m.rows(), m.cols()}; }, value);
  }
};

struct ModelParams {
  std::map<ParamKey, WeightEntry> entries;

  const WeightEntry& at(const ParamKey& key) const {
    auto it = entries.find(key);
    if (it == entries.end()) throw InputError("model has no parameter " + key.name());
    return it->second;
  }

  void validate(const ToyModelSpec& spec) const {
    const auto keys = spec.all_keys();
    if (entries.size() != keys.size()) {
      throw InputError(fmt::format("model has {} parameters, spec expects {}", entries.size(), keys.size()));
    }
    for (const ParamKey& k : keys) {
      const auto shape = at(k).shape();
      if (shape != spec.shape_of(k.role)) {
        throw ShapeError(fmt::format("{} is {}x{}, spec expects {}x{}", k.name(), shape.first, shape.second,
                                     spec.shape_of(k.role).first, spec.shape_of(k.role).second));
      }
    }
  }
};

struct BaseInit {
  double token_embedding_std = 0.5;
  double position_embedding_std = 0.1;
};

/// Seeded random base model: embeddings ~ N(0, std²), linear weights ~ N(0, 1/d_in).
inline ModelParams init_base_model(const ToyModelSpec& spec, std::uint64_t seed, BaseInit init = {}) {
  spec.validate();
  ModelParams model;
  for (const ParamKey& key : spec.all_keys()) {
    auto [rows, cols] = spec.shape_of(key.role);
    double stddev = 1.0 / std::sqrt(static_cast<double>(rows));
    if (key.role == Role::TokenEmbedding) stddev = init.token_embedding_std;
    if (key.role == Role::PositionEmbedding) stddev = init.position_embedding_std;
    std::mt19937_64 rng(derive_seed(seed, key.name()));
    std::normal_distribution<double> gauss(0.0, stddev);
    Matrix m(rows, cols);
    for (double& v : m.data()) v = gauss(rng);
    model.entries.emplace(key, WeightEntry{std::move(m), true});
  }
  return model;
}

/// Copy of `model` whose linear projections are stored 4-bit; embeddings stay dense.
inline ModelParams quantize_base(const ModelParams& model, std::size_t block_size = kDefaultQuantBlock) {
  ModelParams out;
  for (const auto& [key, entry] : model.entries) {
    if (is_adaptable(key.role) && !entry.quantized()) {
      out.entries.emplace(key, WeightEntry{quantize_4bit(std::get<Matrix>(entry.value), block_size), true});
    } else {
      out.entries.emplace(key, entry);
    }
  }
  return out;
}

/// Folds every adapter into its (dequantized) base weight. The result has no 4-bit entries.
inline ModelParams merge_adapters(const ModelParams& model, const AdapterSet& adapters) {
  ModelParams out;
  for (const auto& [key, entry] : model.entries) {
    auto it = adapters.find(key);
    Matrix w = entry.dense();
    out.entries.emplace(key, WeightEntry{it == adapters.end() ? std::move(w) : merge(w, it->second), true});
  }
  return out;
}

/// Byte image of every base weight in key order, for frozen-base comparisons.
inline std::vector<std::uint8_t> serialize_base(const ModelParams& model) {
  ByteWriter w;
  for (const auto& [key, entry] : model.entries) {
    w.str(key.name());
    if (const auto* q = std::get_if<Q4BlockMatrix>(&entry.value)) {
      w.u8(1);
      w.raw(serialize(*q));
    } else {
      const auto& m = std::get<Matrix>(entry.value);
      w.u8(0);
      w.u32(static_cast<std::uint32_t>(m.rows()));
      w.u32(static_cast<std::uint32_t>(m.cols()));
      for (double v : m.data()) w.f64(v);
    }
  }
  return std::move(w).bytes();
}

namespace detail {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluK = 0.044715;

inline double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluK * u * u * u))); }

inline double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluK * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * u * u);
}

/// Dense views of all weights, resolved once per call.
struct ResolvedWeights {
  std::map<ParamKey, Matrix> w;

  ResolvedWeights(const ModelParams& model, const ToyModelSpec& spec) {
    model.validate(spec);
    for (const auto& [key, entry] : model.entries) w.emplace(key, entry.dense());
  }

  const Matrix& operator()(Role r, std::size_t layer = 0) const { return w.at({r, layer}); }
};

struct LayerCache {
  Matrix input, q, k, v, concat, h1, up_pre, up_act;
  Matrix xb_q, xb_k, xb_v, xb_o, xb_up, xb_down;
  std::vector<Matrix> probs;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix pooled;
  Matrix xb_head;
};

inline const LoraAdapter* find_adapter(const AdapterSet* adapters, Role r, std::size_t layer) {
  if (!adapters) return nullptr;
  auto it = adapters->find({r, layer});
  return it == adapters->end() ? nullptr : &it->second;
}

inline LoraGrad* find_grad(GradientMap* grads, Role r, std::size_t layer) {
  if (!grads) return nullptr;
  auto it = grads->find({r, layer});
  return it == grads->end() ? nullptr : &it->second;
}

inline void check_tokens(const ToyModelSpec& spec, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("token sequence is empty");
  if (tokens.size() > spec.max_seq_len) {
    throw InputError(fmt::format("sequence length {} exceeds max_seq_len {}", tokens.size(), spec.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= spec.vocab_size) {
      throw InputError(fmt::format("token {} at position {} is outside vocab_size {}", tokens[i], i, spec.vocab_size));
    }
  }
}

inline void check_adapters(const ToyModelSpec& spec, const AdapterSet& adapters) {
  const auto allowed = spec.adapter_keys();
  for (const auto& [key, ad] : adapters) {
    if (!allowed.contains(key)) {
      throw InputError(fmt::format("adapter on {} but that role is not in adapter_targets", key.name()));
    }
    ad.validate();
    if (std::pair{ad.d_in(), ad.d_out()} != spec.shape_of(key.role)) {
      throw ShapeError(fmt::format("adapter on {} has shape {}x{}", key.name(), ad.d_in(), ad.d_out()));
    }
  }
}

inline std::vector<double> forward_impl(const ResolvedWeights& W, const ToyModelSpec& spec,
                                        std::span<const TokenId> tokens, const AdapterSet* adapters,
                                        ForwardCache* cache) {
  check_tokens(spec, tokens);
  const std::size_t T = tokens.size();
  const std::size_t d = spec.d_model;
  const std::size_t dh = spec.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix& tok = W(Role::TokenEmbedding);
  const Matrix& pos = W(Role::PositionEmbedding);
  Matrix h(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) h(t, c) = tok(tokens[t], c) + pos(t, c);

  if (cache) cache->layers.assign(spec.n_layers, {});
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    LayerCache local;
    LayerCache& lc = cache ? cache->layers[l] : local;
    lc.input = h;
    lc.q = adapted_linear(h, W(Role::AttnQuery, l), find_adapter(adapters, Role::AttnQuery, l), &lc.xb_q);
    lc.k = adapted_linear(h, W(Role::AttnKey, l), find_adapter(adapters, Role::AttnKey, l), &lc.xb_k);
    lc.v = adapted_linear(h, W(Role::AttnValue, l), find_adapter(adapters, Role::AttnValue, l), &lc.xb_v);

    lc.concat = Matrix(T, d);
    lc.probs.assign(spec.n_heads, Matrix(T, T));
    for (std::size_t hd = 0; hd < spec.n_heads; ++hd) {
      const std::size_t off = hd * dh;
      Matrix& P = lc.probs[hd];
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> scores(T);
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += lc.q(i, off + c) * lc.k(j, off + c);
          scores[j] = s * inv_sqrt;
        }
        const auto p = softmax(scores);
        for (std::size_t j = 0; j < T; ++j) P(i, j) = p[j];
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t c = 0; c < dh; ++c) lc.concat(i, off + c) += p[j] * lc.v(j, off + c);
      }
    }
    lc.h1 = h + adapted_linear(lc.concat, W(Role::AttnOutput, l), find_adapter(adapters, Role::AttnOutput, l), &lc.xb_o);
    lc.up_pre = adapted_linear(lc.h1, W(Role::FfnUp, l), find_adapter(adapters, Role::FfnUp, l), &lc.xb_up);
    lc.up_act = lc.up_pre;
    for (double& u : lc.up_act.data()) u = gelu(u);
    h = lc.h1 + adapted_linear(lc.up_act, W(Role::FfnDown, l), find_adapter(adapters, Role::FfnDown, l), &lc.xb_down);
  }

  Matrix pooled(1, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) pooled(0, c) += h(t, c);
  for (double& v : pooled.data()) v /= static_cast<double>(T);

  Matrix xb_head;
  Matrix logits = adapted_linear(pooled, W(Role::ClassifierHead), find_adapter(adapters, Role::ClassifierHead, 0), &xb_head);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->xb_head = std::move(xb_head);
  }
  return logits.values();
}

/// Accumulates adapter gradients of (dlogits · logits) into `grads`.
inline void backward_impl(const ResolvedWeights& W, const ToyModelSpec& spec, const ForwardCache& cache,
                          std::span<const double> dlogits, const AdapterSet* adapters, GradientMap* grads) {
  const std::size_t d = spec.d_model;
  const std::size_t hdim = spec.head_dim();
  const std::size_t T = cache.layers.front().input.rows();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hdim));

  Matrix dl(1, dlogits.size(), std::vector<double>(dlogits.begin(), dlogits.end()));
  Matrix dpooled = adapted_linear_backward(cache.pooled, dl, W(Role::ClassifierHead),
                                           find_adapter(adapters, Role::ClassifierHead, 0), cache.xb_head,
                                           find_grad(grads, Role::ClassifierHead, 0));
  Matrix dh(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) dh(t, c) = dpooled(0, c) / static_cast<double>(T);

  for (std::size_t l = spec.n_layers; l-- > 0;) {
    const LayerCache& lc = cache.layers[l];
    auto ad = [&](Role r) { return find_adapter(adapters, r, l); };
    auto gr = [&](Role r) { return find_grad(grads, r, l); };

    Matrix d_act = adapted_linear_backward(lc.up_act, dh, W(Role::FfnDown, l), ad(Role::FfnDown), lc.xb_down, gr(Role::FfnDown));
    auto da = d_act.data();
    auto up = lc.up_pre.data();
    for (std::size_t i = 0; i < da.size(); ++i) da[i] *= gelu_grad(up[i]);
    Matrix dh1 = dh + adapted_linear_backward(lc.h1, d_act, W(Role::FfnUp, l), ad(Role::FfnUp), lc.xb_up, gr(Role::FfnUp));

    Matrix dconcat = adapted_linear_backward(lc.concat, dh1, W(Role::AttnOutput, l), ad(Role::AttnOutput), lc.xb_o,
                                             gr(Role::AttnOutput));
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (std::size_t hd = 0; hd < spec.n_heads; ++hd) {
      const std::size_t off = hd * hdim;
      const Matrix& P = lc.probs[hd];
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> dp(T);
        double row_dot = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < hdim; ++c) {
            s += dconcat(i, off + c) * lc.v(j, off + c);
            dv(j, off + c) += P(i, j) * dconcat(i, off + c);
          }
          dp[j] = s;
          row_dot += P(i, j) * s;
        }
        for (std::size_t j = 0; j < T; ++j) {
          const double ds = P(i, j) * (dp[j] - row_dot) * inv_sqrt;
          for (std::size_t c = 0; c < hdim; ++c) {
            dq(i, off + c) += ds * lc.k(j, off + c);
            dk(j, off + c) += ds * lc.q(i, off + c);
          }
        }
      }
    }
    Matrix dx = dh1;
    axpy(1.0, adapted_linear_backward(lc.input, dq, W(Role::AttnQuery, l), ad(Role::AttnQuery), lc.xb_q, gr(Role::AttnQuery)), dx);
    axpy(1.0, adapted_linear_backward(lc.input, dk, W(Role::AttnKey, l), ad(Role::AttnKey), lc.xb_k, gr(Role::AttnKey)), dx);
    axpy(1.0, adapted_linear_backward(lc.input, dv, W(Role::AttnValue, l), ad(Role::AttnValue), lc.xb_v, gr(Role::AttnValue)), dx);
    dh = std::move(dx);
  }
}

}  // namespace detail

/// Class logits for one token sequence. Pure and deterministic.
inline std::vector<double> forward(const ModelParams& model, const ToyModelSpec& spec, std::span<const TokenId> tokens,
                                   const AdapterSet* adapters = nullptr) {
  spec.validate();
  if (adapters) detail::check_adapters(spec, *adapters);
  const detail::ResolvedWeights w(model, spec);
  return detail::forward_impl(w, spec, tokens, adapters, nullptr);
}

/// Argmax class for each sequence, resolving base weights once.
inline std::vector<std::size_t> predict_classes(const ModelParams& model, const ToyModelSpec& spec,
                                                std::span<const std::vector<TokenId>> inputs,
                                                const AdapterSet* adapters = nullptr) {
  spec.validate();
  if (adapters) detail::check_adapters(spec, *adapters);
  const detail::ResolvedWeights w(model, spec);
  std::vector<std::size_t> out;
  out.reserve(inputs.size());
  for (const auto& tokens : inputs) {
    const auto logits = detail::forward_impl(w, spec, tokens, adapters, nullptr);
    out.push_back(static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin()));
  }
  return out;
}

struct LossAndGrads {
  double loss = 0.0;
  GradientMap grads;
};

/// Mean cross-entropy over `batch` and its gradient with respect to adapter factors only.
inline LossAndGrads loss_and_grads(const ModelParams& model, const ToyModelSpec& spec, std::span<const Example> batch,
                                   const AdapterSet& adapters) {
  if (batch.empty()) throw InputError("loss_and_grads: empty batch");
  spec.validate();
  detail::check_adapters(spec, adapters);
  const detail::ResolvedWeights w(model, spec);

  LossAndGrads out;
  out.grads = zero_gradients(adapters);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const Example& ex : batch) {
    if (ex.label >= spec.n_classes) {
      throw InputError(fmt::format("label {} outside n_classes {}", ex.label, spec.n_classes));
    }
    detail::ForwardCache cache;
    const auto logits = detail::forward_impl(w, spec, ex.tokens, &adapters, &cache);
    if (!all_finite(logits)) throw NumericError("forward pass produced non-finite logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    const double lse = mx + std::log(sum);
    out.loss += (lse - logits[ex.label]) * inv_n;
    std::vector<double> dlogits(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c) {
      dlogits[c] = (std::exp(logits[c] - lse) - (c == ex.label ? 1.0 : 0.0)) * inv_n;
    }
    detail::backward_impl(w, spec, cache, dlogits, &adapters, &out.grads);
  }
  return out;
}

}  // namespace peftkit
