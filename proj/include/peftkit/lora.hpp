// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapters and the quantized-base linear layer.
//
// For a frozen weight W (d_in x d_out) the adapter holds B (d_in x r) and
// A (r x d_out); the update is ΔW = (alpha / r) · B · A and the adapted layer
// computes y = x W + (alpha / r) · (x B) A. B is applied to the input side first.

#pragma once

#include <cstdint>
#include <random>

#include <fmt/format.h>

#include "peftkit/errors.hpp"
#include "peftkit/matrix.hpp"
#include "peftkit/quant.hpp"

namespace peftkit {

inline constexpr double kLoraInitStd = 0.02;

struct LoraAdapter {
  Matrix b_factor;  // d_in x r
  Matrix a_factor;  // r x d_out
  std::size_t rank = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;

  std::size_t d_in() const noexcept { return b_factor.rows(); }
  std::size_t d_out() const noexcept { return a_factor.cols(); }
  double scaling() const noexcept { return alpha / static_cast<double>(rank); }
  std::size_t parameter_count() const noexcept { return b_factor.size() + a_factor.size(); }

  void validate() const {
    if (rank < 1) throw ConfigError("rank", "must be >= 1");
    if (b_factor.cols() != rank || a_factor.rows() != rank) {
      throw ShapeError(fmt::format("adapter factors {} and {} do not match rank {}", b_factor.shape(),
                                   a_factor.shape(), rank));
    }
    if (rank > std::min(d_in(), d_out())) {
      throw ConfigError("rank", fmt::format("rank {} exceeds min(d_in, d_out) = {}", rank, std::min(d_in(), d_out())));
    }
  }

  friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;
};

/// B ~ N(0, 0.02²) from the seeded generator, A = 0, so ΔW = 0 at start.
inline LoraAdapter lora_init(std::size_t d_in, std::size_t d_out, std::size_t r, double alpha, std::uint64_t seed) {
  if (r < 1) throw ConfigError("rank", "must be >= 1");
  if (r > std::min(d_in, d_out)) {
    throw ConfigError("rank", fmt::format("rank {} exceeds min(d_in={}, d_out={})", r, d_in, d_out));
  }
  LoraAdapter ad;
  ad.rank = r;
  ad.alpha = alpha;
  ad.seed = seed;
  ad.b_factor = Matrix(d_in, r);
  ad.a_factor = Matrix(r, d_out);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, kLoraInitStd);
  for (double& v : ad.b_factor.data()) v = gauss(rng);
  return ad;
}

/// ΔW = (alpha / r) · B · A.
inline Matrix lora_delta(const LoraAdapter& adapter) {
  adapter.validate();
  return adapter.scaling() * matmul(adapter.b_factor, adapter.a_factor);
}

/// W' = W + ΔW. The input is left untouched.
inline Matrix merge(const Matrix& w, const LoraAdapter& adapter) {
  if (w.rows() != adapter.d_in() || w.cols() != adapter.d_out()) {
    throw ShapeError(fmt::format("merge: weight {} vs adapter {}x{}", w.shape(), adapter.d_in(), adapter.d_out()));
  }
  return w + lora_delta(adapter);
}

/// Low-rank branch (alpha / r) · (x B) A, computed factor-wise. `xb_out` receives x B when non-null.
inline Matrix lora_branch(const Matrix& x, const LoraAdapter& adapter, Matrix* xb_out = nullptr) {
  Matrix xb = matmul(x, adapter.b_factor);
  Matrix y = adapter.scaling() * matmul(xb, adapter.a_factor);
  if (xb_out) *xb_out = std::move(xb);
  return y;
}

/// x W, plus the adapter branch when `adapter` is non-null.
inline Matrix adapted_linear(const Matrix& x, const Matrix& w, const LoraAdapter* adapter, Matrix* xb_out = nullptr) {
  Matrix y = matmul(x, w);
  if (adapter) {
    if (adapter->d_in() != w.rows() || adapter->d_out() != w.cols()) {
      throw ShapeError(fmt::format("adapter {}x{} does not fit weight {}", adapter->d_in(), adapter->d_out(), w.shape()));
    }
    axpy(1.0, lora_branch(x, *adapter, xb_out), y);
  }
  return y;
}

struct LoraGrad {
  Matrix b_factor;
  Matrix a_factor;
};

/// Backward of adapted_linear. Returns dL/dx and, when an adapter is present, accumulates
/// dL/dB and dL/dA into `grad`. The frozen weight never receives a gradient.
inline Matrix adapted_linear_backward(const Matrix& x, const Matrix& dy, const Matrix& w, const LoraAdapter* adapter,
                                      const Matrix& xb, LoraGrad* grad) {
  Matrix dx = matmul_nt(dy, w);
  if (adapter) {
    const double s = adapter->scaling();
    Matrix t = matmul_nt(dy, adapter->a_factor);  // batch x r
    axpy(s, matmul_nt(t, adapter->b_factor), dx);
    if (grad) {
      axpy(s, matmul_tn(xb, dy), grad->a_factor);
      axpy(s, matmul_tn(x, t), grad->b_factor);
    }
  }
  return dx;
}

/// Linear layer over a frozen 4-bit base plus a full-precision adapter.
class QLoraLinear {
 public:
  QLoraLinear(Q4BlockMatrix base, LoraAdapter adapter) : base_(std::move(base)), adapter_(std::move(adapter)) {
    adapter_.validate();
    if (base_.rows() != adapter_.d_in() || base_.cols() != adapter_.d_out()) {
      throw ShapeError(fmt::format("QLoraLinear: base {}x{} vs adapter {}x{}", base_.rows(), base_.cols(),
                                   adapter_.d_in(), adapter_.d_out()));
    }
  }

  const Q4BlockMatrix& base() const noexcept { return base_; }
  const LoraAdapter& adapter() const noexcept { return adapter_; }
  LoraAdapter& adapter() noexcept { return adapter_; }

 private:
  Q4BlockMatrix base_;
  LoraAdapter adapter_;
};

/// y = x · DeQuant4(base) + (alpha / r) · (x B) A; ΔW is never materialized.
inline Matrix qlora_forward(const Matrix& x, const QLoraLinear& layer) {
  if (x.cols() != layer.base().rows()) {
    throw ShapeError(fmt::format("qlora_forward: input {} vs base {}x{}", x.shape(), layer.base().rows(),
                                 layer.base().cols()));
  }
  return adapted_linear(x, dequantize_4bit(layer.base()), &layer.adapter());
}

}  // namespace peftkit
