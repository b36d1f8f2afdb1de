// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Symmetric blockwise absmax quantization.
//
// A tensor is flattened row-major and cut into contiguous blocks of `block_size`
// elements (the last block may be short). Each block keeps its absolute maximum as a
// 32-bit float; the block scale is absmax / L, where L = 7 for 4-bit codes and
// L = 127 for 8-bit codes. Codes are round-half-away-from-zero(w / scale) clamped
// to [-L, L], so the -8 / -128 patterns are never produced.
//
// Dequantization evaluates (code * absmax) / L. For |code| = L that expression is
// exact whenever absmax is float-representable, which is what makes constant blocks
// and idempotent re-quantization exact.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "peftkit/binary_io.hpp"
#include "peftkit/errors.hpp"
#include "peftkit/matrix.hpp"

namespace peftkit {

inline constexpr int kQ4Levels = 7;
inline constexpr int kQ8Levels = 127;
inline constexpr std::size_t kDefaultQuantBlock = 64;

/// Bytes of the fixed Q4 container header: magic, rows, cols, block_size, n_blocks.
inline constexpr std::size_t kQ4HeaderBytes = 20;
inline constexpr std::string_view kQ4Magic = "PKQ4";

namespace detail {

inline std::size_t block_count(std::size_t n, std::size_t block_size) {
  return (n + block_size - 1) / block_size;
}

/// Shared absmax kernel. Fills `codes` (one per value) and `absmax` (one per block).
template <int Levels, class Code>
void quantize_blocks(std::span<const double> values, std::size_t block_size, std::vector<Code>& codes,
                     std::vector<float>& absmax) {
  if (block_size == 0) throw InputError("quantize: block_size must be >= 1");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v)) throw InputError(fmt::format("quantize: element {} is not finite", i));
    if (std::abs(v) > std::numeric_limits<float>::max()) {
      throw InputError(fmt::format("quantize: element {} exceeds float32 scale range", i));
    }
  }
  const std::size_t n_blocks = block_count(values.size(), block_size);
  codes.assign(values.size(), Code{0});
  absmax.assign(n_blocks, 0.0f);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t begin = b * block_size;
    const std::size_t end = std::min(values.size(), begin + block_size);
    double m = 0.0;
    for (std::size_t i = begin; i < end; ++i) m = std::max(m, std::abs(values[i]));
    const float stored = static_cast<float>(m);
    absmax[b] = stored;
    if (stored == 0.0f) continue;  // zero block (or sub-float-range magnitudes): all codes stay 0
    const double a = stored;
    for (std::size_t i = begin; i < end; ++i) {
      const double q = std::round(values[i] * Levels / a);
      codes[i] = static_cast<Code>(std::clamp(q, -double{Levels}, double{Levels}));
    }
  }
}

template <int Levels, class Code>
std::vector<double> dequantize_blocks(std::span<const Code> codes, std::span<const float> absmax,
                                      std::size_t block_size) {
  std::vector<double> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    out[i] = static_cast<double>(codes[i]) * static_cast<double>(absmax[i / block_size]) / Levels;
  }
  return out;
}

template <int Levels, class Code>
void validate_blocks(std::span<const Code> codes, std::span<const float> absmax, std::size_t block_size) {
  if (block_size == 0) throw InputError("block_size must be >= 1");
  if (absmax.size() != block_count(codes.size(), block_size)) {
    throw InputError(fmt::format("expected {} block scales, got {}", block_count(codes.size(), block_size),
                                 absmax.size()));
  }
  for (std::size_t b = 0; b < absmax.size(); ++b) {
    if (!(absmax[b] >= 0.0f) || !std::isfinite(absmax[b])) {
      throw InputError(fmt::format("block {} has invalid scale", b));
    }
  }
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const int c = codes[i];
    if (c < -Levels || c > Levels) throw InputError(fmt::format("code {} out of range at {}", c, i));
    if (c != 0 && absmax[i / block_size] == 0.0f) {
      throw InputError(fmt::format("nonzero code in zero-scale block {}", i / block_size));
    }
  }
}

}  // namespace detail

/// Packs signed 4-bit codes two per byte: element 2k in the low nibble, 2k+1 in the high nibble.
inline std::vector<std::uint8_t> pack_nibbles(std::span<const std::int8_t> codes) {
  std::vector<std::uint8_t> out((codes.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const int c = codes[i];
    if (c < -kQ4Levels || c > kQ4Levels) throw InputError(fmt::format("4-bit code {} out of range", c));
    const auto nib = static_cast<std::uint8_t>(c & 0x0F);
    out[i / 2] |= (i % 2 == 0) ? nib : static_cast<std::uint8_t>(nib << 4);
  }
  return out;
}

inline std::vector<std::int8_t> unpack_nibbles(std::span<const std::uint8_t> packed, std::size_t count) {
  if (packed.size() < (count + 1) / 2) throw InputError("unpack_nibbles: packed buffer too short");
  std::vector<std::int8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t nib = (i % 2 == 0) ? (packed[i / 2] & 0x0F) : (packed[i / 2] >> 4);
    out[i] = static_cast<std::int8_t>(nib >= 8 ? static_cast<int>(nib) - 16 : static_cast<int>(nib));
  }
  return out;
}

/// 4-bit blockwise-quantized matrix. Immutable once built.
class Q4BlockMatrix {
 public:
  Q4BlockMatrix() = default;

  /// Builds from unpacked codes and per-block absmax values; validates every invariant.
  Q4BlockMatrix(std::size_t rows, std::size_t cols, std::size_t block_size, std::span<const std::int8_t> codes,
                std::vector<float> block_absmax)
      : rows_(rows), cols_(cols), block_size_(block_size), absmax_(std::move(block_absmax)) {
    if (codes.size() != rows * cols) {
      throw InputError(fmt::format("Q4BlockMatrix: {} codes for a {}x{} matrix", codes.size(), rows, cols));
    }
    detail::validate_blocks<kQ4Levels>(codes, std::span<const float>(absmax_), block_size_);
    packed_ = pack_nibbles(codes);
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return rows_ * cols_; }
  std::size_t block_size() const noexcept { return block_size_; }
  std::size_t num_blocks() const noexcept { return absmax_.size(); }

  std::span<const std::uint8_t> packed_codes() const noexcept { return packed_; }
  std::span<const float> block_absmax() const noexcept { return absmax_; }

  double scale(std::size_t block) const { return static_cast<double>(absmax_.at(block)) / kQ4Levels; }

  int code(std::size_t i) const {
    const std::uint8_t nib = (i % 2 == 0) ? (packed_[i / 2] & 0x0F) : (packed_[i / 2] >> 4);
    return nib >= 8 ? static_cast<int>(nib) - 16 : static_cast<int>(nib);
  }

  std::vector<std::int8_t> codes() const { return unpack_nibbles(packed_, size()); }

  friend bool operator==(const Q4BlockMatrix&, const Q4BlockMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t block_size_ = kDefaultQuantBlock;
  std::vector<std::uint8_t> packed_;
  std::vector<float> absmax_;
};

/// 8-bit blockwise-quantized vector (optimizer moments).
class Q8Vector {
 public:
  Q8Vector() = default;

  Q8Vector(std::size_t block_size, std::vector<std::int8_t> codes, std::vector<float> block_absmax)
      : block_size_(block_size), codes_(std::move(codes)), absmax_(std::move(block_absmax)) {
    detail::validate_blocks<kQ8Levels>(std::span<const std::int8_t>(codes_), std::span<const float>(absmax_),
                                       block_size_);
  }

  std::size_t size() const noexcept { return codes_.size(); }
  std::size_t block_size() const noexcept { return block_size_; }
  std::size_t num_blocks() const noexcept { return absmax_.size(); }
  std::span<const std::int8_t> codes() const noexcept { return codes_; }
  std::span<const float> block_absmax() const noexcept { return absmax_; }
  double scale(std::size_t block) const { return static_cast<double>(absmax_.at(block)) / kQ8Levels; }

  /// Storage bytes: one per code plus a float32 per block.
  std::size_t payload_bytes() const noexcept { return codes_.size() + 4 * absmax_.size(); }

 private:
  std::size_t block_size_ = kDefaultQuantBlock;
  std::vector<std::int8_t> codes_;
  std::vector<float> absmax_;
};

inline Q4BlockMatrix quantize_4bit(const Matrix& w, std::size_t block_size = kDefaultQuantBlock) {
  std::vector<std::int8_t> codes;
  std::vector<float> absmax;
  detail::quantize_blocks<kQ4Levels>(w.data(), block_size, codes, absmax);
  return Q4BlockMatrix(w.rows(), w.cols(), block_size, codes, std::move(absmax));
}

inline Matrix dequantize_4bit(const Q4BlockMatrix& q) {
  const auto codes = q.codes();
  auto values = detail::dequantize_blocks<kQ4Levels>(std::span<const std::int8_t>(codes), q.block_absmax(),
                                                     q.block_size());
  return Matrix(q.rows(), q.cols(), std::move(values));
}

inline Q8Vector quantize_8bit(std::span<const double> v, std::size_t block_size = kDefaultQuantBlock) {
  std::vector<std::int8_t> codes;
  std::vector<float> absmax;
  detail::quantize_blocks<kQ8Levels>(v, block_size, codes, absmax);
  return Q8Vector(block_size, std::move(codes), std::move(absmax));
}

inline std::vector<double> dequantize_8bit(const Q8Vector& q) {
  return detail::dequantize_blocks<kQ8Levels>(q.codes(), q.block_absmax(), q.block_size());
}

/// Exact serialized size: header + ceil(n/2) code bytes + 4 bytes per block scale.
inline std::size_t memory_footprint(const Q4BlockMatrix& q) {
  return kQ4HeaderBytes + (q.size() + 1) / 2 + 4 * q.num_blocks();
}

/// Code and scale bytes only (no header).
inline std::size_t payload_bytes(const Q4BlockMatrix& q) { return (q.size() + 1) / 2 + 4 * q.num_blocks(); }

/// Little-endian container. Layout:
///   "PKQ4" | rows:u32 | cols:u32 | block_size:u32 | n_blocks:u32 | packed codes | absmax:f32[n_blocks]
inline std::vector<std::uint8_t> serialize(const Q4BlockMatrix& q) {
  ByteWriter w;
  w.tag(kQ4Magic);
  w.u32(static_cast<std::uint32_t>(q.rows()));
  w.u32(static_cast<std::uint32_t>(q.cols()));
  w.u32(static_cast<std::uint32_t>(q.block_size()));
  w.u32(static_cast<std::uint32_t>(q.num_blocks()));
  w.raw(q.packed_codes());
  for (float a : q.block_absmax()) w.f32(a);
  return std::move(w).bytes();
}

inline Q4BlockMatrix deserialize_q4(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag(kQ4Magic);
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  const std::size_t block = r.u32();
  const std::size_t n_blocks = r.u32();
  if (block == 0 || n_blocks != detail::block_count(rows * cols, block)) {
    throw InputError("Q4 container: inconsistent block layout");
  }
  const auto codes = unpack_nibbles(r.raw((rows * cols + 1) / 2), rows * cols);
  std::vector<float> absmax(n_blocks);
  for (float& a : absmax) a = r.f32();
  if (!r.done()) throw InputError("Q4 container: trailing bytes");
  return Q4BlockMatrix(rows, cols, block, codes, std::move(absmax));
}

/// Per-matrix quantization diagnostics, as printed by `inspect-quant`.
struct QuantInspection {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t block_size = 0;
  std::size_t num_blocks = 0;
  double min_scale = 0.0;
  double mean_scale = 0.0;
  double max_scale = 0.0;
  std::size_t zero_blocks = 0;
  double max_abs_error = 0.0;
  /// Largest per-element error divided by its block's half-scale; <= 1 when the bound holds.
  double max_error_over_half_scale = 0.0;
  std::size_t fp32_bytes = 0;
  std::size_t payload_bytes = 0;
  std::size_t total_bytes = 0;
  double ratio_vs_fp32 = 0.0;
  std::vector<double> block_scales;
  std::vector<double> block_max_errors;
};

inline QuantInspection inspect_quantization(const Matrix& w, std::size_t block_size = kDefaultQuantBlock) {
  const Q4BlockMatrix q = quantize_4bit(w, block_size);
  const Matrix back = dequantize_4bit(q);
  QuantInspection s;
  s.rows = w.rows();
  s.cols = w.cols();
  s.block_size = block_size;
  s.num_blocks = q.num_blocks();
  s.block_scales.resize(q.num_blocks());
  s.block_max_errors.assign(q.num_blocks(), 0.0);
  double sum = 0.0;
  s.min_scale = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < q.num_blocks(); ++b) {
    const double sc = q.scale(b);
    s.block_scales[b] = sc;
    s.min_scale = std::min(s.min_scale, sc);
    s.max_scale = std::max(s.max_scale, sc);
    sum += sc;
    if (sc == 0.0) ++s.zero_blocks;
  }
  if (q.num_blocks() == 0) s.min_scale = 0.0;
  s.mean_scale = q.num_blocks() ? sum / static_cast<double>(q.num_blocks()) : 0.0;
  auto wd = w.data();
  auto bd = back.data();
  for (std::size_t i = 0; i < wd.size(); ++i) {
    const double err = std::abs(wd[i] - bd[i]);
    const std::size_t b = i / block_size;
    s.block_max_errors[b] = std::max(s.block_max_errors[b], err);
    s.max_abs_error = std::max(s.max_abs_error, err);
    const double half = s.block_scales[b] / 2.0;
    if (half > 0.0) s.max_error_over_half_scale = std::max(s.max_error_over_half_scale, err / half);
  }
  s.fp32_bytes = 4 * w.size();
  s.payload_bytes = payload_bytes(q);
  s.total_bytes = memory_footprint(q);
  s.ratio_vs_fp32 = s.payload_bytes ? static_cast<double>(s.fp32_bytes) / static_cast<double>(s.payload_bytes) : 0.0;
  return s;
}

}  // namespace peftkit
