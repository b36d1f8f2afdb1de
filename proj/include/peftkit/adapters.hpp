// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model-level adapter bookkeeping: one LoraAdapter per targeted weight matrix,
// trainable-parameter accounting, and the adapter checkpoint container.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "peftkit/binary_io.hpp"
#include "peftkit/lora.hpp"
#include "peftkit/model_spec.hpp"
#include "peftkit/random.hpp"

namespace peftkit {

using AdapterSet = std::map<ParamKey, LoraAdapter>;
using GradientMap = std::map<ParamKey, LoraGrad>;

inline ParamKey parse_param_key(std::string_view name) {
  constexpr std::string_view prefix = "layers.";
  if (name.starts_with(prefix)) {
    const auto rest = name.substr(prefix.size());
    const auto dot = rest.find('.');
    if (dot == std::string_view::npos) throw InputError(fmt::format("bad parameter name '{}'", name));
    std::size_t layer = 0;
    const auto num = rest.substr(0, dot);
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), layer);
    if (ec != std::errc{} || ptr != num.data() + num.size()) {
      throw InputError(fmt::format("bad layer index in '{}'", name));
    }
    return {parse_role(rest.substr(dot + 1)), layer};
  }
  return {parse_role(name), 0};
}

/// One adapter per spec.adapter_keys(); each gets its own seed derived from `seed` and its name.
inline AdapterSet init_adapters(const ToyModelSpec& spec, std::size_t rank, double alpha, std::uint64_t seed) {
  spec.validate();
  AdapterSet out;
  for (const ParamKey& key : spec.adapter_keys()) {
    auto [d_in, d_out] = spec.shape_of(key.role);
    out.emplace(key, lora_init(d_in, d_out, rank, alpha, derive_seed(seed, key.name())));
  }
  return out;
}

struct TrainableParams {
  std::size_t count = 0;
  std::size_t base_total = 0;
  double percent_of_base = 0.0;
};

/// Σ r · (d_in + d_out) over the adapted matrices, with the share of base parameters.
inline TrainableParams count_trainable_params(const ToyModelSpec& spec, std::size_t rank) {
  if (spec.adapter_targets.empty()) throw ConfigError("adapter_targets", "must not be empty");
  if (rank < 1) throw ConfigError("rank", "must be >= 1");
  TrainableParams p;
  for (const ParamKey& key : spec.adapter_keys()) {
    auto [d_in, d_out] = spec.shape_of(key.role);
    p.count += rank * (d_in + d_out);
  }
  p.base_total = spec.base_parameter_count();
  p.percent_of_base = 100.0 * static_cast<double>(p.count) / static_cast<double>(p.base_total);
  return p;
}

inline std::size_t gradient_entry_count(const GradientMap& grads) {
  std::size_t n = 0;
  for (const auto& [key, g] : grads) n += g.b_factor.size() + g.a_factor.size();
  return n;
}

inline GradientMap zero_gradients(const AdapterSet& adapters) {
  GradientMap g;
  for (const auto& [key, ad] : adapters) {
    g.emplace(key, LoraGrad{Matrix(ad.b_factor.rows(), ad.b_factor.cols()), Matrix(ad.a_factor.rows(), ad.a_factor.cols())});
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adapter checkpoint (little-endian):
//   "PKLA" | version:u32 = 1 | count:u32
//   repeated count times:
//     name_len:u32 | name bytes | d_in:u32 | d_out:u32 | rank:u32 | alpha:f64 | seed:u64
//     B:f64[d_in * rank] (row-major) | A:f64[rank * d_out] (row-major)
// ---------------------------------------------------------------------------

inline constexpr std::string_view kAdapterMagic = "PKLA";
inline constexpr std::uint32_t kAdapterVersion = 1;

inline std::vector<std::uint8_t> serialize_adapters(const AdapterSet& adapters) {
  ByteWriter w;
  w.tag(kAdapterMagic);
  w.u32(kAdapterVersion);
  w.u32(static_cast<std::uint32_t>(adapters.size()));
  for (const auto& [key, ad] : adapters) {
    w.str(key.name());
    w.u32(static_cast<std::uint32_t>(ad.d_in()));
    w.u32(static_cast<std::uint32_t>(ad.d_out()));
    w.u32(static_cast<std::uint32_t>(ad.rank));
    w.f64(ad.alpha);
    w.u64(ad.seed);
    for (double v : ad.b_factor.data()) w.f64(v);
    for (double v : ad.a_factor.data()) w.f64(v);
  }
  return std::move(w).bytes();
}

inline AdapterSet deserialize_adapters(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag(kAdapterMagic);
  const std::uint32_t version = r.u32();
  if (version != kAdapterVersion) throw InputError(fmt::format("unsupported adapter checkpoint version {}", version));
  const std::uint32_t count = r.u32();
  AdapterSet out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const ParamKey key = parse_param_key(r.str());
    LoraAdapter ad;
    const std::size_t d_in = r.u32();
    const std::size_t d_out = r.u32();
    ad.rank = r.u32();
    ad.alpha = r.f64();
    ad.seed = r.u64();
    std::vector<double> b(d_in * ad.rank), a(ad.rank * d_out);
    for (double& v : b) v = r.f64();
    for (double& v : a) v = r.f64();
    ad.b_factor = Matrix(d_in, ad.rank, std::move(b));
    ad.a_factor = Matrix(ad.rank, d_out, std::move(a));
    ad.validate();
    if (!out.emplace(key, std::move(ad)).second) throw InputError("duplicate adapter " + key.name());
  }
  if (!r.done()) throw InputError("adapter checkpoint: trailing bytes");
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError(fmt::format("cannot write '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void save_adapters(const std::filesystem::path& path, const AdapterSet& adapters) {
  write_file_bytes(path, serialize_adapters(adapters));
}

inline AdapterSet load_adapters(const std::filesystem::path& path) { return deserialize_adapters(read_file_bytes(path)); }

}  // namespace peftkit
