// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hashing word tokenizer feeding text into the toy classifier.

#pragma once

#include <cctype>
#include <cstdint>
#include <string_view>
#include <vector>

#include "peftkit/errors.hpp"
#include "peftkit/model.hpp"

namespace peftkit {

/// Lower-cased alphanumeric words, each mapped to 1 + FNV-1a(word) mod (vocab_size - 1).
/// Id 0 is never produced. Output is truncated to max_len tokens.
inline std::vector<TokenId> hash_tokenize(std::string_view text, std::size_t vocab_size, std::size_t max_len) {
  if (vocab_size < 2) throw ConfigError("vocab_size", "hash tokenizer needs vocab_size >= 2");
  std::vector<TokenId> out;
  std::uint64_t h = 0;
  bool in_word = false;
  auto flush = [&] {
    if (in_word && out.size() < max_len) out.push_back(static_cast<TokenId>(1 + h % (vocab_size - 1)));
    in_word = false;
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      if (!in_word) h = 0xcbf29ce484222325ULL;
      in_word = true;
      h ^= static_cast<unsigned char>(std::tolower(c));
      h *= 0x100000001b3ULL;
    } else {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace peftkit
