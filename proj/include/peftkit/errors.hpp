// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

namespace peftkit {

/// Root of every exception thrown by peftkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied data is invalid (empty batch, out-of-range token, NaN input, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A configuration value violates its documented constraint.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  explicit ConfigError(const std::string& message) : ConfigError(std::string{}, message) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// An LLM response did not follow the response grammar. Keeps the raw text for retry logs.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string raw)
      : Error(message), raw_(std::move(raw)) {}

  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// A remote backend could not be reached or answered with a failure status.
class TransportError : public Error {
 public:
  TransportError(std::string endpoint, const std::string& message)
      : Error(endpoint + ": " + message), endpoint_(std::move(endpoint)) {}

  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  std::string endpoint_;
};

/// Training produced a non-finite value.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message, std::optional<std::size_t> step = {})
      : Error(message), step_(step) {}

  std::optional<std::size_t> step() const noexcept { return step_; }

 private:
  std::optional<std::size_t> step_;
};

}  // namespace peftkit
