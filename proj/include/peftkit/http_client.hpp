// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// HTTP completion backend. Request body: {"model", "prompt", "max_tokens"}; the bearer
// credential comes from the environment variable named in the client spec.

#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "peftkit/errors.hpp"
#include "peftkit/hazardqa.hpp"

namespace peftkit {

struct HttpEndpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

/// Splits "http://host:port/path" into origin and path. Only plain http is built in.
inline HttpEndpoint parse_http_endpoint(const std::string& url) {
  constexpr std::string_view scheme = "http://";
  if (url.rfind("https://", 0) == 0) {
    throw ConfigError("llm_endpoint", "https endpoints need a TLS-enabled build; use an http endpoint or a local proxy");
  }
  if (url.rfind(scheme, 0) != 0) throw ConfigError("llm_endpoint", fmt::format("'{}' is not an http:// URL", url));
  const auto slash = url.find('/', scheme.size());
  HttpEndpoint ep;
  ep.origin = url.substr(0, slash);
  ep.path = slash == std::string::npos ? "/" : url.substr(slash);
  if (ep.origin.size() == scheme.size()) throw ConfigError("llm_endpoint", fmt::format("'{}' has no host", url));
  return ep;
}

/// Extracts the completion text from "text", "choices[0].text" or "choices[0].message.content".
inline std::string extract_completion_text(const nlohmann::json& body) {
  if (body.contains("text") && body["text"].is_string()) return body["text"].get<std::string>();
  if (body.contains("choices") && body["choices"].is_array() && !body["choices"].empty()) {
    const auto& c = body["choices"][0];
    if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
    if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string()) {
      return c["message"]["content"].get<std::string>();
    }
  }
  throw ParseError("completion body carries no text field", body.dump());
}

class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(LLMClientSpec spec) : spec_(std::move(spec)), ep_(parse_http_endpoint(spec_.endpoint)) {
    spec_.validate();
    const char* key = std::getenv(spec_.credential_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw ConfigError("llm_credential_env", fmt::format("environment variable {} is not set", spec_.credential_env));
    }
    credential_ = key;
  }

  std::string endpoint() const override { return spec_.endpoint; }

  std::string complete(const LlmRequest& request) override {
    httplib::Client cli(ep_.origin);
    const auto ms = std::chrono::milliseconds(spec_.timeout_ms);
    cli.set_connection_timeout(ms);
    cli.set_read_timeout(ms);
    cli.set_write_timeout(ms);
    const nlohmann::ordered_json body = {
        {"model", spec_.model}, {"prompt", request.prompt}, {"max_tokens", spec_.max_tokens}};
    const httplib::Headers headers = {{"Authorization", "Bearer " + credential_}};
    auto res = cli.Post(ep_.path, headers, body.dump(), "application/json");
    if (!res) throw TransportError(spec_.endpoint, httplib::to_string(res.error()));
    if (res->status != 200) {
      throw TransportError(spec_.endpoint, fmt::format("HTTP status {}", res->status));
    }
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw ParseError("completion body is not JSON", res->body);
    }
    return extract_completion_text(parsed);
  }

 private:
  LLMClientSpec spec_;
  HttpEndpoint ep_;
  std::string credential_;
};

/// Builds the backend named by `spec`; the mock backend is seeded with `seed`.
inline std::unique_ptr<LlmClient> make_llm_client(const LLMClientSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.backend == LlmBackend::Http) return std::make_unique<HttpLlmClient>(spec);
  return std::make_unique<MockLlmClient>(seed);
}

}  // namespace peftkit
