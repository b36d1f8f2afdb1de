// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// The four hazard-understanding task categories shared by generation and evaluation.

#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace peftkit {

enum class Category { Scene, Agent, SuggestedAction, Risk };

inline constexpr std::array<Category, 4> kCategories = {Category::Scene, Category::Agent, Category::SuggestedAction,
                                                        Category::Risk};

/// Machine name used in prompts, JSONL records and label-file names.
inline constexpr std::string_view category_name(Category c) {
  switch (c) {
    case Category::Scene: return "scene";
    case Category::Agent: return "agent";
    case Category::SuggestedAction: return "suggested_action";
    case Category::Risk: return "risk";
  }
  return "?";
}

/// Row label used in rendered reports.
inline constexpr std::string_view category_display_name(Category c) {
  switch (c) {
    case Category::Scene: return "Scene";
    case Category::Agent: return "Agent";
    case Category::SuggestedAction: return "Suggestion Action";
    case Category::Risk: return "Risk";
  }
  return "?";
}

inline std::optional<Category> parse_category(std::string_view name) {
  for (Category c : kCategories) {
    if (category_name(c) == name) return c;
  }
  return std::nullopt;
}

}  // namespace peftkit
