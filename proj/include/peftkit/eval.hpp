// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Answer normalization, confusion matrices, accuracy/precision/recall/F1 under micro,
// macro and weighted averaging, and the task-by-metric report table.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "peftkit/category.hpp"
#include "peftkit/errors.hpp"
#include "peftkit/random.hpp"
#include "peftkit/text.hpp"

namespace peftkit {

inline constexpr std::string_view kUnknownLabel = "unknown";

/// Case-folds, replaces ASCII punctuation with spaces, and collapses whitespace.
inline std::string normalize_text(std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (std::ispunct(c) || std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

struct LabelSet {
  Category category = Category::Scene;
  std::vector<std::string> labels;

  void validate() const {
    if (labels.size() < 2) {
      throw InputError(fmt::format("label set '{}' needs at least 2 labels, has {}", category_name(category),
                                   labels.size()));
    }
    std::set<std::string> seen;
    for (const auto& l : labels) {
      const auto n = normalize_text(l);
      if (n.empty()) throw InputError(fmt::format("label set '{}': empty label", category_name(category)));
      if (n == kUnknownLabel) throw InputError(fmt::format("label set '{}': 'unknown' is reserved", category_name(category)));
      if (!seen.insert(n).second) {
        throw InputError(fmt::format("label set '{}': labels '{}' collide after normalization", category_name(category), l));
      }
    }
  }
};

namespace detail {
/// True when `needle` occurs in `hay` on word boundaries (both already normalized).
inline bool contains_words(std::string_view hay, std::string_view needle) {
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) {
    const bool left = pos == 0 || hay[pos - 1] == ' ';
    const bool right = pos + needle.size() == hay.size() || hay[pos + needle.size()] == ' ';
    if (left && right) return true;
  }
  return false;
}
}  // namespace detail

/// Maps a free-form answer onto a canonical label: exact match after normalization first,
/// then a unique label contained as whole words; otherwise "unknown".
inline std::string normalize_answer(std::string_view raw, const LabelSet& ls) {
  const std::string n = normalize_text(raw);
  for (const auto& l : ls.labels) {
    if (normalize_text(l) == n) return l;
  }
  const std::string* hit = nullptr;
  for (const auto& l : ls.labels) {
    if (detail::contains_words(n, normalize_text(l))) {
      if (hit != nullptr) return std::string(kUnknownLabel);
      hit = &l;
    }
  }
  return hit != nullptr ? *hit : std::string(kUnknownLabel);
}

/// Counts with rows = gold and columns = predicted; the last class is the reserved "unknown".
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<std::string> labels) : labels_(std::move(labels)) {
    labels_.emplace_back(kUnknownLabel);
    counts_.assign(labels_.size() * labels_.size(), 0);
  }

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::uint64_t at(std::size_t gold, std::size_t pred) const { return counts_.at(gold * size() + pred); }
  void add(std::size_t gold, std::size_t pred, std::uint64_t n = 1) { counts_.at(gold * size() + pred) += n; }

  std::optional<std::size_t> index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] == label) return i;
    }
    return std::nullopt;
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < size(); ++i) t += at(i, i);
    return t;
  }
  std::uint64_t gold_support(std::size_t c) const {
    std::uint64_t t = 0;
    for (std::size_t j = 0; j < size(); ++j) t += at(c, j);
    return t;
  }
  std::uint64_t predicted(std::size_t c) const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < size(); ++i) t += at(i, c);
    return t;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<std::uint64_t> counts_;
};

/// Tallies canonical (gold, pred) label pairs. Both must be labels of `ls` or "unknown".
inline ConfusionMatrix build_confusion(std::span<const std::string> preds, std::span<const std::string> golds,
                                       const LabelSet& ls) {
  if (preds.size() != golds.size()) {
    throw InputError(fmt::format("{} predictions for {} gold labels", preds.size(), golds.size()));
  }
  if (preds.empty()) throw InputError("build_confusion: no samples");
  ConfusionMatrix cm(ls.labels);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto g = cm.index_of(golds[i]);
    const auto p = cm.index_of(preds[i]);
    if (!g) throw InputError(fmt::format("gold label '{}' is not in the '{}' label set", golds[i], category_name(ls.category)));
    if (!p) throw InputError(fmt::format("predicted label '{}' is not in the '{}' label set", preds[i], category_name(ls.category)));
    cm.add(*g, *p);
  }
  return cm;
}

enum class Averaging { Micro, Macro, Weighted };

inline std::string_view averaging_name(Averaging a) {
  switch (a) {
    case Averaging::Micro: return "micro";
    case Averaging::Macro: return "macro";
    case Averaging::Weighted: return "weighted";
  }
  return "?";
}

inline Averaging parse_averaging(std::string_view s) {
  if (s == "micro") return Averaging::Micro;
  if (s == "macro") return Averaging::Macro;
  if (s == "weighted") return Averaging::Weighted;
  throw ConfigError("mode", fmt::format("unknown averaging mode '{}' (micro, macro, weighted)", s));
}

struct MetricReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Averaging mode = Averaging::Macro;
  std::uint64_t samples = 0;
};

/// Accuracy plus averaged precision, recall and F1.
///
/// Classes are those with gold support or at least one prediction. Per-class values use the
/// 0/0 -> 0 convention. Micro pools counts, so precision = recall = accuracy exactly. Macro and
/// weighted average the per-class precision, recall and F1 (unweighted, or by gold support).
inline MetricReport compute_metrics(const ConfusionMatrix& cm, Averaging mode) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw InputError("compute_metrics: empty confusion matrix");
  MetricReport r;
  r.mode = mode;
  r.samples = total;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  if (mode == Averaging::Micro) {
    std::uint64_t tp = 0, predicted = 0, support = 0;
    for (std::size_t c = 0; c < cm.size(); ++c) {
      tp += cm.at(c, c);
      predicted += cm.predicted(c);
      support += cm.gold_support(c);
    }
    r.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    r.recall = static_cast<double>(tp) / static_cast<double>(support);
    r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
  }
  double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0, weight_sum = 0.0;
  for (std::size_t c = 0; c < cm.size(); ++c) {
    const auto support = cm.gold_support(c);
    const auto predicted = cm.predicted(c);
    if (support == 0 && predicted == 0) continue;
    const auto tp = static_cast<double>(cm.at(c, c));
    const double p = predicted == 0 ? 0.0 : tp / static_cast<double>(predicted);
    const double rc = support == 0 ? 0.0 : tp / static_cast<double>(support);
    const double f = p + rc == 0.0 ? 0.0 : 2.0 * p * rc / (p + rc);
    const double w = mode == Averaging::Macro ? 1.0 : static_cast<double>(support);
    p_sum += w * p;
    r_sum += w * rc;
    f_sum += w * f;
    weight_sum += w;
  }
  r.precision = p_sum / weight_sum;
  r.recall = r_sum / weight_sum;
  r.f1 = f_sum / weight_sum;
  return r;
}

/// Seeded uniform sample of n items without replacement, kept in input order.
template <class T>
std::vector<T> sample_eval_set(std::span<const T> items, std::size_t n, std::uint64_t seed) {
  if (n > items.size()) throw InputError(fmt::format("cannot sample {} items from {}", n, items.size()));
  auto idx = shuffled_indices(items.size(), seed);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<T> out;
  out.reserve(n);
  for (auto i : idx) out.push_back(items[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

struct ModelReport {
  std::string model;
  std::map<Category, MetricReport> tasks;
};

inline constexpr std::array<std::string_view, 4> kMetricNames = {"Accuracy", "Recall", "Precision", "F1-score"};

inline double metric_value(const MetricReport& m, std::size_t metric) {
  switch (metric) {
    case 0: return m.accuracy;
    case 1: return m.recall;
    case 2: return m.precision;
    default: return m.f1;
  }
}

/// Value ×100 with two decimals.
inline std::string format_percent(double v) { return fmt::format("{:.2f}", 100.0 * v); }

namespace detail {
struct ReportCell {
  Category task;
  std::size_t metric;
  std::vector<std::string> values;  // one per model; "-" if the model lacks the task
};

inline std::vector<ReportCell> report_cells(std::span<const ModelReport> models) {
  if (models.empty()) throw InputError("render_report: no models");
  std::vector<ReportCell> rows;
  for (Category c : kCategories) {
    bool any = false;
    for (const auto& m : models) any = any || m.tasks.contains(c);
    if (!any) continue;
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
      ReportCell row{c, k, {}};
      for (const auto& m : models) {
        auto it = m.tasks.find(c);
        row.values.push_back(it == m.tasks.end() ? "-" : format_percent(metric_value(it->second, k)));
      }
      rows.push_back(std::move(row));
    }
  }
  if (rows.empty()) throw InputError("render_report: no tasks");
  return rows;
}
}  // namespace detail

/// Aligned text table: rows grouped by task, then metric; one column per model.
inline std::string render_report(std::span<const ModelReport> models) {
  const auto rows = detail::report_cells(models);
  std::size_t task_w = 3, metric_w = 6;
  for (Category c : kCategories) task_w = std::max(task_w, category_display_name(c).size());
  for (auto m : kMetricNames) metric_w = std::max(metric_w, m.size());
  std::vector<std::size_t> col_w;
  for (const auto& m : models) col_w.push_back(std::max<std::size_t>(m.model.size(), 6));

  std::string out = fmt::format("{:<{}}  {:<{}}", "VQA", task_w, "Metric", metric_w);
  for (std::size_t j = 0; j < models.size(); ++j) out += fmt::format("  {:>{}}", models[j].model, col_w[j]);
  out += '\n';
  std::size_t width = out.size() - 1;
  out += std::string(width, '-') + '\n';
  for (const auto& row : rows) {
    const std::string_view task = row.metric == 0 ? category_display_name(row.task) : "";
    out += fmt::format("{:<{}}  {:<{}}", task, task_w, kMetricNames[row.metric], metric_w);
    for (std::size_t j = 0; j < row.values.size(); ++j) out += fmt::format("  {:>{}}", row.values[j], col_w[j]);
    out += '\n';
  }
  return out;
}

/// The same cells as render_report, as CSV: task,metric,<model>...
inline std::string render_report_csv(std::span<const ModelReport> models) {
  const auto rows = detail::report_cells(models);
  std::string out = "task,metric";
  for (const auto& m : models) out += "," + m.model;
  out += '\n';
  for (const auto& row : rows) {
    out += fmt::format("{},{}", category_display_name(row.task), kMetricNames[row.metric]);
    for (const auto& v : row.values) out += "," + v;
    out += '\n';
  }
  return out;
}

}  // namespace peftkit
