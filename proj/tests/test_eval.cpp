// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "peftkit/eval.hpp"

namespace peftkit {
namespace {

LabelSet agents() { return {Category::Agent, {"pedestrian", "cyclist", "truck"}}; }
LabelSet yes_no() { return {Category::Risk, {"yes", "no"}}; }

TEST(Normalize, TextIsFoldedAndIdempotent) {
  EXPECT_EQ(normalize_text("  Yes. "), "yes");
  EXPECT_EQ(normalize_text("Slow-down,  NOW!"), "slow down now");
  for (const char* s : {"A, b;; C", "  x  ", "", "?!"}) {
    EXPECT_EQ(normalize_text(normalize_text(s)), normalize_text(s));
  }
}

TEST(Normalize, AnswersMapOntoLabels) {
  EXPECT_EQ(normalize_answer(" Yes.", yes_no()), "yes");
  EXPECT_EQ(normalize_answer("The pedestrian on the left.", agents()), "pedestrian");
  EXPECT_EQ(normalize_answer("none of these", agents()), "unknown");
  EXPECT_EQ(normalize_answer("pedestrians", agents()), "unknown");
  EXPECT_EQ(normalize_answer("a cyclist and a truck", agents()), "unknown");
  EXPECT_EQ(normalize_answer("", agents()), "unknown");
}

TEST(Normalize, CanonicalLabelsAreFixedPoints) {
  for (const auto& l : agents().labels) EXPECT_EQ(normalize_answer(l, agents()), l);
}

TEST(LabelSetValidation, RejectsBadSets) {
  EXPECT_NO_THROW(agents().validate());
  EXPECT_THROW((LabelSet{Category::Risk, {"yes"}}.validate()), InputError);
  EXPECT_THROW((LabelSet{Category::Risk, {"yes", "Yes!"}}.validate()), InputError);
  EXPECT_THROW((LabelSet{Category::Risk, {"yes", "Unknown"}}.validate()), InputError);
}

TEST(Confusion, HandTally) {
  const std::vector<std::string> gold = {"pedestrian", "pedestrian", "cyclist", "truck"};
  const std::vector<std::string> pred = {"pedestrian", "cyclist", "cyclist", "unknown"};
  const auto cm = build_confusion(pred, gold, agents());
  ASSERT_EQ(cm.size(), 4u);
  EXPECT_EQ(cm.at(0, 0), 1u);
  EXPECT_EQ(cm.at(0, 1), 1u);
  EXPECT_EQ(cm.at(1, 1), 1u);
  EXPECT_EQ(cm.at(2, 3), 1u);
  EXPECT_EQ(cm.total(), 4u);
  EXPECT_EQ(cm.trace(), 2u);
  EXPECT_EQ(cm.predicted(1), 2u);
  EXPECT_EQ(cm.gold_support(0), 2u);
}

TEST(Confusion, RejectsMismatchedOrForeignLabels) {
  const std::vector<std::string> one = {"yes"};
  const std::vector<std::string> two = {"yes", "no"};
  EXPECT_THROW(build_confusion(one, two, yes_no()), InputError);
  EXPECT_THROW(build_confusion(std::vector<std::string>{}, std::vector<std::string>{}, yes_no()), InputError);
  EXPECT_THROW(build_confusion(std::vector<std::string>{"maybe"}, one, yes_no()), InputError);
}

TEST(Metrics, HandComputedMacro) {
  const LabelSet ls{Category::Scene, {"a", "b", "c"}};
  const std::vector<std::string> gold = {"a", "a", "a", "b", "b", "c"};
  const std::vector<std::string> pred = {"a", "a", "b", "b", "c", "c"};
  const auto m = compute_metrics(build_confusion(pred, gold, ls), Averaging::Macro);
  EXPECT_NEAR(m.accuracy, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.recall, 13.0 / 18.0, 1e-15);
  EXPECT_NEAR(m.f1, 59.0 / 90.0, 1e-15);
}

TEST(Metrics, FourSampleHandExample) {
  const LabelSet ls{Category::Scene, {"a", "b", "c"}};
  const std::vector<std::string> gold = {"a", "a", "b", "c"};
  const std::vector<std::string> pred = {"a", "b", "b", "b"};
  const auto m = compute_metrics(build_confusion(pred, gold, ls), Averaging::Macro);
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_NEAR(m.precision, 4.0 / 9.0, 1e-15);
  EXPECT_NEAR(m.recall, 0.5, 1e-15);
  EXPECT_NEAR(m.f1, 7.0 / 18.0, 1e-15);
}

TEST(Metrics, UnknownPredictionsCountAgainstRecall) {
  const std::vector<std::string> gold = {"yes", "no", "yes"};
  const std::vector<std::string> pred(3, "unknown");
  const auto m = compute_metrics(build_confusion(pred, gold, yes_no()), Averaging::Macro);
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
}

TEST(Metrics, PerfectPredictionsScoreOne) {
  const std::vector<std::string> gold = {"yes", "no", "no"};
  for (Averaging a : {Averaging::Micro, Averaging::Macro, Averaging::Weighted}) {
    const auto m = compute_metrics(build_confusion(gold, gold, yes_no()), a);
    EXPECT_EQ(m.accuracy, 1.0);
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.f1, 1.0);
  }
}

TEST(Metrics, MatchNaiveOracleOnRandomInstances) {
  std::mt19937_64 rng(70);
  const LabelSet ls{Category::SuggestedAction, {"stop", "slow down", "change lanes", "keep distance", "proceed"}};
  std::vector<std::string> pool = ls.labels;
  pool.emplace_back(kUnknownLabel);
  for (int rep = 0; rep < 1000; ++rep) {
    std::uniform_int_distribution<std::size_t> len(1, 40);
    std::uniform_int_distribution<std::size_t> gold_pick(0, ls.labels.size() - 1);
    std::uniform_int_distribution<std::size_t> pred_pick(0, pool.size() - 1);
    std::bernoulli_distribution copy(0.5);
    const std::size_t n = len(rng);
    std::vector<std::string> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = ls.labels[gold_pick(rng)];
      pred[i] = copy(rng) ? gold[i] : pool[pred_pick(rng)];
    }
    const auto cm = build_confusion(pred, gold, ls);
    for (const char* mode : {"micro", "macro", "weighted"}) {
      const auto got = compute_metrics(cm, parse_averaging(mode));
      const auto want = oracle::naive_metrics(gold, pred, mode);
      ASSERT_NEAR(got.accuracy, want.accuracy, 1e-12) << mode << " rep " << rep;
      ASSERT_NEAR(got.precision, want.precision, 1e-12) << mode << " rep " << rep;
      ASSERT_NEAR(got.recall, want.recall, 1e-12) << mode << " rep " << rep;
      ASSERT_NEAR(got.f1, want.f1, 1e-12) << mode << " rep " << rep;
      for (double v : {got.accuracy, got.precision, got.recall, got.f1}) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
    }
    const auto micro = compute_metrics(cm, Averaging::Micro);
    ASSERT_EQ(micro.precision, micro.accuracy);
    ASSERT_EQ(micro.recall, micro.accuracy);
  }
}

TEST(Metrics, InvariantUnderSamplePermutation) {
  std::mt19937_64 rng(71);
  std::vector<std::string> gold = {"yes", "no", "no", "yes", "yes", "no", "yes"};
  std::vector<std::string> pred = {"yes", "yes", "no", "unknown", "yes", "no", "no"};
  const auto base = compute_metrics(build_confusion(pred, gold, yes_no()), Averaging::Macro);
  std::vector<std::size_t> idx(gold.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int rep = 0; rep < 20; ++rep) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::string> g, p;
    for (auto i : idx) {
      g.push_back(gold[i]);
      p.push_back(pred[i]);
    }
    const auto m = compute_metrics(build_confusion(p, g, yes_no()), Averaging::Macro);
    EXPECT_EQ(m.precision, base.precision);
    EXPECT_EQ(m.recall, base.recall);
    EXPECT_EQ(m.f1, base.f1);
  }
}

TEST(Averaging, ParsesKnownModesOnly) {
  EXPECT_EQ(parse_averaging("weighted"), Averaging::Weighted);
  EXPECT_EQ(averaging_name(Averaging::Micro), "micro");
  EXPECT_THROW(parse_averaging("harmonic"), ConfigError);
}

TEST(Sampling, SeededSubsetInInputOrder) {
  std::vector<int> items(1000);
  std::iota(items.begin(), items.end(), 0);
  const auto a = sample_eval_set<int>(items, 500, 9);
  EXPECT_EQ(a.size(), 500u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<int>(a.begin(), a.end()).size(), 500u);
  EXPECT_EQ(a, sample_eval_set<int>(items, 500, 9));
  EXPECT_NE(a, sample_eval_set<int>(items, 500, 10));
  EXPECT_EQ(sample_eval_set<int>(items, 1000, 9), items);
  EXPECT_TRUE(sample_eval_set<int>(items, 0, 9).empty());
  EXPECT_THROW(sample_eval_set<int>(items, 1001, 9), InputError);
}

TEST(Report, TextTableAndCsvAgree) {
  MetricReport perfect;
  perfect.accuracy = perfect.precision = perfect.recall = perfect.f1 = 1.0;
  MetricReport partial;
  partial.accuracy = 0.5;
  partial.recall = 7.0 / 18.0;
  partial.precision = 0.25;
  partial.f1 = 0.3;
  const std::vector<ModelReport> models = {
      {"base", {{Category::Risk, partial}}},
      {"tuned", {{Category::Risk, perfect}, {Category::Scene, perfect}}},
  };
  const auto text = render_report(models);
  EXPECT_NE(text.find("100.00"), std::string::npos);
  EXPECT_NE(text.find("38.89"), std::string::npos);
  EXPECT_EQ(text.rfind("VQA", 0), 0u);
  EXPECT_NE(text.find("Scene"), std::string::npos);

  const auto csv = render_report_csv(models);
  const auto lines = split_lines(csv);
  EXPECT_EQ(lines[0], "task,metric,base,tuned");
  EXPECT_EQ(lines[1], "Scene,Accuracy,-,100.00");
  EXPECT_NE(csv.find("Risk,Recall,38.89,100.00"), std::string::npos);
  // Every CSV cell appears in the text table.
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto last = lines[i].substr(lines[i].rfind(',') + 1);
    EXPECT_NE(text.find(last), std::string::npos);
  }
  EXPECT_THROW(render_report({}), InputError);
}

}  // namespace
}  // namespace peftkit
