// Copyright (c) 2026, The peftkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used as test oracles. None of these call the
// library code they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "peftkit/matrix.hpp"

namespace oracle {

using peftkit::Matrix;

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

inline Matrix random_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> g(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = g(rng);
  return m;
}

inline Matrix random_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = u(rng);
  return m;
}

/// Student-t with 2 degrees of freedom: heavy tails, occasional large outliers.
inline Matrix random_heavy_tailed(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::student_t_distribution<double> t(2.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = t(rng);
  return m;
}

/// Rank by Gaussian elimination with partial pivoting; pivots below tol·max|a| count as zero.
inline std::size_t numeric_rank(Matrix a, double rel_tol = 1e-9) {
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) return 0;
  const double tol = rel_tol * scale;
  std::size_t rank = 0;
  for (std::size_t col = 0; col < a.cols() && rank < a.rows(); ++col) {
    std::size_t piv = rank;
    for (std::size_t r = rank; r < a.rows(); ++r) {
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    }
    if (std::abs(a(piv, col)) <= tol) continue;
    for (std::size_t c = 0; c < a.cols(); ++c) std::swap(a(rank, c), a(piv, c));
    for (std::size_t r = rank + 1; r < a.rows(); ++r) {
      const double f = a(r, col) / a(rank, col);
      for (std::size_t c = col; c < a.cols(); ++c) a(r, c) -= f * a(rank, c);
    }
    ++rank;
  }
  return rank;
}

/// Textbook scalar AdamW with decoupled decay, full precision.
struct ScalarAdamW {
  double lr, b1, b2, eps, wd;
  double m = 0.0, v = 0.0;
  int t = 0;

  double step(double p, double g) {
    ++t;
    p -= lr * wd * p;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

struct NaiveMetrics {
  double accuracy, precision, recall, f1;
};

/// Per-class counting straight from label lists. Classes = union of gold and predicted labels.
inline NaiveMetrics naive_metrics(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                                  const std::string& mode) {
  std::set<std::string> classes(gold.begin(), gold.end());
  classes.insert(pred.begin(), pred.end());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += gold[i] == pred[i];
  NaiveMetrics out{static_cast<double>(correct) / static_cast<double>(gold.size()), 0, 0, 0};
  if (mode == "micro") {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& c : classes) {
      for (std::size_t i = 0; i < gold.size(); ++i) {
        tp += gold[i] == c && pred[i] == c;
        fp += gold[i] != c && pred[i] == c;
        fn += gold[i] == c && pred[i] != c;
      }
    }
    out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    out.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    out.f1 = out.precision + out.recall == 0 ? 0 : 2 * out.precision * out.recall / (out.precision + out.recall);
    return out;
  }
  double wsum = 0.0;
  for (const auto& c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      tp += gold[i] == c && pred[i] == c;
      fp += gold[i] != c && pred[i] == c;
      fn += gold[i] == c && pred[i] != c;
    }
    const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double f = p + r == 0 ? 0.0 : 2 * p * r / (p + r);
    const double w = mode == "macro" ? 1.0 : static_cast<double>(tp + fn);
    out.precision += w * p;
    out.recall += w * r;
    out.f1 += w * f;
    wsum += w;
  }
  out.precision /= wsum;
  out.recall /= wsum;
  out.f1 /= wsum;
  return out;
}

}  // namespace oracle
