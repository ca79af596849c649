#pragma once

// ROC AUC (Mann-Whitney with midranks), mean per-label AUC and the paired
// two-sided t-test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace smalldata::metrics {

/// AUC = (R_pos - n_pos(n_pos+1)/2) / (n_pos * n_neg), ranks averaged over ties.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auc: need both classes, got " + std::to_string(n_pos) + " positives and " +
                                std::to_string(n_neg) + " negatives");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t n_pos() const { return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; })); }
  std::size_t n_neg() const { return labels.size() - n_pos(); }
};

struct MeanAuc {
  double value = 0.0;
  std::vector<double> per_label;       // NaN for skipped labels
  std::vector<std::size_t> skipped;    // labels lacking one of the classes
};

inline MeanAuc mean_label_auc(const std::vector<ScoredSet>& sets) {
  MeanAuc r;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (sets[k].n_pos() == 0 || sets[k].n_neg() == 0) {
      r.skipped.push_back(k);
      r.per_label.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double a = auc(sets[k].scores, sets[k].labels);
    r.per_label.push_back(a);
    sum += a;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("mean_label_auc: no label has both classes present");
  r.value = sum / static_cast<double>(used);
  return r;
}

/// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incomplete_beta(b, a, 1.0 - x);
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  double f = 1.0, c = 1.0, d = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const int m = i / 2;
    double num;
    if (i == 0)
      num = 1.0;
    else if (i % 2 == 0)
      num = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
    else
      num = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    const double cd = c * d;
    f *= cd;
    if (std::fabs(1.0 - cd) < eps) break;
  }
  return std::exp(log_front) * (f - 1.0) / a;
}

/// Two-sided tail P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double student_t_two_sided(double t, double df) {
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  std::size_t df = 0;
  bool degenerate = false;  // zero-variance differences with non-zero mean
};

inline TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_ttest: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_ttest: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult r;
  r.df = n - 1;
  if (sd == 0.0) {
    if (mean == 0.0) return r;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p = 0.0;
    r.degenerate = true;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = r.t == 0.0 ? 1.0 : student_t_two_sided(r.t, static_cast<double>(r.df));
  return r;
}

}  // namespace smalldata::metrics
