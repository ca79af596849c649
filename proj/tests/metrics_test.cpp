#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "smalldata/metrics.hpp"

using namespace smalldata::metrics;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        if (s[i] > s[j]) wins += 1.0;
        if (s[i] == s[j]) wins += 0.5;
      }
  return wins / pairs;
}

// Two-sided tail via composite Simpson integration of the t density on [0, |t|].
double quadrature_p(double t, double df) {
  const double logc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * std::numbers::pi);
  auto pdf = [&](double x) { return std::exp(logc - (df + 1) / 2 * std::log1p(x * x / df)); };
  const int n = 200000;
  const double a = std::fabs(t), h = a / n;
  double s = pdf(0.0) + pdf(a);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

}  // namespace

TEST(Auc, PerfectSeparationAndFullTies) {
  EXPECT_DOUBLE_EQ(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}), 0.5);
}

TEST(Auc, SingleClassRejectedWithCounts) {
  try {
    auc({0.1, 0.2}, {1, 1});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("2 positives"), std::string::npos);
  }
}

TEST(Auc, MatchesPairwiseOracleWithTies) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> score(0, 6), n_dist(2, 40);
    const int n = n_dist(rng);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) s[i] = score(rng) * 0.1, y[i] = static_cast<int>(rng() % 2);
    y[0] = 0, y[1] = 1;
    EXPECT_NEAR(auc(s, y), brute_auc(s, y), 1e-12) << "seed " << seed;
  }
}

TEST(Auc, MonotoneInvarianceAndComplement) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d;
  std::vector<double> s(60), t(60), neg(60);
  std::vector<int> y(60);
  for (int i = 0; i < 60; ++i) {
    y[i] = i % 3 == 0;
    s[i] = d(rng) + y[i];
    t[i] = std::exp(3.0 * s[i]) + 2.0;
    neg[i] = -s[i];
  }
  EXPECT_DOUBLE_EQ(auc(s, y), auc(t, y));
  EXPECT_NEAR(auc(s, y) + auc(neg, y), 1.0, 1e-12);
}

TEST(MeanLabelAuc, Examples) {
  const ScoredSet perfect{{0.1, 0.9}, {0, 1}};
  const ScoredSet coin{{0.5, 0.5}, {0, 1}};
  EXPECT_DOUBLE_EQ(mean_label_auc({perfect, coin}).value, 0.75);
  EXPECT_DOUBLE_EQ(mean_label_auc({coin}).value, 0.5);
}

TEST(MeanLabelAuc, SkipsSingleClassLabels) {
  const auto r = mean_label_auc({{{0.1, 0.9}, {0, 1}}, {{0.3, 0.4}, {0, 0}}});
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.skipped, std::vector<std::size_t>{1});
  EXPECT_TRUE(std::isnan(r.per_label[1]));
  EXPECT_THROW(mean_label_auc({{{0.3, 0.4}, {1, 1}}}), std::invalid_argument);
}

TEST(MeanLabelAuc, FourteenLabelsMatchRecomputation) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u;
  std::vector<ScoredSet> sets(14);
  double sum = 0.0;
  for (auto& s : sets) {
    for (int i = 0; i < 80; ++i) {
      s.labels.push_back(u(rng) < 0.3);
      s.scores.push_back(u(rng) + 0.3 * s.labels.back());
    }
    sum += brute_auc(s.scores, s.labels);
  }
  EXPECT_NEAR(mean_label_auc(sets).value, sum / 14.0, 1e-12);
}

TEST(PairedTTest, IdenticalAndSymmetricDifferences) {
  auto r = paired_ttest({0.7, 0.8, 0.9}, {0.7, 0.8, 0.9});
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
  r = paired_ttest({1.0, -1.0}, {0.0, 0.0});
  EXPECT_EQ(r.t, 0.0);
  EXPECT_EQ(r.p, 1.0);
}

TEST(PairedTTest, DegenerateConstantShift) {
  const auto r = paired_ttest({1.5, 2.5, 3.5}, {1.0, 2.0, 3.0});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p, 0.0);
  EXPECT_GT(r.t, 0.0);
}

TEST(PairedTTest, MatchesQuadratureOracle) {
  const auto r = paired_ttest({1.1, 0.9, 1.2, 0.8}, {0.0, 0.0, 0.0, 0.0});
  EXPECT_EQ(r.df, 3u);
  // mean 1, sd = sqrt(0.1/3)
  EXPECT_NEAR(r.t, 1.0 / (std::sqrt(0.1 / 3.0) / 2.0), 1e-12);
  EXPECT_NEAR(r.p, quadrature_p(r.t, 3.0), 1e-9);
}

TEST(PairedTTest, TailAgreesWithQuadratureAcrossDf) {
  for (double df : {1.0, 2.0, 5.0, 13.0, 40.0})
    for (double t : {0.1, 0.7, 1.9, 3.2, 6.0}) EXPECT_NEAR(student_t_two_sided(t, df), quadrature_p(t, df), 1e-9) << df << " " << t;
}

TEST(PairedTTest, AntisymmetricInArguments) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> a(8), b(8);
    for (int i = 0; i < 8; ++i) a[i] = d(rng), b[i] = d(rng) + 0.2;
    const auto ab = paired_ttest(a, b), ba = paired_ttest(b, a);
    EXPECT_DOUBLE_EQ(ab.t, -ba.t);
    EXPECT_DOUBLE_EQ(ab.p, ba.p);
  }
}

TEST(PairedTTest, RejectsBadInput) {
  EXPECT_THROW(paired_ttest({1.0}, {2.0}), std::invalid_argument);
  EXPECT_THROW(paired_ttest({1.0, 2.0}, {2.0}), std::invalid_argument);
}
