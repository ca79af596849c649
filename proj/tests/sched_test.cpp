#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "smalldata/sched.hpp"

using namespace smalldata::sched;

TEST(Cosine, Endpoints) {
  const CosineSegment seg{0.5, 0.1, 10};
  EXPECT_DOUBLE_EQ(cosine(0, seg), 0.5);
  EXPECT_NEAR(cosine(10, seg), 0.1, 1e-15);
  EXPECT_NEAR(cosine(5, seg), 0.3, 1e-15);
  EXPECT_THROW(cosine(11, seg), std::out_of_range);
  EXPECT_THROW(cosine(-1, seg), std::out_of_range);
}

TEST(OneCycle, CutIsCeilingOfThirtyPercent) {
  EXPECT_EQ(one_cycle_cut(500), 150u);
  EXPECT_EQ(one_cycle_cut(10), 3u);
  EXPECT_EQ(one_cycle_cut(7), 3u);  // ceil(2.1)
  EXPECT_EQ(one_cycle_cut(2), 1u);
  EXPECT_THROW(make_one_cycle(0.1, 1), std::invalid_argument);
}

TEST(OneCycle, LearningRateLandmarks) {
  const auto plan = make_one_cycle(0.4, 500);
  EXPECT_DOUBLE_EQ(one_cycle_lr(0, plan), 0.4 / 25.0);
  EXPECT_DOUBLE_EQ(one_cycle_lr(150, plan), 0.4);
  EXPECT_NEAR(one_cycle_lr(500, plan), 0.4 / 25000.0, 1e-18);
  EXPECT_THROW(one_cycle_lr(501, plan), std::out_of_range);
}

TEST(OneCycle, MomentumMirrorsLearningRate) {
  const auto plan = make_one_cycle(1.0, 1000);
  EXPECT_DOUBLE_EQ(one_cycle_momentum(0, plan), 0.95);
  EXPECT_DOUBLE_EQ(one_cycle_momentum(plan.cut, plan), 0.85);
  EXPECT_NEAR(one_cycle_momentum(1000, plan), 0.95, 1e-15);
  std::size_t argmin_m = 0, argmax_lr = 0;
  for (std::size_t i = 0; i <= 1000; ++i) {
    if (one_cycle_momentum(i, plan) < one_cycle_momentum(argmin_m, plan)) argmin_m = i;
    if (one_cycle_lr(i, plan) > one_cycle_lr(argmax_lr, plan)) argmax_lr = i;
  }
  EXPECT_EQ(argmin_m, plan.cut);
  EXPECT_EQ(argmax_lr, plan.cut);
}

TEST(OneCycle, StrictlyUnimodalOverManyHorizons) {
  for (std::size_t max_iter : {2u, 3u, 10u, 37u, 500u, 1234u}) {
    const auto plan = make_one_cycle(0.02, max_iter);
    for (std::size_t i = 1; i < plan.cut; ++i) EXPECT_GT(one_cycle_lr(i, plan), one_cycle_lr(i - 1, plan)) << max_iter;
    EXPECT_GT(one_cycle_lr(plan.cut, plan), one_cycle_lr(plan.cut - 1, plan));
    for (std::size_t i = plan.cut + 1; i <= max_iter; ++i) EXPECT_LT(one_cycle_lr(i, plan), one_cycle_lr(i - 1, plan)) << max_iter;
    for (std::size_t i = 0; i <= max_iter; ++i) {
      EXPECT_GE(one_cycle_lr(i, plan), 0.02 / 25000.0 * (1 - 1e-12));
      EXPECT_LE(one_cycle_lr(i, plan), 0.02);
    }
  }
}

TEST(RegularPolicy, DecreasingLossesKeepMaxLr) {
  EXPECT_EQ(regular_policy({1.0, 0.8, 0.5, 0.2}, 0.1), (std::vector<double>{0.1, 0.1, 0.1, 0.1}));
}

TEST(RegularPolicy, PlateausDecayByTen) {
  const auto lr = regular_policy({1.0, 1.0, 1.0}, 0.1);
  ASSERT_EQ(lr.size(), 3u);
  EXPECT_DOUBLE_EQ(lr[0], 0.1);
  EXPECT_DOUBLE_EQ(lr[1], 0.01);
  EXPECT_DOUBLE_EQ(lr[2], 0.001);
}

TEST(RegularPolicy, FloorAtOneThousandth) {
  const auto lr = regular_policy({1.0, 1.0, 1.0, 1.0, 1.0, 1.0}, 1.0);
  EXPECT_DOUBLE_EQ(lr[3], 1e-3);
  EXPECT_DOUBLE_EQ(lr[4], 1e-3);
  EXPECT_DOUBLE_EQ(lr[5], 1e-3);
}

TEST(RegularPolicy, TinyImprovementCountsAsPlateau) {
  const auto lr = regular_policy({1.0, 1.0 - 1e-6}, 1.0);
  EXPECT_DOUBLE_EQ(lr[1], 0.1);
}

TEST(LrFind, GeometricEndpoints) {
  const LrFindConfig cfg;
  EXPECT_DOUBLE_EQ(lr_find_rate(0, cfg), 1e-6);
  EXPECT_NEAR(lr_find_rate(100, cfg), 1.0, 1e-15);
  std::vector<double> seen;
  auto r = lr_find([&](double lr) { seen.push_back(lr); return 1.0; }, cfg);
  EXPECT_EQ(seen.size(), 101u);
  EXPECT_FALSE(r.stopped_early);
}

TEST(LrFind, HaltsWhenSmoothedLossDiverges) {
  LrFindConfig cfg;
  cfg.beta = 0.0;  // smoothed == raw
  std::size_t k = 0;
  auto r = lr_find([&](double) { return k++ < 20 ? 1.0 : 5.0; }, cfg);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.losses.size(), 21u);  // halts at step 20
}

TEST(LrFind, RejectsNanAtStepZero) {
  EXPECT_THROW(lr_find([](double) { return std::nan(""); }), std::runtime_error);
  EXPECT_THROW(lr_find([](double) { return 1.0; }, LrFindConfig{1.0, 0.5}), std::invalid_argument);
}

TEST(LrFind, StatelessSurrogateMatchesDenseGrid) {
  // Loss depends only on the current rate, minimized at log(lr) = log(3e-3).
  const double target = std::log(3e-3);
  auto loss = [&](double lr) { return 1.0 + (std::log(lr) - target) * (std::log(lr) - target); };
  LrFindConfig cfg;
  cfg.beta = 0.0;
  const auto r = lr_find(loss, cfg);
  // Dense grid oracle over the same range.
  double best_lr = 0.0, best = 1e300;
  for (int k = 0; k <= 100000; ++k) {
    const double lr = std::exp(std::log(1e-6) + k * (std::log(1.0) - std::log(1e-6)) / 100000.0);
    if (loss(lr) < best) best = loss(lr), best_lr = lr;
  }
  const double step = std::log(1.0 / 1e-6) / 100.0;
  EXPECT_LE(std::fabs(std::log(r.max_lr) - std::log(best_lr)), step);
}

TEST(LrFind, QuadraticTrainingMatchesGridScan) {
  // One-parameter model w with loss a*(w - w0)^2, trained by gradient steps.
  const double a = 4.0, w0 = 1.5;
  double w = 0.0;
  auto step = [&](double lr) {
    const double loss = a * (w - w0) * (w - w0);
    w -= lr * 2.0 * a * (w - w0);
    return loss;
  };
  const LrFindConfig cfg;
  const auto r = lr_find(step, cfg);

  // Grid-scan oracle: replay the same rate grid, smooth with the closed-form
  // weighted sum, and take the argmin up to the first divergence.
  double wo = 0.0;
  std::vector<double> raw;
  for (std::size_t k = 0; k <= cfg.n_steps; ++k) {
    const double lr = 1e-6 * std::pow(1e6, static_cast<double>(k) / cfg.n_steps);
    raw.push_back(a * (wo - w0) * (wo - w0));
    wo -= lr * 2.0 * a * (wo - w0);
  }
  double best = 1e300, best_lr = 0.0;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j <= k; ++j) {
      const double wt = std::pow(cfg.beta, static_cast<double>(k - j));
      num += wt * raw[j];
      den += wt;
    }
    const double smooth = num / den;
    if (!std::isfinite(smooth) || (k > 0 && smooth > 4.0 * best)) break;
    if (smooth < best) best = smooth, best_lr = 1e-6 * std::pow(1e6, static_cast<double>(k) / cfg.n_steps);
  }
  const double geometric_step = std::log(1e6) / cfg.n_steps;
  EXPECT_LE(std::fabs(std::log(r.max_lr) - std::log(best_lr)), geometric_step + 1e-12);
}

TEST(GroupSchedule, FreezeThresholds) {
  const auto plan = make_group_plan(make_one_cycle(0.1, 1000));
  auto s = group_schedule(50, plan);
  EXPECT_TRUE(s[0].frozen);
  EXPECT_TRUE(s[1].frozen);
  EXPECT_FALSE(s[2].frozen);
  s = group_schedule(150, plan);
  EXPECT_TRUE(s[0].frozen);
  EXPECT_FALSE(s[1].frozen);
  s = group_schedule(99, plan);
  EXPECT_TRUE(s[1].frozen);
  s = group_schedule(100, plan);
  EXPECT_FALSE(s[1].frozen);
  EXPECT_TRUE(group_schedule(199, plan)[0].frozen);
  EXPECT_FALSE(group_schedule(200, plan)[0].frozen);
}

TEST(GroupSchedule, RatiosAndMonotoneUnfreezing) {
  const auto plan = make_group_plan(make_one_cycle(0.09, 1000));
  std::array<bool, 3> was_active{false, false, false};
  for (std::size_t i = 0; i <= 1000; ++i) {
    const auto s = group_schedule(i, plan);
    const double base = one_cycle_lr(i, plan.base);
    EXPECT_EQ(s[0].lr, base * (1.0 / 9.0));
    EXPECT_EQ(s[1].lr, base * (1.0 / 3.0));
    EXPECT_EQ(s[2].lr, base);
    for (std::size_t g = 0; g < 3; ++g) {
      if (was_active[g]) EXPECT_FALSE(s[g].frozen) << "group " << g + 1 << " refroze at " << i;
      was_active[g] = was_active[g] || !s[g].frozen;
    }
  }
  EXPECT_LT(plan.group_scales[0], plan.group_scales[1]);
  EXPECT_LT(plan.group_scales[1], plan.group_scales[2]);
}

TEST(ScheduleCsv, HeaderAndRowCount) {
  std::ostringstream os;
  write_schedule_csv(os, make_group_plan(make_one_cycle(0.1, 20)));
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "iteration,lr_g1,lr_g2,lr_g3,momentum,frozen_g1,frozen_g2,frozen_g3");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 22);
}
