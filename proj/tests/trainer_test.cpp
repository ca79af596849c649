#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "smalldata/baseline.hpp"
#include "smalldata/trainer.hpp"

using namespace smalldata;
using namespace smalldata::train;

namespace {

// Class 1 images are bright, class 0 dark; both carry uniform noise.
Dataset toy_dataset(std::size_t n, std::uint64_t seed, std::size_t size = 18) {
  std::mt19937_64 rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = i % 2 == 1;
    std::uniform_int_distribution<int> px(pos ? 130 : 30, pos ? 230 : 130);
    Image img(size, size);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(px(rng));
    d.push_back(std::move(img), {pos ? 1.0 : 0.0});
  }
  return d;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.max_lr = 0.05;
  cfg.seed = 3;
  cfg.augment_cfg = {16, 10.0, 0.5};
  cfg.tta = false;
  return cfg;
}

void fill_grad(cnn::ModelParams& m, double value) {
  m.for_each_layer([&](const cnn::LayerGroup&, cnn::Layer& l) {
    l.weight.zero_grad();
    l.bias.zero_grad();
    l.weight.accumulate_grad(std::vector<double>(l.weight.size(), value));
    l.bias.accumulate_grad(std::vector<double>(l.bias.size(), value));
  });
}

}  // namespace

TEST(SgdStep, VanillaStep) {
  auto m = cnn::build_model(16, 1, 1);
  const auto before = m;
  fill_grad(m, 0.5);
  Velocity v(m);
  sgd_step(m, v, {0.1, 0.1, 0.1}, 0.0);
  EXPECT_DOUBLE_EQ(m.groups[1].layers[0].weight[7], before.groups[1].layers[0].weight[7] - 0.05);
}

TEST(SgdStep, MomentumTwoSteps) {
  auto m = cnn::build_model(16, 1, 1);
  const auto before = m;
  Velocity v(m);
  for (int k = 0; k < 2; ++k) {
    fill_grad(m, 1.0);
    sgd_step(m, v, {0.1, 0.1, 0.1}, 0.9);
  }
  EXPECT_NEAR(m.head().weight[3], before.head().weight[3] - (0.1 + 0.1 * 1.9), 1e-15);
}

TEST(SgdStep, FrozenGroupIsBitIdentical) {
  auto m = cnn::build_model(16, 2, 4);
  const auto before = m;
  m.groups[0].frozen = true;
  fill_grad(m, 0.25);
  Velocity v(m);
  sgd_step(m, v, {0.3, 0.2, 0.1}, 0.9);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(m.groups[0].layers[i].weight == before.groups[0].layers[i].weight);
    EXPECT_TRUE(m.groups[0].layers[i].bias == before.groups[0].layers[i].bias);
  }
  EXPECT_FALSE(m.groups[1].layers[0].weight == before.groups[1].layers[0].weight);
  // group 2 moved by its own rate
  EXPECT_DOUBLE_EQ(m.groups[1].layers[0].bias[0], before.groups[1].layers[0].bias[0] - 0.2 * 0.25);
}

TEST(Schedule, TransferModePlans) {
  const TrainingSchedule fe(Method::OneCycle, TransferMode::FeatureExtractor, 1000, 0.1);
  const TrainingSchedule ft(Method::OneCycle, TransferMode::FineTuneAll, 1000, 0.1);
  const TrainingSchedule gu(Method::OneCycle, TransferMode::GradualUnfreeze, 1000, 0.09);
  for (std::size_t i : {0u, 10u, 150u, 300u, 999u}) {
    EXPECT_EQ(fe.at(i, 0).frozen, (std::array<bool, 3>{true, true, false}));
    const auto p = ft.at(i, 0);
    EXPECT_EQ(p.frozen, (std::array<bool, 3>{false, false, false}));
    EXPECT_EQ(p.lr[0], p.lr[2]);
    EXPECT_EQ(p.lr[1], p.lr[2]);
  }
  const auto p = gu.at(500, 0);
  EXPECT_EQ(p.frozen, (std::array<bool, 3>{false, false, false}));
  EXPECT_NEAR(p.lr[1] / p.lr[0], 3.0, 1e-12);
  EXPECT_NEAR(p.lr[2] / p.lr[0], 9.0, 1e-12);
  EXPECT_THROW(TrainingSchedule(Method::Regular, TransferMode::GradualUnfreeze, 1000, 0.1), std::invalid_argument);
  const TrainingSchedule reg(Method::Regular, TransferMode::None, 1000, 0.1);
  EXPECT_EQ(reg.at(10, 0.01).lr, (std::array<double, 3>{0.01, 0.01, 0.01}));
  EXPECT_EQ(reg.at(10, 0.01).momentum, 0.9);
}

TEST(Train, BestEpochIsArgminAndReproducible) {
  const auto tr = toy_dataset(24, 1), va = toy_dataset(10, 2);
  auto cfg = small_config();
  cfg.method = Method::Regular;
  const auto r = train::train(cnn::build_model(16, 1, 5), tr, va, cfg);
  ASSERT_EQ(r.val_loss_curve.size(), 4u);
  const auto argmin = static_cast<std::size_t>(
      std::min_element(r.val_loss_curve.begin(), r.val_loss_curve.end()) - r.val_loss_curve.begin());
  EXPECT_EQ(r.best_epoch, argmin);
  EXPECT_EQ(evaluate_loss(r.best_params, va, 16), r.val_loss_curve[argmin]);
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_EQ(r.log[2].val_loss, r.val_loss_curve[2]);
}

TEST(Train, DeterministicForEqualSeeds) {
  const auto tr = toy_dataset(16, 1), va = toy_dataset(8, 2);
  const auto cfg = small_config();
  const auto a = train::train(cnn::build_model(16, 1, 5), tr, va, cfg);
  const auto b = train::train(cnn::build_model(16, 1, 5), tr, va, cfg);
  EXPECT_EQ(a.val_loss_curve, b.val_loss_curve);
  EXPECT_TRUE(a.best_params == b.best_params);
}

TEST(Train, SeparableToyReachesHighAuc) {
  const auto tr = toy_dataset(40, 11), va = toy_dataset(12, 12);
  auto cfg = small_config();
  cfg.epochs = 20;
  cfg.max_lr = 0.1;
  const auto r = train::train(cnn::build_model(16, 1, 2), tr, va, cfg, &tr);
  ASSERT_TRUE(r.test_auc.has_value());
  EXPECT_GT(*r.test_auc, 0.99);

  // Sanity oracle: a logistic model on mean intensity separates the same data.
  base::Matrix X(tr.size(), 1);
  std::vector<int> y;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    double s = 0.0;
    for (auto p : tr.images[i].pixels) s += p;
    X(i, 0) = s / static_cast<double>(tr.images[i].pixels.size());
    y.push_back(tr.label(i, 0) != 0.0);
  }
  base::Candidate c;
  c.en = {1e-4, 1.0};
  EXPECT_GT(metrics::auc(base::fit_baseline(X, y, c).predict_proba(X), y), 0.99);
}

TEST(Train, FeatureExtractorOnlyMovesHead) {
  const auto tr = toy_dataset(16, 1), va = toy_dataset(8, 2);
  auto cfg = small_config();
  cfg.transfer_mode = TransferMode::FeatureExtractor;
  const auto init = cnn::build_model(16, 1, 5);
  const auto r = train::train(init, tr, va, cfg);
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_TRUE(r.best_params.groups[g].layers[i].weight == init.groups[g].layers[i].weight);
      EXPECT_TRUE(r.best_params.groups[g].layers[i].bias == init.groups[g].layers[i].bias);
    }
  EXPECT_FALSE(r.best_params.head().weight == init.head().weight);
}

TEST(Train, GradualUnfreezeEventuallyTrainsGroupOne) {
  const auto tr = toy_dataset(16, 1), va = toy_dataset(8, 2);
  auto cfg = small_config();
  cfg.transfer_mode = TransferMode::GradualUnfreeze;
  cfg.epochs = 1;  // 2 iterations: group 1 unfreezes at ceil(2/5) = 1
  auto init = cnn::build_model(16, 1, 5);
  const auto r = train::train(init, tr, va, cfg);
  EXPECT_FALSE(r.best_params.groups[0].layers[0].weight == init.groups[0].layers[0].weight);
}

TEST(Train, NanLossNamesIteration) {
  const auto tr = toy_dataset(8, 1), va = toy_dataset(4, 2);
  auto model = cnn::build_model(16, 1, 5);
  model.head().weight[0] = std::nan("");
  try {
    train::train(model, tr, va, small_config());
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsLabelWidthMismatch) {
  const auto tr = toy_dataset(8, 1), va = toy_dataset(4, 2);
  EXPECT_THROW(train::train(cnn::build_model(16, 3, 0), tr, va, small_config()), std::invalid_argument);
}

TEST(LrFind, ReturnsRateInsideSweep) {
  const auto data = toy_dataset(16, 4);
  auto cfg = small_config();
  sched::LrFindConfig fc;
  fc.n_steps = 30;
  const auto r = lr_find(cnn::build_model(16, 1, 1), data, cfg, fc);
  EXPECT_GE(r.max_lr, 1e-6);
  EXPECT_LE(r.max_lr, 1.0);
  EXPECT_EQ(r.lrs[r.best_step], r.max_lr);
}

TEST(EpochLog, CsvHeader) {
  std::ostringstream os;
  write_epoch_log_csv(os, {{0, 0.7, 0.6, 0.01}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "epoch,train_loss,val_loss,lr_snapshot");
}
