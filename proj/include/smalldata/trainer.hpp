#pragma once

// Mini-batch SGD with classical momentum over the three-group CNN, driven by
// either the regular (decay-on-plateau) or the one-cycle policy, with the
// transfer-learning freeze plans and best-validation-loss model selection.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "smalldata/augment.hpp"
#include "smalldata/image.hpp"
#include "smalldata/metrics.hpp"
#include "smalldata/ndtensor.hpp"
#include "smalldata/sched.hpp"
#include "smalldata/tinycnn.hpp"

namespace smalldata::train {

/// Images plus a row-major N x n_labels {0,1} label matrix.
struct Dataset {
  std::vector<Image> images;
  std::size_t n_labels = 1;
  std::vector<double> labels;

  std::size_t size() const noexcept { return images.size(); }
  double label(std::size_t row, std::size_t k) const { return labels[row * n_labels + k]; }

  void push_back(Image img, const std::vector<double>& y) {
    if (y.size() != n_labels) throw std::invalid_argument("dataset: label width mismatch");
    images.push_back(std::move(img));
    labels.insert(labels.end(), y.begin(), y.end());
  }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset d;
    d.n_labels = n_labels;
    for (auto r : rows)
      d.push_back(images[r], std::vector<double>(labels.begin() + static_cast<long>(r * n_labels),
                                                 labels.begin() + static_cast<long>((r + 1) * n_labels)));
    return d;
  }
};

enum class Method { Regular, OneCycle };
enum class TransferMode { None, FeatureExtractor, FineTuneAll, GradualUnfreeze };

inline const char* to_string(Method m) { return m == Method::Regular ? "regular" : "one_cycle"; }

inline const char* to_string(TransferMode t) {
  switch (t) {
    case TransferMode::None: return "none";
    case TransferMode::FeatureExtractor: return "feature_extractor";
    case TransferMode::FineTuneAll: return "fine_tune_all";
    case TransferMode::GradualUnfreeze: return "gradual_unfreeze";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "regular") return Method::Regular;
  if (s == "one_cycle" || s == "onecycle") return Method::OneCycle;
  throw std::invalid_argument("unknown training method '" + s + "'");
}

inline TransferMode parse_transfer(const std::string& s) {
  if (s == "none") return TransferMode::None;
  if (s == "feature_extractor") return TransferMode::FeatureExtractor;
  if (s == "fine_tune_all") return TransferMode::FineTuneAll;
  if (s == "gradual_unfreeze") return TransferMode::GradualUnfreeze;
  throw std::invalid_argument("unknown transfer mode '" + s + "'");
}

struct TrainConfig {
  Method method = Method::OneCycle;
  TransferMode transfer_mode = TransferMode::None;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double max_lr = 0.01;
  std::uint64_t seed = 0;
  double regular_momentum = 0.9;
  double m_high = 0.95;
  double m_low = 0.85;
  bool augment = true;
  aug::AugmentConfig augment_cfg{};
  bool tta = true;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr_snapshot = 0.0;
};

struct TrainResult {
  cnn::ModelParams best_params;
  std::vector<double> val_loss_curve;
  std::size_t best_epoch = 0;
  std::optional<double> test_auc;
  std::vector<EpochLog> log;
};

inline void write_epoch_log_csv(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,train_loss,val_loss,lr_snapshot\n";
  const auto old = os.precision(17);
  for (const auto& e : log) os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr_snapshot << '\n';
  os.precision(old);
}

inline constexpr double kPixelCenter = 127.5;
inline constexpr double kPixelScale = 64.0;

/// [N,1,H,W] tensor of centered intensities, (p - 127.5) / 64.
inline nd::Tensor to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: empty batch");
  const std::size_t h = images.front().height, w = images.front().width;
  nd::Tensor t({images.size(), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height != h || images[n].width != w) throw std::invalid_argument("to_tensor: mixed image sizes in batch");
    for (std::size_t i = 0; i < h * w; ++i) t[n * h * w + i] = (images[n].pixels[i] - kPixelCenter) / kPixelScale;
  }
  return t;
}

// ------------------------------------------------------------------- SGD

/// One velocity buffer per parameter tensor, in for_each_layer order (weight, bias).
struct Velocity {
  std::vector<std::vector<double>> buffers;

  explicit Velocity(const cnn::ModelParams& params) {
    params.for_each_layer([&](const cnn::LayerGroup&, const cnn::Layer& l) {
      buffers.emplace_back(l.weight.size(), 0.0);
      buffers.emplace_back(l.bias.size(), 0.0);
    });
  }
};

/// v <- momentum*v + grad; w <- w - lr_group*v. Frozen groups (and tensors
/// without a gradient) are left untouched.
inline void sgd_step(cnn::ModelParams& params, Velocity& velocity, const std::array<double, 3>& group_lr, double momentum) {
  std::size_t k = 0;
  auto update = [&](const cnn::LayerGroup& g, nd::Tensor& t) {
    auto& v = velocity.buffers.at(k++);
    if (g.frozen || !t.has_grad()) return;
    const double lr = group_lr[static_cast<std::size_t>(g.index - 1)];
    const auto& grad = t.grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      v[i] = momentum * v[i] + grad[i];
      t[i] -= lr * v[i];
    }
  };
  params.for_each_layer([&](const cnn::LayerGroup& g, cnn::Layer& l) {
    update(g, l.weight);
    update(g, l.bias);
  });
}

// ------------------------------------------------------------ freeze plans

struct IterationPlan {
  std::array<double, 3> lr{};
  std::array<bool, 3> frozen{};
  double momentum = 0.0;
};

/// The per-iteration learning rate, momentum and freeze state for a run.
class TrainingSchedule {
 public:
  TrainingSchedule(Method method, TransferMode mode, std::size_t max_iter, double max_lr, double m_high = 0.95,
                   double m_low = 0.85, double regular_momentum = 0.9)
      : method_(method), mode_(mode), max_lr_(max_lr), regular_momentum_(regular_momentum) {
    if (mode == TransferMode::GradualUnfreeze && method == Method::Regular)
      throw std::invalid_argument("gradual_unfreeze is defined over one-cycle iterations; use method=one_cycle");
    if (method == Method::OneCycle) {
      const auto base = sched::make_one_cycle(max_lr, max_iter, m_high, m_low);
      plan_ = mode == TransferMode::GradualUnfreeze ? sched::make_group_plan(base) : sched::make_uniform_plan(base);
    }
  }

  Method method() const noexcept { return method_; }
  TransferMode mode() const noexcept { return mode_; }

  /// `regular_lr` is the current decay-on-plateau rate (ignored for one-cycle).
  IterationPlan at(std::size_t i, double regular_lr) const {
    IterationPlan p;
    if (method_ == Method::OneCycle) {
      const auto g = sched::group_schedule(i, plan_);
      for (std::size_t k = 0; k < 3; ++k) {
        p.lr[k] = g[k].lr;
        p.frozen[k] = g[k].frozen;
      }
      p.momentum = sched::one_cycle_momentum(i, plan_.base);
    } else {
      p.lr = {regular_lr, regular_lr, regular_lr};
      p.momentum = regular_momentum_;
    }
    if (mode_ == TransferMode::FeatureExtractor) p.frozen = {true, true, false};
    return p;
  }

  double max_lr() const noexcept { return max_lr_; }

 private:
  Method method_;
  TransferMode mode_;
  double max_lr_;
  double regular_momentum_;
  sched::GroupPlan plan_{};
};

inline TrainingSchedule apply_transfer_mode(TransferMode mode, const TrainConfig& cfg, std::size_t max_iter) {
  return TrainingSchedule(cfg.method, mode, max_iter, cfg.max_lr, cfg.m_high, cfg.m_low, cfg.regular_momentum);
}

inline void set_frozen(cnn::ModelParams& params, const std::array<bool, 3>& frozen) {
  for (std::size_t g = 0; g < 3; ++g) params.groups[g].frozen = frozen[g];
  params.sync_requires_grad();
}

// -------------------------------------------------------------- evaluation

namespace detail {
inline double bce(const std::vector<double>& p, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], nd::Graph::kBceClamp, 1.0 - nd::Graph::kBceClamp);
    s -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return s;
}
}  // namespace detail

inline constexpr std::size_t kEvalBatch = 32;

/// Row-major N x n_labels probabilities on center crops.
inline std::vector<double> predict_dataset(const cnn::ModelParams& params, const Dataset& data, std::size_t crop) {
  std::vector<double> out;
  out.reserve(data.size() * params.n_labels);
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    std::vector<Image> batch;
    for (std::size_t i = start; i < std::min(data.size(), start + kEvalBatch); ++i)
      batch.push_back(aug::center_crop(data.images[i], crop));
    const auto p = cnn::predict(params, to_tensor(batch));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

/// Mean binary cross-entropy over labels and rows.
inline double evaluate_loss(const cnn::ModelParams& params, const Dataset& data, std::size_t crop) {
  const auto p = predict_dataset(params, data, crop);
  return detail::bce(p, data.labels) / static_cast<double>(p.size());
}

/// Row-major N x n_labels test-time-augmented probabilities.
inline std::vector<double> predict_tta(const cnn::ModelParams& params, const Dataset& data, const aug::AugmentConfig& cfg,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> out;
  auto predict_one = [&](const Image& img) { return cnn::predict(params, to_tensor({img})); };
  for (const auto& img : data.images) {
    const auto r = aug::tta_predict(predict_one, img, rng, cfg);
    out.insert(out.end(), r.mean.begin(), r.mean.end());
  }
  return out;
}

inline metrics::MeanAuc dataset_auc(const std::vector<double>& probs, const Dataset& data) {
  std::vector<metrics::ScoredSet> sets(data.n_labels);
  for (std::size_t r = 0; r < data.size(); ++r)
    for (std::size_t k = 0; k < data.n_labels; ++k) {
      sets[k].scores.push_back(probs[r * data.n_labels + k]);
      sets[k].labels.push_back(data.label(r, k) != 0.0);
    }
  return metrics::mean_label_auc(sets);
}

// ------------------------------------------------------------------ training

namespace detail {

struct BatchRunner {
  const Dataset& data;
  const TrainConfig& cfg;
  std::mt19937_64& rng;

  std::vector<Image> inputs(const std::vector<std::size_t>& rows) {
    std::vector<Image> batch;
    for (auto r : rows)
      batch.push_back(cfg.augment ? aug::random_augment(data.images[r], rng, cfg.augment_cfg)
                                  : aug::center_crop(data.images[r], cfg.augment_cfg.crop));
    return batch;
  }

  /// Forward + backward on one mini-batch; leaves gradients on the params.
  double loss_and_grad(cnn::ModelParams& params, const std::vector<std::size_t>& rows) {
    params.zero_grad();
    nd::Graph g;
    const auto probs = cnn::forward(g, params, to_tensor(inputs(rows)));
    std::vector<double> y;
    for (auto r : rows)
      for (std::size_t k = 0; k < data.n_labels; ++k) y.push_back(data.label(r, k));
    const auto target = g.constant(nd::Tensor({rows.size(), data.n_labels}, std::move(y)));
    const auto loss = g.bce_loss(probs, target);
    g.backward(loss);
    return g.value(loss)[0];
  }
};

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch_size)
    out.emplace_back(order.begin() + static_cast<long>(s), order.begin() + static_cast<long>(std::min(n, s + batch_size)));
  return out;
}

}  // namespace detail

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

/// Trains `model` for cfg.epochs epochs and returns the parameters of the
/// epoch with the lowest validation loss. When `test` is given, its
/// (optionally test-time-augmented) mean label AUC is evaluated on those
/// parameters.
inline TrainResult train(cnn::ModelParams model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                         const Dataset* test = nullptr) {
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw std::invalid_argument("train: epochs and batch_size must be >= 1");
  if (train_set.size() == 0 || val_set.size() == 0) throw std::invalid_argument("train: empty train or validation set");
  if (train_set.n_labels != model.n_labels || val_set.n_labels != model.n_labels)
    throw std::invalid_argument("train: dataset label width differs from the model head");
  const std::size_t crop = cfg.augment_cfg.crop;
  const std::size_t per_epoch = batches_per_epoch(train_set.size(), cfg.batch_size);
  const std::size_t max_iter = std::max<std::size_t>(per_epoch * cfg.epochs, 2);
  const TrainingSchedule schedule = apply_transfer_mode(cfg.transfer_mode, cfg, max_iter);

  std::mt19937_64 rng(cfg.seed);
  detail::BatchRunner runner{train_set, cfg, rng};
  Velocity velocity(model);
  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  double regular_lr = cfg.max_lr;
  std::size_t it = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    IterationPlan plan;
    for (const auto& rows : detail::epoch_batches(train_set.size(), cfg.batch_size, rng)) {
      plan = schedule.at(it, regular_lr);
      set_frozen(model, plan.frozen);
      const double loss = runner.loss_and_grad(model, rows);
      if (!std::isfinite(loss))
        throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(it) + " (epoch " +
                                 std::to_string(epoch) + ")");
      sgd_step(model, velocity, plan.lr, plan.momentum);
      loss_sum += loss * static_cast<double>(rows.size());
      ++it;
    }
    const double val = evaluate_loss(model, val_set, crop);
    if (!std::isfinite(val)) throw std::runtime_error("train: non-finite validation loss after epoch " + std::to_string(epoch));
    result.val_loss_curve.push_back(val);
    result.log.push_back({epoch, loss_sum / static_cast<double>(train_set.size()), val, plan.lr[2]});
    if (val < best) {
      best = val;
      result.best_epoch = epoch;
      result.best_params = model;
    }
    if (cfg.method == Method::Regular) regular_lr = sched::regular_policy(result.val_loss_curve, cfg.max_lr).back();
  }
  result.best_params.zero_grad();
  set_frozen(result.best_params, {false, false, false});
  if (test) {
    const auto probs = cfg.tta ? predict_tta(result.best_params, *test, cfg.augment_cfg, cfg.seed ^ 0x7e57ULL)
                               : predict_dataset(result.best_params, *test, crop);
    result.test_auc = dataset_auc(probs, *test).value;
  }
  return result;
}

/// Learning-rate range test on a copy of `model`: one mini-batch per step,
/// cycling through reshuffled data, with momentum fixed at cfg.regular_momentum.
inline sched::LrFindResult lr_find(cnn::ModelParams model, const Dataset& data, const TrainConfig& cfg,
                                   const sched::LrFindConfig& find_cfg = {}) {
  if (data.size() == 0) throw std::invalid_argument("lr_find: empty data");
  std::mt19937_64 rng(cfg.seed);
  detail::BatchRunner runner{data, cfg, rng};
  Velocity velocity(model);
  std::array<bool, 3> frozen{false, false, false};
  if (cfg.transfer_mode == TransferMode::FeatureExtractor) frozen = {true, true, false};
  set_frozen(model, frozen);
  std::vector<std::vector<std::size_t>> batches;
  std::size_t next = 0;
  auto step = [&](double lr) {
    if (next == batches.size()) {
      batches = detail::epoch_batches(data.size(), cfg.batch_size, rng);
      next = 0;
    }
    const double loss = runner.loss_and_grad(model, batches[next++]);
    sgd_step(model, velocity, {lr, lr, lr}, cfg.regular_momentum);
    return loss;
  };
  return sched::lr_find(step, find_cfg);
}

}  // namespace smalldata::train
