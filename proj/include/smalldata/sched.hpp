#pragma once

// Learning-rate and momentum policies: cosine segments, the one-cycle policy,
// decay-on-plateau, the learning-rate finder, and the three-group
// discriminative / gradual-unfreezing plan.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace smalldata::sched {

struct CosineSegment {
  double lr_start = 0.0;
  double lr_end = 0.0;
  std::size_t T = 1;
};

/// lr_end + (lr_start - lr_end)/2 * (1 + cos(i*pi/T)), for 0 <= i <= T.
inline double cosine(double i, const CosineSegment& seg) {
  if (seg.T < 1) throw std::invalid_argument("cosine: T must be >= 1");
  if (i < 0.0 || i > static_cast<double>(seg.T))
    throw std::out_of_range("cosine: iteration " + std::to_string(i) + " outside [0, " + std::to_string(seg.T) + "]");
  return seg.lr_end + (seg.lr_start - seg.lr_end) / 2.0 * (1.0 + std::cos(i * std::numbers::pi / static_cast<double>(seg.T)));
}

struct OneCyclePlan {
  double max_lr = 1e-2;
  std::size_t max_iter = 100;
  std::size_t cut = 30;
  double m_high = 0.95;
  double m_low = 0.85;

  static constexpr double kStartDiv = 25.0;
  static constexpr double kEndDiv = 25000.0;
};

/// cut = ceil(0.3 * max_iter), computed in integers.
inline std::size_t one_cycle_cut(std::size_t max_iter) { return (3 * max_iter + 9) / 10; }

inline OneCyclePlan make_one_cycle(double max_lr, std::size_t max_iter, double m_high = 0.95, double m_low = 0.85) {
  if (!(max_lr > 0.0)) throw std::invalid_argument("one-cycle: max_lr must be positive");
  if (max_iter < 2) throw std::invalid_argument("one-cycle: max_iter must be >= 2");
  return {max_lr, max_iter, one_cycle_cut(max_iter), m_high, m_low};
}

namespace detail {
inline void check_range(std::size_t i, const OneCyclePlan& plan) {
  if (i > plan.max_iter)
    throw std::out_of_range("one-cycle: iteration " + std::to_string(i) + " > max_iter " + std::to_string(plan.max_iter));
}

inline double two_phase(std::size_t i, const OneCyclePlan& plan, double start, double peak, double end) {
  check_range(i, plan);
  if (i < plan.cut) return cosine(static_cast<double>(i), {start, peak, plan.cut});
  return cosine(static_cast<double>(i - plan.cut), {peak, end, plan.max_iter - plan.cut});
}
}  // namespace detail

inline double one_cycle_lr(std::size_t i, const OneCyclePlan& plan) {
  return detail::two_phase(i, plan, plan.max_lr / OneCyclePlan::kStartDiv, plan.max_lr,
                           plan.max_lr / OneCyclePlan::kEndDiv);
}

inline double one_cycle_momentum(std::size_t i, const OneCyclePlan& plan) {
  return detail::two_phase(i, plan, plan.m_high, plan.m_low, plan.m_high);
}

/// Decay-on-plateau. Entry e is the learning rate in effect after observing the
/// validation loss of epoch e (i.e. the rate for epoch e+1); the first epoch
/// always runs at max_lr.
inline std::vector<double> regular_policy(const std::vector<double>& validation_losses, double max_lr,
                                          double rel_margin = 1e-4, double floor_div = 1000.0) {
  if (!(max_lr > 0.0)) throw std::invalid_argument("regular_policy: max_lr must be positive");
  std::vector<double> out;
  out.reserve(validation_losses.size());
  double lr = max_lr;
  double best = std::numeric_limits<double>::infinity();
  const double floor = max_lr / floor_div;
  for (double loss : validation_losses) {
    if (loss < best * (1.0 - rel_margin) || std::isinf(best)) {
      best = std::min(best, loss);
    } else {
      lr = std::max(lr / 10.0, floor);
    }
    out.push_back(lr);
  }
  return out;
}

struct LrFindConfig {
  double lr_min = 1e-6;
  double lr_max = 1.0;
  std::size_t n_steps = 100;
  double beta = 0.98;
  double diverge_factor = 4.0;
};

struct LrFindResult {
  double max_lr = 0.0;
  std::vector<double> lrs;
  std::vector<double> losses;
  std::vector<double> smoothed;
  std::size_t best_step = 0;
  bool stopped_early = false;
};

/// lr at step k of the geometric sweep, k in [0, n_steps].
inline double lr_find_rate(std::size_t k, const LrFindConfig& cfg) {
  return cfg.lr_min * std::pow(cfg.lr_max / cfg.lr_min, static_cast<double>(k) / static_cast<double>(cfg.n_steps));
}

/// Learning-rate range test. `step(lr)` trains one mini-batch at `lr` and
/// returns its loss. The sweep runs n_steps+1 mini-batches, smooths the loss
/// with a bias-corrected exponential average and stops once the smoothed loss
/// exceeds diverge_factor times the best seen. Returns the lr at the minimum
/// smoothed loss.
template <class StepFn>
LrFindResult lr_find(StepFn&& step, const LrFindConfig& cfg = {}) {
  if (!(cfg.lr_min > 0.0) || !(cfg.lr_min < cfg.lr_max)) throw std::invalid_argument("lr_find: need 0 < lr_min < lr_max");
  if (cfg.n_steps < 1) throw std::invalid_argument("lr_find: n_steps must be >= 1");
  LrFindResult r;
  double avg = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= cfg.n_steps; ++k) {
    const double lr = lr_find_rate(k, cfg);
    const double loss = step(lr);
    if (k == 0 && !std::isfinite(loss)) throw std::runtime_error("lr_find: non-finite loss at step 0");
    avg = cfg.beta * avg + (1.0 - cfg.beta) * loss;
    const double smooth = avg / (1.0 - std::pow(cfg.beta, static_cast<double>(k + 1)));
    r.lrs.push_back(lr);
    r.losses.push_back(loss);
    r.smoothed.push_back(smooth);
    if (!std::isfinite(smooth) || (k > 0 && smooth > cfg.diverge_factor * best)) {
      r.stopped_early = k < cfg.n_steps;
      break;
    }
    if (smooth < best) {
      best = smooth;
      r.best_step = k;
    }
  }
  r.max_lr = r.lrs[r.best_step];
  return r;
}

struct GroupPlan {
  OneCyclePlan base;
  std::array<double, 3> group_scales{1.0 / 9.0, 1.0 / 3.0, 1.0};
  std::array<std::size_t, 3> unfreeze_at{0, 0, 0};
};

/// Group 3 trains from the start, group 2 unfreezes after 10% of the
/// iterations and group 1 after 20% (thresholds rounded up).
inline GroupPlan make_group_plan(const OneCyclePlan& base) {
  GroupPlan g;
  g.base = base;
  g.unfreeze_at = {(base.max_iter + 4) / 5, (base.max_iter + 9) / 10, 0};
  return g;
}

struct GroupState {
  double lr = 0.0;
  bool frozen = false;
};

inline std::array<GroupState, 3> group_schedule(std::size_t i, const GroupPlan& plan) {
  const double base = one_cycle_lr(i, plan.base);
  std::array<GroupState, 3> out;
  for (std::size_t g = 0; g < 3; ++g) out[g] = {base * plan.group_scales[g], i < plan.unfreeze_at[g]};
  return out;
}

/// CSV: iteration,lr_g1,lr_g2,lr_g3,momentum,frozen_g1,frozen_g2,frozen_g3
inline void write_schedule_csv(std::ostream& os, const GroupPlan& plan) {
  os << "iteration,lr_g1,lr_g2,lr_g3,momentum,frozen_g1,frozen_g2,frozen_g3\n";
  const auto old = os.precision(17);
  for (std::size_t i = 0; i <= plan.base.max_iter; ++i) {
    const auto s = group_schedule(i, plan);
    os << i << ',' << s[0].lr << ',' << s[1].lr << ',' << s[2].lr << ',' << one_cycle_momentum(i, plan.base) << ','
       << s[0].frozen << ',' << s[1].frozen << ',' << s[2].frozen << '\n';
  }
  os.precision(old);
}

/// A uniform plan (all scales 1, nothing frozen) for plain one-cycle training.
inline GroupPlan make_uniform_plan(const OneCyclePlan& base) {
  GroupPlan g;
  g.base = base;
  g.group_scales = {1.0, 1.0, 1.0};
  return g;
}

}  // namespace smalldata::sched
