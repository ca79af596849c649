#pragma once

// Classical learners over feature vectors: penalized logistic regression
// (lasso / ridge / elastic net via proximal gradient) and a CART random
// forest, tuned with stratified k-fold cross-validation and random search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smalldata/metrics.hpp"

namespace smalldata::base {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  const double* row(std::size_t r) const { return values.data() + r * cols; }

  Matrix select_rows(const std::vector<std::size_t>& idx) const {
    Matrix out(idx.size(), cols);
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(row(idx[i]), cols, out.values.begin() + i * cols);
    return out;
  }
};

template <class T>
std::vector<T> select(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

// ---------------------------------------------------------------- scaling

struct Scaler {
  std::vector<double> mean;
  std::vector<double> scale;  // 0 for zero-variance columns

  Matrix apply(const Matrix& X) const {
    if (X.cols != mean.size()) throw std::invalid_argument("scaler: column count mismatch");
    Matrix out = X;
    for (std::size_t r = 0; r < X.rows; ++r)
      for (std::size_t c = 0; c < X.cols; ++c) out(r, c) = scale[c] == 0.0 ? 0.0 : (X(r, c) - mean[c]) / scale[c];
    return out;
  }
};

/// Per-column zero mean, unit population variance; constant columns map to 0.
inline Scaler fit_scaler(const Matrix& X) {
  if (X.rows < 2) throw std::invalid_argument("standardize: need at least 2 rows");
  Scaler s{std::vector<double>(X.cols, 0.0), std::vector<double>(X.cols, 0.0)};
  for (std::size_t c = 0; c < X.cols; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r) m += X(r, c);
    m /= static_cast<double>(X.rows);
    double v = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r) v += (X(r, c) - m) * (X(r, c) - m);
    v /= static_cast<double>(X.rows);
    s.mean[c] = m;
    s.scale[c] = v > 0.0 ? std::sqrt(v) : 0.0;
  }
  return s;
}

inline std::pair<Matrix, Scaler> standardize(const Matrix& X) {
  Scaler s = fit_scaler(X);
  return {s.apply(X), std::move(s)};
}

// ------------------------------------------------- penalized logistic regression

struct ElasticNetConfig {
  double lambda = 0.0;
  double alpha = 1.0;  // 1 = lasso, 0 = ridge
};

struct FitOptions {
  double tol = 1e-8;
  std::size_t max_iter = 100000;
  bool record_objective = false;
};

struct LogisticModel {
  std::vector<double> weights;
  double intercept = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;

  std::vector<double> predict_proba(const Matrix& X) const {
    std::vector<double> p(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) {
      double m = intercept;
      for (std::size_t c = 0; c < X.cols; ++c) m += weights[c] * X(r, c);
      p[r] = m >= 0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
    }
    return p;
  }
};

namespace detail {

inline double log1pexp(double m) { return m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m)); }
inline double sigmoid(double m) { return m >= 0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m)); }

// Mean logistic loss plus the ridge part; fills the gradient when asked.
inline double smooth_part(const Matrix& X, const std::vector<int>& y, const std::vector<double>& w, double b,
                          double ridge, std::vector<double>* gw, double* gb) {
  const double n = static_cast<double>(X.rows);
  double loss = 0.0;
  if (gw) std::fill(gw->begin(), gw->end(), 0.0);
  if (gb) *gb = 0.0;
  for (std::size_t r = 0; r < X.rows; ++r) {
    double m = b;
    const double* x = X.row(r);
    for (std::size_t c = 0; c < X.cols; ++c) m += w[c] * x[c];
    loss += log1pexp(m) - (y[r] ? m : 0.0);
    if (gw) {
      const double e = sigmoid(m) - (y[r] ? 1.0 : 0.0);
      for (std::size_t c = 0; c < X.cols; ++c) (*gw)[c] += e * x[c];
      *gb += e;
    }
  }
  double sq = 0.0;
  for (double v : w) sq += v * v;
  if (gw) {
    for (std::size_t c = 0; c < X.cols; ++c) (*gw)[c] = (*gw)[c] / n + ridge * w[c];
    *gb /= n;
  }
  return loss / n + 0.5 * ridge * sq;
}

inline double soft_threshold(double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); }

}  // namespace detail

/// Full penalized objective: mean logistic loss + lambda*(alpha*|w|_1 + (1-alpha)/2*|w|_2^2).
inline double elastic_net_objective(const Matrix& X, const std::vector<int>& y, const std::vector<double>& w, double b,
                                    const ElasticNetConfig& cfg) {
  double l1 = 0.0;
  for (double v : w) l1 += std::fabs(v);
  return detail::smooth_part(X, y, w, b, cfg.lambda * (1.0 - cfg.alpha), nullptr, nullptr) + cfg.lambda * cfg.alpha * l1;
}

/// Proximal gradient with backtracking; the intercept is unpenalized. Stops
/// once the largest parameter change falls below opts.tol.
inline LogisticModel fit_logistic_en(const Matrix& X, const std::vector<int>& y, const ElasticNetConfig& cfg,
                                     const FitOptions& opts = {}) {
  if (X.rows != y.size()) throw std::invalid_argument("fit_logistic_en: X and y differ in rows");
  if (X.rows == 0) throw std::invalid_argument("fit_logistic_en: empty data");
  for (double v : X.values)
    if (!std::isfinite(v)) throw std::invalid_argument("fit_logistic_en: non-finite feature value");
  if (cfg.lambda < 0.0 || cfg.alpha < 0.0 || cfg.alpha > 1.0) throw std::invalid_argument("fit_logistic_en: bad penalty config");

  const std::size_t p = X.cols;
  const double ridge = cfg.lambda * (1.0 - cfg.alpha);
  const double l1 = cfg.lambda * cfg.alpha;
  LogisticModel model;
  model.weights.assign(p, 0.0);
  auto& w = model.weights;
  double& b = model.intercept;

  std::vector<double> gw(p), wn(p);
  double gb = 0.0;
  double step = 1.0;
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    const double f = detail::smooth_part(X, y, w, b, ridge, &gw, &gb);
    if (opts.record_objective) model.objective_trace.push_back(elastic_net_objective(X, y, w, b, cfg));
    step = std::min(step * 2.0, 1e6);
    double bn = 0.0;
    for (int tries = 0; tries < 200; ++tries) {
      for (std::size_t c = 0; c < p; ++c) wn[c] = detail::soft_threshold(w[c] - step * gw[c], step * l1);
      bn = b - step * gb;
      double lin = (bn - b) * gb, quad = (bn - b) * (bn - b);
      for (std::size_t c = 0; c < p; ++c) {
        lin += (wn[c] - w[c]) * gw[c];
        quad += (wn[c] - w[c]) * (wn[c] - w[c]);
      }
      const double fn = detail::smooth_part(X, y, wn, bn, ridge, nullptr, nullptr);
      if (fn <= f + lin + quad / (2.0 * step) + 1e-15 * std::fabs(f)) break;
      step /= 2.0;
    }
    double change = std::fabs(bn - b);
    for (std::size_t c = 0; c < p; ++c) change = std::max(change, std::fabs(wn[c] - w[c]));
    w.swap(wn);
    b = bn;
    model.iterations = it + 1;
    if (change < opts.tol) {
      model.converged = true;
      break;
    }
  }
  if (opts.record_objective) model.objective_trace.push_back(elastic_net_objective(X, y, w, b, cfg));
  return model;
}

/// Smallest lambda for which the lasso solution is all-zero: max_j |mean(x_j (y - ybar))|.
inline double lasso_lambda_max(const Matrix& X, const std::vector<int>& y) {
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double best = 0.0;
  for (std::size_t c = 0; c < X.cols; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r) s += X(r, c) * (y[r] - ybar);
    best = std::max(best, std::fabs(s / static_cast<double>(X.rows)));
  }
  return best;
}

// ------------------------------------------------------------------ forest

struct ForestConfig {
  std::size_t n_trees = 100;
  std::optional<std::size_t> max_depth;
  std::size_t min_leaf = 1;
  std::size_t features_per_split = 0;  // 0 = ceil(sqrt(p))
  std::uint64_t seed = 0;
  bool bootstrap = true;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // class-1 frequency of the training rows reaching the node
};

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(const double* x) const {
    int k = 0;
    while (nodes[k].feature >= 0) k = x[nodes[k].feature] <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return nodes[k].value;
  }
};

struct Forest {
  std::vector<Tree> trees;

  std::vector<std::vector<double>> per_tree(const Matrix& X) const {
    std::vector<std::vector<double>> out(trees.size(), std::vector<double>(X.rows));
    for (std::size_t t = 0; t < trees.size(); ++t)
      for (std::size_t r = 0; r < X.rows; ++r) out[t][r] = trees[t].predict(X.row(r));
    return out;
  }

  std::vector<double> predict_proba(const Matrix& X) const {
    std::vector<double> p(X.rows, 0.0);
    for (const auto& t : trees)
      for (std::size_t r = 0; r < X.rows; ++r) p[r] += t.predict(X.row(r));
    for (auto& v : p) v /= static_cast<double>(trees.size());
    return p;
  }
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, const std::vector<int>& y, const ForestConfig& cfg, std::mt19937_64& rng)
      : X_(X), y_(y), cfg_(cfg), rng_(rng) {
    mtry_ = cfg.features_per_split ? std::min(cfg.features_per_split, X.cols)
                                   : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(X.cols))));
    mtry_ = std::max<std::size_t>(mtry_, 1);
    features_.resize(X.cols);
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  Tree build(std::vector<std::size_t> rows) {
    Tree t;
    grow(t, rows, 0);
    return t;
  }

 private:
  int grow(Tree& t, std::vector<std::size_t>& rows, std::size_t depth) {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    std::size_t pos = 0;
    for (auto r : rows) pos += y_[r] != 0;
    t.nodes[id].value = static_cast<double>(pos) / static_cast<double>(rows.size());
    const bool pure = pos == 0 || pos == rows.size();
    const bool depth_cap = cfg_.max_depth && depth >= *cfg_.max_depth;
    if (pure || depth_cap || rows.size() < 2 * cfg_.min_leaf) return id;

    // partial Fisher-Yates for a random feature subset
    for (std::size_t k = 0; k < mtry_; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, features_.size() - 1);
      std::swap(features_[k], features_[pick(rng_)]);
    }
    const double n = static_cast<double>(rows.size());
    const double parent = gini(static_cast<double>(pos), n);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> col(rows.size());
    for (std::size_t k = 0; k < mtry_; ++k) {
      const std::size_t f = features_[k];
      for (std::size_t i = 0; i < rows.size(); ++i) col[i] = {X_(rows[i], f), y_[rows[i]]};
      std::sort(col.begin(), col.end());
      double left_pos = 0.0;
      for (std::size_t i = 0; i + 1 < col.size(); ++i) {
        left_pos += col[i].second != 0;
        const std::size_t nl = i + 1, nr = col.size() - nl;
        if (col[i].first == col[i + 1].first || nl < cfg_.min_leaf || nr < cfg_.min_leaf) continue;
        const double gl = gini(left_pos, static_cast<double>(nl));
        const double gr = gini(static_cast<double>(pos) - left_pos, static_cast<double>(nr));
        const double gain = parent - (static_cast<double>(nl) * gl + static_cast<double>(nr) * gr) / n;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = (col[i].first + col[i + 1].first) / 2.0;
        }
      }
    }
    if (best_feature < 0) return id;
    std::vector<std::size_t> left, right;
    for (auto r : rows) (X_(r, static_cast<std::size_t>(best_feature)) <= best_threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    t.nodes[id].feature = best_feature;
    t.nodes[id].threshold = best_threshold;
    const int l = grow(t, left, depth + 1);
    const int r = grow(t, right, depth + 1);
    t.nodes[id].left = l;
    t.nodes[id].right = r;
    return id;
  }

  static double gini(double pos, double n) {
    const double p = pos / n;
    return 2.0 * p * (1.0 - p);
  }

  const Matrix& X_;
  const std::vector<int>& y_;
  const ForestConfig& cfg_;
  std::mt19937_64& rng_;
  std::size_t mtry_ = 1;
  std::vector<std::size_t> features_;
};

}  // namespace detail

/// Bootstrap-sampled CART trees with Gini splits over random feature subsets.
inline Forest fit_forest(const Matrix& X, const std::vector<int>& y, const ForestConfig& cfg) {
  if (cfg.n_trees < 1) throw std::invalid_argument("fit_forest: n_trees must be >= 1");
  if (X.rows == 0 || X.rows != y.size()) throw std::invalid_argument("fit_forest: bad training data");
  std::mt19937_64 rng(cfg.seed);
  detail::TreeBuilder builder(X, y, cfg, rng);
  Forest forest;
  std::uniform_int_distribution<std::size_t> pick(0, X.rows - 1);
  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    std::vector<std::size_t> rows(X.rows);
    if (cfg.bootstrap)
      for (auto& r : rows) r = pick(rng);
    else
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    forest.trees.push_back(builder.build(std::move(rows)));
  }
  return forest;
}

// --------------------------------------------------------------- families

enum class Family { Lasso, Ridge, ElasticNet, Forest };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::Lasso: return "lasso";
    case Family::Ridge: return "ridge";
    case Family::ElasticNet: return "elastic_net";
    case Family::Forest: return "forest";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "lasso") return Family::Lasso;
  if (s == "ridge") return Family::Ridge;
  if (s == "elastic_net" || s == "elasticnet") return Family::ElasticNet;
  if (s == "forest" || s == "random_forest") return Family::Forest;
  throw std::invalid_argument("unknown baseline family '" + s + "'");
}

struct Candidate {
  Family family = Family::Lasso;
  ElasticNetConfig en;
  ForestConfig forest;

  std::string describe() const {
    if (family == Family::Forest)
      return std::string("forest n_trees=") + std::to_string(forest.n_trees) +
             " max_depth=" + (forest.max_depth ? std::to_string(*forest.max_depth) : "none") +
             " min_leaf=" + std::to_string(forest.min_leaf);
    std::ostringstream os;
    os.precision(17);
    os << to_string(family) << " lambda=" << en.lambda << " alpha=" << en.alpha;
    return os.str();
  }
};

struct BaselineModel {
  Candidate candidate;
  Scaler scaler;
  LogisticModel logistic;
  Forest forest;

  std::vector<double> predict_proba(const Matrix& X) const {
    if (candidate.family == Family::Forest) return forest.predict_proba(X);
    return logistic.predict_proba(scaler.apply(X));
  }

  /// Plain-text dump of coefficients or tree structure.
  void dump(std::ostream& os) const {
    os.precision(17);
    os << candidate.describe() << '\n';
    if (candidate.family != Family::Forest) {
      os << "intercept " << logistic.intercept << '\n';
      for (std::size_t c = 0; c < logistic.weights.size(); ++c)
        os << "w " << c << ' ' << logistic.weights[c] << " mean " << scaler.mean[c] << " scale " << scaler.scale[c] << '\n';
      return;
    }
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
      os << "tree " << t << ' ' << forest.trees[t].nodes.size() << '\n';
      for (std::size_t k = 0; k < forest.trees[t].nodes.size(); ++k) {
        const auto& n = forest.trees[t].nodes[k];
        if (n.feature < 0)
          os << "  " << k << " leaf " << n.value << '\n';
        else
          os << "  " << k << " split f" << n.feature << " <= " << n.threshold << " -> " << n.left << ',' << n.right << '\n';
      }
    }
  }
};

inline BaselineModel fit_baseline(const Matrix& X, const std::vector<int>& y, const Candidate& c) {
  BaselineModel m;
  m.candidate = c;
  if (c.family == Family::Forest) {
    m.forest = fit_forest(X, y, c.forest);
    return m;
  }
  m.scaler = fit_scaler(X);
  m.logistic = fit_logistic_en(m.scaler.apply(X), y, c.en);
  return m;
}

// ------------------------------------------------------------------ tuning

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
inline std::vector<std::size_t> stratified_folds(const std::vector<int>& y, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos : neg).push_back(i);
  if (pos.size() < k || neg.size() < k)
    throw std::invalid_argument("tune: each class needs at least k=" + std::to_string(k) + " rows (have " +
                                std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) + " negative)");
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::size_t> fold(y.size());
  for (std::size_t i = 0; i < pos.size(); ++i) fold[pos[i]] = i % k;
  for (std::size_t i = 0; i < neg.size(); ++i) fold[neg[i]] = i % k;
  return fold;
}

inline double cv_auc(const Matrix& X, const std::vector<int>& y, const Candidate& c, const std::vector<std::size_t>& fold,
                     std::size_t k) {
  double sum = 0.0;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? va : tr).push_back(i);
    const auto model = fit_baseline(X.select_rows(tr), select(y, tr), c);
    sum += metrics::auc(model.predict_proba(X.select_rows(va)), select(y, va));
  }
  return sum / static_cast<double>(k);
}

struct TuneResult {
  Candidate best;
  double cv_auc = 0.0;
  std::vector<std::pair<Candidate, double>> scored;
};

namespace detail {
// Orders tied candidates: smaller lambda, then smaller forest.
inline bool simpler(const Candidate& a, const Candidate& b) {
  if (a.family != Family::Forest || b.family != Family::Forest) return a.en.lambda < b.en.lambda;
  if (a.forest.n_trees != b.forest.n_trees) return a.forest.n_trees < b.forest.n_trees;
  const std::size_t da = a.forest.max_depth.value_or(std::numeric_limits<std::size_t>::max());
  const std::size_t db = b.forest.max_depth.value_or(std::numeric_limits<std::size_t>::max());
  return da < db;
}
}  // namespace detail

/// Scores each candidate by mean stratified k-fold AUC and keeps the best.
inline TuneResult tune_candidates(const Matrix& X, const std::vector<int>& y, const std::vector<Candidate>& candidates,
                                  std::size_t k, std::uint64_t seed) {
  if (candidates.empty()) throw std::invalid_argument("tune: no candidates");
  const auto fold = stratified_folds(y, k, seed);
  TuneResult r;
  bool have = false;
  for (const auto& c : candidates) {
    const double score = cv_auc(X, y, c, fold, k);
    r.scored.emplace_back(c, score);
    if (!have || score > r.cv_auc || (score == r.cv_auc && detail::simpler(c, r.best))) {
      r.best = c;
      r.cv_auc = score;
      have = true;
    }
  }
  return r;
}

/// Random-search draws for one family:
///   lambda ~ log-uniform[1e-5, 1e2]; alpha ~ U[0,1] (elastic net only);
///   forest: n_trees in {100..500}, max_depth in {2..16, none}, min_leaf in {1..8}.
inline std::vector<Candidate> draw_candidates(Family family, std::size_t n_draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> log_lambda(std::log(1e-5), std::log(1e2));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> trees(100, 500), depth(2, 17), leaf(1, 8);
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < n_draws; ++i) {
    Candidate c;
    c.family = family;
    switch (family) {
      case Family::Lasso: c.en = {std::exp(log_lambda(rng)), 1.0}; break;
      case Family::Ridge: c.en = {std::exp(log_lambda(rng)), 0.0}; break;
      case Family::ElasticNet: {
        const double lambda = std::exp(log_lambda(rng));
        c.en = {lambda, unit(rng)};
        break;
      }
      case Family::Forest: {
        c.forest.n_trees = trees(rng);
        const std::size_t d = depth(rng);
        if (d <= 16) c.forest.max_depth = d;
        c.forest.min_leaf = leaf(rng);
        c.forest.seed = seed + i;
        break;
      }
    }
    out.push_back(c);
  }
  return out;
}

inline TuneResult tune(const Matrix& X, const std::vector<int>& y, Family family, std::size_t n_draws = 50,
                       std::size_t k = 5, std::uint64_t seed = 0) {
  return tune_candidates(X, y, draw_candidates(family, n_draws, seed), k, seed);
}

}  // namespace smalldata::base
