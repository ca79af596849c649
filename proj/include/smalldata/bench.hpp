#pragma once

// Experiment machinery: manifest ingestion, deterministic 70/10/20 splits,
// balanced evaluation sets and training draws, learning curves over training
// set sizes with an append-only results CSV, curve aggregation and stage-wise
// option comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "smalldata/augment.hpp"
#include "smalldata/baseline.hpp"
#include "smalldata/config.hpp"
#include "smalldata/csv.hpp"
#include "smalldata/image_io.hpp"
#include "smalldata/metrics.hpp"
#include "smalldata/radiomics.hpp"
#include "smalldata/sched.hpp"
#include "smalldata/tinycnn.hpp"
#include "smalldata/trainer.hpp"

namespace smalldata::bench {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// -------------------------------------------------------------- manifest

struct ManifestRow {
  std::string path;
  std::vector<int> labels;
};

struct Manifest {
  std::vector<std::string> label_names;
  std::vector<ManifestRow> rows;
  std::string image_root;

  std::size_t size() const noexcept { return rows.size(); }

  std::size_t label_index(const std::string& name) const {
    for (std::size_t k = 0; k < label_names.size(); ++k)
      if (label_names[k] == name) return k;
    throw std::invalid_argument("manifest has no label column '" + name + "'");
  }

  std::string resolve(std::size_t row) const {
    const std::filesystem::path p(rows.at(row).path);
    if (p.is_absolute() || image_root.empty()) return p.string();
    return (std::filesystem::path(image_root) / p).string();
  }
};

/// Parses `path,label_1,...,label_K`. All problems are collected and
/// reported together, each with its line number.
inline Manifest parse_manifest(std::istream& is, const std::string& image_root = "", bool check_files = true,
                               const std::string& source = "manifest") {
  Manifest m;
  m.image_root = image_root;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> problems;
  auto problem = [&](const std::string& msg) { problems.push_back(source + ":" + std::to_string(lineno) + ": " + msg); };
  std::map<std::string, std::size_t> seen;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    try {
      cells = csv_split(line);
    } catch (const std::exception& e) {
      problem(e.what());
      continue;
    }
    for (auto& c : cells) c = trim(c);
    if (!have_header) {
      if (cells.size() < 2) throw std::runtime_error(source + ":" + std::to_string(lineno) + ": header needs a path column and at least one label column");
      m.label_names.assign(cells.begin() + 1, cells.end());
      have_header = true;
      continue;
    }
    if (cells.size() != m.label_names.size() + 1) {
      problem("expected " + std::to_string(m.label_names.size() + 1) + " fields, got " + std::to_string(cells.size()));
      continue;
    }
    ManifestRow row{cells[0], {}};
    if (row.path.empty()) {
      problem("empty image path");
      continue;
    }
    bool ok = true;
    for (std::size_t k = 1; k < cells.size(); ++k) {
      if (cells[k] != "0" && cells[k] != "1") {
        problem("label '" + m.label_names[k - 1] + "' must be 0 or 1, got '" + cells[k] + "'");
        ok = false;
        continue;
      }
      row.labels.push_back(cells[k] == "1");
    }
    if (auto it = seen.find(row.path); it != seen.end()) {
      problem("duplicate path '" + row.path + "' (first seen on line " + std::to_string(it->second) + ")");
      ok = false;
    } else {
      seen[row.path] = lineno;
    }
    if (ok && check_files) {
      m.rows.push_back(row);
      std::ifstream probe(m.resolve(m.rows.size() - 1), std::ios::binary);
      m.rows.pop_back();
      if (!probe) {
        problem("cannot read image '" + row.path + "'");
        ok = false;
      }
    }
    if (ok) m.rows.push_back(std::move(row));
  }
  if (!have_header) throw std::runtime_error(source + ": empty manifest");
  if (!problems.empty()) {
    std::string msg = "invalid manifest (" + std::to_string(problems.size()) + " problem(s)):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::runtime_error(msg);
  }
  return m;
}

inline Manifest ingest(const std::string& manifest_path, const std::string& image_root = "", bool check_files = true) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("cannot open manifest " + manifest_path);
  return parse_manifest(is, image_root, check_files, manifest_path);
}

inline void write_manifest(std::ostream& os, const Manifest& m) {
  os << "path";
  for (const auto& n : m.label_names) os << ',' << csv_escape(n);
  os << '\n';
  for (const auto& r : m.rows) {
    os << csv_escape(r.path);
    for (int l : r.labels) os << ',' << l;
    os << '\n';
  }
}

// ---------------------------------------------------------------- splits

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct SplitPlan {
  std::vector<std::size_t> train, val, test;  // sorted row indices
  std::uint64_t seed = 0;
};

inline constexpr double kTrainFraction = 0.70;
inline constexpr double kValFraction = 0.10;

/// Uniform random permutation, cut at the 70% and 80% boundaries.
inline SplitPlan split(std::size_t n_rows, std::uint64_t seed) {
  if (n_rows < 10) throw std::invalid_argument("split: need at least 10 rows, got " + std::to_string(n_rows));
  std::vector<std::size_t> perm(n_rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(kTrainFraction * static_cast<double>(n_rows)));
  const auto n_val = static_cast<std::size_t>(std::llround(kValFraction * static_cast<double>(n_rows)));
  SplitPlan p;
  p.seed = seed;
  p.train.assign(perm.begin(), perm.begin() + static_cast<long>(n_train));
  p.val.assign(perm.begin() + static_cast<long>(n_train), perm.begin() + static_cast<long>(n_train + n_val));
  p.test.assign(perm.begin() + static_cast<long>(n_train + n_val), perm.end());
  for (auto* part : {&p.train, &p.val, &p.test}) std::sort(part->begin(), part->end());
  return p;
}

inline SplitPlan split(const Manifest& m, std::uint64_t seed) { return split(m.size(), seed); }

inline void write_split_csv(std::ostream& os, const Manifest& m, const SplitPlan& p) {
  os << "row,path,partition\n";
  std::vector<const char*> part(m.size(), nullptr);
  for (auto r : p.train) part.at(r) = "train";
  for (auto r : p.val) part.at(r) = "val";
  for (auto r : p.test) part.at(r) = "test";
  for (std::size_t r = 0; r < m.size(); ++r) {
    if (!part[r]) throw std::invalid_argument("write_split_csv: row " + std::to_string(r) + " is in no partition");
    os << r << ',' << csv_escape(m.rows[r].path) << ',' << part[r] << '\n';
  }
}

/// Reads a split written by write_split_csv; rows must match the manifest.
inline SplitPlan read_split_csv(std::istream& is, const Manifest& m) {
  SplitPlan p;
  std::string line;
  std::getline(is, line);
  if (trim(line) != "row,path,partition") throw std::runtime_error("split file: unexpected header '" + trim(line) + "'");
  std::vector<bool> seen(m.size(), false);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = csv_split(line);
    const std::string where = "split file line " + std::to_string(lineno) + ": ";
    if (cells.size() != 3) throw std::runtime_error(where + "expected 3 fields");
    std::size_t r = 0;
    try {
      r = std::stoull(cells[0]);
    } catch (const std::exception&) {
      throw std::runtime_error(where + "bad row index '" + cells[0] + "'");
    }
    if (r >= m.size() || seen[r]) throw std::runtime_error(where + "row " + cells[0] + " out of range or repeated");
    if (m.rows[r].path != cells[1]) throw std::runtime_error(where + "path '" + cells[1] + "' does not match the manifest");
    seen[r] = true;
    const std::string& part = cells[2];
    if (part == "train") p.train.push_back(r);
    else if (part == "val") p.val.push_back(r);
    else if (part == "test") p.test.push_back(r);
    else throw std::runtime_error(where + "unknown partition '" + part + "'");
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw std::runtime_error("split file does not cover every manifest row");
  for (auto* part : {&p.train, &p.val, &p.test}) std::sort(part->begin(), part->end());
  return p;
}

// ------------------------------------------------------- balanced sampling

namespace detail {

template <class Rng>
std::vector<std::size_t> draw(std::vector<std::size_t> pool, std::size_t n, Rng& rng) {
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(n, pool.size()));
  return pool;
}

inline void split_by_label(const Manifest& m, const std::vector<std::size_t>& rows, std::size_t label,
                           std::vector<std::size_t>& pos, std::vector<std::size_t>& neg) {
  for (auto r : rows) (m.rows.at(r).labels.at(label) ? pos : neg).push_back(r);
}

}  // namespace detail

/// All positives of `rows` plus an equal-size negative sample drawn without
/// replacement. Warns and keeps every negative when there are too few.
inline std::vector<std::size_t> balance_rows(const Manifest& m, const std::vector<std::size_t>& rows, std::size_t label,
                                             std::uint64_t seed, const std::string& name, std::vector<std::string>& warnings) {
  std::vector<std::size_t> pos, neg;
  detail::split_by_label(m, rows, label, pos, neg);
  if (pos.empty()) throw std::invalid_argument(name + " partition has no positive for label '" + m.label_names.at(label) + "'");
  if (neg.size() < pos.size())
    warnings.push_back(name + ": only " + std::to_string(neg.size()) + " negatives for " + std::to_string(pos.size()) +
                       " positives; keeping all negatives");
  std::mt19937_64 rng(seed);
  auto out = detail::draw(neg, pos.size(), rng);
  out.insert(out.end(), pos.begin(), pos.end());
  std::sort(out.begin(), out.end());
  return out;
}

struct BalancedEval {
  std::vector<std::size_t> val, test;
  std::vector<std::string> warnings;
};

/// Built once per experiment and reused for every method and training size.
inline BalancedEval make_balanced_eval(const Manifest& m, const SplitPlan& plan, std::size_t label, std::uint64_t seed) {
  BalancedEval b;
  b.val = balance_rows(m, plan.val, label, mix_seed(seed, 1), "val", b.warnings);
  b.test = balance_rows(m, plan.test, label, mix_seed(seed, 2), "test", b.warnings);
  return b;
}

struct TrainDraw {
  std::vector<std::size_t> rows;
  std::vector<std::string> warnings;
};

/// n training rows from the train partition. Binary tasks (a label given)
/// draw n/2 positives and n/2 negatives when `balanced`, topping up from the
/// other class with a warning when one class runs short; multi-label tasks
/// draw n rows uniformly. Deterministic in (seed, n).
inline TrainDraw sample_train(const Manifest& m, const SplitPlan& plan, std::optional<std::size_t> label, std::size_t n,
                              std::uint64_t seed, bool balanced = true) {
  if (n == 0) throw std::invalid_argument("sample_train: n must be >= 1");
  if (n > plan.train.size())
    throw std::invalid_argument("sample_train: n=" + std::to_string(n) + " exceeds the " + std::to_string(plan.train.size()) +
                                " training rows available");
  std::mt19937_64 rng(mix_seed(seed, n));
  TrainDraw d;
  if (!label || !balanced) {
    d.rows = detail::draw(plan.train, n, rng);
  } else {
    std::vector<std::size_t> pos, neg;
    detail::split_by_label(m, plan.train, *label, pos, neg);
    std::size_t want_pos = n / 2, want_neg = n - n / 2;
    if (pos.size() < want_pos) {
      want_pos = pos.size();
      want_neg = n - want_pos;
      d.warnings.push_back("n=" + std::to_string(n) + ": only " + std::to_string(pos.size()) + " positives available; drawing " +
                           std::to_string(want_pos) + " positives + " + std::to_string(want_neg) + " negatives");
    } else if (neg.size() < want_neg) {
      want_neg = neg.size();
      want_pos = n - want_neg;
      d.warnings.push_back("n=" + std::to_string(n) + ": only " + std::to_string(neg.size()) + " negatives available; drawing " +
                           std::to_string(want_pos) + " positives + " + std::to_string(want_neg) + " negatives");
    }
    d.rows = detail::draw(pos, want_pos, rng);
    const auto negs = detail::draw(neg, want_neg, rng);
    d.rows.insert(d.rows.end(), negs.begin(), negs.end());
  }
  std::sort(d.rows.begin(), d.rows.end());
  return d;
}

// ------------------------------------------------------------ experiments

enum class ModelKind { Cnn, Baseline };
enum class InitKind { Default, Pretrained, MomentPreserving };

/// One compared method. Text form:
///   baseline:<lasso|ridge|elastic_net|forest>
///   cnn:<regular|one_cycle>[:<transfer mode>[:pretrained|moment]]
/// A transfer mode other than `none` starts from the source checkpoint.
struct MethodSpec {
  ModelKind kind = ModelKind::Cnn;
  train::Method method = train::Method::OneCycle;
  train::TransferMode transfer = train::TransferMode::None;
  InitKind init = InitKind::Default;
  base::Family family = base::Family::Lasso;

  bool needs_checkpoint() const { return kind == ModelKind::Cnn && init != InitKind::Default; }

  std::string name() const {
    if (kind == ModelKind::Baseline) return std::string("baseline:") + base::to_string(family);
    std::string s = std::string("cnn:") + train::to_string(method);
    if (transfer != train::TransferMode::None) s += std::string(":") + train::to_string(transfer);
    if (init == InitKind::MomentPreserving) s += ":moment";
    return s;
  }
};

inline MethodSpec parse_method_spec(const std::string& text) {
  const auto parts = split_list(text, ':');
  if (parts.size() < 2) throw std::invalid_argument("method '" + text + "': expected cnn:<method>... or baseline:<family>");
  MethodSpec m;
  if (parts[0] == "baseline") {
    if (parts.size() != 2) throw std::invalid_argument("method '" + text + "': baseline takes exactly one family");
    m.kind = ModelKind::Baseline;
    m.family = base::parse_family(parts[1]);
    return m;
  }
  if (parts[0] != "cnn") throw std::invalid_argument("method '" + text + "': unknown model kind '" + parts[0] + "'");
  if (parts.size() > 4) throw std::invalid_argument("method '" + text + "': too many fields");
  m.method = train::parse_method(parts[1]);
  if (parts.size() >= 3) m.transfer = train::parse_transfer(parts[2]);
  if (m.transfer != train::TransferMode::None) m.init = InitKind::Pretrained;
  if (parts.size() == 4) {
    if (m.transfer == train::TransferMode::None)
      throw std::invalid_argument("method '" + text + "': an init option needs a transfer mode (e.g. fine_tune_all)");
    if (parts[3] == "moment") m.init = InitKind::MomentPreserving;
    else if (parts[3] != "pretrained") throw std::invalid_argument("method '" + text + "': unknown init '" + parts[3] + "'");
  }
  if (m.transfer == train::TransferMode::GradualUnfreeze && m.method == train::Method::Regular)
    throw std::invalid_argument("method '" + text + "': gradual_unfreeze requires one_cycle");
  return m;
}

inline std::vector<std::size_t> default_sizes() { return {50, 100, 200, 400, 800, 1600, 2000}; }
inline constexpr std::size_t kMinTrainSize = 50;

inline train::TrainConfig auto_lr_config() {
  train::TrainConfig c;
  c.max_lr = 0.0;
  return c;
}

struct ExperimentSpec {
  std::string name = "experiment";
  std::optional<std::string> label;  // binary task on this label; none = multi-label over all labels
  std::vector<std::size_t> sizes = default_sizes();
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds{0};
  std::optional<std::string> source_checkpoint;
  std::uint64_t split_seed = 0;
  train::TrainConfig train_cfg = auto_lr_config();  // max_lr <= 0: found by lr_find at the largest size
  std::size_t image_width = 250;
  bool balanced_train = true;
  std::size_t tune_draws = 50;
  std::size_t tune_folds = 5;
  sched::LrFindConfig lr_find_cfg{};
};

/// Keys accepted by spec_from_config.
inline const std::set<std::string>& experiment_keys() {
  static const std::set<std::string> keys{
      "name", "manifest", "image_root", "label", "sizes", "methods", "seeds", "source_checkpoint", "split_seed", "epochs",
      "batch_size", "max_lr", "image_width", "crop", "max_rotation_deg", "flip_prob", "tta", "augment", "balanced_train",
      "tune_draws", "tune_folds", "results", "curve_out", "report_out", "training_methods", "transfer_methods", "sources",
      "m_high", "m_low", "regular_momentum", "lr_find_steps"};
  return keys;
}

inline ExperimentSpec spec_from_config(const Config& c) {
  c.require_known(experiment_keys());
  ExperimentSpec s;
  s.name = c.get("name", s.name);
  if (c.has("label") && c.get("label") != "multi") s.label = c.get("label");
  if (c.has("sizes")) {
    s.sizes.clear();
    for (auto v : c.get_uint_list("sizes")) s.sizes.push_back(static_cast<std::size_t>(v));
  }
  for (const auto& m : c.get_list("methods")) s.methods.push_back(parse_method_spec(m));
  s.seeds = c.get_uint_list("seeds", s.seeds);
  if (c.has("source_checkpoint")) s.source_checkpoint = c.get("source_checkpoint");
  s.split_seed = c.get_uint("split_seed", s.split_seed);
  auto& t = s.train_cfg;
  t.epochs = c.get_uint("epochs", t.epochs);
  t.batch_size = c.get_uint("batch_size", t.batch_size);
  if (c.get("max_lr", "auto") != "auto") t.max_lr = c.get_double("max_lr");
  t.m_high = c.get_double("m_high", t.m_high);
  t.m_low = c.get_double("m_low", t.m_low);
  t.regular_momentum = c.get_double("regular_momentum", t.regular_momentum);
  t.tta = c.get_bool("tta", t.tta);
  t.augment = c.get_bool("augment", t.augment);
  t.augment_cfg.crop = c.get_uint("crop", t.augment_cfg.crop);
  t.augment_cfg.max_rotation_deg = c.get_double("max_rotation_deg", t.augment_cfg.max_rotation_deg);
  t.augment_cfg.flip_prob = c.get_double("flip_prob", t.augment_cfg.flip_prob);
  s.image_width = c.get_uint("image_width", s.image_width);
  s.balanced_train = c.get_bool("balanced_train", s.balanced_train);
  s.tune_draws = c.get_uint("tune_draws", s.tune_draws);
  s.tune_folds = c.get_uint("tune_folds", s.tune_folds);
  s.lr_find_cfg.n_steps = c.get_uint("lr_find_steps", s.lr_find_cfg.n_steps);
  return s;
}

/// Checks the spec against the manifest and split before any work starts.
inline void validate_spec(const ExperimentSpec& s, const Manifest& m, const SplitPlan& plan) {
  if (s.methods.empty()) throw std::invalid_argument("experiment '" + s.name + "': no methods listed");
  if (s.seeds.empty()) throw std::invalid_argument("experiment '" + s.name + "': no seeds listed");
  if (s.sizes.empty()) throw std::invalid_argument("experiment '" + s.name + "': no training sizes listed");
  if (s.label) m.label_index(*s.label);
  for (auto n : s.sizes)
    if (n < kMinTrainSize || n > plan.train.size())
      throw std::invalid_argument("experiment '" + s.name + "': size " + std::to_string(n) + " outside [" +
                                  std::to_string(kMinTrainSize) + ", " + std::to_string(plan.train.size()) + "]");
  for (const auto& meth : s.methods) {
    if (meth.needs_checkpoint() && !s.source_checkpoint)
      throw std::invalid_argument("method " + meth.name() + " needs source_checkpoint");
    if (meth.transfer == train::TransferMode::GradualUnfreeze && meth.method == train::Method::Regular)
      throw std::invalid_argument("method " + meth.name() + ": gradual_unfreeze requires one_cycle");
  }
}

/// Preprocessed images, cached radiomic features and the fixed evaluation sets
/// of one experiment.
class ExperimentData {
 public:
  ExperimentData(const Manifest& m, const ExperimentSpec& spec)
      : manifest_(m), spec_(spec), plan_(split(m, spec.split_seed)) {
    if (spec.label) {
      labels_ = {m.label_index(*spec.label)};
      auto b = make_balanced_eval(m, plan_, labels_[0], mix_seed(spec.split_seed, 0xba1a));
      val_ = std::move(b.val);
      test_ = std::move(b.test);
      warnings_ = std::move(b.warnings);
    } else {
      labels_.resize(m.label_names.size());
      std::iota(labels_.begin(), labels_.end(), std::size_t{0});
      val_ = plan_.val;
      test_ = plan_.test;
    }
  }

  const Manifest& manifest() const noexcept { return manifest_; }
  const SplitPlan& plan() const noexcept { return plan_; }
  const std::vector<std::size_t>& val_rows() const noexcept { return val_; }
  const std::vector<std::size_t>& test_rows() const noexcept { return test_; }
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  std::optional<std::size_t> binary_label() const {
    return spec_.label ? std::optional<std::size_t>(labels_[0]) : std::nullopt;
  }

  const Image& image(std::size_t row) {
    load_images();
    return images_.at(row);
  }

  const rad::FeatureVector& features(std::size_t row) {
    auto it = features_.find(row);
    if (it == features_.end()) it = features_.emplace(row, rad::extract_features(image(row))).first;
    return it->second;
  }

  /// Seeds the feature cache, e.g. from a feature CSV written earlier.
  void set_features(std::size_t row, const rad::FeatureVector& f) { features_[row] = f; }

  train::Dataset dataset(const std::vector<std::size_t>& rows) {
    train::Dataset d;
    d.n_labels = labels_.size();
    for (auto r : rows) {
      std::vector<double> y;
      for (auto k : labels_) y.push_back(manifest_.rows[r].labels[k]);
      d.push_back(image(r), y);
    }
    return d;
  }

  base::Matrix feature_matrix(const std::vector<std::size_t>& rows) {
    base::Matrix X(rows.size(), rad::kFeatureCount);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& f = features(rows[i]);
      std::copy(f.begin(), f.end(), X.values.begin() + static_cast<long>(i * rad::kFeatureCount));
    }
    return X;
  }

  std::vector<int> label_column(const std::vector<std::size_t>& rows, std::size_t label) const {
    std::vector<int> y;
    for (auto r : rows) y.push_back(manifest_.rows[r].labels[label]);
    return y;
  }

 private:
  void load_images() {
    if (!images_.empty()) return;
    std::vector<Image> raw;
    std::vector<std::pair<std::size_t, std::size_t>> dims;
    for (std::size_t r = 0; r < manifest_.size(); ++r) {
      raw.push_back(read_image(manifest_.resolve(r)));
      dims.emplace_back(raw.back().height, raw.back().width);
    }
    const double aspect = aug::most_common_aspect(dims);
    for (auto& img : raw) images_.push_back(aug::resize_width(img, spec_.image_width, aspect));
  }

  const Manifest& manifest_;
  const ExperimentSpec& spec_;
  SplitPlan plan_;
  std::vector<std::size_t> labels_, val_, test_;
  std::vector<std::string> warnings_;
  std::vector<Image> images_;
  std::map<std::size_t, rad::FeatureVector> features_;
};

// --------------------------------------------------------------- results

struct ResultRow {
  std::string experiment;
  std::string method;
  std::string source = "-";
  std::size_t n_train = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | failed
  double test_auc = std::numeric_limits<double>::quiet_NaN();
  double max_lr = std::numeric_limits<double>::quiet_NaN();
  std::string detail;

  auto key() const { return std::tie(experiment, method, source, n_train, seed); }
};

inline constexpr const char* kResultsHeader = "experiment,method,source,n_train,seed,status,test_auc,max_lr,detail";

inline void write_result_row(std::ostream& os, const ResultRow& r) {
  os << csv_escape(r.experiment) << ',' << csv_escape(r.method) << ',' << csv_escape(r.source) << ',' << r.n_train << ','
     << r.seed << ',' << r.status << ',' << format_double(r.test_auc) << ',' << format_double(r.max_lr) << ','
     << csv_escape(r.detail) << '\n';
}

inline std::vector<ResultRow> read_results(std::istream& is, const std::string& source = "results") {
  std::vector<ResultRow> rows;
  std::string line;
  if (!std::getline(is, line)) return rows;
  if (trim(line) != kResultsHeader) throw std::runtime_error(source + ": unexpected header '" + trim(line) + "'");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto c = csv_split(line);
    if (c.size() != 9) throw std::runtime_error(source + ":" + std::to_string(lineno) + ": expected 9 fields");
    ResultRow r;
    try {
      r.experiment = c[0];
      r.method = c[1];
      r.source = c[2];
      r.n_train = std::stoull(c[3]);
      r.seed = std::stoull(c[4]);
      r.status = c[5];
      if (!c[6].empty()) r.test_auc = std::stod(c[6]);
      if (!c[7].empty()) r.max_lr = std::stod(c[7]);
      r.detail = c[8];
    } catch (const std::logic_error&) {
      throw std::runtime_error(source + ":" + std::to_string(lineno) + ": malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ResultRow> read_results_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) return {};
  return read_results(is, path);
}

struct CurveOptions {
  std::string results_path;  // empty: keep results in memory only
  std::function<void(const std::string&)> log = [](const std::string&) {};
};

namespace detail {

inline std::string source_label(const ExperimentSpec& s, const MethodSpec& m) {
  if (!m.needs_checkpoint() || !s.source_checkpoint) return "-";
  return std::filesystem::path(*s.source_checkpoint).filename().string();
}

inline cnn::ModelParams initial_model(const ExperimentSpec& s, const MethodSpec& m, std::size_t n_labels, std::uint64_t seed,
                                      const std::optional<cnn::ModelParams>& source) {
  auto model = cnn::build_model(s.train_cfg.augment_cfg.crop, n_labels, seed);
  if (m.init == InitKind::Default) return model;
  if (!source) throw std::invalid_argument("method " + m.name() + " needs a source checkpoint");
  cnn::load_pretrained(model, *source, seed);
  if (m.init == InitKind::MomentPreserving) cnn::reinit_moment_preserving(model, mix_seed(seed, 0x3035));
  return model;
}

inline train::TrainConfig cell_config(const ExperimentSpec& s, const MethodSpec& m, std::uint64_t seed, double max_lr) {
  auto cfg = s.train_cfg;
  cfg.method = m.method;
  cfg.transfer_mode = m.transfer;
  cfg.seed = seed;
  cfg.max_lr = max_lr;
  return cfg;
}

}  // namespace detail

/// lr_find over the size-n training draw for one CNN method.
inline sched::LrFindResult find_max_lr(const ExperimentSpec& spec, ExperimentData& data, const MethodSpec& method, std::size_t n,
                                       std::uint64_t seed, const std::optional<cnn::ModelParams>& source) {
  const auto draw = sample_train(data.manifest(), data.plan(), data.binary_label(), n, seed, spec.balanced_train);
  const auto cfg = detail::cell_config(spec, method, seed, 0.0);
  const auto model = detail::initial_model(spec, method, data.labels().size(), seed, source);
  return train::lr_find(model, data.dataset(draw.rows), cfg, spec.lr_find_cfg);
}

/// Trains one CNN cell on the size-n draw; the result carries the test AUC.
inline train::TrainResult train_cnn_cell(const ExperimentSpec& spec, ExperimentData& data, const MethodSpec& method, std::size_t n,
                                         std::uint64_t seed, double max_lr, const std::optional<cnn::ModelParams>& source,
                                         std::vector<std::string>* warnings = nullptr) {
  const auto draw = sample_train(data.manifest(), data.plan(), data.binary_label(), n, seed, spec.balanced_train);
  if (warnings) warnings->insert(warnings->end(), draw.warnings.begin(), draw.warnings.end());
  const auto cfg = detail::cell_config(spec, method, seed, max_lr);
  const auto model = detail::initial_model(spec, method, data.labels().size(), seed, source);
  const auto test_set = data.dataset(data.test_rows());
  return train::train(model, data.dataset(draw.rows), data.dataset(data.val_rows()), cfg, &test_set);
}

/// Per-label baseline tuning on the size-n draw.
inline std::vector<base::TuneResult> tune_baseline(const ExperimentSpec& spec, ExperimentData& data, const MethodSpec& method,
                                                   std::size_t n, std::uint64_t seed) {
  const auto draw = sample_train(data.manifest(), data.plan(), data.binary_label(), n, seed, spec.balanced_train);
  const auto X = data.feature_matrix(draw.rows);
  std::vector<base::TuneResult> out;
  for (auto k : data.labels())
    out.push_back(base::tune(X, data.label_column(draw.rows, k), method.family, spec.tune_draws, spec.tune_folds, mix_seed(seed, k)));
  return out;
}

struct BaselineCell {
  metrics::MeanAuc test_auc;
  std::vector<base::BaselineModel> models;  // one per task label
  std::string detail;
};

/// Fits the given per-label candidates on the size-n draw and scores the test set.
inline BaselineCell baseline_cell(const ExperimentSpec& spec, ExperimentData& data, const std::vector<base::Candidate>& candidates,
                                  std::size_t n, std::uint64_t seed, std::vector<std::string>* warnings = nullptr) {
  if (candidates.size() != data.labels().size()) throw std::invalid_argument("baseline_cell: one candidate per label required");
  const auto draw = sample_train(data.manifest(), data.plan(), data.binary_label(), n, seed, spec.balanced_train);
  if (warnings) warnings->insert(warnings->end(), draw.warnings.begin(), draw.warnings.end());
  const auto X = data.feature_matrix(draw.rows);
  const auto Xt = data.feature_matrix(data.test_rows());
  BaselineCell cell;
  std::vector<metrics::ScoredSet> sets;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    const auto k = data.labels()[j];
    auto cand = candidates[j];
    cand.forest.seed = mix_seed(seed, j);
    cell.models.push_back(base::fit_baseline(X, data.label_column(draw.rows, k), cand));
    sets.push_back({cell.models.back().predict_proba(Xt), data.label_column(data.test_rows(), k)});
    cell.detail += (j ? "; " : "") + cand.describe();
  }
  cell.test_auc = metrics::mean_label_auc(sets);
  return cell;
}

/// Runs every (method, size, seed) cell of `spec`. Cells already present in
/// the results file are reused, new rows are appended, and a failing cell is
/// recorded as `failed` without stopping the sweep. Hyperparameters (the
/// baseline configuration, and max_lr when spec.train_cfg.max_lr <= 0) are
/// tuned once at the largest size with the first seed and reused.
inline std::vector<ResultRow> run_curve(const ExperimentSpec& spec, ExperimentData& data, const CurveOptions& opt = {}) {
  validate_spec(spec, data.manifest(), data.plan());
  for (const auto& w : data.warnings()) opt.log("warning: " + w);

  std::map<std::tuple<std::string, std::string, std::string, std::size_t, std::uint64_t>, ResultRow> done;
  if (!opt.results_path.empty())
    for (auto& r : read_results_file(opt.results_path)) done[r.key()] = r;
  std::unique_ptr<std::ofstream> out;
  auto append = [&](const ResultRow& r) {
    if (opt.results_path.empty()) return;
    if (!out) {
      const bool fresh = !std::filesystem::exists(opt.results_path) || std::filesystem::file_size(opt.results_path) == 0;
      out = std::make_unique<std::ofstream>(opt.results_path, std::ios::app);
      if (!*out) throw std::runtime_error("cannot write results file " + opt.results_path);
      if (fresh) *out << kResultsHeader << '\n';
    }
    write_result_row(*out, r);
    out->flush();
  };

  std::optional<cnn::ModelParams> source;
  const std::size_t largest = *std::max_element(spec.sizes.begin(), spec.sizes.end());
  std::vector<ResultRow> table;

  for (const auto& method : spec.methods) {
    const std::string src = detail::source_label(spec, method);
    std::optional<double> tuned_lr;
    std::optional<std::vector<base::Candidate>> tuned_candidates;
    std::string tune_error;

    auto ensure_tuned = [&]() {
      if (tuned_lr || tuned_candidates || !tune_error.empty()) return;
      try {
        if (method.kind == ModelKind::Baseline) {
          std::vector<base::Candidate> best;
          const auto results = tune_baseline(spec, data, method, largest, spec.seeds.front());
          for (std::size_t j = 0; j < results.size(); ++j) {
            opt.log(method.name() + " label " + data.manifest().label_names[data.labels()[j]] + ": tuned " +
                    results[j].best.describe() + " (cv auc " + format_double(results[j].cv_auc) + ")");
            best.push_back(results[j].best);
          }
          tuned_candidates = std::move(best);
        } else if (spec.train_cfg.max_lr > 0.0) {
          tuned_lr = spec.train_cfg.max_lr;
        } else {
          if (method.needs_checkpoint() && !source) source = cnn::load_checkpoint(*spec.source_checkpoint);
          tuned_lr = find_max_lr(spec, data, method, largest, spec.seeds.front(), source).max_lr;
          opt.log(method.name() + ": lr_find chose max_lr " + format_double(*tuned_lr));
        }
      } catch (const std::exception& e) {
        tune_error = std::string("tuning failed: ") + e.what();
      }
    };

    for (auto n : spec.sizes)
      for (auto seed : spec.seeds) {
        ResultRow row;
        row.experiment = spec.name;
        row.method = method.name();
        row.source = src;
        row.n_train = n;
        row.seed = seed;
        if (auto it = done.find(row.key()); it != done.end()) {
          table.push_back(it->second);
          continue;
        }
        try {
          ensure_tuned();
          if (!tune_error.empty()) throw std::runtime_error(tune_error);
          std::vector<std::string> warnings;
          if (method.kind == ModelKind::Baseline) {
            auto cell = baseline_cell(spec, data, *tuned_candidates, n, seed, &warnings);
            row.test_auc = cell.test_auc.value;
            row.detail = cell.detail;
          } else {
            if (method.needs_checkpoint() && !source) source = cnn::load_checkpoint(*spec.source_checkpoint);
            const auto r = train_cnn_cell(spec, data, method, n, seed, *tuned_lr, source, &warnings);
            row.test_auc = *r.test_auc;
            row.max_lr = *tuned_lr;
            row.detail = "best_epoch=" + std::to_string(r.best_epoch);
          }
          for (const auto& w : warnings) opt.log("warning: " + w);
        } catch (const std::exception& e) {
          row.status = "failed";
          row.test_auc = std::numeric_limits<double>::quiet_NaN();
          row.detail = e.what();
          opt.log("cell " + row.method + " n=" + std::to_string(n) + " seed=" + std::to_string(seed) + " failed: " + e.what());
        }
        opt.log(row.method + " n=" + std::to_string(n) + " seed=" + std::to_string(seed) + " " + row.status +
                (row.status == "ok" ? " auc=" + format_double(row.test_auc) : ""));
        append(row);
        done[row.key()] = row;
        table.push_back(row);
      }
  }
  return table;
}

inline std::vector<ResultRow> run_curve(const ExperimentSpec& spec, const Manifest& m, const CurveOptions& opt = {}) {
  ExperimentData data(m, spec);
  return run_curve(spec, data, opt);
}

// ------------------------------------------------------------ curve data

struct CurvePoint {
  std::string method;
  std::size_t n_train = 0;
  double mean_auc = 0.0;
  double stderr_auc = 0.0;  // sample sd / sqrt(count); 0 for a single row
  std::size_t count = 0;
};

/// Groups successful rows by (method, n_train), ordered by method then size.
inline std::vector<CurvePoint> aggregate_curve(const std::vector<ResultRow>& rows) {
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> groups;
  for (const auto& r : rows)
    if (r.status == "ok") groups[{r.method + (r.source == "-" ? "" : "@" + r.source), r.n_train}].push_back(r.test_auc);
  if (groups.empty()) throw std::invalid_argument("emit_curve_data: no successful result rows");
  std::vector<CurvePoint> out;
  for (const auto& [key, v] : groups) {
    CurvePoint p{key.first, key.second, 0.0, 0.0, v.size()};
    p.mean_auc = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - p.mean_auc) * (x - p.mean_auc);
      p.stderr_auc = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    }
    out.push_back(p);
  }
  return out;
}

inline void emit_curve_data(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "method,n_train,mean_auc,stderr\n";
  for (const auto& p : aggregate_curve(rows))
    os << csv_escape(p.method) << ',' << p.n_train << ',' << format_double(p.mean_auc) << ',' << format_double(p.stderr_auc) << '\n';
}

// ------------------------------------------------------------- stage-wise

struct Stage {
  std::string name;
  std::vector<std::string> options;
};

struct OptionScore {
  std::string option;
  std::vector<double> per_size;  // mean AUC at each training size
  double mean_auc = std::numeric_limits<double>::quiet_NaN();
  std::optional<metrics::TTestResult> vs_winner;  // paired over sizes, winner minus option
  std::string error;
};

struct StageReport {
  std::string stage;
  std::vector<OptionScore> options;
  std::string winner;
};

inline const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order{"training_method", "transfer_method", "source_dataset"};
  return order;
}

/// Compares the options of each stage in series. `evaluate(stage_index,
/// option, winners_so_far)` returns per-size AUCs (same size grid for every
/// option). The highest mean AUC wins (first listed on ties) and is passed to
/// later stages; each loser is compared with the winner by a paired t-test.
template <class Evaluate>
std::vector<StageReport> run_stagewise(const std::vector<Stage>& stages, Evaluate&& evaluate) {
  std::vector<StageReport> reports;
  std::vector<std::string> winners;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& stage = stages[s];
    if (stage.options.empty()) throw std::invalid_argument("stage '" + stage.name + "' has no options");
    if (std::set<std::string>(stage.options.begin(), stage.options.end()).size() != stage.options.size())
      throw std::invalid_argument("stage '" + stage.name + "' lists an option twice");
    StageReport rep;
    rep.stage = stage.name;
    std::optional<std::size_t> best;
    for (const auto& option : stage.options) {
      OptionScore sc;
      sc.option = option;
      try {
        sc.per_size = evaluate(s, option, static_cast<const std::vector<std::string>&>(winners));
        if (sc.per_size.empty()) throw std::runtime_error("no per-size scores");
        sc.mean_auc = std::accumulate(sc.per_size.begin(), sc.per_size.end(), 0.0) / static_cast<double>(sc.per_size.size());
        if (!std::isfinite(sc.mean_auc)) throw std::runtime_error("non-finite mean AUC");
      } catch (const std::exception& e) {
        sc.error = e.what();
        sc.mean_auc = std::numeric_limits<double>::quiet_NaN();
      }
      rep.options.push_back(std::move(sc));
      const auto& last = rep.options.back();
      if (last.error.empty() && (!best || last.mean_auc > rep.options[*best].mean_auc)) best = rep.options.size() - 1;
    }
    if (!best) throw std::runtime_error("stage '" + stage.name + "': every option failed");
    const auto& w = rep.options[*best];
    rep.winner = w.option;
    for (auto& o : rep.options)
      if (&o != &w && o.error.empty() && o.per_size.size() == w.per_size.size() && w.per_size.size() >= 2)
        o.vs_winner = metrics::paired_ttest(w.per_size, o.per_size);
    winners.push_back(rep.winner);
    reports.push_back(std::move(rep));
  }
  return reports;
}

inline void write_stagewise_report(std::ostream& os, const std::vector<StageReport>& reports) {
  os << "stage,option,mean_auc,t_vs_winner,p_vs_winner,winner,error\n";
  for (const auto& r : reports)
    for (const auto& o : r.options)
      os << csv_escape(r.stage) << ',' << csv_escape(o.option) << ',' << format_double(o.mean_auc) << ','
         << (o.vs_winner ? format_double(o.vs_winner->t) : "") << ',' << (o.vs_winner ? format_double(o.vs_winner->p) : "") << ','
         << (o.option == r.winner ? "yes" : "no") << ',' << csv_escape(o.error) << '\n';
}

/// Options for the three standard stages, in order.
struct StagewisePlan {
  std::vector<std::string> training_methods{"regular", "one_cycle"};
  std::vector<std::string> transfer_methods{"feature_extractor", "fine_tune_all", "gradual_unfreeze"};
  std::vector<std::string> sources;  // checkpoint paths
};

/// Stage-wise comparison driven by learning curves: stage 1 trains from
/// scratch with each training method, stage 2 fine-tunes from the first
/// source with each transfer method, stage 3 swaps the source checkpoint.
/// Per-size scores average the seeds.
inline std::vector<StageReport> run_stagewise_curves(const ExperimentSpec& base_spec, ExperimentData& data, const StagewisePlan& plan,
                                                     const CurveOptions& opt = {}) {
  if (plan.sources.empty()) throw std::invalid_argument("stagewise: at least one source checkpoint is required");
  std::vector<Stage> stages{{stage_order()[0], plan.training_methods},
                            {stage_order()[1], plan.transfer_methods},
                            {stage_order()[2], plan.sources}};
  auto evaluate = [&](std::size_t stage, const std::string& option, const std::vector<std::string>& winners) {
    ExperimentSpec spec = base_spec;
    std::string text = "cnn:";
    if (stage == 0) {
      text += option;
    } else {
      text += winners[0] + ":" + (stage == 1 ? option : winners[1]);
      spec.source_checkpoint = stage == 2 ? option : plan.sources.front();
    }
    spec.methods = {parse_method_spec(text)};
    const auto rows = run_curve(spec, data, opt);
    std::vector<double> per_size;
    for (auto n : spec.sizes) {
      double sum = 0.0;
      std::size_t count = 0;
      for (const auto& r : rows)
        if (r.n_train == n) {
          if (r.status != "ok") throw std::runtime_error(r.method + " n=" + std::to_string(n) + " failed: " + r.detail);
          sum += r.test_auc;
          ++count;
        }
      per_size.push_back(sum / static_cast<double>(count));
    }
    return per_size;
  };
  return run_stagewise(stages, evaluate);
}

// ----------------------------------------------------------- feature CSVs

struct FeatureTable {
  std::vector<std::string> ids;
  std::vector<rad::FeatureVector> rows;
};

/// Reads the CSV written by rad::write_feature_csv.
inline FeatureTable read_feature_csv(std::istream& is, const std::string& source = "features") {
  FeatureTable t;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(source + ": empty feature file");
  const auto header = csv_split(line);
  const auto names = rad::feature_names();
  if (header.size() != names.size() + 1 || !std::equal(names.begin(), names.end(), header.begin() + 1))
    throw std::runtime_error(source + ": header does not list the " + std::to_string(rad::kFeatureCount) + " feature columns");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto c = csv_split(line);
    if (c.size() != rad::kFeatureCount + 1) throw std::runtime_error(source + ":" + std::to_string(lineno) + ": wrong field count");
    rad::FeatureVector f{};
    for (std::size_t k = 0; k < rad::kFeatureCount; ++k) {
      try {
        std::size_t pos = 0;
        f[k] = std::stod(c[k + 1], &pos);
        if (pos != c[k + 1].size()) throw std::invalid_argument(c[k + 1]);
      } catch (const std::logic_error&) {
        throw std::runtime_error(source + ":" + std::to_string(lineno) + ": bad value in column " + names[k]);
      }
    }
    t.ids.push_back(c[0]);
    t.rows.push_back(f);
  }
  return t;
}

}  // namespace smalldata::bench
