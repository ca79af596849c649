#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "smalldata/bench.hpp"
#include "smalldata/synth.hpp"

using namespace smalldata;

namespace {

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;

  Config load() const {
    Config c;
    if (!config_path.empty()) c = Config::load(config_path);
    for (const auto& o : overrides) c.set(o);
    return c;
  }
};

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("-c,--config", common.config_path, "key = value experiment file")->check(CLI::ExistingFile);
  sub->add_option("--set", common.overrides, "override a config key (key=value), repeatable");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

bench::Manifest manifest_from(const Config& c) { return bench::ingest(c.get("manifest"), c.get("image_root", "")); }

bench::MethodSpec single_method(const bench::ExperimentSpec& spec, const std::string& flag) {
  if (!flag.empty()) return bench::parse_method_spec(flag);
  if (spec.methods.size() != 1) throw std::invalid_argument("pass --method or list exactly one method in the config");
  return spec.methods.front();
}

std::size_t resolve_size(std::size_t n, const bench::ExperimentData& data) { return n == 0 ? data.plan().train.size() : n; }

std::optional<cnn::ModelParams> load_source(const bench::ExperimentSpec& spec, const bench::MethodSpec& m) {
  if (!m.needs_checkpoint()) return std::nullopt;
  if (!spec.source_checkpoint) throw std::invalid_argument("method " + m.name() + " needs source_checkpoint");
  return cnn::load_checkpoint(*spec.source_checkpoint);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smalldata: learning curves for small labeled image sets"};
  app.require_subcommand(1);
  Common common;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "validate a manifest and summarize its labels");
  std::string manifest_path, image_root, out_path;
  ingest->add_option("--manifest", manifest_path, "CSV: path,label_1,...,label_K")->required();
  ingest->add_option("--image-root", image_root, "directory image paths are relative to");
  ingest->callback([&] {
    const auto m = bench::ingest(manifest_path, image_root);
    std::cout << m.size() << " images, " << m.label_names.size() << " labels\n";
    for (std::size_t k = 0; k < m.label_names.size(); ++k) {
      std::size_t pos = 0;
      for (const auto& r : m.rows) pos += r.labels[k];
      std::cout << "  " << m.label_names[k] << ": " << pos << " positive\n";
    }
  });

  // split
  auto* split = app.add_subcommand("split", "write the 70/10/20 train/val/test split");
  std::uint64_t seed = 0;
  split->add_option("--manifest", manifest_path)->required();
  split->add_option("--image-root", image_root);
  split->add_option("--seed", seed, "split seed");
  split->add_option("-o,--out", out_path, "split CSV")->required();
  split->callback([&] {
    const auto m = bench::ingest(manifest_path, image_root);
    const auto plan = bench::split(m, seed);
    auto os = open_out(out_path);
    bench::write_split_csv(os, m, plan);
    std::cout << "train " << plan.train.size() << ", val " << plan.val.size() << ", test " << plan.test.size() << '\n';
  });

  // lr-find
  auto* lrfind = app.add_subcommand("lr-find", "learning-rate range test for one CNN method");
  add_common(lrfind, common);
  std::string method_flag;
  std::size_t size = 0;
  lrfind->add_option("--method", method_flag, "cnn:<method>[:<transfer>[:pretrained|moment]]");
  lrfind->add_option("--size", size, "training set size (0: whole train partition)");
  lrfind->add_option("--seed", seed);
  lrfind->add_option("-o,--out", out_path, "CSV of lr, loss, smoothed loss");
  lrfind->callback([&] {
    const auto cfg = common.load();
    const auto spec = bench::spec_from_config(cfg);
    const auto m = manifest_from(cfg);
    bench::ExperimentData data(m, spec);
    const auto method = single_method(spec, method_flag);
    const auto r = bench::find_max_lr(spec, data, method, resolve_size(size, data), seed, load_source(spec, method));
    if (!out_path.empty()) {
      auto os = open_out(out_path);
      os << "lr,loss,smoothed\n" << std::setprecision(17);
      for (std::size_t i = 0; i < r.lrs.size(); ++i) os << r.lrs[i] << ',' << r.losses[i] << ',' << r.smoothed[i] << '\n';
    }
    std::cout << "max_lr " << std::setprecision(6) << r.max_lr << (r.stopped_early ? " (sweep stopped early)" : "") << '\n';
  });

  // train
  auto* trainc = app.add_subcommand("train", "train one CNN and save its checkpoint");
  add_common(trainc, common);
  std::string log_path;
  trainc->add_option("--method", method_flag);
  trainc->add_option("--size", size, "training set size (0: whole train partition)");
  trainc->add_option("--seed", seed);
  trainc->add_option("-o,--out", out_path, "checkpoint file")->required();
  trainc->add_option("--log", log_path, "per-epoch CSV log");
  trainc->callback([&] {
    const auto cfg = common.load();
    const auto spec = bench::spec_from_config(cfg);
    const auto m = manifest_from(cfg);
    bench::ExperimentData data(m, spec);
    for (const auto& w : data.warnings()) log_line("warning: " + w);
    const auto method = single_method(spec, method_flag);
    const auto source = load_source(spec, method);
    const std::size_t n = resolve_size(size, data);
    double max_lr = spec.train_cfg.max_lr;
    if (max_lr <= 0.0) {
      max_lr = bench::find_max_lr(spec, data, method, n, seed, source).max_lr;
      log_line("lr_find chose max_lr " + bench::format_double(max_lr));
    }
    std::vector<std::string> warnings;
    const auto r = bench::train_cnn_cell(spec, data, method, n, seed, max_lr, source, &warnings);
    for (const auto& w : warnings) log_line("warning: " + w);
    cnn::save_checkpoint(out_path, r.best_params);
    if (!log_path.empty()) {
      auto os = open_out(log_path);
      train::write_epoch_log_csv(os, r.log);
    }
    std::cout << "best epoch " << r.best_epoch << ", test auc " << std::setprecision(6) << *r.test_auc << '\n';
  });

  // extract-features
  auto* features = app.add_subcommand("extract-features", "radiomic texture features for every manifest image");
  std::size_t image_width = 250;
  features->add_option("--manifest", manifest_path)->required();
  features->add_option("--image-root", image_root);
  features->add_option("--image-width", image_width, "resize width before extraction");
  features->add_option("-o,--out", out_path, "feature CSV")->required();
  features->callback([&] {
    const auto m = bench::ingest(manifest_path, image_root);
    bench::ExperimentSpec spec;
    spec.image_width = image_width;
    spec.methods = {bench::parse_method_spec("baseline:lasso")};
    bench::ExperimentData data(m, spec);
    std::vector<std::string> ids;
    std::vector<rad::FeatureVector> rows;
    for (std::size_t r = 0; r < m.size(); ++r) {
      ids.push_back(m.rows[r].path);
      rows.push_back(data.features(r));
    }
    auto os = open_out(out_path);
    rad::write_feature_csv(os, ids, rows);
    std::cout << rows.size() << " feature rows written\n";
  });

  // baseline
  auto* baseline = app.add_subcommand("baseline", "tune, fit and score one radiomics baseline");
  add_common(baseline, common);
  std::string features_path;
  baseline->add_option("--method", method_flag, "baseline:<lasso|ridge|elastic_net|forest>");
  baseline->add_option("--size", size, "training set size (0: whole train partition)");
  baseline->add_option("--seed", seed);
  baseline->add_option("--features", features_path, "feature CSV from extract-features");
  baseline->add_option("-o,--out", out_path, "model dump");
  baseline->callback([&] {
    const auto cfg = common.load();
    const auto spec = bench::spec_from_config(cfg);
    const auto m = manifest_from(cfg);
    bench::ExperimentData data(m, spec);
    if (!features_path.empty()) {
      std::ifstream is(features_path);
      if (!is) throw std::runtime_error("cannot open " + features_path);
      const auto table = bench::read_feature_csv(is, features_path);
      std::map<std::string, std::size_t> row_of;
      for (std::size_t r = 0; r < m.size(); ++r) row_of[m.rows[r].path] = r;
      for (std::size_t i = 0; i < table.ids.size(); ++i)
        if (auto it = row_of.find(table.ids[i]); it != row_of.end()) data.set_features(it->second, table.rows[i]);
    }
    const auto method = single_method(spec, method_flag);
    if (method.kind != bench::ModelKind::Baseline) throw std::invalid_argument("baseline expects a baseline:<family> method");
    const std::size_t n = resolve_size(size, data);
    std::vector<base::Candidate> best;
    for (const auto& t : bench::tune_baseline(spec, data, method, n, seed)) best.push_back(t.best);
    std::vector<std::string> warnings;
    const auto cell = bench::baseline_cell(spec, data, best, n, seed, &warnings);
    for (const auto& w : warnings) log_line("warning: " + w);
    if (!out_path.empty()) {
      auto os = open_out(out_path);
      for (const auto& model : cell.models) model.dump(os);
    }
    std::cout << cell.detail << "\ntest auc " << std::setprecision(6) << cell.test_auc.value << '\n';
  });

  // curve
  auto* curve = app.add_subcommand("curve", "run a learning-curve experiment (resumable)");
  add_common(curve, common);
  curve->callback([&] {
    const auto cfg = common.load();
    const auto spec = bench::spec_from_config(cfg);
    const auto m = manifest_from(cfg);
    bench::CurveOptions opt;
    opt.results_path = cfg.get("results", "results.csv");
    opt.log = log_line;
    const auto rows = bench::run_curve(spec, m, opt);
    auto os = open_out(cfg.get("curve_out", "curve.csv"));
    bench::emit_curve_data(os, rows);
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.status != "ok";
    std::cout << rows.size() << " cells (" << failed << " failed); results in " << opt.results_path << '\n';
  });

  // stagewise
  auto* stagewise = app.add_subcommand("stagewise", "compare training method, transfer method and source in turn");
  add_common(stagewise, common);
  stagewise->callback([&] {
    const auto cfg = common.load();
    auto spec = bench::spec_from_config(cfg);
    if (spec.methods.empty()) spec.methods = {bench::parse_method_spec("cnn:one_cycle")};
    const auto m = manifest_from(cfg);
    bench::StagewisePlan plan;
    plan.training_methods = cfg.get_list("training_methods", plan.training_methods);
    plan.transfer_methods = cfg.get_list("transfer_methods", plan.transfer_methods);
    plan.sources = cfg.get_list("sources");
    bench::ExperimentData data(m, spec);
    bench::CurveOptions opt;
    opt.results_path = cfg.get("results", "results.csv");
    opt.log = log_line;
    const auto reports = bench::run_stagewise_curves(spec, data, plan, opt);
    auto os = open_out(cfg.get("report_out", "stagewise.csv"));
    bench::write_stagewise_report(os, reports);
    for (const auto& r : reports) std::cout << r.stage << ": " << r.winner << '\n';
  });

  // report
  auto* report = app.add_subcommand("report", "aggregate a results CSV into curve data");
  std::string results_path, experiment;
  report->add_option("--results", results_path)->required()->check(CLI::ExistingFile);
  report->add_option("--experiment", experiment, "only rows of this experiment");
  report->add_option("-o,--out", out_path, "curve CSV (default: stdout)");
  report->callback([&] {
    auto rows = bench::read_results_file(results_path);
    if (!experiment.empty())
      std::erase_if(rows, [&](const bench::ResultRow& r) { return r.experiment != experiment; });
    if (out_path.empty()) {
      bench::emit_curve_data(std::cout, rows);
    } else {
      auto os = open_out(out_path);
      bench::emit_curve_data(os, rows);
    }
  });

  // schedule
  auto* schedule = app.add_subcommand("schedule", "export the per-group one-cycle schedule");
  std::size_t max_iter = 100;
  double max_lr = 0.01;
  bool uniform = false;
  schedule->add_option("--max-iter", max_iter)->check(CLI::PositiveNumber);
  schedule->add_option("--max-lr", max_lr)->check(CLI::PositiveNumber);
  schedule->add_flag("--uniform", uniform, "same rate for every group, nothing frozen");
  schedule->add_option("-o,--out", out_path, "CSV (default: stdout)");
  schedule->callback([&] {
    const auto base = sched::make_one_cycle(max_lr, max_iter);
    const auto plan = uniform ? sched::make_uniform_plan(base) : sched::make_group_plan(base);
    if (out_path.empty()) {
      sched::write_schedule_csv(std::cout, plan);
    } else {
      auto os = open_out(out_path);
      sched::write_schedule_csv(os, plan);
    }
  });

  // synth
  auto* synthc = app.add_subcommand("synth", "write a synthetic texture dataset with a one-hot manifest");
  std::string out_dir;
  std::vector<std::size_t> classes{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13};
  std::size_t per_class = 20, image_size = 32;
  double noise = 20.0;
  synthc->add_option("--out-dir", out_dir)->required();
  synthc->add_option("--classes", classes, "texture classes 0-13")->delimiter(',');
  synthc->add_option("--per-class", per_class);
  synthc->add_option("--size", image_size);
  synthc->add_option("--noise", noise, "Gaussian noise sd in grey levels");
  synthc->add_option("--seed", seed);
  synthc->callback([&] {
    synth::TextureOptions opt;
    opt.noise_sd = noise;
    std::filesystem::create_directories(out_dir);
    const auto set = synth::texture_set(classes, per_class, image_size, seed, opt);
    auto os = open_out((std::filesystem::path(out_dir) / "manifest.csv").string());
    os << "path";
    for (auto c : classes) os << ',' << synth::texture_name(c);
    os << '\n';
    for (std::size_t i = 0; i < set.size(); ++i) {
      const std::string name = "img" + std::to_string(i) + ".png";
      write_image((std::filesystem::path(out_dir) / name).string(), set[i].image);
      os << name;
      for (auto c : classes) os << ',' << (c == set[i].cls);
      os << '\n';
    }
    std::cout << set.size() << " images written to " << out_dir << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
