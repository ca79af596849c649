// A small learning curve on synthetic textures: a lasso radiomics baseline
// against a CNN trained from scratch, rings versus gratings.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "smalldata/bench.hpp"
#include "smalldata/synth.hpp"

using namespace smalldata;
namespace fs = std::filesystem;

int main() {
  const fs::path dir = fs::temp_directory_path() / "smalldata_texture_curve";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream man(dir / "manifest.csv");
  man << "path,rings\n";
  const auto set = synth::texture_set({0, 3, 13}, 80, 32, 11);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string name = "t" + std::to_string(i) + ".png";
    write_image((dir / name).string(), set[i].image);
    man << name << ',' << (set[i].cls == 13) << '\n';
  }
  man.close();

  bench::ExperimentSpec spec;
  spec.name = "texture_curve";
  spec.label = "rings";
  spec.sizes = {50, 100, 150};
  spec.seeds = {0, 1, 2};
  spec.image_width = 32;
  spec.methods = {bench::parse_method_spec("baseline:lasso"), bench::parse_method_spec("cnn:one_cycle")};
  spec.train_cfg.epochs = 10;
  spec.train_cfg.augment_cfg = {28, 10.0, 0.5};
  spec.train_cfg.max_lr = 0.1;
  spec.tune_draws = 10;

  bench::CurveOptions opt;
  opt.log = [](const std::string& line) { std::cerr << line << '\n'; };
  const auto manifest = bench::ingest((dir / "manifest.csv").string(), dir.string());
  const auto rows = bench::run_curve(spec, manifest, opt);
  bench::emit_curve_data(std::cout, rows);
  fs::remove_all(dir);
}
