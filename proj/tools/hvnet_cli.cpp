// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hvnet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace hvnet;

namespace {

std::vector<fs::path> gather_inputs(const std::vector<std::string>& inputs, const std::string& input_dir) {
  std::vector<fs::path> out;
  for (const auto& i : inputs) out.emplace_back(i);
  if (!input_dir.empty()) {
    const auto more = list_bin_files(input_dir);
    out.insert(out.end(), more.begin(), more.end());
  }
  if (out.empty()) throw UsageError("no input files (use --input or --input-dir)");
  return out;
}

int cmd_infer(const std::string& config, const std::string& weights, const std::vector<std::string>& inputs,
              const std::string& input_dir, const std::string& out, bool plot, const std::string& gt_dir) {
  const auto cfg = load_config(config);
  const auto params = load_archive<Real>(weights, cfg);
  std::optional<fs::path> gt;
  if (!gt_dir.empty()) gt = fs::path(gt_dir);
  const auto rep = run_inference(cfg, params, gather_inputs(inputs, input_dir), out, plot, gt);
  for (const auto& f : rep.failures) std::cerr << "error: " << f << '\n';
  std::cout << "processed " << rep.processed << " file(s), " << rep.failures.size() << " failed\n";
  return rep.failures.empty() ? 0 : 2;
}

int cmd_train(const std::string& config, const std::string& out, std::uint64_t seed, std::size_t epochs,
              const std::string& log_path, const std::string& scene_dir) {
  const auto cfg = load_config(config);
  const auto scenes = make_toy_scenes(cfg, seed, cfg.training.scenes);
  if (!scene_dir.empty()) write_scenes(scene_dir, scenes);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw FormatError("cannot write " + log_path);
    log << loss_csv_header();
  }
  auto result = train_toy(scenes, cfg, initial_params<Real>(cfg, seed, scenes), epochs,
                          [&](const EpochLog& e) {
                            if (log) log << loss_csv_row(e) << std::flush;
                          });
  save_archive(out, result.params, cfg);
  std::printf("initial loss %.6f, final loss %.6f after %zu epoch(s)\n", result.initial.total,
              result.final.total, result.log.size());
  if (result.diverged) {
    std::cerr << "error: loss became non-finite at epoch " << result.log.size()
              << "; wrote the last good weights to " << out << '\n';
    return 3;
  }
  return 0;
}

int cmd_init(const std::string& config, const std::string& out, std::uint64_t seed, bool zero) {
  const auto cfg = load_config(config);
  const auto params = zero ? make_zero_model_params<Real>(cfg) : make_model_params<Real>(cfg, init_seed(seed));
  save_archive(out, params, cfg);
  return 0;
}

int cmd_eval(const std::string& config, const std::string& weights, const std::vector<std::string>& inputs,
             const std::string& input_dir, const std::string& gt_dir, const std::string& out,
             std::optional<double> riou) {
  const auto cfg = load_config(config);
  const auto params = load_archive<Real>(weights, cfg);
  std::vector<std::vector<LabeledBox>> dets, gts;
  for (const auto& in : gather_inputs(inputs, input_dir)) {
    const auto cloud = read_kitti_bin(in).cloud;
    dets.push_back(detect(cloud, cfg, params).detections);
    gts.push_back(read_labels(fs::path(gt_dir) / (in.stem().string() + ".txt")));
  }
  const auto csv = ap_csv(evaluate_detections(dets, gts, cfg.classes(), riou));
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text(out, csv);
  }
  return 0;
}

int cmd_synth(const std::string& config, const std::string& out, std::uint64_t seed, std::size_t count) {
  const auto cfg = load_config(config);
  write_scenes(out, make_toy_scenes(cfg, seed, count));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hvnet: hybrid voxel LiDAR detector"};
  app.require_subcommand(1);

  std::string config, weights, out, input_dir, gt_dir, log_path, scene_dir;
  std::vector<std::string> inputs;
  std::uint64_t seed = 0;
  std::size_t epochs = 200, count = 3;
  bool plot = false, zero = false;
  std::optional<double> riou;

  auto* infer = app.add_subcommand("infer", "detect objects in KITTI .bin point clouds");
  infer->add_option("--config", config, "model config (JSON)")->required()->check(CLI::ExistingFile);
  infer->add_option("--weights", weights, "weight archive")->required()->check(CLI::ExistingFile);
  infer->add_option("--input", inputs, "input .bin file(s)");
  infer->add_option("--input-dir", input_dir, "directory of .bin files");
  infer->add_option("--out", out, "output directory")->required();
  infer->add_flag("--plot", plot, "also write BEV SVG plots");
  infer->add_option("--gt-dir", gt_dir, "ground-truth labels drawn in plots");

  auto* train = app.add_subcommand("train-toy", "overfit on synthetic scenes");
  train->add_option("--config", config, "model config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "output weight archive")->required();
  train->add_option("--seed", seed, "scene and initialization seed");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--log", log_path, "per-epoch loss CSV");
  train->add_option("--scene-dir", scene_dir, "also write the training scenes here");

  auto* init = app.add_subcommand("init", "write freshly initialized weights");
  init->add_option("--config", config, "model config (JSON)")->required()->check(CLI::ExistingFile);
  init->add_option("--out", out, "output weight archive")->required();
  init->add_option("--seed", seed, "initialization seed");
  init->add_flag("--zero", zero, "zero weights with classification bias -10");

  auto* eval = app.add_subcommand("eval", "AP_40 per class against KITTI labels");
  eval->add_option("--config", config, "model config (JSON)")->required()->check(CLI::ExistingFile);
  eval->add_option("--weights", weights, "weight archive")->required()->check(CLI::ExistingFile);
  eval->add_option("--input", inputs, "input .bin file(s)");
  eval->add_option("--input-dir", input_dir, "directory of .bin files");
  eval->add_option("--gt-dir", gt_dir, "label directory (<stem>.txt)")->required();
  eval->add_option("--out", out, "CSV output (stdout when omitted)");
  eval->add_option("--riou", riou, "single BEV RIoU threshold for every class");

  auto* synth = app.add_subcommand("synth", "write synthetic toy scenes");
  synth->add_option("--config", config, "model config (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seed", seed, "scene seed");
  synth->add_option("--scenes", count, "number of scenes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*infer) return cmd_infer(config, weights, inputs, input_dir, out, plot, gt_dir);
    if (*train) return cmd_train(config, out, seed, epochs, log_path, scene_dir);
    if (*init) return cmd_init(config, out, seed, zero);
    if (*eval) return cmd_eval(config, weights, inputs, input_dir, gt_dir, out, riou);
    if (*synth) return cmd_synth(config, out, seed, count);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
