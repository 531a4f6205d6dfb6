#pragma once

// Command-line front end. `dispatch` returns the process exit code:
// 0 success, 1 validation/config error, 2 IO error, 64 unknown subcommand.

#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmian/checkpoint.hpp"
#include "mmian/config.hpp"
#include "mmian/dataset.hpp"
#include "mmian/explain.hpp"
#include "mmian/image_io.hpp"
#include "mmian/masks.hpp"
#include "mmian/metrics.hpp"
#include "mmian/model.hpp"
#include "mmian/pipeline.hpp"
#include "mmian/synth.hpp"
#include "mmian/training.hpp"

namespace mmian::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitUsage = 64;

inline constexpr const char* kEffectiveConfig = "effective_config.json";

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"synth", "curate", "mask", "train", "evaluate", "predict", "gradcam"};
  return names;
}

inline std::string usage() {
  return "usage: mmian <command> [options]\n"
         "\n"
         "commands:\n"
         "  synth     generate synthetic webpage screenshots with fixations\n"
         "  curate    filter, crop, dedup, mask, render and split raw screenshots\n"
         "  mask      detect image/text elements and write binary masks\n"
         "  train     train a model on a curated dataset\n"
         "  evaluate  score predictions (NSS, AUC-Judd, CC, KLD)\n"
         "  predict   write a predicted heatmap per screenshot\n"
         "  gradcam   write Grad-CAM maps and overlays per screenshot\n"
         "\n"
         "run `mmian <command> --help` for options\n";
}

namespace detail {

struct Options {
  std::optional<std::string> config_path;

  // synth
  int n = 0;
  std::uint64_t seed = 0;
  int height = 192, width = 256;
  bool unified = false;

  // shared paths
  std::string in, out, dataset_root, weights, base_weights, pred_dir, gt_dir, fixations_csv, image_mask_dir,
      text_mask_dir, label_dir;
  std::string origin = "Synthetic";
  std::string kind = "both";
  std::string split = "test";
  std::string layer = explain::kDefaultLayer;
  std::string objective = "sum_output";

  // overrides of the run config
  std::optional<double> sigma, black_fraction, lr, epsilon;
  std::optional<int> hamming, batch_size, epochs, patience, model_height, model_width;
  std::optional<std::uint64_t> split_seed, train_seed;
  std::optional<std::string> dedup, regime, nss_mode, fixation_source;
  long max_steps = 0;
};

inline config::RunConfig effective_config(const Options& o) {
  config::RunConfig rc = o.config_path ? config::load_run_config(*o.config_path) : config::RunConfig{};
  if (o.sigma) rc.pipeline.sigma_px = *o.sigma;
  if (o.black_fraction) rc.pipeline.black_fraction = *o.black_fraction;
  if (o.hamming) rc.pipeline.hamming_threshold = *o.hamming;
  if (o.dedup) rc.pipeline.dedup_mode = config::parse_dedup_mode(*o.dedup);
  if (o.split_seed) rc.pipeline.split.seed = *o.split_seed;
  if (o.lr) rc.train.learning_rate = *o.lr;
  if (o.batch_size) rc.train.batch_size = *o.batch_size;
  if (o.epochs) rc.train.max_epochs = *o.epochs;
  if (o.patience) rc.train.patience = *o.patience;
  if (o.train_seed) rc.train.seed = *o.train_seed;
  if (o.epsilon) rc.train.epsilon = rc.metrics.epsilon = *o.epsilon;
  if (o.regime) rc.train.regime = training::parse_regime(*o.regime);
  if (o.model_height) rc.model.input_height = *o.model_height;
  if (o.model_width) rc.model.input_width = *o.model_width;
  if (o.nss_mode) rc.metrics.nss_mode = config::parse_nss_mode(*o.nss_mode);
  if (o.fixation_source) rc.metrics.fixation_source = config::parse_fixation_source(*o.fixation_source);
  rc.validate();
  return rc;
}

inline std::vector<fs::path> input_pngs(const fs::path& in) {
  if (fs::is_directory(in)) return io::list_pngs(in);
  if (!fs::exists(in)) throw IoError("input not found: " + in.string());
  return {in};
}

/// Screenshot plus masks, read from mask directories when given and
/// detected heuristically otherwise.
inline DatasetSample load_input(const fs::path& png, const Options& o) {
  DatasetSample s;
  s.screenshot = {io::read_png_rgb(png), png.stem().string(), OriginDataset::Synthetic};
  const std::string file = png.filename().string();
  if (!o.image_mask_dir.empty()) {
    s.image_mask = io::read_mask_png(fs::path(o.image_mask_dir) / file, MaskKind::image);
  } else {
    s.image_mask = masks::generate_image_mask(s.screenshot, *masks::heuristic_detector(MaskKind::image));
  }
  if (!o.text_mask_dir.empty()) {
    s.text_mask = io::read_mask_png(fs::path(o.text_mask_dir) / file, MaskKind::text);
  } else {
    s.text_mask = masks::generate_text_mask(s.screenshot, *masks::heuristic_detector(MaskKind::text));
  }
  if (!o.label_dir.empty()) s.heatmap = io::read_heatmap_png(fs::path(o.label_dir) / file);
  return s;
}

inline int run_synth(const Options& o, std::ostream& log) {
  const config::RunConfig rc = effective_config(o);
  synth::SynthOptions so;
  so.sigma_px = rc.pipeline.sigma_px;
  auto samples = synth::synth_generate(o.n, o.seed, {o.height, o.width}, so);
  const fs::path out(o.out);
  if (o.unified) {
    dataset::split_dataset(samples, rc.pipeline.split);
    const auto report = dataset::export_dataset(samples, out);
    dataset::write_text_file(out / "curation_report.json", report.to_json().dump(2) + "\n");
  } else {
    pipeline::write_raw(out, samples);
  }
  config::write_run_config(rc, out / kEffectiveConfig);
  log << "wrote " << samples.size() << " synthetic samples to " << out.string() << '\n';
  return kExitOk;
}

inline int run_curate(const Options& o, std::ostream& log) {
  const config::RunConfig rc = effective_config(o);
  const auto raw = pipeline::load_raw(o.in, parse_origin(o.origin));
  const auto result = pipeline::curate(raw, rc.pipeline);
  const fs::path out(o.out);
  dataset::export_dataset(result.samples, out);
  dataset::write_text_file(out / "curation_report.json", result.report.to_json().dump(2) + "\n");
  config::write_run_config(rc, out / kEffectiveConfig);
  log << result.report.to_json().dump() << '\n';
  return kExitOk;
}

inline int run_mask(const Options& o, std::ostream& log) {
  const fs::path out(o.out);
  dataset::make_dirs(out);
  if (o.kind != "image" && o.kind != "text" && o.kind != "both") throw ConfigError("--kind must be image, text or both");
  std::size_t count = 0;
  for (const auto& png : input_pngs(o.in)) {
    const Screenshot s{io::read_png_rgb(png), png.stem().string(), OriginDataset::Synthetic};
    std::vector<masks::BoundingBox> all;
    for (MaskKind k : {MaskKind::image, MaskKind::text}) {
      if (o.kind != "both" && o.kind != to_string(k)) continue;
      const auto boxes = masks::heuristic_detector(k)->detect(s);
      io::write_mask_png(out / (s.source_id + "_" + std::string(to_string(k)) + ".png"),
                         masks::boxes_to_mask(boxes, s.dims(), k));
      all.insert(all.end(), boxes.begin(), boxes.end());
    }
    dataset::write_text_file(out / (s.source_id + "_boxes.json"), masks::boxes_to_json(all).dump(2) + "\n");
    ++count;
  }
  log << "wrote masks for " << count << " screenshots\n";
  return kExitOk;
}

inline int run_train(const Options& o, std::ostream& log) {
  config::RunConfig rc = effective_config(o);
  rc.model.mask_stream = training::uses_masks(rc.train.regime);
  const auto all = dataset::import_dataset(o.dataset_root);
  const auto train_split = training::select(all, Split::train, rc.train.regime);
  const auto val_split = training::select(all, Split::val, rc.train.regime);
  if (train_split.empty() || val_split.empty()) {
    throw ValidationError("regime " + std::string(training::to_string(rc.train.regime)) +
                          " has an empty train or val split in " + o.dataset_root);
  }

  model::Model<float> net(rc.model);
  if (!o.base_weights.empty()) {
    const auto base = model::load_checkpoint(o.base_weights);
    if (rc.model.mask_stream) {
      training::init_transfer(net, base);
    } else {
      net.load_weights(base);
    }
  }
  training::TrainHooks hooks;
  hooks.max_steps = o.max_steps;
  hooks.on_epoch = [&log](const training::EpochRecord& e) {
    log << "epoch " << e.epoch << " train_kld " << e.train_kld << " val_kld " << e.val_kld << '\n';
  };
  const auto history = training::train(net, train_split, val_split, rc.train, hooks);

  const fs::path out(o.out);
  const fs::path dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  dataset::make_dirs(dir);
  model::save_checkpoint(net, out);
  dataset::write_text_file(dir / (out.stem().string() + "_history.csv"), history.to_csv());
  config::write_run_config(rc, dir / kEffectiveConfig);
  log << "best epoch " << history.best_epoch << ", checkpoint " << out.string() << '\n';
  return kExitOk;
}

inline void write_report(const metrics::MetricReport& report, const Options& o, const config::RunConfig& rc,
                         std::ostream& log) {
  if (!o.out.empty()) {
    const fs::path out(o.out);
    dataset::make_dirs(out);
    dataset::write_text_file(out / "report.csv", report.to_csv());
    dataset::write_text_file(out / "report.json", report.to_json().dump(2) + "\n");
    config::write_run_config(rc, out / kEffectiveConfig);
  }
  log << report.to_csv();
  if (!report.excluded.empty()) log << "excluded " << report.excluded.size() << " samples\n";
}

/// Ground truth from a dataset root (label/ + manifest) or a plain PNG directory.
inline std::vector<DatasetSample> load_ground_truth(const fs::path& gt, const Options& o) {
  if (fs::exists(gt / dataset::kManifest)) return dataset::import_dataset(gt);
  std::map<std::string, std::vector<FixationRecord>> fixations;
  if (!o.fixations_csv.empty()) fixations = dataset::read_fixations_csv(o.fixations_csv);
  std::vector<DatasetSample> out;
  for (const auto& png : io::list_pngs(gt)) {
    DatasetSample s;
    s.screenshot.source_id = png.stem().string();
    s.heatmap = io::read_heatmap_png(png);
    if (auto it = fixations.find(s.stem()); it != fixations.end()) s.fixations = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

inline int run_evaluate(const Options& o, std::ostream& log) {
  const config::RunConfig rc = effective_config(o);
  metrics::MetricReport report;
  if (!o.pred_dir.empty()) {
    if (o.gt_dir.empty()) throw ConfigError("--pred-dir requires --gt-dir");
    const fs::path gt_root(o.gt_dir);
    const auto truth = load_ground_truth(gt_root, o);
    const fs::path pred_dir(o.pred_dir);
    report = training::evaluate(
        truth, [&pred_dir](const DatasetSample& s) { return io::read_heatmap_png(pred_dir / (s.stem() + ".png")); },
        rc.metrics);
  } else {
    if (o.weights.empty() || o.dataset_root.empty()) {
      throw ConfigError("evaluate needs --pred-dir/--gt-dir or --weights/--dataset-root");
    }
    const auto net = model::load_model<float>(o.weights);
    std::vector<DatasetSample> split;
    for (auto& s : dataset::import_dataset(o.dataset_root))
      if (s.split == parse_split(o.split)) split.push_back(std::move(s));
    report = training::evaluate(net, split, rc.metrics);
  }
  write_report(report, o, rc, log);
  return kExitOk;
}

inline int run_predict(const Options& o, std::ostream& log) {
  const auto net = model::load_model<float>(o.weights);
  const fs::path out(o.out);
  dataset::make_dirs(out);
  std::size_t count = 0;
  for (const auto& png : input_pngs(o.in)) {
    const DatasetSample s = load_input(png, o);
    io::write_heatmap_png(out / (s.stem() + ".png"), model::predict(net, s));
    ++count;
  }
  nlohmann::ordered_json echo = {{"weights", o.weights}, {"model", net.config().to_json()}};
  dataset::write_text_file(out / kEffectiveConfig, echo.dump(2) + "\n");
  log << "wrote " << count << " heatmaps to " << out.string() << '\n';
  return kExitOk;
}

inline int run_gradcam(const Options& o, std::ostream& log) {
  const auto net = model::load_model<float>(o.weights);
  const auto objective = explain::parse_objective(o.objective);
  const fs::path out(o.out);
  dataset::make_dirs(out);
  std::size_t count = 0;
  for (const auto& png : input_pngs(o.in)) {
    const DatasetSample s = load_input(png, o);
    const auto cam = explain::grad_cam(net, s, o.layer, objective);
    io::write_png_gray(out / (s.stem() + "_cam.png"), explain::cam_to_gray(cam.upsampled));
    io::write_png_rgb(out / (s.stem() + "_overlay.png"), explain::overlay(s.screenshot.pixels, cam.upsampled, 0.5));
    ++count;
  }
  nlohmann::ordered_json echo = {
      {"weights", o.weights}, {"layer", o.layer}, {"objective", o.objective}, {"model", net.config().to_json()}};
  dataset::write_text_file(out / kEffectiveConfig, echo.dump(2) + "\n");
  log << "wrote Grad-CAM maps for " << count << " screenshots to " << out.string() << '\n';
  return kExitOk;
}

inline void add_config_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "JSON run config; flags override it");
}

}  // namespace detail

/// Parses `args` (without the program name) and runs one subcommand.
inline int dispatch(const std::vector<std::string>& args, std::ostream& log = std::cout,
                    std::ostream& err = std::cerr) {
  if (args.empty() || (args[0] != "--help" && args[0] != "-h" &&
                       std::find(subcommands().begin(), subcommands().end(), args[0]) == subcommands().end())) {
    if (!args.empty()) err << "unknown command '" << args[0] << "'\n";
    err << usage();
    return kExitUsage;
  }
  if (args[0] == "--help" || args[0] == "-h") {
    log << usage();
    return kExitOk;
  }

  detail::Options o;
  CLI::App app{"Webpage eye-gaze toolkit", "mmian"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate synthetic webpage screenshots with fixations");
  synth->add_option("--n", o.n, "number of pages")->required()->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", o.seed, "random seed");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--height", o.height, "page height")->check(CLI::PositiveNumber);
  synth->add_option("--width", o.width, "page width")->check(CLI::PositiveNumber);
  synth->add_flag("--unified", o.unified, "write a curated dataset (exact masks, split) instead of raw input");
  synth->add_option("--sigma", o.sigma, "heatmap Gaussian sigma in pixels");
  synth->add_option("--split-seed", o.split_seed, "split seed (with --unified)");
  detail::add_config_flags(synth, o);

  auto* curate = app.add_subcommand("curate", "filter, crop, dedup, mask, render and split raw screenshots");
  curate->add_option("--in", o.in, "raw directory (screenshots/ + fixations.csv)")->required();
  curate->add_option("--out", o.out, "dataset root to write")->required();
  curate->add_option("--origin", o.origin, "origin dataset label");
  curate->add_option("--sigma", o.sigma, "heatmap Gaussian sigma in pixels");
  curate->add_option("--black-fraction", o.black_fraction, "black-pixel fraction marking an empty screenshot");
  curate->add_option("--hamming", o.hamming, "perceptual dedup Hamming threshold");
  curate->add_option("--dedup", o.dedup, "exact or perceptual");
  curate->add_option("--split-seed", o.split_seed, "split seed");
  detail::add_config_flags(curate, o);

  auto* mask = app.add_subcommand("mask", "detect image/text elements and write binary masks");
  mask->add_option("--in", o.in, "screenshot PNG or directory")->required();
  mask->add_option("--out", o.out, "output directory")->required();
  mask->add_option("--kind", o.kind, "image, text or both");

  auto* train = app.add_subcommand("train", "train a model on a curated dataset");
  train->add_option("--regime", o.regime, "FT_GM, FT_CW, FT_CMB or MMIAN");
  train->add_option("--dataset-root", o.dataset_root, "curated dataset root")->required();
  train->add_option("--base-weights", o.base_weights, "checkpoint to start from");
  train->add_option("--out", o.out, "checkpoint to write")->required();
  train->add_option("--lr", o.lr, "learning rate");
  train->add_option("--batch-size", o.batch_size, "batch size");
  train->add_option("--epochs", o.epochs, "maximum epochs");
  train->add_option("--patience", o.patience, "early-stopping patience");
  train->add_option("--seed", o.train_seed, "shuffle seed");
  train->add_option("--height", o.model_height, "model input height");
  train->add_option("--width", o.model_width, "model input width");
  train->add_option("--max-steps", o.max_steps, "stop after this many optimizer steps");
  detail::add_config_flags(train, o);

  auto* evaluate = app.add_subcommand("evaluate", "score predictions (NSS, AUC-Judd, CC, KLD)");
  evaluate->add_option("--pred-dir", o.pred_dir, "directory of predicted heatmap PNGs");
  evaluate->add_option("--gt-dir", o.gt_dir, "ground-truth heatmap PNGs or a dataset root");
  evaluate->add_option("--fixations", o.fixations_csv, "fixation CSV for plain ground-truth directories");
  evaluate->add_option("--weights", o.weights, "checkpoint to evaluate");
  evaluate->add_option("--dataset-root", o.dataset_root, "dataset root for --weights");
  evaluate->add_option("--split", o.split, "train, val or test");
  evaluate->add_option("--out", o.out, "directory for report.csv and report.json");
  evaluate->add_option("--nss-mode", o.nss_mode, "standard or paper_literal");
  evaluate->add_option("--fixation-source", o.fixation_source, "fixations_if_available or heatmap_percentile");
  detail::add_config_flags(evaluate, o);

  auto* predict = app.add_subcommand("predict", "write a predicted heatmap per screenshot");
  predict->add_option("--weights", o.weights, "checkpoint")->required();
  predict->add_option("--in", o.in, "screenshot PNG or directory")->required();
  predict->add_option("--out", o.out, "output directory")->required();
  predict->add_option("--image-mask-dir", o.image_mask_dir, "image masks (default: detected)");
  predict->add_option("--text-mask-dir", o.text_mask_dir, "text masks (default: detected)");

  auto* gradcam = app.add_subcommand("gradcam", "write Grad-CAM maps and overlays per screenshot");
  gradcam->add_option("--weights", o.weights, "checkpoint")->required();
  gradcam->add_option("--in", o.in, "screenshot PNG or directory")->required();
  gradcam->add_option("--out", o.out, "output directory")->required();
  gradcam->add_option("--layer", o.layer, "target layer");
  gradcam->add_option("--objective", o.objective, "sum_output or kld_vs_gt");
  gradcam->add_option("--label-dir", o.label_dir, "ground-truth heatmaps (for kld_vs_gt)");
  gradcam->add_option("--image-mask-dir", o.image_mask_dir, "image masks (default: detected)");
  gradcam->add_option("--text-mask-dir", o.text_mask_dir, "text masks (default: detected)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto parsed = app.get_subcommands();
    log << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (synth->parsed()) return detail::run_synth(o, log);
    if (curate->parsed()) return detail::run_curate(o, log);
    if (mask->parsed()) return detail::run_mask(o, log);
    if (train->parsed()) return detail::run_train(o, log);
    if (evaluate->parsed()) return detail::run_evaluate(o, log);
    if (predict->parsed()) return detail::run_predict(o, log);
    if (gradcam->parsed()) return detail::run_gradcam(o, log);
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  err << usage();
  return kExitUsage;
}

inline int dispatch(int argc, char** argv) {
  return dispatch(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace mmian::cli
