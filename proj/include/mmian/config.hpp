#pragma once

// Run configuration file: one JSON object with optional "model", "train",
// "pipeline" and "metrics" sections. Unknown keys are rejected everywhere.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mmian/dataset.hpp"
#include "mmian/metrics.hpp"
#include "mmian/model.hpp"
#include "mmian/training.hpp"

namespace mmian::config {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct PipelineConfig {
  double black_fraction = dataset::kDefaultBlackFraction;
  int black_level = dataset::kBlackLevel;
  double sigma_px = dataset::kDefaultSigmaPx;
  dataset::DedupMode dedup_mode = dataset::DedupMode::perceptual;
  int hamming_threshold = dataset::kDefaultHammingThreshold;
  dataset::SplitSpec split;

  void validate() const {
    if (!(black_fraction > 0.0 && black_fraction <= 1.0)) throw ConfigError("black_fraction must lie in (0,1]");
    if (black_level < 0 || black_level > 255) throw ConfigError("black_level must lie in [0,255]");
    if (!(sigma_px > 0.0)) throw ConfigError("sigma_px must be > 0");
    if (hamming_threshold < 0 || hamming_threshold > 64) throw ConfigError("hamming_threshold must lie in [0,64]");
    split.validate();
  }

  bool operator==(const PipelineConfig& o) const {
    return black_fraction == o.black_fraction && black_level == o.black_level && sigma_px == o.sigma_px &&
           dedup_mode == o.dedup_mode && hamming_threshold == o.hamming_threshold &&
           split.train_fraction == o.split.train_fraction && split.val_fraction == o.split.val_fraction &&
           split.test_fraction == o.split.test_fraction && split.seed == o.split.seed;
  }
};

inline std::string_view to_string(dataset::DedupMode m) { return m == dataset::DedupMode::exact ? "exact" : "perceptual"; }

inline dataset::DedupMode parse_dedup_mode(std::string_view s) {
  if (s == "exact") return dataset::DedupMode::exact;
  if (s == "perceptual") return dataset::DedupMode::perceptual;
  throw ConfigError("unknown dedup_mode '" + std::string(s) + "'");
}

inline std::string_view to_string(metrics::NssMode m) {
  return m == metrics::NssMode::standard ? "standard" : "paper_literal";
}

inline metrics::NssMode parse_nss_mode(std::string_view s) {
  if (s == "standard") return metrics::NssMode::standard;
  if (s == "paper_literal") return metrics::NssMode::paper_literal;
  throw ConfigError("unknown nss_mode '" + std::string(s) + "'");
}

inline std::string_view to_string(metrics::FixationSource f) {
  return f == metrics::FixationSource::fixations_if_available ? "fixations_if_available" : "heatmap_percentile";
}

inline metrics::FixationSource parse_fixation_source(std::string_view s) {
  if (s == "fixations_if_available") return metrics::FixationSource::fixations_if_available;
  if (s == "heatmap_percentile") return metrics::FixationSource::heatmap_percentile;
  throw ConfigError("unknown fixation_source '" + std::string(s) + "'");
}

struct RunConfig {
  model::ModelConfig model;
  training::TrainConfig train;
  PipelineConfig pipeline;
  metrics::MetricsConfig metrics;

  void validate() const {
    model.validate();
    train.validate();
    pipeline.validate();
    if (!(metrics.epsilon > 0.0)) throw ConfigError("metrics epsilon must be > 0");
    if (!(metrics.percentile > 0.0 && metrics.percentile <= 1.0)) throw ConfigError("percentile must lie in (0,1]");
  }

  Json to_json() const {
    return {{"model", model.to_json()},
            {"train", train.to_json()},
            {"pipeline",
             {{"black_fraction", pipeline.black_fraction},
              {"black_level", pipeline.black_level},
              {"sigma_px", pipeline.sigma_px},
              {"dedup_mode", to_string(pipeline.dedup_mode)},
              {"hamming_threshold", pipeline.hamming_threshold},
              {"train_fraction", pipeline.split.train_fraction},
              {"val_fraction", pipeline.split.val_fraction},
              {"test_fraction", pipeline.split.test_fraction},
              {"split_seed", pipeline.split.seed}}},
            {"metrics",
             {{"nss_mode", to_string(metrics.nss_mode)},
              {"epsilon", metrics.epsilon},
              {"fixation_source", to_string(metrics.fixation_source)},
              {"percentile", metrics.percentile}}}};
  }

  static RunConfig from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    RunConfig rc;
    try {
      for (const auto& [section, body] : j.items()) {
        if (section == "model") rc.model = model::ModelConfig::from_json(body, rc.model);
        else if (section == "train") rc.train = training::TrainConfig::from_json(body, rc.train);
        else if (section == "pipeline") read_pipeline(body, rc.pipeline);
        else if (section == "metrics") read_metrics(body, rc.metrics);
        else throw ConfigError("unknown config section '" + section + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return rc;
  }

  bool operator==(const RunConfig& o) const {
    return model == o.model && train == o.train && pipeline == o.pipeline && metrics.nss_mode == o.metrics.nss_mode &&
           metrics.epsilon == o.metrics.epsilon && metrics.fixation_source == o.metrics.fixation_source &&
           metrics.percentile == o.metrics.percentile;
  }

 private:
  static void require_object(const Json& j, const char* name) {
    if (!j.is_object()) throw ConfigError(std::string(name) + " section must be an object");
  }

  static void read_pipeline(const Json& j, PipelineConfig& p) {
    require_object(j, "pipeline");
    for (const auto& [key, v] : j.items()) {
      if (key == "black_fraction") p.black_fraction = v.get<double>();
      else if (key == "black_level") p.black_level = v.get<int>();
      else if (key == "sigma_px") p.sigma_px = v.get<double>();
      else if (key == "dedup_mode") p.dedup_mode = parse_dedup_mode(v.get<std::string>());
      else if (key == "hamming_threshold") p.hamming_threshold = v.get<int>();
      else if (key == "train_fraction") p.split.train_fraction = v.get<double>();
      else if (key == "val_fraction") p.split.val_fraction = v.get<double>();
      else if (key == "test_fraction") p.split.test_fraction = v.get<double>();
      else if (key == "split_seed") p.split.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown pipeline config key '" + key + "'");
    }
  }

  static void read_metrics(const Json& j, metrics::MetricsConfig& m) {
    require_object(j, "metrics");
    for (const auto& [key, v] : j.items()) {
      if (key == "nss_mode") m.nss_mode = parse_nss_mode(v.get<std::string>());
      else if (key == "epsilon") m.epsilon = v.get<double>();
      else if (key == "fixation_source") m.fixation_source = parse_fixation_source(v.get<std::string>());
      else if (key == "percentile") m.percentile = v.get<double>();
      else throw ConfigError("unknown metrics config key '" + key + "'");
    }
  }
};

inline RunConfig load_run_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(dataset::read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

inline void write_run_config(const RunConfig& rc, const fs::path& path) {
  dataset::write_text_file(path, rc.to_json().dump(2) + "\n");
}

}  // namespace mmian::config
