#pragma once

// Curation: ingest -> drop empty -> crop black borders -> deduplicate ->
// masks -> heatmaps -> split. Raw input is a directory holding
// `screenshots/<stem>.png` and an optional `fixations.csv`.

#include <filesystem>
#include <string>
#include <vector>

#include "mmian/config.hpp"
#include "mmian/dataset.hpp"
#include "mmian/image_io.hpp"
#include "mmian/masks.hpp"

namespace mmian::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kRawScreenshotDir = "screenshots";
inline constexpr const char* kRawFixations = "fixations.csv";

struct RawSample {
  Screenshot screenshot;
  std::vector<FixationRecord> fixations;
};

inline std::vector<RawSample> load_raw(const fs::path& root, OriginDataset origin) {
  const fs::path shots = root / kRawScreenshotDir;
  if (!fs::is_directory(shots)) throw IoError("missing directory " + shots.string());
  std::map<std::string, std::vector<FixationRecord>> fixations;
  if (fs::exists(root / kRawFixations)) fixations = dataset::read_fixations_csv(root / kRawFixations);
  std::vector<RawSample> out;
  for (const auto& path : io::list_pngs(shots)) {
    RawSample r;
    r.screenshot = {io::read_png_rgb(path), path.stem().string(), origin};
    if (auto it = fixations.find(r.screenshot.source_id); it != fixations.end()) r.fixations = it->second;
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_raw(const fs::path& root, const std::vector<DatasetSample>& samples) {
  dataset::make_dirs(root / kRawScreenshotDir);
  for (const auto& s : samples) io::write_png_rgb(root / kRawScreenshotDir / (s.stem() + ".png"), s.screenshot.pixels);
  dataset::write_fixations_csv(root / kRawFixations, samples);
}

struct CurationResult {
  std::vector<DatasetSample> samples;
  dataset::CurationReport report;
};

/// Runs every curation step. Fixations follow the crop and are dropped when
/// they fall outside it; samples left without fixations are dropped.
inline CurationResult curate(const std::vector<RawSample>& raw, const config::PipelineConfig& cfg,
                             const masks::ElementDetector& image_detector,
                             const masks::ElementDetector& text_detector) {
  cfg.validate();
  CurationResult out;
  out.report.input = raw.size();

  std::vector<DatasetSample> staged;
  for (const auto& r : raw) {
    if (dataset::black_fraction(r.screenshot.pixels, cfg.black_level) >= cfg.black_fraction) {
      ++out.report.empty_removed;
      continue;
    }
    const auto cropped = dataset::crop_black_regions_with_rect(r.screenshot, cfg.black_level);
    if (cropped.screenshot.dims() != r.screenshot.dims()) ++out.report.cropped;
    DatasetSample s;
    s.screenshot = cropped.screenshot;
    const Dims d = s.screenshot.dims();
    for (auto f : r.fixations) {
      f.x -= cropped.rect.x0;
      f.y -= cropped.rect.y0;
      if (f.x >= 0.0 && f.y >= 0.0 && f.x < d.width && f.y < d.height) s.fixations.push_back(f);
    }
    if (s.fixations.empty()) {
      ++out.report.no_fixations_removed;
      continue;
    }
    staged.push_back(std::move(s));
  }

  auto dedup = dataset::deduplicate(staged, cfg.dedup_mode, cfg.hamming_threshold);
  out.report.duplicates_removed = dedup.removed_pairs.size();

  for (auto& s : dedup.unique) {
    s.image_mask = masks::generate_image_mask(s.screenshot, image_detector);
    s.text_mask = masks::generate_text_mask(s.screenshot, text_detector);
    s.heatmap = to_grayscale(dataset::render_heatmap(s.fixations, s.screenshot.dims(), cfg.sigma_px));
  }
  dataset::split_dataset(dedup.unique, cfg.split);
  for (const auto& s : dedup.unique) {
    if (s.split == Split::train) ++out.report.train;
    else if (s.split == Split::val) ++out.report.val;
    else ++out.report.test;
  }
  out.report.exported = dedup.unique.size();
  out.samples = std::move(dedup.unique);
  return out;
}

inline CurationResult curate(const std::vector<RawSample>& raw, const config::PipelineConfig& cfg = {}) {
  const auto image = masks::heuristic_detector(MaskKind::image);
  const auto text = masks::heuristic_detector(MaskKind::text);
  return curate(raw, cfg, *image, *text);
}

}  // namespace mmian::pipeline
