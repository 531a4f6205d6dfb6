#pragma once

// Curation primitives: empty-frame filtering, black-region cropping,
// deduplication, fixation heatmap rendering, splitting, and the on-disk
// four-subfolder dataset layout.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmian/core.hpp"
#include "mmian/image_io.hpp"
#include "mmian/random.hpp"

namespace mmian::dataset {

namespace fs = std::filesystem;

/// Per-channel level below which a pixel counts as black.
inline constexpr int kBlackLevel = 8;
inline constexpr double kDefaultBlackFraction = 0.99;
inline constexpr double kDefaultSigmaPx = 35.0;
inline constexpr int kDefaultHammingThreshold = 4;

inline bool is_black(const std::uint8_t* px, int black_level = kBlackLevel) {
  return px[0] < black_level && px[1] < black_level && px[2] < black_level;
}

inline double black_fraction(const RgbImage& img, int black_level = kBlackLevel) {
  if (img.empty()) return 1.0;
  std::size_t black = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) black += is_black(img.pixel(y, x), black_level) ? 1 : 0;
  return static_cast<double>(black) / static_cast<double>(img.dims().area());
}

struct FilterResult {
  std::vector<Screenshot> kept;
  std::vector<Screenshot> dropped;
};

/// Drops screenshots whose black-pixel fraction reaches the threshold.
inline FilterResult filter_empty(const std::vector<Screenshot>& screenshots,
                                 double black_fraction_threshold = kDefaultBlackFraction,
                                 int black_level = kBlackLevel) {
  if (!(black_fraction_threshold > 0.0 && black_fraction_threshold <= 1.0)) {
    throw ConfigError("black_fraction_threshold must lie in (0,1]");
  }
  FilterResult out;
  for (const auto& s : screenshots) {
    if (black_fraction(s.pixels, black_level) >= black_fraction_threshold) {
      out.dropped.push_back(s);
    } else {
      out.kept.push_back(s);
    }
  }
  return out;
}

/// Axis-aligned crop rectangle, half-open on x1/y1.
struct CropRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool operator==(const CropRect&) const = default;
};

/// Minimal bounding box of non-black content.
inline CropRect content_bounds(const RgbImage& img, int black_level = kBlackLevel) {
  int x0 = img.width(), y0 = img.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (is_black(img.pixel(y, x), black_level)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) throw DegenerateScreenshot("screenshot is fully black");
  return {x0, y0, x1 + 1, y1 + 1};
}

inline RgbImage crop(const RgbImage& img, const CropRect& r) {
  RgbImage out(r.height(), r.width());
  for (int y = 0; y < r.height(); ++y) {
    std::copy(img.pixel(r.y0 + y, r.x0), img.pixel(r.y0 + y, r.x0) + 3 * r.width(), out.pixel(y, 0));
  }
  return out;
}

struct CropResult {
  Screenshot screenshot;
  CropRect rect;
};

/// Crop plus the rectangle used, so fixations can be re-based.
inline CropResult crop_black_regions_with_rect(const Screenshot& s, int black_level = kBlackLevel) {
  const CropRect r = content_bounds(s.pixels, black_level);
  if (r == CropRect{0, 0, s.pixels.width(), s.pixels.height()}) return {s, r};
  return {Screenshot{crop(s.pixels, r), s.source_id, s.origin_dataset}, r};
}

inline Screenshot crop_black_regions(const Screenshot& s, int black_level = kBlackLevel) {
  return crop_black_regions_with_rect(s, black_level).screenshot;
}

/// 64-bit difference hash: luminance box-averaged onto a 9x8 grid, one bit
/// per horizontally adjacent pair (bit set when left < right), row-major.
inline std::uint64_t dhash(const RgbImage& img) {
  constexpr int kCols = 9, kRows = 8;
  if (img.empty()) return 0;
  double cells[kRows][kCols];
  for (int r = 0; r < kRows; ++r) {
    int ya = r * img.height() / kRows;
    int yb = std::max(ya + 1, (r + 1) * img.height() / kRows);
    yb = std::min(yb, img.height());
    ya = std::min(ya, yb - 1);
    for (int c = 0; c < kCols; ++c) {
      int xa = c * img.width() / kCols;
      int xb = std::max(xa + 1, (c + 1) * img.width() / kCols);
      xb = std::min(xb, img.width());
      xa = std::min(xa, xb - 1);
      double sum = 0.0;
      for (int y = ya; y < yb; ++y) {
        for (int x = xa; x < xb; ++x) {
          const auto* p = img.pixel(y, x);
          sum += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        }
      }
      cells[r][c] = sum / static_cast<double>((yb - ya) * (xb - xa));
    }
  }
  std::uint64_t bits = 0;
  int bit = 0;
  for (int r = 0; r < kRows; ++r) {
    for (int c = 0; c + 1 < kCols; ++c, ++bit) {
      if (cells[r][c] < cells[r][c + 1]) bits |= (std::uint64_t{1} << bit);
    }
  }
  return bits;
}

inline int hamming_distance(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

enum class DedupMode { exact, perceptual };

struct DedupResult {
  std::vector<DatasetSample> unique;
  /// (index of removed sample, index of the kept sample it duplicates), input indexing.
  std::vector<std::pair<std::size_t, std::size_t>> removed_pairs;
};

/// Collapses duplicate screenshots onto their first occurrence.
inline DedupResult deduplicate(const std::vector<DatasetSample>& samples, DedupMode mode = DedupMode::exact,
                               int hamming_threshold = kDefaultHammingThreshold) {
  if (hamming_threshold < 0) throw ConfigError("hamming_threshold must be >= 0");
  DedupResult out;
  std::vector<std::size_t> kept_index;
  if (mode == DedupMode::exact) {
    std::unordered_multimap<std::size_t, std::size_t> by_hash;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& px = samples[i].screenshot.pixels;
      const std::string_view bytes(reinterpret_cast<const char*>(px.bytes().data()), px.bytes().size());
      const std::size_t h = std::hash<std::string_view>{}(bytes) ^ (static_cast<std::size_t>(px.width()) << 1);
      bool dup = false;
      auto [lo, hi] = by_hash.equal_range(h);
      for (auto it = lo; it != hi; ++it) {
        if (samples[it->second].screenshot.pixels == px) {
          out.removed_pairs.emplace_back(i, it->second);
          dup = true;
          break;
        }
      }
      if (!dup) {
        by_hash.emplace(h, i);
        out.unique.push_back(samples[i]);
      }
    }
    return out;
  }

  std::vector<std::pair<std::uint64_t, std::size_t>> kept;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::uint64_t h = dhash(samples[i].screenshot.pixels);
    bool dup = false;
    for (const auto& [kh, ki] : kept) {
      if (hamming_distance(h, kh) <= hamming_threshold) {
        out.removed_pairs.emplace_back(i, ki);
        dup = true;
        break;
      }
    }
    if (!dup) {
      kept.emplace_back(h, i);
      out.unique.push_back(samples[i]);
    }
  }
  return out;
}

inline void check_fixations(const std::vector<FixationRecord>& fixations, Dims dims) {
  for (const auto& f : fixations) {
    if (!(f.x >= 0.0 && f.x < dims.width && f.y >= 0.0 && f.y < dims.height)) {
      throw OutOfBounds("fixation (" + std::to_string(f.x) + ", " + std::to_string(f.y) + ") outside " +
                        to_string(dims));
    }
    if (!(f.duration_ms >= 0.0)) throw ValidationError("fixation duration must be non-negative");
  }
}

/// Duration-weighted Gaussian accumulation before any rescaling. The kernel is
/// truncated at 3 sigma.
inline Grid<double> accumulate_fixations(const std::vector<FixationRecord>& fixations, Dims dims, double sigma_px) {
  if (!(sigma_px > 0.0)) throw ConfigError("sigma_px must be positive");
  check_fixations(fixations, dims);
  Grid<double> acc(dims, 0.0);
  const double radius = 3.0 * sigma_px;
  const double inv_two_var = 1.0 / (2.0 * sigma_px * sigma_px);
  for (const auto& f : fixations) {
    const int ya = std::max(0, static_cast<int>(std::ceil(f.y - radius)));
    const int yb = std::min(dims.height - 1, static_cast<int>(std::floor(f.y + radius)));
    const int xa = std::max(0, static_cast<int>(std::ceil(f.x - radius)));
    const int xb = std::min(dims.width - 1, static_cast<int>(std::floor(f.x + radius)));
    for (int y = ya; y <= yb; ++y) {
      const double dy = y - f.y;
      for (int x = xa; x <= xb; ++x) {
        const double dx = x - f.x;
        const double d2 = dx * dx + dy * dy;
        if (d2 > radius * radius) continue;
        acc(y, x) += f.duration_ms * std::exp(-d2 * inv_two_var);
      }
    }
  }
  return acc;
}

/// Accumulated fixations min-max scaled into [0,1].
inline GazeHeatmap render_heatmap(const std::vector<FixationRecord>& fixations, Dims dims,
                                  double sigma_px = kDefaultSigmaPx) {
  Grid<double> acc = accumulate_fixations(fixations, dims, sigma_px);
  const auto [lo_it, hi_it] = std::minmax_element(acc.storage().begin(), acc.storage().end());
  if (lo_it == acc.storage().end()) return {acc, Normalization::raw};
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    std::fill(acc.storage().begin(), acc.storage().end(), hi > 0.0 ? 1.0 : 0.0);
    return {acc, Normalization::raw};
  }
  for (double& v : acc.storage()) v = (v - lo) / (hi - lo);
  return {acc, Normalization::raw};
}

struct SplitSpec {
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0) {
      throw ConfigError("split fractions must be non-negative");
    }
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
      throw ConfigError("split fractions must sum to 1");
    }
  }
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
  bool operator==(const SplitSizes&) const = default;
};

/// Train and val sizes are rounded; test takes the remainder.
inline SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  const auto round_count = [n](double f) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) * f));
  };
  SplitSizes s;
  s.train = std::min(n, round_count(spec.train_fraction));
  s.val = std::min(n - s.train, round_count(spec.val_fraction));
  s.test = n - s.train - s.val;
  return s;
}

/// Seeded assignment of split labels; element i labels sample i.
inline std::vector<Split> split_dataset(std::size_t n, const SplitSpec& spec) {
  const SplitSizes sizes = split_sizes(n, spec);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);
  std::vector<Split> labels(n, Split::test);
  for (std::size_t k = 0; k < n; ++k) {
    labels[order[k]] = k < sizes.train ? Split::train : (k < sizes.train + sizes.val ? Split::val : Split::test);
  }
  return labels;
}

inline void split_dataset(std::vector<DatasetSample>& samples, const SplitSpec& spec) {
  const auto labels = split_dataset(samples.size(), spec);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].split = labels[i];
}

struct CurationReport {
  std::size_t input = 0;
  std::size_t empty_removed = 0;
  std::size_t cropped = 0;
  std::size_t no_fixations_removed = 0;
  std::size_t duplicates_removed = 0;
  std::size_t exported = 0;
  std::size_t train = 0, val = 0, test = 0;

  nlohmann::ordered_json to_json() const {
    return {{"input", input},
            {"empty_removed", empty_removed},
            {"cropped", cropped},
            {"no_fixations_removed", no_fixations_removed},
            {"duplicates_removed", duplicates_removed},
            {"exported", exported},
            {"splits", {{"train", train}, {"val", val}, {"test", test}}}};
  }
};

inline void validate_complete(const DatasetSample& s) {
  const std::string& stem = s.stem();
  if (stem.empty()) throw ValidationError("source_id", stem);
  if (s.screenshot.pixels.empty()) throw ValidationError("screenshot", stem);
  const Dims d = s.screenshot.dims();
  if (!s.heatmap || s.heatmap->dims() != d) throw ValidationError("heatmap", stem);
  if (!s.image_mask || s.image_mask->dims() != d) throw ValidationError("image_mask", stem);
  if (!s.text_mask || s.text_mask->dims() != d) throw ValidationError("text_mask", stem);
}

inline constexpr const char* kDataDir = "data";
inline constexpr const char* kLabelDir = "label";
inline constexpr const char* kImageMaskDir = "Imagemask";
inline constexpr const char* kTextMaskDir = "TextMask";
inline constexpr const char* kManifest = "manifest.json";

inline void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes data/, label/, Imagemask/, TextMask/ and manifest.json under root.
inline CurationReport export_dataset(const std::vector<DatasetSample>& samples, const fs::path& root) {
  std::map<std::string, int> seen;
  for (const auto& s : samples) {
    validate_complete(s);
    if (seen[s.stem()]++) throw ValidationError("duplicate stem '" + s.stem() + "'");
  }
  for (const char* sub : {kDataDir, kLabelDir, kImageMaskDir, kTextMaskDir}) make_dirs(root / sub);

  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  CurationReport report;
  for (const auto& s : samples) {
    const std::string file = s.stem() + ".png";
    io::write_png_rgb(root / kDataDir / file, s.screenshot.pixels);
    io::write_heatmap_png(root / kLabelDir / file, *s.heatmap);
    io::write_mask_png(root / kImageMaskDir / file, *s.image_mask);
    io::write_mask_png(root / kTextMaskDir / file, *s.text_mask);

    auto fix = nlohmann::ordered_json::array();
    for (const auto& f : s.fixations) fix.push_back({{"x", f.x}, {"y", f.y}, {"duration_ms", f.duration_ms}});
    manifest[s.stem()] = {{"origin_dataset", std::string(to_string(s.screenshot.origin_dataset))},
                          {"split", std::string(to_string(s.split))},
                          {"fixations", std::move(fix)}};
    ++report.exported;
    (s.split == Split::train ? report.train : s.split == Split::val ? report.val : report.test)++;
  }
  report.input = report.exported;
  write_text_file(root / kManifest, manifest.dump(2) + "\n");
  return report;
}

/// Inverse of export_dataset; samples come back in manifest order.
inline std::vector<DatasetSample> import_dataset(const fs::path& root) {
  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(read_text_file(root / kManifest));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  if (!manifest.is_object()) throw ValidationError("manifest must be a JSON object keyed by stem");

  std::vector<DatasetSample> out;
  out.reserve(manifest.size());
  for (const auto& [stem, entry] : manifest.items()) {
    const std::string file = stem + ".png";
    DatasetSample s;
    try {
      s.screenshot.source_id = stem;
      s.screenshot.origin_dataset = parse_origin(entry.at("origin_dataset").get<std::string>());
      s.split = parse_split(entry.at("split").get<std::string>());
      for (const auto& f : entry.at("fixations")) {
        s.fixations.push_back({f.at("x").get<double>(), f.at("y").get<double>(), f.at("duration_ms").get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("manifest entry for '" + stem + "' is malformed: " + e.what());
    }
    s.screenshot.pixels = io::read_png_rgb(root / kDataDir / file);
    s.heatmap = io::read_heatmap_png(root / kLabelDir / file);
    s.image_mask = io::read_mask_png(root / kImageMaskDir / file, MaskKind::image);
    s.text_mask = io::read_mask_png(root / kTextMaskDir / file, MaskKind::text);
    validate_complete(s);
    out.push_back(std::move(s));
  }
  return out;
}

/// Fixation CSV with header `stem,x,y,duration_ms`. Records keep file order
/// within each stem.
inline std::map<std::string, std::vector<FixationRecord>> read_fixations_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty fixation CSV " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "stem,x,y,duration_ms") throw ValidationError("fixation CSV header must be 'stem,x,y,duration_ms'");

  std::map<std::string, std::vector<FixationRecord>> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) throw ValidationError("fixation CSV line " + std::to_string(lineno) + ": expected 4 fields");
    try {
      out[cells[0]].push_back({std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])});
    } catch (const std::exception&) {
      throw ValidationError("fixation CSV line " + std::to_string(lineno) + ": non-numeric field");
    }
  }
  return out;
}

inline void write_fixations_csv(const fs::path& path, const std::vector<DatasetSample>& samples) {
  std::ostringstream out;
  out.precision(17);
  out << "stem,x,y,duration_ms\n";
  for (const auto& s : samples)
    for (const auto& f : s.fixations) out << s.stem() << ',' << f.x << ',' << f.y << ',' << f.duration_ms << '\n';
  write_text_file(path, out.str());
}

}  // namespace mmian::dataset
