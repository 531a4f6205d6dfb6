#pragma once

// Domain types shared by every module: rasters, heatmaps, masks, samples,
// plus the map normalizations used by the loss and the metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmian/errors.hpp"

namespace mmian {

struct Dims {
  int height = 0;
  int width = 0;

  std::size_t area() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  bool operator==(const Dims&) const = default;
};

inline std::string to_string(Dims d) { return std::to_string(d.height) + "x" + std::to_string(d.width); }

/// Dense row-major 2-D array.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols), data_(checked_area(rows, cols), fill) {}
  Grid(int rows, int cols, std::vector<T> values) : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != checked_area(rows, cols)) {
      throw ShapeError("grid value count " + std::to_string(data_.size()) + " does not match " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    }
  }
  explicit Grid(Dims d, T fill = T{}) : Grid(d.height, d.width, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Dims dims() const { return {rows_, cols_}; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * cols_ + x]; }
  const T& operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * cols_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Grid&) const = default;

 private:
  static std::size_t checked_area(int rows, int cols) {
    if (rows < 0 || cols < 0) throw ShapeError("negative grid dimensions");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// Interleaved 8-bit RGB raster.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int height, int width, std::uint8_t fill = 0)
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width * 3, fill) {
    if (height < 0 || width < 0) throw ShapeError("negative image dimensions");
  }
  RgbImage(int height, int width, std::vector<std::uint8_t> bytes)
      : height_(height), width_(width), data_(std::move(bytes)) {
    if (data_.size() != static_cast<std::size_t>(height) * width * 3) {
      throw ShapeError("rgb byte count does not match " + std::to_string(height) + "x" + std::to_string(width));
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  Dims dims() const { return {height_, width_}; }
  bool empty() const { return data_.empty(); }

  std::uint8_t* pixel(int y, int x) { return data_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3; }
  const std::uint8_t* pixel(int y, int x) const {
    return data_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3;
  }
  std::span<const std::uint8_t> bytes() const { return data_; }
  std::vector<std::uint8_t>& storage() { return data_; }

  bool operator==(const RgbImage&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

enum class OriginDataset { GazeMining, ContrastiveWebsite, FiWI, Synthetic };
enum class Normalization { raw, sum_to_one, grayscale_255 };
enum class MaskKind { image, text };
enum class Split { train, val, test };

inline std::string_view to_string(OriginDataset o) {
  switch (o) {
    case OriginDataset::GazeMining: return "GazeMining";
    case OriginDataset::ContrastiveWebsite: return "ContrastiveWebsite";
    case OriginDataset::FiWI: return "FiWI";
    case OriginDataset::Synthetic: return "Synthetic";
  }
  return "Synthetic";
}

inline OriginDataset parse_origin(std::string_view s) {
  for (auto o : {OriginDataset::GazeMining, OriginDataset::ContrastiveWebsite, OriginDataset::FiWI,
                 OriginDataset::Synthetic}) {
    if (to_string(o) == s) return o;
  }
  throw ValidationError("unknown origin dataset '" + std::string(s) + "'");
}

inline std::string_view to_string(MaskKind k) { return k == MaskKind::image ? "image" : "text"; }

inline MaskKind parse_mask_kind(std::string_view s) {
  if (s == "image") return MaskKind::image;
  if (s == "text") return MaskKind::text;
  throw ValidationError("unknown mask kind '" + std::string(s) + "'");
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

struct Screenshot {
  RgbImage pixels;
  std::string source_id;
  OriginDataset origin_dataset = OriginDataset::Synthetic;

  Dims dims() const { return pixels.dims(); }
  bool operator==(const Screenshot&) const = default;
};

struct FixationRecord {
  double x = 0.0;  // column
  double y = 0.0;  // row
  double duration_ms = 0.0;

  bool operator==(const FixationRecord&) const = default;
};

struct GazeHeatmap {
  Grid<double> values;
  Normalization normalization = Normalization::raw;

  Dims dims() const { return values.dims(); }
  bool operator==(const GazeHeatmap&) const = default;
};

struct BinaryMask {
  Grid<std::uint8_t> values;
  MaskKind kind = MaskKind::image;

  Dims dims() const { return values.dims(); }
  bool operator==(const BinaryMask&) const = default;
};

struct FixationBinaryMap {
  Grid<std::uint8_t> values;

  Dims dims() const { return values.dims(); }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(values.storage().begin(), values.storage().end(), 1));
  }
};

/// A screenshot bundled with its ground truth. Members other than the
/// screenshot are optional while a sample moves through curation.
struct DatasetSample {
  Screenshot screenshot;
  std::optional<GazeHeatmap> heatmap;
  std::vector<FixationRecord> fixations;
  std::optional<BinaryMask> image_mask;
  std::optional<BinaryMask> text_mask;
  Split split = Split::train;

  const std::string& stem() const { return screenshot.source_id; }
  bool operator==(const DatasetSample&) const = default;
};

/// Rescales a non-negative map so it sums to one.
inline GazeHeatmap normalize_sum(const GazeHeatmap& map) {
  if (map.normalization == Normalization::sum_to_one) return map;
  double total = 0.0;
  for (double v : map.values.values()) total += v;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DegenerateMap("cannot sum-normalize a map with total mass " + std::to_string(total));
  }
  GazeHeatmap out{map.values, Normalization::sum_to_one};
  for (double& v : out.values.storage()) v /= total;
  return out;
}

struct StandardizedMap {
  Grid<double> values;
  bool degenerate = false;
};

/// Zero-mean, unit-(population)-std rescaling. Constant input yields zeros
/// with the degenerate flag set.
inline StandardizedMap standardize(const Grid<double>& map) {
  if (map.size() < 2) throw ShapeError("standardize needs at least two pixels");
  const auto vals = map.values();
  const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
  if (*lo == *hi) return {Grid<double>(map.rows(), map.cols(), 0.0), true};

  const double n = static_cast<double>(vals.size());
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) return {Grid<double>(map.rows(), map.cols(), 0.0), true};

  StandardizedMap out{Grid<double>(map.rows(), map.cols()), false};
  for (std::size_t i = 0; i < vals.size(); ++i) out.values[i] = (vals[i] - mean) / sd;
  return out;
}

inline StandardizedMap standardize(const GazeHeatmap& map) { return standardize(map.values); }

/// Min-max scales to integers in [0,255], rounding half up. All-zero maps stay
/// zero and constant non-zero maps become 255. Maps already in grayscale_255
/// form pass through unchanged.
inline GazeHeatmap to_grayscale(const GazeHeatmap& map) {
  if (map.normalization == Normalization::grayscale_255) return map;
  GazeHeatmap out{Grid<double>(map.values.rows(), map.values.cols(), 0.0), Normalization::grayscale_255};
  if (map.values.empty()) return out;
  const auto vals = map.values.values();
  const auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (lo == hi) {
    if (hi != 0.0) std::fill(out.values.storage().begin(), out.values.storage().end(), 255.0);
    return out;
  }
  const double range = hi - lo;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    out.values[i] = std::clamp(std::floor((vals[i] - lo) / range * 255.0 + 0.5), 0.0, 255.0);
  }
  return out;
}

}  // namespace mmian
