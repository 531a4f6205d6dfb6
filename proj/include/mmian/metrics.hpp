#pragma once

// Saliency evaluation metrics: NSS, AUC-Judd, CC and KLD, plus the per-sample
// report used by the evaluate command.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmian/core.hpp"

namespace mmian::metrics {

inline constexpr double kDefaultEpsilon = 1e-7;

enum class NssMode {
  standard,      // mean over fixated pixels
  paper_literal  // sum over fixated pixels divided by total pixel count
};

inline void require_same_dims(Dims a, Dims b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": dims " + to_string(a) + " vs " + to_string(b));
}

inline double nss(const GazeHeatmap& pred, const FixationBinaryMap& fixmap, NssMode mode = NssMode::standard) {
  require_same_dims(pred.dims(), fixmap.dims(), "nss");
  const std::size_t fixated = fixmap.count();
  if (fixated == 0) throw NoFixations("nss needs at least one fixated pixel");
  const StandardizedMap z = standardize(pred);
  if (z.degenerate) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < z.values.size(); ++i)
    if (fixmap.values[i]) sum += z.values[i];
  const double denom = mode == NssMode::standard ? static_cast<double>(fixated) : static_cast<double>(z.values.size());
  return sum / denom;
}

/// ROC area with thresholds at the distinct saliency values of fixated pixels.
inline double auc_judd(const GazeHeatmap& pred, const FixationBinaryMap& fixmap) {
  require_same_dims(pred.dims(), fixmap.dims(), "auc_judd");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < pred.values.size(); ++i) (fixmap.values[i] ? pos : neg).push_back(pred.values[i]);
  if (pos.empty() || neg.empty()) {
    throw DegenerateGroundTruth("auc_judd needs both fixated and non-fixated pixels");
  }
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());

  double area = 0.0, prev_fpr = 0.0, prev_tpr = 0.0;
  std::size_t ip = 0, in = 0;
  while (ip < pos.size()) {
    const double t = pos[ip];
    while (ip < pos.size() && pos[ip] >= t) ++ip;
    while (in < neg.size() && neg[in] >= t) ++in;
    const double tpr = ip / np, fpr = in / nn;
    area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
    prev_fpr = fpr;
    prev_tpr = tpr;
  }
  area += (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0;
  return std::clamp(area, 0.0, 1.0);
}

/// Pearson correlation of the flattened maps.
inline double cc(const GazeHeatmap& pred, const GazeHeatmap& gt) {
  require_same_dims(pred.dims(), gt.dims(), "cc");
  const auto a = pred.values.values();
  const auto b = gt.values.values();
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const auto constant = [](std::span<const double> v) { return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end(); };
  if (constant(a) || constant(b) || !(saa > 0.0) || !(sbb > 0.0)) throw ZeroVariance("cc undefined for a constant map");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// sum_i Y_i ln(eps + Y_i / (eps + Yhat_i)) over sum-normalized maps.
inline double kld(const GazeHeatmap& pred, const GazeHeatmap& gt, double epsilon = kDefaultEpsilon) {
  require_same_dims(pred.dims(), gt.dims(), "kld");
  if (!(epsilon > 0.0)) throw ConfigError("kld epsilon must be positive");
  const GazeHeatmap p = normalize_sum(pred);
  const GazeHeatmap q = normalize_sum(gt);
  double total = 0.0;
  for (std::size_t i = 0; i < q.values.size(); ++i) {
    total += q.values[i] * std::log(epsilon + q.values[i] / (epsilon + p.values[i]));
  }
  if (!std::isfinite(total)) throw NumericalError("kld is not finite");
  return total;
}

/// Marks the pixel containing each fixation.
inline FixationBinaryMap fixation_map(const std::vector<FixationRecord>& fixations, Dims dims) {
  FixationBinaryMap out{Grid<std::uint8_t>(dims, 0)};
  for (const auto& f : fixations) {
    const int x = static_cast<int>(std::floor(f.x));
    const int y = static_cast<int>(std::floor(f.y));
    if (x < 0 || y < 0 || x >= dims.width || y >= dims.height) {
      throw OutOfBounds("fixation outside " + to_string(dims));
    }
    out.values(y, x) = 1;
  }
  return out;
}

/// Fixation map derived from a heatmap: pixels at or above the given
/// nearest-rank percentile of the non-zero values.
inline FixationBinaryMap fixation_map_from_heatmap(const GazeHeatmap& gt, double percentile = 0.9) {
  FixationBinaryMap out{Grid<std::uint8_t>(gt.dims(), 0)};
  std::vector<double> nonzero;
  for (double v : gt.values.values())
    if (v > 0.0) nonzero.push_back(v);
  if (nonzero.empty()) return out;
  std::sort(nonzero.begin(), nonzero.end());
  const auto rank = static_cast<std::size_t>(std::ceil(percentile * static_cast<double>(nonzero.size())));
  const double threshold = nonzero[std::clamp<std::size_t>(rank, 1, nonzero.size()) - 1];
  for (std::size_t i = 0; i < gt.values.size(); ++i) out.values[i] = gt.values[i] >= threshold && gt.values[i] > 0.0;
  return out;
}

enum class FixationSource { fixations_if_available, heatmap_percentile };

struct MetricsConfig {
  NssMode nss_mode = NssMode::standard;
  double epsilon = kDefaultEpsilon;
  FixationSource fixation_source = FixationSource::fixations_if_available;
  double percentile = 0.9;
};

struct SampleMetrics {
  std::string stem;
  double nss = 0.0, auc_judd = 0.0, cc = 0.0, kld = 0.0;
};

struct Exclusion {
  std::string stem;
  std::string reason;
};

struct MetricReport {
  double nss = 0.0, auc_judd = 0.0, cc = 0.0, kld = 0.0;
  std::size_t n_samples = 0;
  std::vector<SampleMetrics> per_sample;
  std::vector<Exclusion> excluded;

  void add(SampleMetrics row) {
    per_sample.push_back(std::move(row));
    recompute();
  }

  void recompute() {
    n_samples = per_sample.size();
    nss = auc_judd = cc = kld = 0.0;
    if (per_sample.empty()) return;
    for (const auto& r : per_sample) {
      nss += r.nss;
      auc_judd += r.auc_judd;
      cc += r.cc;
      kld += r.kld;
    }
    const double n = static_cast<double>(n_samples);
    nss /= n;
    auc_judd /= n;
    cc /= n;
    kld /= n;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(10);
    out << "stem,nss,auc_judd,cc,kld\n";
    for (const auto& r : per_sample) out << r.stem << ',' << r.nss << ',' << r.auc_judd << ',' << r.cc << ',' << r.kld << '\n';
    out << "MEAN," << nss << ',' << auc_judd << ',' << cc << ',' << kld << '\n';
    return out.str();
  }

  nlohmann::ordered_json to_json() const {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : per_sample) {
      rows.push_back({{"stem", r.stem}, {"nss", r.nss}, {"auc_judd", r.auc_judd}, {"cc", r.cc}, {"kld", r.kld}});
    }
    auto ex = nlohmann::ordered_json::array();
    for (const auto& e : excluded) ex.push_back({{"stem", e.stem}, {"reason", e.reason}});
    return {{"n_samples", n_samples},
            {"mean", {{"nss", nss}, {"auc_judd", auc_judd}, {"cc", cc}, {"kld", kld}}},
            {"per_sample", std::move(rows)},
            {"excluded", std::move(ex)}};
  }
};

/// All four metrics for one prediction. Throws on any metric error.
inline SampleMetrics score(const std::string& stem, const GazeHeatmap& pred, const GazeHeatmap& gt,
                           const FixationBinaryMap& fixmap, const MetricsConfig& cfg = {}) {
  return {stem, nss(pred, fixmap, cfg.nss_mode), auc_judd(pred, fixmap), cc(pred, gt), kld(pred, gt, cfg.epsilon)};
}

/// Scores one prediction into the report, recording an exclusion on failure.
inline void score_into(MetricReport& report, const std::string& stem, const GazeHeatmap& pred, const GazeHeatmap& gt,
                       const std::vector<FixationRecord>& fixations, const MetricsConfig& cfg = {}) {
  try {
    const FixationBinaryMap fixmap =
        cfg.fixation_source == FixationSource::fixations_if_available && !fixations.empty()
            ? fixation_map(fixations, gt.dims())
            : fixation_map_from_heatmap(gt, cfg.percentile);
    report.add(score(stem, pred, gt, fixmap, cfg));
  } catch (const Error& e) {
    report.excluded.push_back({stem, e.what()});
  }
}

}  // namespace mmian::metrics
