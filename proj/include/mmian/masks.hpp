#pragma once

// Image/text element masks. Detectors are pluggable; the heuristic detectors
// here are deterministic stand-ins for learned UI-element and scene-text models.

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmian/core.hpp"

namespace mmian::masks {

/// Pixel rectangle, half-open on x1/y1.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  MaskKind kind = MaskKind::image;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool within(Dims d) const { return 0 <= x0 && x0 < x1 && x1 <= d.width && 0 <= y0 && y0 < y1 && y1 <= d.height; }
  bool operator==(const BoundingBox&) const = default;
};

class ElementDetector {
 public:
  virtual ~ElementDetector() = default;
  virtual std::vector<BoundingBox> detect(const Screenshot& screenshot) const = 0;
  virtual MaskKind kind_produced() const = 0;
};

/// Pixel is 1 iff covered by at least one box.
inline BinaryMask boxes_to_mask(const std::vector<BoundingBox>& boxes, Dims dims, MaskKind kind) {
  BinaryMask mask{Grid<std::uint8_t>(dims, 0), kind};
  for (const auto& b : boxes) {
    if (!b.within(dims)) {
      throw OutOfBounds("box [" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," + std::to_string(b.x1) +
                        "," + std::to_string(b.y1) + ") outside " + to_string(dims));
    }
    for (int y = b.y0; y < b.y1; ++y) std::fill(&mask.values(y, b.x0), &mask.values(y, b.x0) + b.width(), 1);
  }
  return mask;
}

inline BinaryMask boxes_to_mask(const std::vector<BoundingBox>& boxes, Dims dims) {
  return boxes_to_mask(boxes, dims, boxes.empty() ? MaskKind::image : boxes.front().kind);
}

namespace detail {

inline BinaryMask generate_mask(const Screenshot& s, const ElementDetector& detector, MaskKind expected) {
  if (detector.kind_produced() != expected) {
    throw ConfigError("detector produces " + std::string(to_string(detector.kind_produced())) + " boxes, expected " +
                      std::string(to_string(expected)));
  }
  std::vector<BoundingBox> boxes;
  try {
    boxes = detector.detect(s);
    return boxes_to_mask(boxes, s.dims(), expected);
  } catch (const DetectorError&) {
    throw;
  } catch (const std::exception& e) {
    throw DetectorError(std::string(to_string(expected)) + " detector failed on '" + s.source_id + "'", e.what());
  }
}

struct Component {
  int x0, y0, x1, y1;  // half-open
};

/// Bounding boxes of connected components of a binary grid.
inline std::vector<Component> connected_components(const Grid<std::uint8_t>& on, bool eight_connected) {
  std::vector<Component> out;
  Grid<std::uint8_t> seen(on.rows(), on.cols(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < on.rows(); ++y) {
    for (int x = 0; x < on.cols(); ++x) {
      if (!on(y, x) || seen(y, x)) continue;
      Component c{x, y, x + 1, y + 1};
      stack.assign(1, {y, x});
      seen(y, x) = 1;
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        c.x0 = std::min(c.x0, cx);
        c.y0 = std::min(c.y0, cy);
        c.x1 = std::max(c.x1, cx + 1);
        c.y1 = std::max(c.y1, cy + 1);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dy == 0 && dx == 0) || (!eight_connected && dy != 0 && dx != 0)) continue;
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || nx < 0 || ny >= on.rows() || nx >= on.cols()) continue;
            if (on(ny, nx) && !seen(ny, nx)) {
              seen(ny, nx) = 1;
              stack.emplace_back(ny, nx);
            }
          }
        }
      }
      out.push_back(c);
    }
  }
  return out;
}

inline double luminance(const std::uint8_t* p) { return 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]; }

}  // namespace detail

inline BinaryMask generate_image_mask(const Screenshot& s, const ElementDetector& detector) {
  return detail::generate_mask(s, detector, MaskKind::image);
}

inline BinaryMask generate_text_mask(const Screenshot& s, const ElementDetector& detector) {
  return detail::generate_mask(s, detector, MaskKind::text);
}

/// Tries `primary`; on DetectorError falls back to `fallback`.
inline BinaryMask generate_mask_with_fallback(const Screenshot& s, const ElementDetector& primary,
                                              const ElementDetector& fallback) {
  try {
    return detail::generate_mask(s, primary, primary.kind_produced());
  } catch (const DetectorError&) {
    return detail::generate_mask(s, fallback, fallback.kind_produced());
  }
}

/// Photograph-like regions: connected areas of high local colour variance at
/// least `min_side` pixels on each side.
class HeuristicImageDetector final : public ElementDetector {
 public:
  static constexpr int kRadius = 1;
  static constexpr double kVarianceThreshold = 100.0;
  static constexpr int kMinSide = 32;

  MaskKind kind_produced() const override { return MaskKind::image; }

  std::vector<BoundingBox> detect(const Screenshot& s) const override {
    const RgbImage& img = s.pixels;
    const int h = img.height(), w = img.width();
    Grid<std::uint8_t> busy(h, w, 0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::array<double, 3> sum{}, sq{};
        int n = 0;
        for (int yy = std::max(0, y - kRadius); yy <= std::min(h - 1, y + kRadius); ++yy) {
          for (int xx = std::max(0, x - kRadius); xx <= std::min(w - 1, x + kRadius); ++xx) {
            const auto* p = img.pixel(yy, xx);
            for (int c = 0; c < 3; ++c) {
              sum[c] += p[c];
              sq[c] += static_cast<double>(p[c]) * p[c];
            }
            ++n;
          }
        }
        double var = 0.0;
        for (int c = 0; c < 3; ++c) var += sq[c] / n - (sum[c] / n) * (sum[c] / n);
        busy(y, x) = var > kVarianceThreshold ? 1 : 0;
      }
    }
    std::vector<BoundingBox> out;
    for (const auto& c : detail::connected_components(busy, true)) {
      // The variance window bleeds kRadius pixels past a region's true edge.
      BoundingBox b{c.x0 + (c.x0 > 0 ? kRadius : 0), c.y0 + (c.y0 > 0 ? kRadius : 0),
                    c.x1 - (c.x1 < w ? kRadius : 0), c.y1 - (c.y1 < h ? kRadius : 0), MaskKind::image};
      if (b.width() >= kMinSide && b.height() >= kMinSide) out.push_back(b);
    }
    return out;
  }
};

/// Text lines: horizontal runs of dense dark/light alternation, 8-40 px tall,
/// drawn in two tones. Runs separated by fewer than kMergeGap pixels belong to
/// the same line.
class HeuristicTextDetector final : public ElementDetector {
 public:
  static constexpr double kEdgeContrast = 48.0;
  static constexpr int kMergeGap = 4;
  static constexpr int kMinTransitions = 4;
  static constexpr int kMinHeight = 8;
  static constexpr int kMaxHeight = 40;
  static constexpr int kMinWidth = 8;
  static constexpr double kToneTolerance = 24.0;
  static constexpr double kMinTwoToneShare = 0.9;

  MaskKind kind_produced() const override { return MaskKind::text; }

  std::vector<BoundingBox> detect(const Screenshot& s) const override {
    const RgbImage& img = s.pixels;
    const int h = img.height(), w = img.width();
    Grid<std::uint8_t> runs(h, w, 0);
    std::vector<int> transitions;
    for (int y = 0; y < h; ++y) {
      transitions.clear();
      for (int x = 1; x < w; ++x) {
        if (std::abs(detail::luminance(img.pixel(y, x)) - detail::luminance(img.pixel(y, x - 1))) > kEdgeContrast) {
          transitions.push_back(x);
        }
      }
      std::size_t start = 0;
      for (std::size_t i = 1; i <= transitions.size(); ++i) {
        if (i < transitions.size() && transitions[i] - transitions[i - 1] < kMergeGap) continue;
        if (i - start >= static_cast<std::size_t>(kMinTransitions)) {
          std::fill(&runs(y, transitions[start]), &runs(y, 0) + transitions[i - 1], 1);
        }
        start = i;
      }
    }

    std::vector<BoundingBox> boxes;
    for (const auto& c : detail::connected_components(runs, false)) {
      boxes.push_back({c.x0, c.y0, c.x1, c.y1, MaskKind::text});
    }
    merge_horizontal(boxes);

    std::vector<BoundingBox> out;
    for (const auto& b : boxes) {
      if (b.height() >= kMinHeight && b.height() <= kMaxHeight && b.width() >= kMinWidth && two_tone(img, b)) {
        out.push_back(b);
      }
    }
    std::sort(out.begin(), out.end(), [](const BoundingBox& a, const BoundingBox& b) {
      return std::pair(a.y0, a.x0) < std::pair(b.y0, b.x0);
    });
    return out;
  }

 private:
  // Share of pixels near the darkest or brightest luminance in the box. Ink on
  // a flat background scores close to 1; photographic texture does not.
  static bool two_tone(const RgbImage& img, const BoundingBox& b) {
    double lo = 255.0, hi = 0.0;
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) {
        const double l = detail::luminance(img.pixel(y, x));
        lo = std::min(lo, l);
        hi = std::max(hi, l);
      }
    std::size_t near = 0;
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) {
        const double l = detail::luminance(img.pixel(y, x));
        near += (l - lo <= kToneTolerance || hi - l <= kToneTolerance) ? 1 : 0;
      }
    return static_cast<double>(near) >= kMinTwoToneShare * static_cast<double>(b.width() * b.height());
  }

  static void merge_horizontal(std::vector<BoundingBox>& boxes) {
    bool merged = true;
    while (merged) {
      merged = false;
      for (std::size_t i = 0; i < boxes.size() && !merged; ++i) {
        for (std::size_t j = i + 1; j < boxes.size(); ++j) {
          auto& a = boxes[i];
          const auto& b = boxes[j];
          const bool overlap_y = a.y0 < b.y1 && b.y0 < a.y1;
          const int gap = std::max(a.x0, b.x0) - std::min(a.x1, b.x1);
          if (overlap_y && gap < kMergeGap) {
            a = {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1), a.kind};
            boxes.erase(boxes.begin() + static_cast<std::ptrdiff_t>(j));
            merged = true;
            break;
          }
        }
      }
    }
  }
};

inline std::unique_ptr<ElementDetector> heuristic_detector(MaskKind kind) {
  if (kind == MaskKind::image) return std::make_unique<HeuristicImageDetector>();
  return std::make_unique<HeuristicTextDetector>();
}

inline nlohmann::ordered_json boxes_to_json(const std::vector<BoundingBox>& boxes) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& b : boxes) {
    arr.push_back({{"kind", std::string(to_string(b.kind))}, {"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}});
  }
  return arr;
}

inline std::vector<BoundingBox> boxes_from_json(const nlohmann::ordered_json& arr) {
  if (!arr.is_array()) throw ValidationError("box list must be a JSON array");
  std::vector<BoundingBox> out;
  try {
    for (const auto& o : arr) {
      out.push_back({o.at("x0").get<int>(), o.at("y0").get<int>(), o.at("x1").get<int>(), o.at("y1").get<int>(),
                     parse_mask_kind(o.at("kind").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed box: ") + e.what());
  }
  return out;
}

}  // namespace mmian::masks
