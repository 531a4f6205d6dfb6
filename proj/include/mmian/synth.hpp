#pragma once

// Deterministic webpage-like samples: solid background, noise-filled "image"
// blocks and stroke-pattern "text" lines, with fixations concentrated on one
// focus block.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "mmian/core.hpp"
#include "mmian/dataset.hpp"
#include "mmian/masks.hpp"
#include "mmian/random.hpp"

namespace mmian::synth {

struct SynthPage {
  DatasetSample sample;
  std::vector<masks::BoundingBox> image_blocks;
  std::vector<masks::BoundingBox> text_blocks;
  /// Block that receives most fixations; nullopt when nothing could be placed.
  std::optional<masks::BoundingBox> focus_block;
};

struct SynthOptions {
  double sigma_px = dataset::kDefaultSigmaPx;
  double focus_share = 0.7;
};

namespace detail {

inline bool overlaps(const masks::BoundingBox& a, const masks::BoundingBox& b, int margin) {
  return a.x0 < b.x1 + margin && b.x0 < a.x1 + margin && a.y0 < b.y1 + margin && b.y0 < a.y1 + margin;
}

inline void fill_rect(RgbImage& img, const masks::BoundingBox& r, std::uint8_t v) {
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      auto* p = img.pixel(y, x);
      p[0] = p[1] = p[2] = v;
    }
}

inline FixationRecord fixation_in(Rng& rng, const masks::BoundingBox& r) {
  return {rng.uniform(r.x0, r.x1), rng.uniform(r.y0, r.y1), rng.uniform(100.0, 600.0)};
}

}  // namespace detail

inline SynthPage synth_page(Rng& rng, Dims dims, const std::string& stem, const SynthOptions& opt = {}) {
  using masks::BoundingBox;
  const int h = dims.height, w = dims.width;
  if (h < 1 || w < 1) throw ConfigError("synthetic page dims must be positive");
  SynthPage page;
  Screenshot& shot = page.sample.screenshot;
  shot.source_id = stem;
  shot.origin_dataset = OriginDataset::Synthetic;
  shot.pixels = RgbImage(h, w);

  const auto bg = static_cast<std::uint8_t>(rng.uniform_int(225, 250));
  std::fill(shot.pixels.storage().begin(), shot.pixels.storage().end(), bg);

  const int short_side = std::min(h, w);
  const int margin = std::clamp(short_side / 32, 1, 8);
  const int img_min = std::clamp(short_side / 6, 4, 48);
  const int img_max_w = std::max(img_min, w / 3), img_max_h = std::max(img_min, h / 3);
  const int txt_h_lo = std::clamp(h / 16, 2, 8);
  const int txt_h_hi = std::max(txt_h_lo, std::min(20, h / 10));
  const int txt_w_lo = std::max(6, w / 8), txt_w_hi = std::max(txt_w_lo, w / 2);

  std::vector<BoundingBox> placed;
  const auto try_place = [&](int bw, int bh, MaskKind kind) -> std::optional<BoundingBox> {
    if (bw + 2 * margin > w || bh + 2 * margin > h) return std::nullopt;
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int x0 = static_cast<int>(rng.uniform_int(margin, w - margin - bw));
      const int y0 = static_cast<int>(rng.uniform_int(margin, h - margin - bh));
      const BoundingBox cand{x0, y0, x0 + bw, y0 + bh, kind};
      bool clash = false;
      for (const auto& p : placed) clash = clash || detail::overlaps(cand, p, margin);
      if (!clash) {
        placed.push_back(cand);
        return cand;
      }
    }
    return std::nullopt;
  };

  const int n_img = static_cast<int>(rng.uniform_int(1, 3));
  for (int i = 0; i < n_img; ++i) {
    const int bw = static_cast<int>(rng.uniform_int(img_min, img_max_w));
    const int bh = static_cast<int>(rng.uniform_int(img_min, img_max_h));
    if (auto b = try_place(bw, bh, MaskKind::image)) {
      for (int y = b->y0; y < b->y1; ++y)
        for (int x = b->x0; x < b->x1; ++x) {
          auto* p = shot.pixels.pixel(y, x);
          for (int c = 0; c < 3; ++c) p[c] = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
        }
      page.image_blocks.push_back(*b);
    }
  }

  const int n_txt = static_cast<int>(rng.uniform_int(2, 6));
  for (int i = 0; i < n_txt; ++i) {
    const int bw = static_cast<int>(rng.uniform_int(txt_w_lo, txt_w_hi));
    const int bh = static_cast<int>(rng.uniform_int(txt_h_lo, txt_h_hi));
    if (auto b = try_place(bw, bh, MaskKind::text)) {
      const auto ink = static_cast<std::uint8_t>(rng.uniform_int(0, 60));
      // Strokes of width 1-3 separated by gaps of 1-3; the line starts and ends on ink.
      int x = b->x0;
      while (true) {
        const int end = std::min(x + static_cast<int>(rng.uniform_int(1, 3)), b->x1);
        detail::fill_rect(shot.pixels, {x, b->y0, end, b->y1, MaskKind::text}, ink);
        x = end;
        if (x >= b->x1) break;
        const int gap = rng.uniform() < 0.15 ? 3 : static_cast<int>(rng.uniform_int(1, 2));
        if (x + gap >= b->x1) {
          detail::fill_rect(shot.pixels, {x, b->y0, b->x1, b->y1, MaskKind::text}, ink);
          break;
        }
        x += gap;
      }
      page.text_blocks.push_back(*b);
    }
  }

  const Dims d{h, w};
  page.sample.image_mask = masks::boxes_to_mask(page.image_blocks, d, MaskKind::image);
  page.sample.text_mask = masks::boxes_to_mask(page.text_blocks, d, MaskKind::text);

  const BoundingBox whole{0, 0, w, h, MaskKind::image};
  if (!placed.empty()) page.focus_block = placed[static_cast<std::size_t>(rng.uniform_int(0, placed.size() - 1))];
  const int n_fix = static_cast<int>(rng.uniform_int(8, 16));
  for (int i = 0; i < n_fix; ++i) {
    const double u = rng.uniform();
    if (page.focus_block && u < opt.focus_share) {
      page.sample.fixations.push_back(detail::fixation_in(rng, *page.focus_block));
    } else if (!placed.empty() && u < opt.focus_share + (1.0 - opt.focus_share) * 2.0 / 3.0) {
      page.sample.fixations.push_back(
          detail::fixation_in(rng, placed[static_cast<std::size_t>(rng.uniform_int(0, placed.size() - 1))]));
    } else {
      page.sample.fixations.push_back(detail::fixation_in(rng, whole));
    }
  }
  page.sample.heatmap = to_grayscale(dataset::render_heatmap(page.sample.fixations, d, opt.sigma_px));
  return page;
}

inline std::string synth_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%05d", index);
  return buf;
}

/// `n` pages with their construction layout, deterministic in `seed`.
inline std::vector<SynthPage> synth_pages(int n, std::uint64_t seed, Dims dims, const SynthOptions& opt = {}) {
  if (n < 0) throw ConfigError("synthetic sample count must be >= 0");
  Rng rng(seed);
  std::vector<SynthPage> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(synth_page(rng, dims, synth_stem(i), opt));
  return out;
}

inline std::vector<DatasetSample> synth_generate(int n, std::uint64_t seed, Dims dims, const SynthOptions& opt = {}) {
  std::vector<DatasetSample> out;
  for (auto& p : synth_pages(n, seed, dims, opt)) out.push_back(std::move(p.sample));
  return out;
}

}  // namespace mmian::synth
