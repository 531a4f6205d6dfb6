#pragma once

// Brute-force reference implementations, written independently of the
// library code they check. Deliberately slow and literal.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

/// Mean of standardized values over fixated pixels (population std).
inline double nss(const std::vector<double>& p, const std::vector<int>& fix) {
  long double mean = 0;
  for (double v : p) mean += v;
  mean /= p.size();
  long double var = 0;
  for (double v : p) var += (v - mean) * (v - mean);
  const long double sd = std::sqrt(var / p.size());
  long double sum = 0;
  int count = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (fix[i]) {
      sum += (p[i] - mean) / sd;
      ++count;
    }
  return static_cast<double>(sum / count);
}

/// ROC points at every distinct fixated value, each counted by a full scan;
/// polyline (0,0) -> points sorted by threshold descending -> (1,1).
inline double auc_judd(const std::vector<double>& p, const std::vector<int>& fix) {
  std::set<double, std::greater<>> thresholds;
  int npos = 0, nneg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (fix[i]) {
      thresholds.insert(p[i]);
      ++npos;
    } else {
      ++nneg;
    }
  }
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (double t : thresholds) {
    int tp = 0, fp = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] >= t) (fix[i] ? tp : fp)++;
    }
    pts.emplace_back(static_cast<double>(fp) / nneg, static_cast<double>(tp) / npos);
  }
  pts.emplace_back(1.0, 1.0);
  long double area = 0;
  for (std::size_t k = 1; k < pts.size(); ++k) {
    area += (static_cast<long double>(pts[k].first) - pts[k - 1].first) * (pts[k].second + pts[k - 1].second) / 2;
  }
  return static_cast<double>(area);
}

inline double cc(const std::vector<double>& a, const std::vector<double>& b) {
  const long double n = a.size();
  long double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
  }
  const long double ma = sa / n, mb = sb / n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

inline double kld(const std::vector<double>& pred, const std::vector<double>& gt, double eps) {
  long double sp = 0, sg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sp += pred[i];
    sg += gt[i];
  }
  long double total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const long double q = gt[i] / sg, p = pred[i] / sp;
    total += q * std::log(eps + q / (eps + p));
  }
  return static_cast<double>(total);
}

/// Difference hash: 9x8 area-average of luminance, bit (r*8+c) set when
/// cell (r,c) is darker than cell (r,c+1).
template <typename PixelFn>
std::uint64_t dhash(int h, int w, PixelFn luminance_at) {
  double cells[8][9];
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 9; ++c) {
      const int y0 = r * h / 8, y1 = std::max(y0 + 1, (r + 1) * h / 8);
      const int x0 = c * w / 9, x1 = std::max(x0 + 1, (c + 1) * w / 9);
      double s = 0;
      int n = 0;
      for (int y = y0; y < std::min(y1, h); ++y)
        for (int x = x0; x < std::min(x1, w); ++x) {
          s += luminance_at(y, x);
          ++n;
        }
      cells[r][c] = n ? s / n : 0.0;
    }
  std::uint64_t bits = 0;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      if (cells[r][c] < cells[r][c + 1]) bits |= std::uint64_t{1} << (r * 8 + c);
  return bits;
}

/// Direct 2-D convolution, single sample, zero padding, stride 1.
inline std::vector<double> conv2d(const std::vector<double>& x, int cin, int h, int w, const std::vector<double>& wt,
                                  const std::vector<double>& bias, int cout, int k, int dilation, bool relu) {
  const int pad = dilation * (k - 1) / 2;
  std::vector<double> y(static_cast<std::size_t>(cout) * h * w, 0.0);
  for (int o = 0; o < cout; ++o)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        double s = bias[o];
        for (int i = 0; i < cin; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = yy - pad + ky * dilation, sx = xx - pad + kx * dilation;
              if (sy < 0 || sx < 0 || sy >= h || sx >= w) continue;
              s += wt[((static_cast<std::size_t>(o) * cin + i) * k + ky) * k + kx] *
                   x[(static_cast<std::size_t>(i) * h + sy) * w + sx];
            }
        y[(static_cast<std::size_t>(o) * h + yy) * w + xx] = relu ? std::max(0.0, s) : s;
      }
  return y;
}

}  // namespace oracle
