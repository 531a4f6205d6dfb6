#pragma once

// Stride-1 dilated convolution (im2col + GEMM), pooling and bilinear
// resampling, each with an explicit backward pass.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mmian/nn/tensor.hpp"

namespace mmian::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

enum class Activation { none, relu };

/// Stride-1 convolution with square kernel, "same" padding (= dilation *
/// (kernel-1)/2) and optional fused ReLU.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int dilation = 1,
         Activation act = Activation::relu)
      : in_(in_channels), out_(out_channels), k_(kernel), dilation_(dilation), pad_(dilation * (kernel - 1) / 2),
        act_(act) {
    if (kernel % 2 != 1 || dilation < 1 || in_channels < 1 || out_channels < 1) {
      throw ConfigError("invalid convolution geometry for " + name);
    }
    weight = {name + ".weight", Tensor<T>(out_channels, in_channels, kernel, kernel), in_channels * kernel * kernel};
    bias = {name + ".bias", Tensor<T>(1, out_channels, 1, 1), in_channels * kernel * kernel};
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int dilation() const { return dilation_; }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
    if (x.c() != in_) {
      throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                       std::to_string(x.c()));
    }
    const int H = x.h(), W = x.w();
    const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
    Tensor<T> y(x.n(), out_, H, W);
    ConstMatMap<T> wm(weight.value.data(), out_, K(), Eigen::OuterStride<>(K()));
    for (int n = 0; n < x.n(); ++n) {
      if (k_ == 1) {
        ConstMatMap<T> xm(x.sample(n), in_, HW, Eigen::OuterStride<>(HW));
        MatMap<T> ym(y.sample(n), out_, HW, Eigen::OuterStride<>(HW));
        ym.noalias() = wm * xm;
      } else {
        const int rows_per_tile = tile_rows(W);
        std::vector<T> cols;
        for (int r0 = 0; r0 < H; r0 += rows_per_tile) {
          const int rows = std::min(rows_per_tile, H - r0);
          const Eigen::Index P = static_cast<Eigen::Index>(rows) * W;
          cols.resize(static_cast<std::size_t>(K()) * P);
          im2col(x.sample(n), H, W, r0, rows, cols.data());
          ConstMatMap<T> cm(cols.data(), K(), P, Eigen::OuterStride<>(P));
          MatMap<T> ym(y.sample(n) + static_cast<std::size_t>(r0) * W, out_, P, Eigen::OuterStride<>(HW));
          ym.noalias() = wm * cm;
        }
      }
      for (int o = 0; o < out_; ++o) {
        T* p = y.plane(n, o);
        const T b = bias.value[o];
        if (act_ == Activation::relu) {
          for (Eigen::Index i = 0; i < HW; ++i) p[i] = std::max(p[i] + b, T(0));
        } else {
          for (Eigen::Index i = 0; i < HW; ++i) p[i] += b;
        }
      }
    }
    if (tape) {
      auto& e = tape->save(this);
      e.tensors = {x};
      if (act_ == Activation::relu) e.tensors.push_back(y);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy_in, Tape<T>& tape, bool need_input_grad = true) const {
    const auto& saved = tape.load(this);
    const Tensor<T>& x = saved.tensors[0];
    Tensor<T> dy = dy_in;
    if (act_ == Activation::relu) {
      const Tensor<T>& y = saved.tensors[1];
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (!(y[i] > T(0))) dy[i] = T(0);
    }
    const int H = x.h(), W = x.w();
    const Eigen::Index HW = static_cast<Eigen::Index>(H) * W;
    Tensor<T> dx;
    if (need_input_grad) dx = Tensor<T>(x.shape());
    const bool pg = tape.wants_param_grads();
    Tensor<T>* dw = pg ? &tape.param_grad(weight) : nullptr;
    Tensor<T>* db = pg ? &tape.param_grad(bias) : nullptr;
    ConstMatMap<T> wm(weight.value.data(), out_, K(), Eigen::OuterStride<>(K()));

    for (int n = 0; n < x.n(); ++n) {
      if (pg) {
        for (int o = 0; o < out_; ++o) {
          const T* p = dy.plane(n, o);
          T s = T(0);
          for (Eigen::Index i = 0; i < HW; ++i) s += p[i];
          (*db)[o] += s;
        }
      }
      if (k_ == 1) {
        ConstMatMap<T> dym(dy.sample(n), out_, HW, Eigen::OuterStride<>(HW));
        if (pg) {
          ConstMatMap<T> xm(x.sample(n), in_, HW, Eigen::OuterStride<>(HW));
          MatMap<T> dwm(dw->data(), out_, K(), Eigen::OuterStride<>(K()));
          dwm.noalias() += dym * xm.transpose();
        }
        if (need_input_grad) {
          MatMap<T> dxm(dx.sample(n), in_, HW, Eigen::OuterStride<>(HW));
          dxm.noalias() = wm.transpose() * dym;
        }
        continue;
      }
      const int rows_per_tile = tile_rows(W);
      std::vector<T> cols, dcols;
      for (int r0 = 0; r0 < H; r0 += rows_per_tile) {
        const int rows = std::min(rows_per_tile, H - r0);
        const Eigen::Index P = static_cast<Eigen::Index>(rows) * W;
        ConstMatMap<T> dym(dy.sample(n) + static_cast<std::size_t>(r0) * W, out_, P, Eigen::OuterStride<>(HW));
        if (pg) {
          cols.resize(static_cast<std::size_t>(K()) * P);
          im2col(x.sample(n), H, W, r0, rows, cols.data());
          ConstMatMap<T> cm(cols.data(), K(), P, Eigen::OuterStride<>(P));
          MatMap<T> dwm(dw->data(), out_, K(), Eigen::OuterStride<>(K()));
          dwm.noalias() += dym * cm.transpose();
        }
        if (need_input_grad) {
          dcols.resize(static_cast<std::size_t>(K()) * P);
          MatMap<T> dcm(dcols.data(), K(), P, Eigen::OuterStride<>(P));
          dcm.noalias() = wm.transpose() * dym;
          col2im(dcols.data(), H, W, r0, rows, dx.sample(n));
        }
      }
    }
    return dx;
  }

  Param<T> weight;
  Param<T> bias;

 private:
  Eigen::Index K() const { return static_cast<Eigen::Index>(in_) * k_ * k_; }

  int tile_rows(int W) const {
    constexpr std::size_t kMaxColumnElems = std::size_t{1} << 22;
    const std::size_t per_row = static_cast<std::size_t>(K()) * static_cast<std::size_t>(W);
    return static_cast<int>(std::max<std::size_t>(1, kMaxColumnElems / std::max<std::size_t>(per_row, 1)));
  }

  // Valid output-column range [lo, hi) for kernel column offset `off`.
  static void valid_cols(int W, int off, int& lo, int& hi) {
    lo = std::clamp(-off, 0, W);
    hi = std::clamp(W - off, lo, W);
  }

  void im2col(const T* src, int H, int W, int r0, int rows, T* cols) const {
    const std::size_t P = static_cast<std::size_t>(rows) * W;
    std::size_t row = 0;
    for (int c = 0; c < in_; ++c) {
      const T* plane = src + static_cast<std::size_t>(c) * H * W;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx, ++row) {
          T* dst = cols + row * P;
          const int off_x = kx * dilation_ - pad_;
          int lo, hi;
          valid_cols(W, off_x, lo, hi);
          for (int oy = 0; oy < rows; ++oy) {
            T* d = dst + static_cast<std::size_t>(oy) * W;
            const int iy = r0 + oy + ky * dilation_ - pad_;
            if (iy < 0 || iy >= H) {
              std::fill(d, d + W, T(0));
              continue;
            }
            std::fill(d, d + lo, T(0));
            std::copy(plane + static_cast<std::size_t>(iy) * W + lo + off_x,
                      plane + static_cast<std::size_t>(iy) * W + hi + off_x, d + lo);
            std::fill(d + hi, d + W, T(0));
          }
        }
      }
    }
  }

  void col2im(const T* cols, int H, int W, int r0, int rows, T* dst) const {
    const std::size_t P = static_cast<std::size_t>(rows) * W;
    std::size_t row = 0;
    for (int c = 0; c < in_; ++c) {
      T* plane = dst + static_cast<std::size_t>(c) * H * W;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx, ++row) {
          const T* s = cols + row * P;
          const int off_x = kx * dilation_ - pad_;
          int lo, hi;
          valid_cols(W, off_x, lo, hi);
          for (int oy = 0; oy < rows; ++oy) {
            const int iy = r0 + oy + ky * dilation_ - pad_;
            if (iy < 0 || iy >= H) continue;
            const T* sr = s + static_cast<std::size_t>(oy) * W;
            T* d = plane + static_cast<std::size_t>(iy) * W + off_x;
            for (int ox = lo; ox < hi; ++ox) d[ox] += sr[ox];
          }
        }
      }
    }
  }

  int in_ = 0, out_ = 0, k_ = 1, dilation_ = 1, pad_ = 0;
  Activation act_ = Activation::relu;
};

/// Max pooling; padded positions never win.
template <typename T>
class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(int kernel, int stride, int pad) : k_(kernel), s_(stride), p_(pad) {}

  int out_size(int in) const { return (in + 2 * p_ - k_) / s_ + 1; }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
    const int oh = out_size(x.h()), ow = out_size(x.w());
    if (oh < 1 || ow < 1) throw ShapeError("max pool input too small: " + to_string(x.shape()));
    Tensor<T> y(x.n(), x.c(), oh, ow);
    std::vector<std::int32_t> idx(tape ? y.size() : 0);
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n) {
      for (int c = 0; c < x.c(); ++c) {
        const T* src = x.plane(n, c);
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::int32_t arg = -1;
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = oy * s_ - p_ + ky;
              if (iy < 0 || iy >= x.h()) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = ox * s_ - p_ + kx;
                if (ix < 0 || ix >= x.w()) continue;
                const T v = src[iy * x.w() + ix];
                if (arg < 0 || v > best) {
                  best = v;
                  arg = iy * x.w() + ix;
                }
              }
            }
            y[o] = best;
            if (tape) idx[o] = arg;
          }
        }
      }
    }
    if (tape) {
      auto& e = tape->save(this);
      e.indices = std::move(idx);
      e.shape = x.shape();
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape) const {
    const auto& e = tape.load(this);
    const Shape in = e.shape;
    Tensor<T> dx(in);
    const std::size_t plane_out = dy.shape().plane();
    for (std::size_t o = 0; o < dy.size(); ++o) {
      const std::size_t plane_index = o / plane_out;
      dx[plane_index * in.plane() + static_cast<std::size_t>(e.indices[o])] += dy[o];
    }
    return dx;
  }

 private:
  int k_ = 2, s_ = 2, p_ = 0;
};

/// 2x2 average pooling with stride 2.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  const int oh = x.h() / 2, ow = x.w() / 2;
  if (oh < 1 || ow < 1) throw ShapeError("avg pool input too small: " + to_string(x.shape()));
  Tensor<T> y(x.n(), x.c(), oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* s = x.plane(n, c);
      T* d = y.plane(n, c);
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const int i = 2 * oy * x.w() + 2 * ox;
          d[oy * ow + ox] = (s[i] + s[i + 1] + s[i + x.w()] + s[i + x.w() + 1]) / T(4);
        }
    }
  return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy, Shape in) {
  Tensor<T> dx(in);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      const T* s = dy.plane(n, c);
      T* d = dx.plane(n, c);
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox) {
          const T g = s[oy * dy.w() + ox] / T(4);
          const int i = 2 * oy * in.w + 2 * ox;
          d[i] += g;
          d[i + 1] += g;
          d[i + in.w] += g;
          d[i + in.w + 1] += g;
        }
    }
  return dx;
}

/// Source taps for one output coordinate of a half-pixel-centred bilinear resize.
struct LinearTap {
  int i0, i1;
  double w0, w1;
};

inline std::vector<LinearTap> linear_taps(int in, int out) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    const double src = std::max(0.0, (o + 0.5) * scale - 0.5);
    int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    const double frac = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

/// Bilinear resize of a single plane (align_corners = false semantics).
template <typename T, typename U>
void resize_plane(const T* src, int ih, int iw, U* dst, int oh, int ow) {
  const auto ty = linear_taps(ih, oh);
  const auto tx = linear_taps(iw, ow);
  for (int y = 0; y < oh; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < ow; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const double v = a.w0 * (b.w0 * src[a.i0 * iw + b.i0] + b.w1 * src[a.i0 * iw + b.i1]) +
                       a.w1 * (b.w0 * src[a.i1 * iw + b.i0] + b.w1 * src[a.i1 * iw + b.i1]);
      dst[y * ow + x] = static_cast<U>(v);
    }
  }
}

template <typename T>
void resize_plane_backward(const T* dy, int oh, int ow, T* dx, int ih, int iw) {
  const auto ty = linear_taps(ih, oh);
  const auto tx = linear_taps(iw, ow);
  for (int y = 0; y < oh; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < ow; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      const T g = dy[y * ow + x];
      dx[a.i0 * iw + b.i0] += static_cast<T>(a.w0 * b.w0) * g;
      dx[a.i0 * iw + b.i1] += static_cast<T>(a.w0 * b.w1) * g;
      dx[a.i1 * iw + b.i0] += static_cast<T>(a.w1 * b.w0) * g;
      dx[a.i1 * iw + b.i1] += static_cast<T>(a.w1 * b.w1) * g;
    }
  }
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int oh, int ow) {
  Tensor<T> y(x.n(), x.c(), oh, ow);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) resize_plane(x.plane(n, c), x.h(), x.w(), y.plane(n, c), oh, ow);
  return y;
}

template <typename T>
Tensor<T> resize_bilinear_backward(const Tensor<T>& dy, int ih, int iw) {
  Tensor<T> dx(dy.n(), dy.c(), ih, iw);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) resize_plane_backward(dy.plane(n, c), dy.h(), dy.w(), dx.plane(n, c), ih, iw);
  return dx;
}

/// Nearest-neighbour index for output coordinate `o` (pixel-centre mapping).
inline int nearest_index(int o, int in, int out) {
  return std::min(in - 1, static_cast<int>(std::floor((o + 0.5) * static_cast<double>(in) / out)));
}

}  // namespace mmian::nn
