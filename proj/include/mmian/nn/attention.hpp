#pragma once

// Multi-scale channel attention (MS-CAM) and the attentional feature fusion
// block built on it.

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mmian/nn/layers.hpp"

namespace mmian::nn {

/// Logistic function clamped into the open interval (0,1).
template <typename T>
T open_sigmoid(T s) {
  const T v = s >= T(0) ? T(1) / (T(1) + std::exp(-s)) : std::exp(s) / (T(1) + std::exp(s));
  return std::clamp(v, std::numeric_limits<T>::min(), std::nextafter(T(1), T(0)));
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  Tensor<T> g(x.n(), x.c(), 1, 1);
  const std::size_t hw = x.shape().plane();
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane(n, c);
      T s = T(0);
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
      g.at(n, c, 0, 0) = s / static_cast<T>(hw);
    }
  return g;
}

/// sigmoid(global(u) + local(u)); both branches are a 1x1 bottleneck
/// C -> C/r -> C with a ReLU in between, the global one applied to the
/// spatially averaged input and broadcast back.
template <typename T>
class MsCam {
 public:
  MsCam() = default;
  MsCam(const std::string& name, int channels, int reduction) : channels_(channels) {
    if (reduction < 1 || channels % reduction != 0) {
      throw ConfigError(name + ": channels " + std::to_string(channels) + " not divisible by reduction " +
                        std::to_string(reduction));
    }
    const int mid = channels / reduction;
    global_reduce_ = Conv2d<T>(name + ".global_reduce", channels, mid, 1, 1, Activation::relu);
    global_expand_ = Conv2d<T>(name + ".global_expand", mid, channels, 1, 1, Activation::none);
    local_reduce_ = Conv2d<T>(name + ".local_reduce", channels, mid, 1, 1, Activation::relu);
    local_expand_ = Conv2d<T>(name + ".local_expand", mid, channels, 1, 1, Activation::none);
  }

  int channels() const { return channels_; }

  Tensor<T> forward(const Tensor<T>& u, Tape<T>* tape = nullptr) const {
    if (u.c() != channels_) throw ShapeError("ms_cam: channel mismatch " + to_string(u.shape()));
    const Tensor<T> g = global_expand_.forward(global_reduce_.forward(global_avg_pool(u), tape), tape);
    const Tensor<T> l = local_expand_.forward(local_reduce_.forward(u, tape), tape);
    Tensor<T> w(u.shape());
    const std::size_t hw = u.shape().plane();
    for (int n = 0; n < u.n(); ++n)
      for (int c = 0; c < u.c(); ++c) {
        const T gv = g.at(n, c, 0, 0);
        const T* lp = l.plane(n, c);
        T* wp = w.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) wp[i] = open_sigmoid(lp[i] + gv);
      }
    if (tape) tape->save(this).tensors = {w};
    return w;
  }

  Tensor<T> backward(const Tensor<T>& dw, Tape<T>& tape) const {
    const Tensor<T>& w = tape.load(this).tensors[0];
    Tensor<T> ds(w.shape());
    for (std::size_t i = 0; i < ds.size(); ++i) ds[i] = dw[i] * w[i] * (T(1) - w[i]);

    const std::size_t hw = w.shape().plane();
    Tensor<T> dg(w.n(), w.c(), 1, 1);
    for (int n = 0; n < w.n(); ++n)
      for (int c = 0; c < w.c(); ++c) {
        const T* p = ds.plane(n, c);
        T s = T(0);
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
        dg.at(n, c, 0, 0) = s;
      }
    const Tensor<T> dgap = global_reduce_.backward(global_expand_.backward(dg, tape), tape);
    Tensor<T> du = local_reduce_.backward(local_expand_.backward(ds, tape), tape);
    for (int n = 0; n < du.n(); ++n)
      for (int c = 0; c < du.c(); ++c) {
        const T share = dgap.at(n, c, 0, 0) / static_cast<T>(hw);
        T* p = du.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) p[i] += share;
      }
    return du;
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto* conv : {&global_reduce_, &global_expand_, &local_reduce_, &local_expand_}) {
      out.push_back(&conv->weight);
      out.push_back(&conv->bias);
    }
    return out;
  }

 private:
  int channels_ = 0;
  Conv2d<T> global_reduce_, global_expand_, local_reduce_, local_expand_;
};

/// Z = w * screen + (1 - w) * mask with w = MS-CAM(screen + mask).
template <typename T>
class AffFusion {
 public:
  AffFusion() = default;
  AffFusion(const std::string& name, int channels, int reduction) : attention_(name, channels, reduction) {}

  const MsCam<T>& attention() const { return attention_; }

  Tensor<T> forward(const Tensor<T>& screen, const Tensor<T>& mask, Tape<T>* tape = nullptr) const {
    if (screen.shape() != mask.shape()) {
      throw ShapeError("aff_fuse: " + to_string(screen.shape()) + " vs " + to_string(mask.shape()));
    }
    Tensor<T> sum = screen;
    sum += mask;
    const Tensor<T> w = attention_.forward(sum, tape);
    Tensor<T> z(screen.shape());
    // mask + w * (screen - mask): algebraically the convex combination, and
    // exact when both inputs coincide.
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = mask[i] + w[i] * (screen[i] - mask[i]);
    if (tape) tape->save(this).tensors = {screen, mask, w};
    return z;
  }

  /// Returns (d screen, d mask).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dz, Tape<T>& tape) const {
    const auto& saved = tape.load(this);
    const Tensor<T>& screen = saved.tensors[0];
    const Tensor<T>& mask = saved.tensors[1];
    const Tensor<T>& w = saved.tensors[2];
    Tensor<T> d_screen(dz.shape()), d_mask(dz.shape()), dw(dz.shape());
    for (std::size_t i = 0; i < dz.size(); ++i) {
      d_screen[i] = dz[i] * w[i];
      d_mask[i] = dz[i] * (T(1) - w[i]);
      dw[i] = dz[i] * (screen[i] - mask[i]);
    }
    const Tensor<T> dsum = attention_.backward(dw, tape);
    d_screen += dsum;
    d_mask += dsum;
    return {std::move(d_screen), std::move(d_mask)};
  }

  std::vector<Param<T>*> parameters() { return attention_.parameters(); }

 private:
  MsCam<T> attention_;
};

}  // namespace mmian::nn
