#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <typeindex>
#include <typeinfo>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mmian/errors.hpp"

namespace mmian::nn {

/// NCHW extent.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(s.numel(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T* plane(int n, int c) { return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(); }
  const T* plane(int n, int c) const {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }
  T* sample(int n) { return plane(n, 0); }
  const T* sample(int n) const { return plane(n, 0); }

  T& at(int n, int c, int y, int x) { return plane(n, c)[static_cast<std::size_t>(y) * shape_.w + x]; }
  const T& at(int n, int c, int y, int x) const { return plane(n, c)[static_cast<std::size_t>(y) * shape_.w + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    if (o.shape_ != shape_) throw ShapeError("tensor add: " + to_string(shape_) + " vs " + to_string(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  int fan_in = 1;
};

/// Per-pass state: activations saved by forward for backward, parameter
/// gradients accumulated by backward, and optional named taps (activation and
/// gradient) for inspection. A model's layers never mutate during a pass.
template <typename T>
class Tape {
 public:
  struct Entry {
    std::vector<Tensor<T>> tensors;
    std::vector<std::int32_t> indices;
    Shape shape;
  };

  Tape() = default;
  explicit Tape(bool param_grads) : param_grads_(param_grads) {}

  /// Entries are keyed by (object address, object type) so a layer nested as
  /// the first member of another never collides with its owner.
  template <typename Layer>
  Entry& save(const Layer* layer) {
    return entries_[Key{layer, std::type_index(typeid(Layer))}];
  }
  template <typename Layer>
  const Entry& load(const Layer* layer) const {
    auto it = entries_.find(Key{layer, std::type_index(typeid(Layer))});
    if (it == entries_.end()) throw Error("backward called without a recorded forward pass");
    return it->second;
  }

  bool wants_param_grads() const { return param_grads_; }

  Tensor<T>& param_grad(const Param<T>& p) {
    auto it = grads_.find(&p);
    if (it == grads_.end()) it = grads_.emplace(&p, Tensor<T>(p.value.shape())).first;
    return it->second;
  }
  const Tensor<T>* find_grad(const Param<T>& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
  }

  void watch(const std::string& name) { watched_.insert(name); }
  /// Backward returns as soon as the gradient at `name` is known.
  void stop_after(const std::string& name) { stop_at_ = name; }

  void note_activation(const std::string& name, const Tensor<T>& t) {
    if (watched_.count(name)) activations_[name] = t;
  }
  /// Records the gradient if watched; returns true when backward should stop.
  bool note_gradient(const std::string& name, const Tensor<T>& g) {
    if (watched_.count(name)) gradients_[name] = g;
    if (!stop_at_.empty() && name == stop_at_) stopped_ = true;
    return stopped_;
  }
  bool stopped() const { return stopped_; }

  const Tensor<T>& activation(const std::string& name) const { return lookup(activations_, name); }
  const Tensor<T>& gradient(const std::string& name) const { return lookup(gradients_, name); }

 private:
  static const Tensor<T>& lookup(const std::map<std::string, Tensor<T>>& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw Error("tap '" + name + "' was not recorded");
    return it->second;
  }

  struct Key {
    const void* address;
    std::type_index type;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return std::hash<const void*>{}(k.address) ^ (k.type.hash_code() * 0x9e3779b97f4a7c15ULL);
    }
  };

  bool param_grads_ = true;
  std::unordered_map<Key, Entry, KeyHash> entries_;
  std::unordered_map<const Param<T>*, Tensor<T>> grads_;
  std::unordered_set<std::string> watched_;
  std::map<std::string, Tensor<T>> activations_;
  std::map<std::string, Tensor<T>> gradients_;
  std::string stop_at_;
  bool stopped_ = false;
};

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape s0 = parts.front()->shape();
  int channels = 0;
  for (const auto* p : parts) {
    if (p->n() != s0.n || p->h() != s0.h || p->w() != s0.w) {
      throw ShapeError("concat spatial/batch mismatch: " + to_string(s0) + " vs " + to_string(p->shape()));
    }
    channels += p->c();
  }
  Tensor<T> out(s0.n, channels, s0.h, s0.w);
  for (int n = 0; n < s0.n; ++n) {
    T* dst = out.sample(n);
    for (const auto* p : parts) {
      const std::size_t count = static_cast<std::size_t>(p->c()) * s0.plane();
      std::copy(p->sample(n), p->sample(n) + count, dst);
      dst += count;
    }
  }
  return out;
}

/// Inverse of concat_channels for gradients.
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& t, const std::vector<int>& channels) {
  std::vector<Tensor<T>> out;
  for (int c : channels) out.emplace_back(t.n(), c, t.h(), t.w());
  for (int n = 0; n < t.n(); ++n) {
    const T* src = t.sample(n);
    for (auto& o : out) {
      const std::size_t count = static_cast<std::size_t>(o.c()) * t.shape().plane();
      std::copy(src, src + count, o.sample(n));
      src += count;
    }
  }
  return out;
}

}  // namespace mmian::nn
