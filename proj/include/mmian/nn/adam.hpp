#pragma once

#include <cmath>
#include <vector>

#include "mmian/errors.hpp"
#include "mmian/nn/tensor.hpp"

namespace mmian::nn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are indexed by parameter position, so
/// the parameter list must keep the same order across steps.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  }

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  /// Parameters without a recorded gradient are treated as having zero gradient.
  void step(const std::vector<Param<T>*>& params, const Tape<T>& tape) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw Error("adam: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Param<T>& p = *params[k];
      const Tensor<T>* g = tape.find_grad(p);
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double gi = g ? static_cast<double>((*g)[i]) : 0.0;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double update = cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
      }
    }
  }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mmian::nn
