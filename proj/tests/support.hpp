#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "mmian/model.hpp"
#include "mmian/nn/tensor.hpp"
#include "mmian/random.hpp"
#include "mmian/synth.hpp"

namespace support {

namespace fs = std::filesystem;

template <typename T>
void fill_uniform(mmian::nn::Tensor<T>& t, mmian::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
mmian::nn::Tensor<T> random_tensor(mmian::nn::Shape s, mmian::Rng& rng, double lo = -1.0, double hi = 1.0) {
  mmian::nn::Tensor<T> t(s);
  fill_uniform(t, rng, lo, hi);
  return t;
}

template <typename T>
void randomize(const std::vector<mmian::nn::Param<T>*>& params, mmian::Rng& rng, double bound = 0.5) {
  for (auto* p : params) fill_uniform(p->value, rng, -bound, bound);
}

inline mmian::model::ModelConfig micro_config(std::uint64_t seed = 0, bool mask_stream = true) {
  mmian::model::ModelConfig c;
  c.input_height = 32;
  c.input_width = 32;
  c.seed = seed;
  c.mask_stream = mask_stream;
  return c;
}

/// Small synthetic pages whose heatmap is concentrated enough to be learned
/// at micro resolution.
inline std::vector<mmian::synth::SynthPage> smoke_pages(int n, std::uint64_t seed) {
  mmian::synth::SynthOptions opt;
  opt.sigma_px = 5.0;
  opt.focus_share = 1.0;
  return mmian::synth::synth_pages(n, seed, {64, 64}, opt);
}

struct GradCheckReport {
  int checked = 0;
  int kinked = 0;  // samples redrawn because the loss is not smooth within +-step
  double worst_rel = 0.0;
};

/// Compares analytic gradients with central differences at `step` for
/// `wanted` randomly drawn parameter entries. A draw whose central
/// difference at step/10 disagrees with the one at `step` straddles a ReLU or
/// max-pool kink, where neither estimates the derivative; it is redrawn.
template <typename T, typename LossFn, typename ParamList, typename GradFn>
GradCheckReport grad_check(ParamList& params, LossFn loss_at, GradFn analytic_grad, mmian::Rng& rng, int wanted,
                           double step = 1e-3, int max_draws = 200) {
  GradCheckReport r;
  const auto central = [&](T& slot, double h) {
    const T saved = slot;
    slot = saved + static_cast<T>(h);
    const double up = loss_at();
    slot = saved - static_cast<T>(h);
    const double down = loss_at();
    slot = saved;
    return (up - down) / (2 * h);
  };
  const auto rel = [](double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale < 1e-10 ? 0.0 : std::abs(a - b) / scale;
  };
  for (int draw = 0; draw < max_draws && r.checked < wanted; ++draw) {
    auto* p = params[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(params.size()) - 1))];
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p->value.size()) - 1));
    const double numeric = central(p->value[i], step);
    if (rel(numeric, central(p->value[i], step / 10)) > 1e-4) {
      ++r.kinked;
      continue;
    }
    r.worst_rel = std::max(r.worst_rel, rel(analytic_grad(*p, i), numeric));
    ++r.checked;
  }
  return r;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("mmian_" + tag + "_" + std::to_string(rd()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& p) const { return path_ / p; }

 private:
  fs::path path_;
};

}  // namespace support
