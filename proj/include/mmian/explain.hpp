#pragma once

// Grad-CAM over any named layer of a model exposing cam_layers(),
// forward_sample() and backward() on a tape.

#include <algorithm>
#include <concepts>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "mmian/core.hpp"
#include "mmian/model.hpp"
#include "mmian/nn/tensor.hpp"
#include "mmian/training.hpp"

namespace mmian::explain {

using nn::Tape;
using nn::Tensor;

enum class Objective { sum_output, kld_vs_gt };

inline std::string_view to_string(Objective o) { return o == Objective::sum_output ? "sum_output" : "kld_vs_gt"; }

inline Objective parse_objective(std::string_view s) {
  if (s == "sum_output") return Objective::sum_output;
  if (s == "kld_vs_gt") return Objective::kld_vs_gt;
  throw ConfigError("unknown objective '" + std::string(s) + "' (expected sum_output or kld_vs_gt)");
}

inline constexpr const char* kDefaultLayer = "aspp.project";

struct CamResult {
  Grid<double> cam;        // ReLU-weighted sum at target-layer resolution
  std::string target_layer;
  Grid<double> upsampled;  // screenshot resolution, scaled to [0,1]
};

template <typename M>
concept CamModel = requires(const M& m, const DatasetSample& s, Tape<typename M::scalar_type>& tape,
                            const Tensor<typename M::scalar_type>& dy) {
  { m.cam_layers() } -> std::convertible_to<std::vector<std::string>>;
  { m.forward_sample(s, &tape) } -> std::convertible_to<Tensor<typename M::scalar_type>>;
  m.backward(dy, tape);
};

template <CamModel M>
CamResult grad_cam(const M& model, const DatasetSample& sample, const std::string& target_layer = kDefaultLayer,
                   Objective objective = Objective::sum_output, double epsilon = metrics::kDefaultEpsilon) {
  using T = typename M::scalar_type;
  const std::vector<std::string> layers = model.cam_layers();
  if (std::find(layers.begin(), layers.end(), target_layer) == layers.end()) {
    throw LayerNotFound(target_layer, layers);
  }

  Tape<T> tape(false);
  tape.watch(target_layer);
  tape.stop_after(target_layer);
  const Tensor<T> out = model.forward_sample(sample, &tape);

  Tensor<T> dy;
  if (objective == Objective::sum_output) {
    dy = Tensor<T>(out.shape(), T(1));
  } else {
    if (!sample.heatmap) throw ValidationError("heatmap", sample.stem());
    Grid<double> target = model::resize_map(sample.heatmap->values, {out.h(), out.w()});
    training::kld_loss(out, {&target}, epsilon, &dy);
  }
  model.backward(dy, tape);

  const Tensor<T>& act = tape.activation(target_layer);
  const Tensor<T>& grad = tape.gradient(target_layer);
  const std::size_t hw = act.shape().plane();
  Grid<double> cam(act.h(), act.w(), 0.0);
  for (int c = 0; c < act.c(); ++c) {
    const T* g = grad.plane(0, c);
    double weight = 0.0;
    for (std::size_t i = 0; i < hw; ++i) weight += static_cast<double>(g[i]);
    weight /= static_cast<double>(hw);
    if (weight == 0.0) continue;
    const T* a = act.plane(0, c);
    for (std::size_t i = 0; i < hw; ++i) cam[i] += weight * static_cast<double>(a[i]);
  }
  for (double& v : cam.storage()) v = std::max(v, 0.0);

  Grid<double> up = model::resize_map(cam, sample.screenshot.dims());
  const auto [lo, hi] = std::minmax_element(up.storage().begin(), up.storage().end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : up.storage()) v = range > 0.0 ? std::clamp((v - min) / range, 0.0, 1.0) : 0.0;
  return {std::move(cam), target_layer, std::move(up)};
}

/// Cam in [0,1] as an 8-bit grayscale raster.
inline Grid<std::uint8_t> cam_to_gray(const Grid<double>& cam) {
  Grid<std::uint8_t> out(cam.dims());
  for (std::size_t i = 0; i < cam.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::floor(std::clamp(cam[i], 0.0, 1.0) * 255.0 + 0.5));
  return out;
}

/// Jet-coloured cam blended over the screenshot: alpha * cam + (1 - alpha) * screenshot.
inline RgbImage overlay(const RgbImage& screenshot, const Grid<double>& cam, double alpha = 0.5) {
  if (screenshot.dims() != cam.dims()) throw ShapeError("overlay: cam and screenshot dims differ");
  const Grid<std::uint8_t> gray = cam_to_gray(cam);
  cv::Mat g(gray.rows(), gray.cols(), CV_8UC1, const_cast<std::uint8_t*>(gray.storage().data()));
  cv::Mat colored;
  cv::applyColorMap(g, colored, cv::COLORMAP_JET);  // BGR
  RgbImage out(screenshot.height(), screenshot.width());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const auto& bgr = colored.at<cv::Vec3b>(y, x);
      const std::uint8_t* src = screenshot.pixel(y, x);
      std::uint8_t* dst = out.pixel(y, x);
      for (int c = 0; c < 3; ++c) {
        const double v = alpha * bgr[2 - c] + (1.0 - alpha) * src[c];
        dst[c] = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  return out;
}

}  // namespace mmian::explain
