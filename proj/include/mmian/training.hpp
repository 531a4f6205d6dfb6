#pragma once

// KLD loss, transfer initialization, the Adam training loop with early
// stopping, and the evaluation driver.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmian/core.hpp"
#include "mmian/metrics.hpp"
#include "mmian/model.hpp"
#include "mmian/nn/adam.hpp"
#include "mmian/random.hpp"

namespace mmian::training {

using model::Model;
using nn::Tape;
using nn::Tensor;

enum class Regime { FT_GM, FT_CW, FT_CMB, MMIAN };

inline std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::FT_GM: return "FT_GM";
    case Regime::FT_CW: return "FT_CW";
    case Regime::FT_CMB: return "FT_CMB";
    case Regime::MMIAN: return "MMIAN";
  }
  return "MMIAN";
}

inline Regime parse_regime(std::string_view s) {
  for (auto r : {Regime::FT_GM, Regime::FT_CW, Regime::FT_CMB, Regime::MMIAN})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown regime '" + std::string(s) + "' (expected FT_GM, FT_CW, FT_CMB or MMIAN)");
}

/// Fine-tuning regimes train the screenshot-only network; MMIAN adds the
/// mask stream on top of transferred encoder/decoder weights.
inline bool uses_masks(Regime r) { return r == Regime::MMIAN; }

/// Whether a sample's origin belongs to the regime's training data.
inline bool regime_accepts(Regime r, OriginDataset o) {
  switch (r) {
    case Regime::FT_GM: return o == OriginDataset::GazeMining;
    case Regime::FT_CW: return o == OriginDataset::ContrastiveWebsite;
    case Regime::FT_CMB: return o == OriginDataset::GazeMining || o == OriginDataset::ContrastiveWebsite;
    case Regime::MMIAN: return true;
  }
  return false;
}

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 4;
  int max_epochs = 100;
  int patience = 5;
  double epsilon = 1e-7;
  std::uint64_t seed = 0;
  Regime regime = Regime::MMIAN;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  }

  nlohmann::ordered_json to_json() const {
    return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"max_epochs", max_epochs},
            {"patience", patience},           {"epsilon", epsilon},       {"seed", seed},
            {"regime", to_string(regime)}};
  }

  static TrainConfig from_json(const nlohmann::ordered_json& j) { return from_json(j, TrainConfig()); }
  static TrainConfig from_json(const nlohmann::ordered_json& j, TrainConfig base) {
    if (!j.is_object()) throw ConfigError("train config must be an object");
    try {
      for (const auto& [key, value] : j.items()) {
        if (key == "learning_rate") base.learning_rate = value.get<double>();
        else if (key == "batch_size") base.batch_size = value.get<int>();
        else if (key == "max_epochs") base.max_epochs = value.get<int>();
        else if (key == "patience") base.patience = value.get<int>();
        else if (key == "epsilon") base.epsilon = value.get<double>();
        else if (key == "seed") base.seed = value.get<std::uint64_t>();
        else if (key == "regime") base.regime = parse_regime(value.get<std::string>());
        else throw ConfigError("unknown train config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad train config value: ") + e.what());
    }
    return base;
  }

  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  int epoch = 0;
  double train_kld = 0.0;
  double val_kld = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  long steps = 0;

  const EpochRecord& best() const { return epochs.at(static_cast<std::size_t>(best_epoch - 1)); }

  /// Equality of everything except wall-clock time.
  bool same_trajectory(const TrainHistory& o) const {
    if (best_epoch != o.best_epoch || steps != o.steps || epochs.size() != o.epochs.size()) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      if (epochs[i].epoch != o.epochs[i].epoch || epochs[i].train_kld != o.epochs[i].train_kld ||
          epochs[i].val_kld != o.epochs[i].val_kld)
        return false;
    }
    return true;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(10) << "epoch,train_kld,val_kld,seconds\n";
    for (const auto& e : epochs) out << e.epoch << ',' << e.train_kld << ',' << e.val_kld << ',' << e.seconds << '\n';
    return out.str();
  }
};

// --- loss ---------------------------------------------------------------------

/// KLD of one raw prediction against a target, accumulating
/// `scale * dL/dpred` into `grad` when it is non-null. With an all-zero
/// prediction the normalized map is taken as zero and the gradient vanishes.
template <typename T>
double kld_loss_plane(const T* pred, const double* target, std::size_t n, double epsilon, T* grad = nullptr,
                      double scale = 1.0) {
  double s = 0.0, ty = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += static_cast<double>(pred[i]);
    ty += target[i];
  }
  if (!(ty > 0.0)) throw DegenerateMap("loss target has zero mass");
  const double inv_s = s > 0.0 ? 1.0 / s : 0.0;

  double loss = 0.0, weighted = 0.0;
  std::vector<double> g(grad ? n : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(pred[i]) * inv_s;
    const double q = target[i] / ty;
    const double r = q / (epsilon + p);
    loss += q * std::log(epsilon + r);
    if (grad) {
      g[i] = -q * r / ((epsilon + p) * (epsilon + r));
      weighted += g[i] * p;
    }
  }
  if (grad && s > 0.0) {
    for (std::size_t i = 0; i < n; ++i) grad[i] += static_cast<T>(scale * (g[i] - weighted) * inv_s);
  }
  return loss;
}

struct LossResult {
  double value = 0.0;
  std::vector<double> per_sample;
};

/// Batch-mean KLD of Nx1xHxW predictions against targets at the same
/// resolution. When `grad` is non-null it receives dL/dpred.
template <typename T>
LossResult kld_loss(const Tensor<T>& pred, const std::vector<const Grid<double>*>& targets, double epsilon,
                    Tensor<T>* grad = nullptr) {
  if (pred.c() != 1 || static_cast<std::size_t>(pred.n()) != targets.size()) {
    throw ShapeError("kld_loss: prediction " + nn::to_string(pred.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  if (grad) *grad = Tensor<T>(pred.shape());
  LossResult out;
  const double scale = 1.0 / static_cast<double>(pred.n());
  for (int b = 0; b < pred.n(); ++b) {
    const Grid<double>& t = *targets[static_cast<std::size_t>(b)];
    if (t.rows() != pred.h() || t.cols() != pred.w()) throw ShapeError("kld_loss: target dims differ from prediction");
    const double l = kld_loss_plane(pred.plane(b, 0), t.storage().data(), t.size(), epsilon,
                                    grad ? grad->plane(b, 0) : nullptr, scale);
    out.per_sample.push_back(l);
    out.value += l * scale;
  }
  if (!std::isfinite(out.value)) throw NumericalError("kld loss is not finite");
  return out;
}

// --- initialization -----------------------------------------------------------

inline constexpr double kTransferInitBound = 0.05;

inline bool is_transferred_name(const std::string& name) {
  return name.starts_with("input_encoder.") || name.starts_with("decoder.");
}

/// Copies encoder and decoder tensors from `base`; every other tensor is drawn
/// from U(-0.05, 0.05) seeded by the model config.
template <typename T>
void init_transfer(Model<T>& model, const model::WeightBundle& base) {
  Rng rng(model.config().seed);
  for (auto* p : model.parameters()) {
    if (is_transferred_name(p->name)) {
      auto it = base.tensors.find(p->name);
      if (it == base.tensors.end()) throw TransferError(p->name, "missing from base weights");
      const auto& s = p->value.shape();
      if (it->second.shape != std::vector<int>{s.n, s.c, s.h, s.w} || it->second.values.size() != p->value.size()) {
        throw TransferError(p->name, "shape mismatch");
      }
      std::copy(it->second.values.begin(), it->second.values.end(), p->value.storage().begin());
    } else {
      for (auto& v : p->value.storage()) v = static_cast<T>(rng.uniform(-kTransferInitBound, kTransferInitBound));
    }
  }
  model.set_provenance(model::Provenance::transferred_msi);
}

// --- training -----------------------------------------------------------------

/// A sample resolved to model resolution, with its sum-positive target.
template <typename T>
struct PreparedSample {
  std::string stem;
  Tensor<T> image;
  Tensor<T> masks;
  Grid<double> target;
};

template <typename T>
PreparedSample<T> prepare_sample(const DatasetSample& s, const model::ModelConfig& config) {
  if (!s.heatmap) throw ValidationError("heatmap", s.stem());
  auto in = model::prepare_input<T>(s, config);
  Grid<double> target = model::resize_map(s.heatmap->values, config.input_dims());
  for (double& v : target.storage()) v = std::max(v, 0.0);
  return {s.stem(), std::move(in.image), std::move(in.masks), std::move(target)};
}

template <typename T>
std::vector<PreparedSample<T>> prepare_samples(const std::vector<DatasetSample>& samples,
                                               const model::ModelConfig& config) {
  std::vector<PreparedSample<T>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(prepare_sample<T>(s, config));
  return out;
}

template <typename T>
struct Batch {
  Tensor<T> image;
  Tensor<T> masks;
  std::vector<const Grid<double>*> targets;
};

template <typename T>
Batch<T> make_batch(const std::vector<PreparedSample<T>>& data, const std::vector<std::size_t>& idx) {
  std::vector<const Tensor<T>*> images, masks;
  Batch<T> b;
  for (std::size_t i : idx) {
    images.push_back(&data[i].image);
    masks.push_back(&data[i].masks);
    b.targets.push_back(&data[i].target);
  }
  b.image = model::stack(images);
  b.masks = model::stack(masks);
  return b;
}

/// Mean per-sample KLD without gradients.
template <typename T>
double mean_loss(const Model<T>& m, const std::vector<PreparedSample<T>>& data, int batch_size, double epsilon) {
  if (data.empty()) throw ValidationError("cannot compute loss over an empty split");
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i)
      idx.push_back(i);
    const Batch<T> b = make_batch(data, idx);
    const LossResult r = kld_loss(m.forward(b.image, b.masks), b.targets, epsilon);
    for (double l : r.per_sample) total += l;
  }
  return total / static_cast<double>(data.size());
}

/// Tracks the best validation loss; `should_stop` once `patience` epochs
/// pass without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  /// Returns true when `loss` is a new best.
  bool update(int epoch, double loss) {
    if (best_epoch_ == 0 || loss < best_) {
      best_ = loss;
      best_epoch_ = epoch;
      return true;
    }
    return false;
  }
  bool should_stop(int epoch) const { return best_epoch_ > 0 && epoch - best_epoch_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct TrainHooks {
  /// Replaces the validation-loss computation (epoch is 1-based).
  std::function<double(int epoch)> validator;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(long step, double loss)> on_step;
  /// Stops after this many optimizer steps; 0 means unlimited.
  long max_steps = 0;
};

/// Adam over seeded-shuffled batches with per-epoch validation and early
/// stopping. On return the model holds the weights of the best epoch.
template <typename T>
TrainHistory train(Model<T>& model, const std::vector<DatasetSample>& train_split,
                   const std::vector<DatasetSample>& val_split, const TrainConfig& config,
                   const TrainHooks& hooks = {}) {
  config.validate();
  if (train_split.empty()) throw ValidationError("training split is empty");
  if (val_split.empty() && !hooks.validator) throw ValidationError("validation split is empty");

  const auto train_data = prepare_samples<T>(train_split, model.config());
  const auto val_data = prepare_samples<T>(val_split, model.config());

  nn::Adam<T> adam({.learning_rate = config.learning_rate});
  auto params = model.parameters();
  std::vector<Tensor<T>> best_weights;
  for (const auto* p : params) best_weights.push_back(p->value);

  Rng rng(config.seed);
  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainHistory history;
  EarlyStopper stopper(config.patience);
  long batch_id = 0;
  bool out_of_steps = false;
  for (int epoch = 1; epoch <= config.max_epochs && !out_of_steps; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const Batch<T> batch = make_batch(train_data, {order.begin() + static_cast<std::ptrdiff_t>(start),
                                                     order.begin() + static_cast<std::ptrdiff_t>(end)});
      Tape<T> tape;
      Tensor<T> grad;
      LossResult loss;
      try {
        loss = kld_loss(model.forward(batch.image, batch.masks, &tape), batch.targets, config.epsilon, &grad);
      } catch (const NumericalError& e) {
        throw NumericalError("batch " + std::to_string(batch_id) + ": " + e.what());
      }
      model.backward(grad, tape);
      adam.step(params, tape);
      ++batch_id;
      ++history.steps;
      epoch_loss += loss.value * static_cast<double>(end - start);
      seen += end - start;
      if (hooks.on_step) hooks.on_step(history.steps, loss.value);
      if (hooks.max_steps > 0 && history.steps >= hooks.max_steps) {
        out_of_steps = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_kld = epoch_loss / static_cast<double>(seen);
    rec.val_kld = hooks.validator ? hooks.validator(epoch) : mean_loss(model, val_data, config.batch_size, config.epsilon);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (stopper.update(epoch, rec.val_kld)) {
      for (std::size_t k = 0; k < params.size(); ++k) best_weights[k] = params[k]->value;
    }
    if (stopper.should_stop(epoch)) break;
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best_weights[k];
  history.best_epoch = stopper.best_epoch();
  return history;
}

/// Fine-tuning data for the combined regime: the concatenated splits.
inline std::vector<DatasetSample> combine(const std::vector<DatasetSample>& a, const std::vector<DatasetSample>& b) {
  std::vector<DatasetSample> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline std::vector<DatasetSample> select(const std::vector<DatasetSample>& samples, Split split, Regime regime) {
  std::vector<DatasetSample> out;
  for (const auto& s : samples)
    if (s.split == split && regime_accepts(regime, s.screenshot.origin_dataset)) out.push_back(s);
  return out;
}

// --- evaluation ---------------------------------------------------------------

/// Scores `predictor(sample) -> GazeHeatmap` against each sample's label.
/// Samples whose prediction or metrics fail are excluded and reported.
template <typename Predictor>
metrics::MetricReport evaluate(const std::vector<DatasetSample>& split, Predictor&& predictor,
                               const metrics::MetricsConfig& cfg = {}) {
  if (split.empty()) throw ValidationError("evaluation split is empty");
  metrics::MetricReport report;
  for (const auto& s : split) {
    if (!s.heatmap) {
      report.excluded.push_back({s.stem(), "missing heatmap"});
      continue;
    }
    GazeHeatmap pred;
    try {
      pred = predictor(s);
    } catch (const Error& e) {
      report.excluded.push_back({s.stem(), e.what()});
      continue;
    }
    metrics::score_into(report, s.stem(), pred, *s.heatmap, s.fixations, cfg);
  }
  return report;
}

template <typename T>
metrics::MetricReport evaluate(const Model<T>& m, const std::vector<DatasetSample>& split,
                               const metrics::MetricsConfig& cfg = {}) {
  return evaluate(split, [&m](const DatasetSample& s) { return model::predict(m, s); }, cfg);
}

}  // namespace mmian::training
