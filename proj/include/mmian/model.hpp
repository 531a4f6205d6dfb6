#pragma once

// Multi-mask input attentional network: a VGG16 screenshot encoder and a
// light mask encoder, fused at three scales by attentional feature fusion,
// concatenated, passed through ASPP and decoded back to input resolution.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmian/core.hpp"
#include "mmian/nn/attention.hpp"
#include "mmian/nn/layers.hpp"
#include "mmian/nn/tensor.hpp"
#include "mmian/random.hpp"

namespace mmian::model {

using nn::Activation;
using nn::Conv2d;
using nn::Param;
using nn::Tape;
using nn::Tensor;

struct ModelConfig {
  int input_height = 384;
  int input_width = 512;
  std::vector<int> aspp_dilations{4, 8, 12};
  int aspp_filters = 256;
  int fusion_scales = 3;
  int mscam_reduction = 4;
  std::uint64_t seed = 0;
  /// false: screenshot-only network (fusion bypassed), used by the
  /// fine-tuning regimes that precede mask training.
  bool mask_stream = true;

  Dims input_dims() const { return {input_height, input_width}; }

  void validate() const {
    if (input_height < 8 || input_width < 8 || input_height % 8 != 0 || input_width % 8 != 0) {
      throw ConfigError("input dims must be positive multiples of 8, got " + std::to_string(input_height) + "x" +
                        std::to_string(input_width));
    }
    if (fusion_scales != 3) throw ConfigError("fusion_scales is fixed at 3");
    if (aspp_filters <= 0) throw ConfigError("aspp_filters must be positive");
    if (aspp_dilations.empty()) throw ConfigError("aspp_dilations must not be empty");
    for (int d : aspp_dilations)
      if (d < 1) throw ConfigError("aspp dilations must be >= 1");
    if (mscam_reduction < 1 || 256 % mscam_reduction != 0 || 512 % mscam_reduction != 0) {
      throw ConfigError("mscam_reduction must divide the fused channel counts (256, 512)");
    }
  }

  nlohmann::ordered_json to_json() const {
    return {{"input_height", input_height}, {"input_width", input_width},   {"aspp_dilations", aspp_dilations},
            {"aspp_filters", aspp_filters}, {"fusion_scales", fusion_scales}, {"mscam_reduction", mscam_reduction},
            {"seed", seed},                 {"mask_stream", mask_stream}};
  }

  /// Overlays keys from `j`; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::ordered_json& j) { return from_json(j, ModelConfig()); }
  static ModelConfig from_json(const nlohmann::ordered_json& j, ModelConfig base) {
    if (!j.is_object()) throw ConfigError("model config must be an object");
    try {
      for (const auto& [key, value] : j.items()) {
        if (key == "input_height") base.input_height = value.get<int>();
        else if (key == "input_width") base.input_width = value.get<int>();
        else if (key == "aspp_dilations") base.aspp_dilations = value.get<std::vector<int>>();
        else if (key == "aspp_filters") base.aspp_filters = value.get<int>();
        else if (key == "fusion_scales") base.fusion_scales = value.get<int>();
        else if (key == "mscam_reduction") base.mscam_reduction = value.get<int>();
        else if (key == "seed") base.seed = value.get<std::uint64_t>();
        else if (key == "mask_stream") base.mask_stream = value.get<bool>();
        else throw ConfigError("unknown model config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad model config value: ") + e.what());
    }
    return base;
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class Provenance { random, transferred_msi, checkpoint };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::random: return "random";
    case Provenance::transferred_msi: return "transferred_msi";
    case Provenance::checkpoint: return "checkpoint";
  }
  return "random";
}

inline Provenance parse_provenance(std::string_view s) {
  for (auto p : {Provenance::random, Provenance::transferred_msi, Provenance::checkpoint})
    if (to_string(p) == s) return p;
  throw ValidationError("unknown provenance '" + std::string(s) + "'");
}

struct WeightArray {
  std::vector<int> shape;
  std::vector<float> values;
  bool operator==(const WeightArray&) const = default;
};

/// Named parameter arrays (`<module>.<block>.<layer>.{weight|bias}`).
struct WeightBundle {
  std::map<std::string, WeightArray> tensors;
  Provenance provenance = Provenance::random;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

/// VGG16 convolution stages. Stages 4-5 pool with stride 1 and stage 5 is
/// dilated, so the stage-3/4/5 taps all sit at stride 8.
template <typename T>
class InputEncoder {
 public:
  static constexpr std::array<int, 3> kTapChannels{256, 512, 512};
  static constexpr std::array<const char*, 3> kTapNames{"input_encoder.stage3", "input_encoder.stage4",
                                                        "input_encoder.stage5"};

  InputEncoder() {
    add_stage(1, {3, 64, 64}, 1, nn::MaxPool2d<T>(2, 2, 0));
    add_stage(2, {64, 128, 128}, 1, nn::MaxPool2d<T>(2, 2, 0));
    add_stage(3, {128, 256, 256, 256}, 1, nn::MaxPool2d<T>(2, 2, 0));
    add_stage(4, {256, 512, 512, 512}, 1, nn::MaxPool2d<T>(3, 1, 1));
    add_stage(5, {512, 512, 512, 512}, 2, nn::MaxPool2d<T>(3, 1, 1));
  }

  std::array<Tensor<T>, 3> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
    if (x.c() != 3 || x.h() % 8 != 0 || x.w() % 8 != 0) {
      throw ShapeError("input encoder expects Nx3xHxW with H,W divisible by 8, got " + to_string(x.shape()));
    }
    std::array<Tensor<T>, 3> taps;
    Tensor<T> h = x;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (const auto& conv : stages_[s].convs) h = conv.forward(h, tape);
      h = stages_[s].pool.forward(h, tape);
      if (s >= 2) {
        taps[s - 2] = h;
        if (tape) tape->note_activation(kTapNames[s - 2], h);
      }
    }
    return taps;
  }

  /// Gradients w.r.t. the three taps; nothing is propagated into the image.
  void backward(const std::array<Tensor<T>, 3>& d_taps, Tape<T>& tape) const {
    Tensor<T> g;
    for (std::size_t s = stages_.size(); s-- > 0;) {
      if (s >= 2) {
        if (g.empty()) g = d_taps[s - 2];
        else g += d_taps[s - 2];
        if (tape.note_gradient(kTapNames[s - 2], g)) return;
      }
      g = stages_[s].pool.backward(g, tape);
      for (std::size_t c = stages_[s].convs.size(); c-- > 0;) {
        g = stages_[s].convs[c].backward(g, tape, !(s == 0 && c == 0));
      }
    }
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& st : stages_)
      for (auto& c : st.convs) {
        out.push_back(&c.weight);
        out.push_back(&c.bias);
      }
    return out;
  }

 private:
  struct Stage {
    std::vector<Conv2d<T>> convs;
    nn::MaxPool2d<T> pool;
  };

  void add_stage(int index, std::vector<int> widths, int dilation, nn::MaxPool2d<T> pool) {
    Stage& st = stages_[static_cast<std::size_t>(index - 1)];
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      st.convs.emplace_back("input_encoder.stage" + std::to_string(index) + ".conv" + std::to_string(i + 1),
                            widths[i], widths[i + 1], 3, dilation, Activation::relu);
    }
    st.pool = pool;
  }

  std::array<Stage, 5> stages_;
};

/// Five ReLU convolutions (32, 64, 64, 128, 128) with 2x2 max pools after the
/// second and fourth, a 2x2 average pool to stride 8, and three linear 1x1
/// heads matching the input-encoder tap widths.
template <typename T>
class MaskEncoder {
 public:
  static constexpr std::array<int, 5> kWidths{32, 64, 64, 128, 128};

  MaskEncoder() {
    int in = 2;
    for (std::size_t i = 0; i < kWidths.size(); ++i) {
      convs_.emplace_back("mask_encoder.block" + std::to_string(i + 1) + ".conv", in, kWidths[i], 3, 1,
                          Activation::relu);
      in = kWidths[i];
    }
    for (std::size_t i = 0; i < 3; ++i) {
      heads_.emplace_back("mask_encoder.proj" + std::to_string(i + 1) + ".conv", in,
                          InputEncoder<T>::kTapChannels[i], 1, 1, Activation::none);
    }
  }

  std::array<Tensor<T>, 3> forward(const Tensor<T>& m, Tape<T>* tape = nullptr) const {
    if (m.c() != 2 || m.h() % 8 != 0 || m.w() % 8 != 0) {
      throw ShapeError("mask encoder expects Nx2xHxW with H,W divisible by 8, got " + to_string(m.shape()));
    }
    Tensor<T> h = m;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i].forward(h, tape);
      if (i == 1) h = pool1_.forward(h, tape);
      if (i == 3) h = pool2_.forward(h, tape);
    }
    if (tape) tape->save(this).shape = h.shape();
    h = nn::avg_pool2(h);
    if (tape) tape->note_activation("mask_encoder.features", h);
    std::array<Tensor<T>, 3> out;
    for (std::size_t i = 0; i < 3; ++i) out[i] = heads_[i].forward(h, tape);
    return out;
  }

  void backward(const std::array<Tensor<T>, 3>& d_out, Tape<T>& tape) const {
    Tensor<T> g = heads_[0].backward(d_out[0], tape);
    for (std::size_t i = 1; i < 3; ++i) g += heads_[i].backward(d_out[i], tape);
    if (tape.note_gradient("mask_encoder.features", g)) return;
    g = nn::avg_pool2_backward(g, tape.load(this).shape);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      if (i == 3) g = pool2_.backward(g, tape);
      if (i == 1) g = pool1_.backward(g, tape);
      g = convs_[i].backward(g, tape, i != 0);
    }
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto* list : {&convs_, &heads_})
      for (auto& c : *list) {
        out.push_back(&c.weight);
        out.push_back(&c.bias);
      }
    return out;
  }

 private:
  std::vector<Conv2d<T>> convs_;
  std::vector<Conv2d<T>> heads_;
  nn::MaxPool2d<T> pool1_{2, 2, 0};
  nn::MaxPool2d<T> pool2_{2, 2, 0};
};

/// Parallel 1x1 and dilated 3x3 branches (ReLU), concatenated and projected
/// back to `filters` channels; spatial size is preserved.
template <typename T>
class Aspp {
 public:
  Aspp() = default;
  Aspp(int in_channels, int filters, const std::vector<int>& dilations) : filters_(filters) {
    branches_.emplace_back("aspp.branch1.conv", in_channels, filters, 1, 1, Activation::relu);
    for (std::size_t i = 0; i < dilations.size(); ++i) {
      branches_.emplace_back("aspp.branch" + std::to_string(i + 2) + ".conv", in_channels, filters, 3, dilations[i],
                             Activation::relu);
    }
    project_ = Conv2d<T>("aspp.project.conv", filters * static_cast<int>(branches_.size()), filters, 1, 1,
                         Activation::relu);
  }

  int out_channels() const { return filters_; }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
    std::vector<Tensor<T>> outs;
    outs.reserve(branches_.size());
    for (const auto& b : branches_) outs.push_back(b.forward(x, tape));
    std::vector<const Tensor<T>*> parts;
    for (const auto& o : outs) parts.push_back(&o);
    Tensor<T> y = project_.forward(nn::concat_channels(parts), tape);
    if (tape) tape->note_activation("aspp.project", y);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape) const {
    const Tensor<T> dcat = project_.backward(dy, tape);
    const auto pieces = nn::split_channels(dcat, std::vector<int>(branches_.size(), filters_));
    Tensor<T> dx = branches_[0].backward(pieces[0], tape);
    for (std::size_t i = 1; i < branches_.size(); ++i) dx += branches_[i].backward(pieces[i], tape);
    return dx;
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& b : branches_) {
      out.push_back(&b.weight);
      out.push_back(&b.bias);
    }
    out.push_back(&project_.weight);
    out.push_back(&project_.bias);
    return out;
  }

 private:
  int filters_ = 0;
  std::vector<Conv2d<T>> branches_;
  Conv2d<T> project_;
};

/// Three [bilinear x2 -> 3x3 conv -> ReLU] blocks (128, 64, 32 channels) and a
/// 3x3 head to one non-negative channel.
template <typename T>
class Decoder {
 public:
  static constexpr std::array<int, 3> kWidths{128, 64, 32};

  Decoder() = default;
  explicit Decoder(int in_channels) {
    int in = in_channels;
    for (std::size_t i = 0; i < kWidths.size(); ++i) {
      blocks_.emplace_back("decoder.block" + std::to_string(i + 1) + ".conv", in, kWidths[i], 3, 1, Activation::relu);
      in = kWidths[i];
    }
    head_ = Conv2d<T>("decoder.head.conv", in, 1, 3, 1, Activation::relu);
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(nn::resize_bilinear(h, 2 * h.h(), 2 * h.w()), tape);
      if (tape) tape->note_activation(block_name(i), h);
    }
    h = head_.forward(h, tape);
    if (tape) tape->note_activation("decoder.head", h);
    return h;
  }

  /// Gradient w.r.t. the decoder input; empty if a stop tap was reached.
  Tensor<T> backward(const Tensor<T>& dy, Tape<T>& tape) const {
    if (tape.note_gradient("decoder.head", dy)) return {};
    Tensor<T> g = head_.backward(dy, tape);
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      if (tape.note_gradient(block_name(i), g)) return {};
      g = blocks_[i].backward(g, tape);
      g = nn::resize_bilinear_backward(g, g.h() / 2, g.w() / 2);
    }
    return g;
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& b : blocks_) {
      out.push_back(&b.weight);
      out.push_back(&b.bias);
    }
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    return out;
  }

 private:
  static std::string block_name(std::size_t i) { return "decoder.block" + std::to_string(i + 1); }

  std::vector<Conv2d<T>> blocks_;
  Conv2d<T> head_;
};

/// Channel-wise concatenation of the fused features in encoder-tap order.
template <typename T>
Tensor<T> conjoint(const std::array<Tensor<T>, 3>& fused) {
  for (const auto& f : fused) {
    if (f.h() != fused[0].h() || f.w() != fused[0].w()) throw ShapeError("conjoint: fused features differ in scale");
  }
  return nn::concat_channels<T>({&fused[0], &fused[1], &fused[2]});
}

inline constexpr double kHeadBiasInit = 1.0;

template <typename T>
class Model {
 public:
  using scalar_type = T;

  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    for (std::size_t i = 0; i < 3; ++i) {
      fusion_[i] = nn::AffFusion<T>("fusion.scale" + std::to_string(i + 1), InputEncoder<T>::kTapChannels[i],
                                    config_.mscam_reduction);
    }
    int conjoint_channels = 0;
    for (int c : InputEncoder<T>::kTapChannels) conjoint_channels += c;
    aspp_ = Aspp<T>(conjoint_channels, config_.aspp_filters, config_.aspp_dilations);
    decoder_ = Decoder<T>(config_.aspp_filters);
    initialize();
  }

  const ModelConfig& config() const { return config_; }
  Provenance provenance() const { return provenance_; }
  void set_provenance(Provenance p) { provenance_ = p; }

  const InputEncoder<T>& input_encoder() const { return input_encoder_; }
  const MaskEncoder<T>& mask_encoder() const { return mask_encoder_; }
  const nn::AffFusion<T>& fusion(std::size_t scale) const { return fusion_.at(scale); }
  const Aspp<T>& aspp() const { return aspp_; }
  const Decoder<T>& decoder() const { return decoder_; }

  /// image: Nx3xHxW normalized screenshot; masks: Nx2xHxW (image, text).
  /// Returns Nx1xHxW non-negative maps.
  Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& masks, Tape<T>* tape = nullptr) const {
    const Dims d = config_.input_dims();
    if (image.c() != 3 || image.h() != d.height || image.w() != d.width) {
      throw ShapeError("model expects Nx3x" + to_string(d) + " input, got " + to_string(image.shape()));
    }
    std::array<Tensor<T>, 3> fused = input_encoder_.forward(image, tape);
    if (config_.mask_stream) {
      if (masks.c() != 2 || masks.n() != image.n() || masks.h() != d.height || masks.w() != d.width) {
        throw ShapeError("model expects Nx2x" + to_string(d) + " masks, got " + to_string(masks.shape()));
      }
      const auto mask_features = mask_encoder_.forward(masks, tape);
      for (std::size_t i = 0; i < 3; ++i) {
        fused[i] = fusion_[i].forward(fused[i], mask_features[i], tape);
        if (tape) tape->note_activation(fusion_name(i), fused[i]);
      }
    }
    const Tensor<T> joint = conjoint(fused);
    if (tape) tape->note_activation("conjoint", joint);
    return decoder_.forward(aspp_.forward(joint, tape), tape);
  }

  /// Backpropagates dL/d(output); parameter gradients land in the tape.
  void backward(const Tensor<T>& d_out, Tape<T>& tape) const {
    const Tensor<T> d_aspp = decoder_.backward(d_out, tape);
    if (tape.stopped() || tape.note_gradient("aspp.project", d_aspp)) return;
    const Tensor<T> d_joint = aspp_.backward(d_aspp, tape);
    if (tape.note_gradient("conjoint", d_joint)) return;
    auto parts = nn::split_channels(d_joint, {InputEncoder<T>::kTapChannels.begin(), InputEncoder<T>::kTapChannels.end()});
    std::array<Tensor<T>, 3> d_taps{std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
    if (config_.mask_stream) {
      bool stop = false;
      for (std::size_t i = 0; i < 3; ++i) stop = tape.note_gradient(fusion_name(i), d_taps[i]) || stop;
      if (stop) return;
      std::array<Tensor<T>, 3> d_mask;
      for (std::size_t i = 0; i < 3; ++i) std::tie(d_taps[i], d_mask[i]) = fusion_[i].backward(d_taps[i], tape);
      mask_encoder_.backward(d_mask, tape);
      if (tape.stopped()) return;
    }
    input_encoder_.backward(d_taps, tape);
  }

  /// Prepares one sample at model resolution and runs forward. A
  /// screenshot-only model accepts samples without masks.
  Tensor<T> forward_sample(const DatasetSample& s, Tape<T>* tape = nullptr) const;

  /// Layers with spatial activations that can be inspected by name.
  std::vector<std::string> cam_layers() const {
    std::vector<std::string> names(InputEncoder<T>::kTapNames.begin(), InputEncoder<T>::kTapNames.end());
    if (config_.mask_stream) {
      names.push_back("mask_encoder.features");
      for (std::size_t i = 0; i < 3; ++i) names.push_back(fusion_name(i));
    }
    for (const char* n : {"conjoint", "aspp.project", "decoder.block1", "decoder.block2", "decoder.block3",
                          "decoder.head"})
      names.emplace_back(n);
    return names;
  }

  /// Trainable parameters in a fixed order; a screenshot-only model omits
  /// the mask encoder and fusion blocks.
  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    const auto append = [&out](std::vector<Param<T>*> v) { out.insert(out.end(), v.begin(), v.end()); };
    append(input_encoder_.parameters());
    if (config_.mask_stream) {
      append(mask_encoder_.parameters());
      for (auto& f : fusion_) append(f.parameters());
    }
    append(aspp_.parameters());
    append(decoder_.parameters());
    return out;
  }

  std::vector<const Param<T>*> parameters() const {
    auto mutable_params = const_cast<Model*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
  }

  Param<T>* find_parameter(const std::string& name) {
    for (auto* p : parameters())
      if (p->name == name) return p;
    return nullptr;
  }

  WeightBundle weights() const {
    WeightBundle b;
    b.provenance = provenance_;
    b.config = config_.to_json();
    for (const auto* p : parameters()) {
      const auto& s = p->value.shape();
      b.tensors[p->name] = {{s.n, s.c, s.h, s.w}, std::vector<float>(p->value.storage().begin(), p->value.storage().end())};
    }
    return b;
  }

  /// Replaces every parameter; names and shapes must match exactly.
  void load_weights(const WeightBundle& b) {
    std::size_t matched = 0;
    for (auto* p : parameters()) {
      auto it = b.tensors.find(p->name);
      if (it == b.tensors.end()) throw ValidationError("weights missing tensor '" + p->name + "'");
      check_shape(*p, it->second);
      std::copy(it->second.values.begin(), it->second.values.end(), p->value.storage().begin());
      ++matched;
    }
    if (matched != b.tensors.size()) {
      for (const auto& [name, arr] : b.tensors)
        if (!find_parameter(name)) throw ValidationError("weights contain unknown tensor '" + name + "'");
    }
    provenance_ = Provenance::checkpoint;
  }

  static void check_shape(const Param<T>& p, const WeightArray& arr) {
    const auto& s = p.value.shape();
    if (arr.shape != std::vector<int>{s.n, s.c, s.h, s.w} || arr.values.size() != p.value.size()) {
      throw ShapeError("tensor '" + p.name + "' has incompatible shape");
    }
  }

 private:
  static std::string fusion_name(std::size_t i) { return "fusion.scale" + std::to_string(i + 1); }

  // He-uniform weights and zero biases, drawn in parameter order from the seed.
  void initialize() {
    Rng rng(config_.seed);
    for (auto* p : parameters()) {
      if (p->name.ends_with(".bias")) {
        p->value.fill(T(0));
        continue;
      }
      const double bound = std::sqrt(6.0 / static_cast<double>(p->fan_in));
      for (auto& v : p->value.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    // A positive head bias keeps the final ReLU open at start, so the first
    // prediction is close to uniform and every output pixel gets gradient.
    find_parameter("decoder.head.conv.bias")->value.fill(static_cast<T>(kHeadBiasInit));
    provenance_ = Provenance::random;
  }

  ModelConfig config_;
  Provenance provenance_ = Provenance::random;
  InputEncoder<T> input_encoder_;
  MaskEncoder<T> mask_encoder_;
  std::array<nn::AffFusion<T>, 3> fusion_;
  Aspp<T> aspp_;
  Decoder<T> decoder_;
};

template <typename T = float>
Model<T> build_model(const ModelConfig& config) {
  return Model<T>(config);
}

// --- input preparation ------------------------------------------------------

inline constexpr std::array<double, 3> kChannelMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kChannelStd{0.229, 0.224, 0.225};

/// Bilinear resize of an RGB screenshot into a 1x3xHxW normalized tensor.
template <typename T>
Tensor<T> image_tensor(const RgbImage& img, Dims target) {
  Tensor<T> out(1, 3, target.height, target.width);
  std::vector<double> plane(img.dims().area()), resized(target.area());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) plane[static_cast<std::size_t>(y) * img.width() + x] = img.pixel(y, x)[c];
    nn::resize_plane(plane.data(), img.height(), img.width(), resized.data(), target.height, target.width);
    T* dst = out.plane(0, c);
    for (std::size_t i = 0; i < resized.size(); ++i) {
      dst[i] = static_cast<T>((resized[i] / 255.0 - kChannelMean[static_cast<std::size_t>(c)]) /
                              kChannelStd[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

/// Nearest-neighbour resize of the two masks into a 1x2xHxW tensor (image, text).
template <typename T>
Tensor<T> mask_tensor(const BinaryMask& image_mask, const BinaryMask& text_mask, Dims target) {
  if (image_mask.dims() != text_mask.dims()) throw ShapeError("image and text masks differ in size");
  Tensor<T> out(1, 2, target.height, target.width);
  const Dims src = image_mask.dims();
  for (int y = 0; y < target.height; ++y) {
    const int sy = nn::nearest_index(y, src.height, target.height);
    for (int x = 0; x < target.width; ++x) {
      const int sx = nn::nearest_index(x, src.width, target.width);
      out.at(0, 0, y, x) = static_cast<T>(image_mask.values(sy, sx));
      out.at(0, 1, y, x) = static_cast<T>(text_mask.values(sy, sx));
    }
  }
  return out;
}

inline Grid<double> resize_map(const Grid<double>& map, Dims target) {
  if (map.dims() == target) return map;
  Grid<double> out(target);
  nn::resize_plane(map.storage().data(), map.rows(), map.cols(), out.storage().data(), target.height, target.width);
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& items) {
  if (items.empty()) throw ShapeError("cannot stack zero tensors");
  const nn::Shape s = items.front()->shape();
  Tensor<T> out(static_cast<int>(items.size()), s.c, s.h, s.w);
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape() != s) throw ShapeError("stack: shape mismatch");
    std::copy(items[i]->data(), items[i]->data() + per, out.sample(static_cast<int>(i)));
  }
  return out;
}

/// Model-resolution inputs for one sample.
template <typename T>
struct PreparedInput {
  Tensor<T> image;
  Tensor<T> masks;
};

template <typename T>
PreparedInput<T> prepare_input(const Screenshot& s, const BinaryMask& image_mask, const BinaryMask& text_mask,
                               Dims target) {
  if (image_mask.dims() != s.dims() || text_mask.dims() != s.dims()) {
    throw ShapeError("masks must match screenshot dims " + to_string(s.dims()));
  }
  return {image_tensor<T>(s.pixels, target), mask_tensor<T>(image_mask, text_mask, target)};
}

template <typename T>
PreparedInput<T> prepare_input(const DatasetSample& s, Dims target) {
  if (!s.image_mask) throw ValidationError("image_mask", s.stem());
  if (!s.text_mask) throw ValidationError("text_mask", s.stem());
  return prepare_input<T>(s.screenshot, *s.image_mask, *s.text_mask, target);
}

template <typename T>
PreparedInput<T> prepare_input(const DatasetSample& s, const ModelConfig& config) {
  if (config.mask_stream) return prepare_input<T>(s, config.input_dims());
  const Dims d = config.input_dims();
  return {image_tensor<T>(s.screenshot.pixels, d), Tensor<T>(1, 2, d.height, d.width)};
}

template <typename T>
Tensor<T> Model<T>::forward_sample(const DatasetSample& s, Tape<T>* tape) const {
  const auto in = prepare_input<T>(s, config_);
  return forward(in.image, in.masks, tape);
}

template <typename T>
Grid<double> output_map(const Tensor<T>& out, int n = 0) {
  Grid<double> g(out.h(), out.w());
  const T* p = out.plane(n, 0);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(p[i]);
  return g;
}

/// Model output resized to `original`, clamped at zero and quantized to
/// grayscale.
template <typename T>
GazeHeatmap heatmap_from_output(const Tensor<T>& out, Dims original) {
  Grid<double> map = resize_map(output_map(out), original);
  for (double& v : map.storage()) v = std::max(v, 0.0);
  return to_grayscale(GazeHeatmap{std::move(map), Normalization::raw});
}

/// Full forward pass at model resolution, resized back to the screenshot and
/// quantized to grayscale.
template <typename T>
GazeHeatmap predict(const Model<T>& model, const Screenshot& screenshot, const BinaryMask& image_mask,
                    const BinaryMask& text_mask) {
  const auto in = prepare_input<T>(screenshot, image_mask, text_mask, model.config().input_dims());
  return heatmap_from_output(model.forward(in.image, in.masks), screenshot.dims());
}

template <typename T>
GazeHeatmap predict(const Model<T>& model, const DatasetSample& s) {
  return heatmap_from_output(model.forward_sample(s), s.screenshot.dims());
}

}  // namespace mmian::model
