#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "mmian/checkpoint.hpp"
#include "mmian/model.hpp"
#include "mmian/training.hpp"
#include "support.hpp"

using namespace mmian;
using namespace mmian::model;

namespace {

std::size_t conv_params(std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k + cout; }

std::size_t mscam_params(std::size_t c, std::size_t r) { return 2 * (conv_params(c, c / r, 1) + conv_params(c / r, c, 1)); }

// Counted from the layer widths, independently of the model code.
struct ExpectedCounts {
  std::size_t input_encoder = 0, mask_encoder = 0, fusion = 0, aspp = 0, decoder = 0;
  ExpectedCounts() {
    const std::vector<std::vector<std::size_t>> vgg{{3, 64, 64}, {64, 128, 128}, {128, 256, 256, 256},
                                                    {256, 512, 512, 512}, {512, 512, 512, 512}};
    for (const auto& st : vgg)
      for (std::size_t i = 0; i + 1 < st.size(); ++i) input_encoder += conv_params(st[i], st[i + 1], 3);
    std::size_t in = 2;
    for (std::size_t w : {32, 64, 64, 128, 128}) {
      mask_encoder += conv_params(in, w, 3);
      in = w;
    }
    for (std::size_t w : {256, 512, 512}) mask_encoder += conv_params(128, w, 1);
    fusion = mscam_params(256, 4) + 2 * mscam_params(512, 4);
    aspp = conv_params(1280, 256, 1) + 3 * conv_params(1280, 256, 3) + conv_params(1024, 256, 1);
    decoder = conv_params(256, 128, 3) + conv_params(128, 64, 3) + conv_params(64, 32, 3) + conv_params(32, 1, 3);
  }
};

DatasetSample micro_sample(std::uint64_t seed, Dims d = {48, 40}) {
  synth::SynthOptions opt;
  opt.sigma_px = 4.0;
  return synth::synth_pages(1, seed, d, opt)[0].sample;
}

double max_abs_diff(const nn::Tensor<float>& a, const nn::Tensor<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

TEST(ModelConfig, DefaultsValidateAndRoundTrip) {
  const ModelConfig c;
  EXPECT_EQ(c.input_dims(), (Dims{384, 512}));
  EXPECT_EQ(c.aspp_dilations, (std::vector<int>{4, 8, 12}));
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  const auto partial = ModelConfig::from_json(nlohmann::ordered_json{{"seed", 9}});
  EXPECT_EQ(partial.seed, 9u);
  EXPECT_EQ(partial.input_width, 512);
}

TEST(ModelConfig, RejectsInvalidValues) {
  EXPECT_THROW(ModelConfig::from_json(nlohmann::ordered_json{{"dropout", 0.1}}), ConfigError);
  EXPECT_THROW(ModelConfig::from_json(nlohmann::ordered_json{{"seed", "x"}}), ConfigError);
  ModelConfig c;
  c.input_height = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.fusion_scales = 2;
  EXPECT_THROW(Model<float>{c}, ConfigError);
  c = {};
  c.mscam_reduction = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.aspp_dilations = {4, 0};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, ParameterCountMatchesArchitecture) {
  const ExpectedCounts e;
  const auto full = build_model(ModelConfig{});
  EXPECT_EQ(full.parameter_count(), e.input_encoder + e.mask_encoder + e.fusion + e.aspp + e.decoder);
  EXPECT_EQ(full.parameter_count(), 25'576'353u);

  ModelConfig plain;
  plain.mask_stream = false;
  EXPECT_EQ(build_model(plain).parameter_count(), e.input_encoder + e.aspp + e.decoder);
}

TEST(Model, ParameterNamesAreUniqueAndStructured) {
  const auto m = build_model(support::micro_config());
  std::set<std::string> names;
  for (const auto* p : m.parameters()) {
    EXPECT_TRUE(names.insert(p->name).second) << p->name;
    EXPECT_TRUE(p->name.ends_with(".weight") || p->name.ends_with(".bias")) << p->name;
  }
  for (const char* n : {"input_encoder.stage1.conv1.weight", "input_encoder.stage5.conv3.bias",
                        "mask_encoder.block5.conv.weight", "mask_encoder.proj3.conv.bias",
                        "fusion.scale2.local_reduce.weight", "aspp.branch4.conv.weight", "aspp.project.conv.bias",
                        "decoder.block3.conv.weight", "decoder.head.conv.bias"})
    EXPECT_TRUE(names.count(n)) << n;
}

TEST(Model, InitializationIsSeededHeUniform) {
  auto a = build_model(support::micro_config(3));
  auto b = build_model(support::micro_config(3));
  auto c = build_model(support::micro_config(4));
  EXPECT_EQ(a.weights().tensors, b.weights().tensors);
  EXPECT_NE(a.weights().tensors, c.weights().tensors);
  EXPECT_EQ(a.provenance(), Provenance::random);
  for (auto* p : a.parameters()) {
    if (p->name.ends_with(".bias")) {
      const float expected = p->name == "decoder.head.conv.bias" ? static_cast<float>(kHeadBiasInit) : 0.0f;
      for (float v : p->value.storage()) ASSERT_EQ(v, expected) << p->name;
    } else {
      const double bound = std::sqrt(6.0 / p->fan_in);
      for (float v : p->value.storage()) ASSERT_LE(std::abs(v), bound) << p->name;
    }
  }
}

TEST(Model, MicroForwardShapesAndTaps) {
  const auto m = build_model(support::micro_config(1));
  Rng rng(1);
  const auto x = support::random_tensor<float>({2, 3, 32, 32}, rng);
  const nn::Tensor<float> masks(2, 2, 32, 32, 1.0f);
  nn::Tape<float> tape(false);
  for (const auto& name : m.cam_layers()) tape.watch(name);
  const auto y = m.forward(x, masks, &tape);
  EXPECT_EQ(y.shape(), (nn::Shape{2, 1, 32, 32}));
  for (float v : y.storage()) EXPECT_GE(v, 0.0f);
  EXPECT_EQ(tape.activation("input_encoder.stage5").shape(), (nn::Shape{2, 512, 4, 4}));
  EXPECT_EQ(tape.activation("mask_encoder.features").shape(), (nn::Shape{2, 128, 4, 4}));
  EXPECT_EQ(tape.activation("conjoint").shape(), (nn::Shape{2, 1280, 4, 4}));
  EXPECT_EQ(tape.activation("decoder.block2").shape(), (nn::Shape{2, 64, 16, 16}));
}

TEST(Model, BatchEntriesAreIndependent) {
  const auto m = build_model(support::micro_config(2));
  Rng rng(2);
  const auto x = support::random_tensor<float>({2, 3, 32, 32}, rng);
  nn::Tensor<float> masks(2, 2, 32, 32);
  for (auto& v : masks.storage()) v = static_cast<float>(rng.uniform_int(0, 1));
  const auto both = m.forward(x, masks);
  nn::Tensor<float> x1(1, 3, 32, 32), m1(1, 2, 32, 32);
  std::copy(x.sample(1), x.sample(1) + x1.size(), x1.data());
  std::copy(masks.sample(1), masks.sample(1) + m1.size(), m1.data());
  const auto one = m.forward(x1, m1);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(one[i], both.sample(1)[i], 1e-4);
}

TEST(Model, RejectsWrongInputShapes) {
  const auto m = build_model(support::micro_config());
  EXPECT_THROW(m.forward(nn::Tensor<float>(1, 3, 16, 32), nn::Tensor<float>(1, 2, 16, 32)), ShapeError);
  EXPECT_THROW(m.forward(nn::Tensor<float>(1, 1, 32, 32), nn::Tensor<float>(1, 2, 32, 32)), ShapeError);
  EXPECT_THROW(m.forward(nn::Tensor<float>(1, 3, 32, 32), nn::Tensor<float>(1, 1, 32, 32)), ShapeError);
}

TEST(Model, ScreenshotOnlyModelIgnoresMasks) {
  const auto m = build_model(support::micro_config(5, false));
  Rng rng(5);
  const auto x = support::random_tensor<float>({1, 3, 32, 32}, rng);
  EXPECT_EQ(m.forward(x, nn::Tensor<float>(1, 2, 32, 32, 0.0f)), m.forward(x, nn::Tensor<float>(1, 2, 32, 32, 1.0f)));
  for (const auto* p : m.parameters()) {
    EXPECT_FALSE(p->name.starts_with("mask_encoder.")) << p->name;
    EXPECT_FALSE(p->name.starts_with("fusion.")) << p->name;
  }
  for (const auto& name : m.cam_layers()) EXPECT_FALSE(name.starts_with("fusion.")) << name;
}

TEST(Model, ScreenshotOnlyGradientsMatchFiniteDifferences) {
  Model<double> net(support::micro_config(6, false));
  Rng rng(6);
  const auto x = support::random_tensor<double>({1, 3, 32, 32}, rng, -2.0, 2.0);
  const nn::Tensor<double> none(1, 2, 32, 32);
  Grid<double> target(32, 32);
  for (auto& v : target.storage()) v = rng.uniform(0.0, 1.0);
  nn::Tape<double> tape;
  nn::Tensor<double> grad;
  training::kld_loss(net.forward(x, none, &tape), {&target}, 1e-7, &grad);
  net.backward(grad, tape);
  auto params = net.parameters();
  const auto r = support::grad_check<double>(
      params, [&] { return training::kld_loss(net.forward(x, none), {&target}, 1e-7).value; },
      [&](const nn::Param<double>& p, std::size_t i) {
        const auto* g = tape.find_grad(p);
        return g ? (*g)[i] : 0.0;
      },
      rng, 10);
  EXPECT_EQ(r.checked, 10);
  EXPECT_LT(r.worst_rel, 1e-3);
}

TEST(Input, ImageTensorNormalizesChannels) {
  RgbImage img(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      auto* p = img.pixel(y, x);
      p[0] = 255;
      p[1] = 0;
      p[2] = 128;
    }
  const auto t = image_tensor<double>(img, {16, 16});
  EXPECT_EQ(t.shape(), (nn::Shape{1, 3, 16, 16}));
  EXPECT_NEAR(t.at(0, 0, 5, 5), (1.0 - 0.485) / 0.229, 1e-9);
  EXPECT_NEAR(t.at(0, 1, 5, 5), (0.0 - 0.456) / 0.224, 1e-9);
  EXPECT_NEAR(t.at(0, 2, 5, 5), (128.0 / 255.0 - 0.406) / 0.225, 1e-9);
}

TEST(Input, MaskTensorStaysBinary) {
  BinaryMask im{Grid<std::uint8_t>(10, 10, 0), MaskKind::image}, tx{Grid<std::uint8_t>(10, 10, 0), MaskKind::text};
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 10; ++x) im.values(y, x) = 1;
  const auto t = mask_tensor<float>(im, tx, {32, 32});
  EXPECT_EQ(t.shape(), (nn::Shape{1, 2, 32, 32}));
  for (float v : t.storage()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  EXPECT_EQ(t.at(0, 0, 0, 0), 1.0f);
  EXPECT_EQ(t.at(0, 0, 31, 0), 0.0f);
  EXPECT_THROW(prepare_input<float>(Screenshot{RgbImage(9, 10), "s"}, im, tx, {32, 32}), ShapeError);
}

TEST(Predict, OutputMatchesScreenshotDims) {
  const auto m = build_model(support::micro_config(7));
  const auto s = micro_sample(7, {50, 70});
  const auto h = predict(m, s);
  EXPECT_EQ(h.dims(), (Dims{50, 70}));
  EXPECT_EQ(h.normalization, Normalization::grayscale_255);
  for (double v : h.values.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 255.0);
  }
  EXPECT_EQ(predict(m, s.screenshot, *s.image_mask, *s.text_mask), h);
  auto no_masks = s;
  no_masks.image_mask.reset();
  EXPECT_THROW(predict(m, no_masks), ValidationError);
}

TEST(Checkpoint, RoundTripRestoresEverything) {
  support::TempDir dir("ckpt");
  auto m = build_model(support::micro_config(8));
  m.set_provenance(Provenance::transferred_msi);
  save_checkpoint(m, dir / "m.ckpt");
  const auto bundle = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(bundle.provenance, Provenance::transferred_msi);
  EXPECT_EQ(bundle.tensors, m.weights().tensors);
  const auto back = load_model(dir / "m.ckpt");
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.provenance(), Provenance::checkpoint);
  Rng rng(8);
  const auto x = support::random_tensor<float>({1, 3, 32, 32}, rng);
  const nn::Tensor<float> masks(1, 2, 32, 32, 1.0f);
  EXPECT_EQ(max_abs_diff(back.forward(x, masks), m.forward(x, masks)), 0.0);
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  support::TempDir dir("ckpt_bad");
  const auto m = build_model(support::micro_config(9, false));
  save_checkpoint(m, dir / "m.ckpt");
  const std::string blob = dataset::read_text_file(dir / "m.ckpt");
  dataset::write_text_file(dir / "trunc.ckpt", blob.substr(0, blob.size() - 100));
  EXPECT_THROW(load_checkpoint(dir / "trunc.ckpt"), ValidationError);
  dataset::write_text_file(dir / "magic.ckpt", "NOTACKPT" + blob.substr(8));
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), ValidationError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Checkpoint, LoadWeightsChecksNamesAndShapes) {
  auto m = build_model(support::micro_config(10));
  auto bundle = m.weights();
  bundle.tensors["decoder.head.conv.weight"].shape = {1, 32, 5, 5};
  EXPECT_THROW(m.load_weights(bundle), ShapeError);
  bundle = m.weights();
  bundle.tensors.erase("aspp.project.conv.bias");
  EXPECT_THROW(m.load_weights(bundle), ValidationError);
  bundle = m.weights();
  bundle.tensors["extra.weight"] = {{1, 1, 1, 1}, {0.0f}};
  EXPECT_THROW(m.load_weights(bundle), ValidationError);
}
