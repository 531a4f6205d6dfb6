#include <gtest/gtest.h>

#include "mmian/explain.hpp"
#include "support.hpp"
#include "toy_cam_model.hpp"

using namespace mmian;
using namespace mmian::explain;

namespace {

std::pair<int, int> argmax(const Grid<double>& g) {
  const auto it = std::max_element(g.storage().begin(), g.storage().end());
  const auto i = static_cast<int>(it - g.storage().begin());
  return {i / g.cols(), i % g.cols()};
}

DatasetSample page(std::uint64_t seed) {
  synth::SynthOptions opt;
  opt.sigma_px = 4.0;
  return synth::synth_pages(1, seed, {40, 48}, opt)[0].sample;
}

}  // namespace

TEST(GradCam, ToyModelLocalizesBlob) {
  const toy::CamModel toy;
  for (auto [by, bx] : {std::pair{5, 7}, {20, 30}, {12, 3}}) {
    const auto r = grad_cam(toy, toy::blob_sample(24, 36, by, bx), "toy.conv");
    EXPECT_EQ(argmax(r.cam), (std::pair{by, bx}));
    EXPECT_EQ(argmax(r.upsampled), (std::pair{by, bx}));
    EXPECT_DOUBLE_EQ(r.upsampled(by, bx), 1.0);
  }
}

TEST(GradCam, ToyCamIsTheActivationForSumObjective) {
  // d(sum)/dA = 1 everywhere, so the single channel weight is 1 and cam = A.
  const toy::CamModel toy;
  const auto s = toy::blob_sample(10, 10, 4, 4);
  nn::Tape<double> tape(false);
  tape.watch("toy.conv");
  const auto out = toy.forward_sample(s, &tape);
  const auto r = grad_cam(toy, s, "toy.conv");
  for (std::size_t i = 0; i < r.cam.size(); ++i) EXPECT_NEAR(r.cam[i], out[i], 1e-15);
}

TEST(GradCam, ModelCamsAreNonNegativeAndInputAligned) {
  const auto m = model::build_model(support::micro_config(1));
  const auto s = page(1);
  for (const auto& layer : m.cam_layers()) {
    const auto r = grad_cam(m, s, layer);
    EXPECT_EQ(r.target_layer, layer);
    EXPECT_EQ(r.upsampled.dims(), s.screenshot.dims()) << layer;
    for (double v : r.cam.values()) ASSERT_GE(v, 0.0) << layer;
    for (double v : r.upsampled.values()) {
      ASSERT_GE(v, 0.0) << layer;
      ASSERT_LE(v, 1.0) << layer;
    }
  }
}

TEST(GradCam, DefaultLayerResolution) {
  const auto m = model::build_model(support::micro_config(2));
  const auto r = grad_cam(m, page(2));
  EXPECT_EQ(r.target_layer, "aspp.project");
  EXPECT_EQ(r.cam.dims(), (Dims{4, 4}));
}

TEST(GradCam, DeterministicAndKldObjective) {
  const auto m = model::build_model(support::micro_config(3));
  const auto s = page(3);
  EXPECT_EQ(grad_cam(m, s, "decoder.block1").upsampled, grad_cam(m, s, "decoder.block1").upsampled);
  const auto k = grad_cam(m, s, "decoder.block1", Objective::kld_vs_gt);
  EXPECT_EQ(k.upsampled.dims(), s.screenshot.dims());
  auto unlabeled = s;
  unlabeled.heatmap.reset();
  EXPECT_THROW(grad_cam(m, unlabeled, "decoder.block1", Objective::kld_vs_gt), ValidationError);
}

TEST(GradCam, UnknownLayerListsValidNames) {
  const auto m = model::build_model(support::micro_config(4));
  try {
    grad_cam(m, page(4), "aspp.nonexistent");
    FAIL();
  } catch (const LayerNotFound& e) {
    EXPECT_EQ(e.valid_layers(), m.cam_layers());
    EXPECT_NE(std::string(e.what()).find("aspp.project"), std::string::npos);
  }
}

TEST(GradCam, ScreenshotOnlyModelHasNoFusionLayers) {
  const auto m = model::build_model(support::micro_config(5, false));
  EXPECT_THROW(grad_cam(m, page(5), "fusion.scale1"), LayerNotFound);
  EXPECT_NO_THROW(grad_cam(m, page(5), "input_encoder.stage3"));
}

TEST(Objective, ParseRoundTrip) {
  EXPECT_EQ(parse_objective(to_string(Objective::kld_vs_gt)), Objective::kld_vs_gt);
  EXPECT_THROW(parse_objective("logit"), ConfigError);
}

TEST(Overlay, BlendsJetOverScreenshot) {
  RgbImage shot(2, 2, 100);
  Grid<double> cam(2, 2, 0.0);
  cam(1, 1) = 1.0;
  const auto o = overlay(shot, cam);
  // Jet maps 0 to dark blue (0,0,128) and 1 to dark red (128,0,0).
  EXPECT_EQ(o.pixel(0, 0)[0], 50);
  EXPECT_EQ(o.pixel(0, 0)[2], 114);
  EXPECT_EQ(o.pixel(1, 1)[0], 114);
  EXPECT_EQ(o.pixel(1, 1)[2], 50);
  EXPECT_THROW(overlay(shot, Grid<double>(3, 2, 0.0)), ShapeError);
  EXPECT_EQ(cam_to_gray(cam)(1, 1), 255);
}
