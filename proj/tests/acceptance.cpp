// Acceptance suite: one PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mmian/core.hpp"
#include "mmian/dataset.hpp"
#include "mmian/explain.hpp"
#include "mmian/metrics.hpp"
#include "mmian/model.hpp"
#include "mmian/nn/attention.hpp"
#include "mmian/synth.hpp"
#include "mmian/training.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "toy_cam_model.hpp"

using namespace mmian;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// 1. Metrics against brute-force oracles on random small maps.
Outcome metric_oracles() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst_auc = 0.0, worst_other = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = static_cast<int>(rng.uniform_int(1, 8)), w = static_cast<int>(rng.uniform_int(2, 8));
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<double> pred(n), gt(n);
    std::vector<int> fix(n, 0);
    const bool ties = trial % 3 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = ties ? static_cast<double>(rng.uniform_int(0, 3)) : rng.uniform(0.0, 1.0);
      gt[i] = rng.uniform(0.01, 1.0);
    }
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(n) - 1));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    for (std::size_t i = 0; i < k; ++i) fix[idx[i]] = 1;
    if (std::all_of(pred.begin(), pred.end(), [&](double v) { return v == pred[0]; })) pred[0] += 1.0;

    GazeHeatmap p{Grid<double>(h, w, pred)}, g{Grid<double>(h, w, gt)};
    Grid<std::uint8_t> fm(h, w);
    for (std::size_t i = 0; i < n; ++i) fm[i] = static_cast<std::uint8_t>(fix[i]);
    const FixationBinaryMap fixmap{fm};

    worst_auc = std::max(worst_auc, std::abs(metrics::auc_judd(p, fixmap) - oracle::auc_judd(pred, fix)));
    worst_other = std::max({worst_other, std::abs(metrics::nss(p, fixmap) - oracle::nss(pred, fix)),
                            std::abs(metrics::cc(p, g) - oracle::cc(pred, gt)),
                            std::abs(metrics::kld(p, g, 1e-7) - oracle::kld(pred, gt, 1e-7))});
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "1000 maps, max |auc err| " << worst_auc << ", max |nss/cc/kld err| " << worst_other << ", " << secs << " s";
  return {worst_auc <= 1e-9 && worst_other <= 1e-6 && secs < 30.0, d.str()};
}

// 2. Analytic anchors.
Outcome metric_anchors() {
  Rng rng(7);
  const int h = 6, w = 7;
  Grid<double> y(h, w);
  for (auto& v : y.storage()) v = rng.uniform(0.0, 1.0);
  Grid<double> flipped(h, w);
  for (std::size_t i = 0; i < y.size(); ++i) flipped[i] = 2.0 - y[i];
  const GazeHeatmap Y{y}, C{flipped}, K{Grid<double>(h, w, 0.3)};
  Grid<std::uint8_t> half(h, w);
  for (std::size_t i = 0; i < half.size(); ++i) half[i] = i % 2;
  Grid<double> ranked(h, w);
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i] = (i % 2) ? 1.0 + rng.uniform() : rng.uniform();
  const FixationBinaryMap some{half}, all{Grid<std::uint8_t>(h, w, 1)};

  const double cc_same = metrics::cc(Y, Y), cc_flip = metrics::cc(Y, C);
  const double auc_const = metrics::auc_judd(K, some), auc_perfect = metrics::auc_judd(GazeHeatmap{ranked}, some);
  const double kld_same = metrics::kld(Y, Y, 1e-7), nss_all = metrics::nss(Y, all);
  std::ostringstream d;
  d << "cc(Y,Y)=" << cc_same << " cc(Y,c-Y)=" << cc_flip << " auc(const)=" << auc_const
    << " auc(perfect)=" << auc_perfect << " kld(Y,Y)=" << kld_same << " nss(all)=" << nss_all;
  const bool ok = std::abs(cc_same - 1.0) <= 1e-9 && std::abs(cc_flip + 1.0) <= 1e-9 &&
                  std::abs(auc_const - 0.5) <= 1e-9 && std::abs(auc_perfect - 1.0) <= 1e-9 &&
                  std::abs(kld_same) < 1e-5 && std::abs(nss_all) <= 1e-6;
  return {ok, d.str()};
}

// 3. AFF identity and MS-CAM range.
Outcome aff_identity() {
  Rng rng(3);
  double worst = 0.0;
  bool in_range = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 4 * static_cast<int>(rng.uniform_int(1, 8));
    const int h = static_cast<int>(rng.uniform_int(1, 9)), w = static_cast<int>(rng.uniform_int(1, 9));
    nn::AffFusion<double> aff("fusion.test", c, 4);
    support::randomize(aff.parameters(), rng, 1.0);
    const double scale = trial % 10 == 0 ? 1e3 : 2.0;
    const auto f = support::random_tensor<double>({1, c, h, w}, rng, -scale, scale);
    const auto z = aff.forward(f, f);
    for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(z[i] - f[i]));
    const auto wmap = aff.attention().forward(f);
    for (std::size_t i = 0; i < wmap.size(); ++i) in_range = in_range && wmap[i] > 0.0 && wmap[i] < 1.0;
    nn::MsCam<float> camf("fusion.testf", c, 4);
    support::randomize(camf.parameters(), rng, 1.0);
    const auto wf = camf.forward(support::random_tensor<float>({1, c, h, w}, rng, -scale, scale));
    for (std::size_t i = 0; i < wf.size(); ++i) in_range = in_range && wf[i] > 0.0f && wf[i] < 1.0f;
  }
  std::ostringstream d;
  d << "100 tensors, max |aff(F,F)-F| " << worst << ", ms_cam strictly inside (0,1): " << (in_range ? "yes" : "no");
  return {worst <= 1e-6 && in_range, d.str()};
}

// 4. Shapes on the default configuration.
Outcome shape_suite() {
  const auto t0 = Clock::now();
  Rng rng(4);
  model::Model<float> net(model::ModelConfig{});
  const auto x = support::random_tensor<float>({1, 3, 384, 512}, rng, -2.0, 2.0);
  nn::Tensor<float> m(1, 2, 384, 512);
  for (auto& v : m.storage()) v = static_cast<float>(rng.uniform_int(0, 1));
  nn::Tape<float> tape(false);
  for (const char* tap : {"input_encoder.stage3", "input_encoder.stage4", "input_encoder.stage5", "fusion.scale1",
                          "conjoint", "aspp.project"})
    tape.watch(tap);
  const auto y = net.forward(x, m, &tape);
  const bool out_ok = y.shape() == nn::Shape{1, 1, 384, 512} &&
                      std::all_of(y.storage().begin(), y.storage().end(), [](float v) { return v >= 0.0f; });
  const auto s3 = tape.activation("input_encoder.stage3").shape(), s4 = tape.activation("input_encoder.stage4").shape(),
             s5 = tape.activation("input_encoder.stage5").shape();
  const bool taps_ok = s3 == nn::Shape{1, 256, 48, 64} && s4 == nn::Shape{1, 512, 48, 64} &&
                       s5 == nn::Shape{1, 512, 48, 64};
  const auto joint = tape.activation("conjoint").shape();
  const bool joint_ok = joint == nn::Shape{1, 1280, 48, 64};
  const bool aspp_ok = tape.activation("aspp.project").shape() == nn::Shape{1, 256, 48, 64};

  bool branches_ok = true;
  for (int d : {4, 8, 12}) {
    nn::Conv2d<float> branch("aspp.check", 1280, 8, 3, d, nn::Activation::relu);
    branches_ok = branches_ok && branch.forward(tape.activation("conjoint")).shape() == nn::Shape{1, 8, 48, 64};
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "output " << nn::to_string(y.shape()) << " non-negative " << out_ok << "; taps " << nn::to_string(s3) << ", "
    << nn::to_string(s4) << ", " << nn::to_string(s5) << "; conjoint " << nn::to_string(joint) << "; aspp "
    << nn::to_string(tape.activation("aspp.project").shape()) << "; " << secs << " s";
  return {out_ok && taps_ok && joint_ok && aspp_ok && branches_ok && secs < 120.0, d.str()};
}

// 5. KLD-loss gradients against central finite differences.
Outcome gradient_check() {
  Rng rng(5);
  model::Model<double> net(support::micro_config(11));
  const auto x = support::random_tensor<double>({1, 3, 32, 32}, rng, -2.0, 2.0);
  nn::Tensor<double> m(1, 2, 32, 32);
  for (auto& v : m.storage()) v = static_cast<double>(rng.uniform_int(0, 1));
  Grid<double> target(32, 32);
  for (auto& v : target.storage()) v = rng.uniform(0.0, 1.0);

  const auto loss_at = [&]() { return training::kld_loss(net.forward(x, m), {&target}, 1e-7).value; };
  nn::Tape<double> tape;
  nn::Tensor<double> grad;
  training::kld_loss(net.forward(x, m, &tape), {&target}, 1e-7, &grad);
  net.backward(grad, tape);

  auto params = net.parameters();
  const auto r = support::grad_check<double>(
      params, loss_at,
      [&tape](const nn::Param<double>& p, std::size_t i) {
        const auto* g = tape.find_grad(p);
        return g ? (*g)[i] : 0.0;
      },
      rng, 10);
  std::ostringstream d;
  d << r.checked << " parameters at step 1e-3, max relative error " << r.worst_rel << " (" << r.kinked
    << " draws straddling a ReLU/max-pool kink redrawn)";
  return {r.checked >= 10 && r.worst_rel < 1e-3, d.str()};
}

// 6. Overfit four synthetic samples on the micro configuration.
Outcome overfit_smoke() {
  const auto t0 = Clock::now();
  const auto pages = support::smoke_pages(4, 2024);
  std::vector<DatasetSample> data;
  for (const auto& p : pages) data.push_back(p.sample);

  model::Model<float> net(support::micro_config(1));
  training::TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.seed = 1;
  cfg.learning_rate = 1e-4;
  training::TrainHooks hooks;
  hooks.max_steps = 200;
  const auto history = training::train(net, data, data, cfg, hooks);
  const auto prepared = training::prepare_samples<float>(data, net.config());
  const double final_kld = training::mean_loss(net, prepared, 4, cfg.epsilon);

  int inside = 0;
  for (const auto& p : pages) {
    const Grid<double> map = model::resize_map(model::output_map(net.forward_sample(p.sample)), p.sample.screenshot.dims());
    const auto it = std::max_element(map.storage().begin(), map.storage().end());
    const auto idx = static_cast<int>(it - map.storage().begin());
    const int y = idx / map.cols(), x = idx % map.cols();
    const auto& b = *p.focus_block;
    if (x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1) ++inside;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << history.steps << " steps, final train KLD " << final_kld << ", argmax in fixated block " << inside << "/4, "
    << secs << " s";
  return {history.steps <= 200 && final_kld < 0.5 && inside >= 3 && secs < 600.0, d.str()};
}

// 7. Split arithmetic, export/import identity, dedup idempotence.
Outcome pipeline_reproduction() {
  const auto sizes = dataset::split_sizes(1546, {});
  const auto labels = dataset::split_dataset(1546, {});
  std::size_t tr = 0, va = 0, te = 0;
  for (auto s : labels) (s == Split::train ? tr : s == Split::val ? va : te)++;
  const bool split_ok = sizes == dataset::SplitSizes{928, 309, 309} && tr == 928 && va == 309 && te == 309;

  auto samples = synth::synth_generate(6, 77, {96, 128});
  dataset::split_dataset(samples, {.seed = 3});
  support::TempDir dir("accept");
  dataset::export_dataset(samples, dir.path());
  const auto back = dataset::import_dataset(dir.path());
  bool roundtrip = back.size() == samples.size();
  for (std::size_t i = 0; roundtrip && i < back.size(); ++i) {
    const auto& a = samples[i];
    const auto& b = back[i];
    roundtrip = a.screenshot == b.screenshot && a.heatmap == b.heatmap && a.image_mask == b.image_mask &&
                a.text_mask == b.text_mask && a.fixations == b.fixations && a.split == b.split;
  }

  auto with_dups = samples;
  with_dups.push_back(samples[1]);
  with_dups.push_back(samples[4]);
  bool idempotent = true;
  for (auto mode : {dataset::DedupMode::exact, dataset::DedupMode::perceptual}) {
    const auto once = dataset::deduplicate(with_dups, mode);
    const auto twice = dataset::deduplicate(once.unique, mode);
    idempotent = idempotent && twice.removed_pairs.empty() && twice.unique.size() == once.unique.size() &&
                 once.removed_pairs.size() >= 2;
    for (std::size_t i = 0; idempotent && i < once.unique.size(); ++i)
      idempotent = once.unique[i].screenshot == twice.unique[i].screenshot;
  }
  std::ostringstream d;
  d << "n=1546 -> " << tr << "/" << va << "/" << te << "; round trip " << (roundtrip ? "identical" : "differs")
    << "; dedup idempotent " << (idempotent ? "yes" : "no");
  return {split_ok && roundtrip && idempotent, d.str()};
}

// 8. Grad-CAM on the model and on the analytic toy case.
Outcome grad_cam() {
  const auto pages = support::smoke_pages(1, 8);
  model::Model<float> net(support::micro_config(2));
  bool model_ok = true;
  std::string layers_seen;
  for (const std::string layer : {"aspp.project", "input_encoder.stage3", "fusion.scale2", "decoder.block2"}) {
    const auto cam = explain::grad_cam(net, pages[0].sample, layer);
    const auto [lo, hi] = std::minmax_element(cam.upsampled.storage().begin(), cam.upsampled.storage().end());
    model_ok = model_ok && cam.upsampled.dims() == pages[0].sample.screenshot.dims() && *lo >= 0.0 && *hi <= 1.0 &&
               std::all_of(cam.cam.storage().begin(), cam.cam.storage().end(), [](double v) { return v >= 0.0; });
  }

  const int by = 21, bx = 40;
  const toy::CamModel toy_model;
  const DatasetSample blob = toy::blob_sample(48, 64, by, bx);
  const auto cam = explain::grad_cam(toy_model, blob, "toy.conv");
  const auto it = std::max_element(cam.upsampled.storage().begin(), cam.upsampled.storage().end());
  const auto idx = static_cast<int>(it - cam.upsampled.storage().begin());
  const int ay = idx / cam.upsampled.cols(), ax = idx % cam.upsampled.cols();
  const bool toy_ok = std::abs(ay - by) <= 1 && std::abs(ax - bx) <= 1;
  std::ostringstream d;
  d << "model cams non-negative and input-aligned: " << (model_ok ? "yes" : "no") << "; toy blob at (" << by << ","
    << bx << "), cam argmax at (" << ay << "," << ax << ")";
  return {model_ok && toy_ok, d.str()};
}

// 9. Transfer initialization.
Outcome transfer_init() {
  model::Model<float> base(support::micro_config(31, false));
  const auto bundle = base.weights();
  model::Model<float> net(support::micro_config(32, true));
  training::init_transfer(net, bundle);

  bool copied = true;
  double sum = 0.0;
  std::size_t count = 0;
  double sum_mask = 0.0;
  std::size_t count_mask = 0;
  for (const auto* p : net.parameters()) {
    if (training::is_transferred_name(p->name)) {
      const auto& src = bundle.tensors.at(p->name).values;
      copied = copied && std::equal(src.begin(), src.end(), p->value.storage().begin(),
                                    [](float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); });
    } else {
      for (float v : p->value.storage()) {
        sum += v;
        ++count;
        if (p->name.starts_with("mask_encoder.")) {
          sum_mask += v;
          ++count_mask;
        }
      }
    }
  }
  const double mean = sum / static_cast<double>(count), mean_mask = sum_mask / static_cast<double>(count_mask);
  std::ostringstream d;
  d << "copied tensors bit-identical: " << (copied ? "yes" : "no") << "; new tensors mean " << mean << " over "
    << count << " draws; mask encoder mean " << mean_mask << " over " << count_mask;
  return {copied && count >= 10000 && count_mask >= 10000 && std::abs(mean) < 0.005 && std::abs(mean_mask) < 0.005 &&
              net.provenance() == model::Provenance::transferred_msi,
          d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle suite", metric_oracles},   {"analytic metric anchors", metric_anchors},
      {"AFF identity invariant", aff_identity},  {"shape suite", shape_suite},
      {"gradient check", gradient_check},        {"overfit smoke test", overfit_smoke},
      {"pipeline reproduction", pipeline_reproduction}, {"Grad-CAM", grad_cam},
      {"transfer init", transfer_init}};
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  return failures;
}
