#include <cmath>

#include "doctest.h"
#include "sfnet/flop_trace.hpp"
#include "sfnet/gradcheck.hpp"
#include "sfnet/metrics.hpp"
#include "sfnet/model.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/train.hpp"
#include "test_util.hpp"

using namespace sfnet;
using sfnet::testing::max_abs_diff;
using sfnet::testing::random_tensor;

TEST_CASE("encoder pyramid shapes") {
  ModelConfig cfg;
  ParamStore params = build_params(cfg, 1);
  FeaturePyramid p = encoder_forward(random_tensor(Shape{1, 3, 64, 64}, 1), params, cfg);
  CHECK(p.level(2).shape() == Shape{1, 32, 16, 16});
  CHECK(p.level(3).shape() == Shape{1, 64, 8, 8});
  CHECK(p.level(4).shape() == Shape{1, 128, 4, 4});
  CHECK(p.level(5).shape() == Shape{1, 256, 2, 2});
}

TEST_CASE("zero input and zero biases give zero features") {
  ModelConfig cfg;
  ParamStore params = build_params(cfg, 1);
  FeaturePyramid p = encoder_forward(Tensor::zeros(Shape{1, 3, 64, 64}), params, cfg);
  for (int l = 2; l <= 5; ++l) {
    for (double v : p.level(l).data()) CHECK(v == 0.0);
  }
}

TEST_CASE("model output shapes") {
  ModelConfig cfg;
  ParamStore params = build_params(cfg, 1);
  ModelOutput train = model_forward(random_tensor(Shape{1, 3, 64, 64}, 2), params, cfg, Mode::kTrain);
  CHECK(train.logits.shape() == Shape{1, 5, 64, 64});
  REQUIRE(train.aux_logits.size() == 3);
  CHECK(train.aux_logits[0].shape() == Shape{1, 5, 16, 16});
  CHECK(train.aux_logits[1].shape() == Shape{1, 5, 8, 8});
  CHECK(train.aux_logits[2].shape() == Shape{1, 5, 4, 4});
  CHECK(train.flows.size() == 6);
  CHECK(train.context.shape() == Shape{1, 64, 2, 2});

  ModelOutput eval = model_forward(random_tensor(Shape{1, 3, 64, 64}, 2), params, cfg, Mode::kEval);
  CHECK(eval.aux_logits.empty());
  LabelMap pred = argmax_labels(eval.logits);
  CHECK(pred.h == 64);
  CHECK(pred.w == 64);
  CHECK_THROWS_AS(model_forward(Tensor::zeros(Shape{1, 3, 48, 64}), params, cfg, Mode::kEval),
                  ShapeError);
}

TEST_CASE("PPM output shape for any bin set") {
  ModelConfig cfg;
  for (const std::vector<int>& bins : {std::vector<int>{1}, std::vector<int>{1, 2, 3, 6},
                                       std::vector<int>{2, 4}}) {
    cfg.ppm_bins = bins;
    ParamStore params = build_params(cfg, 3);
    Tensor top = random_tensor(Shape{2, 256, 3, 3}, 4);
    CHECK(ppm_forward(top, params, cfg).shape() == Shape{2, 64, 3, 3});
  }
  cfg.ppm_bins = {1};
  ParamStore params = build_params(cfg, 3);
  Tensor out = ppm_forward(Tensor::full(Shape{1, 256, 8, 8}, 0.3), params, cfg);
  // The 3x3 fuse conv zero-pads, so only the interior is constant.
  for (int c = 0; c < 64; ++c) {
    for (int i = 1; i < 7; ++i) {
      for (int j = 1; j < 7; ++j) {
        CHECK(out.at(0, c, i, j) == doctest::Approx(out.at(0, c, 1, 1)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("zero-initialised FAM model matches the bilinear model bit for bit") {
  for (bool ppm : {false, true}) {
    ModelConfig fam_cfg;
    fam_cfg.use_ppm = ppm;
    ModelConfig base_cfg = fam_cfg;
    base_cfg.use_fam = false;
    ParamStore fam_params = build_params(fam_cfg, 7);
    ParamStore base_params = build_params(base_cfg, 7);
    for (const auto& [name, t] : base_params) {
      REQUIRE(fam_params.contains(name));
      CHECK(max_abs_diff(fam_params.get(name), t) == 0.0);
    }
    Tensor image = random_tensor(Shape{2, 3, 64, 64}, 8, 0, 1);
    ModelOutput a = model_forward(image, fam_params, fam_cfg, Mode::kTrain);
    ModelOutput b = model_forward(image, base_params, base_cfg, Mode::kTrain);
    CHECK(max_abs_diff(a.logits, b.logits) == 0.0);
    for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(a.aux_logits[i], b.aux_logits[i]) == 0.0);
  }
}

TEST_CASE("eval output ignores aux head parameters") {
  ModelConfig cfg;
  ParamStore params = build_params(cfg, 5);
  Tensor image = random_tensor(Shape{1, 3, 64, 64}, 6, 0, 1);
  Tensor before = model_forward(image, params, cfg, Mode::kEval).logits;
  for (int l = 2; l <= 4; ++l) {
    for (double& v : params.get("aux.l" + std::to_string(l) + ".weight").mutable_data()) v += 1.0;
  }
  CHECK(max_abs_diff(before, model_forward(image, params, cfg, Mode::kEval).logits) == 0.0);
}

TEST_CASE("forward passes are deterministic") {
  ModelConfig cfg;
  ParamStore params = build_params(cfg, 5);
  Tensor image = random_tensor(Shape{2, 3, 64, 64}, 6, 0, 1);
  Tensor a = model_forward(image, params, cfg, Mode::kEval).logits;
  Tensor b = model_forward(image, params, cfg, Mode::kEval).logits;
  CHECK(max_abs_diff(a, b) == 0.0);
  ParamStore again = build_params(cfg, 5);
  for (const auto& [name, t] : params) CHECK(max_abs_diff(again.get(name), t) == 0.0);
}

TEST_CASE("every parameter receives gradient at 192x192") {
  ModelConfig cfg;
  cfg.num_classes = 3;
  ParamStore params = build_params(cfg, 9);
  Rng rng(10);
  for (auto& [name, t] : params) {
    if (name.find(".flow.") != std::string::npos) {
      for (double& v : t.mutable_data()) v = rng.uniform(-0.05, 0.05);
    }
  }
  Tensor image = random_tensor(Shape{1, 3, 192, 192}, 11, 0, 1);
  LabelMap labels(1, 192, 192);
  for (auto& v : labels.values) v = static_cast<std::uint8_t>(rng.below(3));
  ModelOutput out = model_forward(image, params, cfg, Mode::kTrain);
  TrainConfig tc;
  backward(total_loss(out.logits, out.aux_logits, labels, tc).total);
  for (const auto& [name, t] : params) {
    double norm = 0.0;
    if (t.has_grad()) {
      for (double g : t.grad()) norm += g * g;
    }
    INFO(name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("conv FLOP formula") {
  CHECK(conv_flops(3, 64, 64, 128, 128) == 1207959552.0);
  CHECK(conv_flops(1, 64, 64, 128, 128) * 9 == conv_flops(3, 64, 64, 128, 128));
  CHECK(conv_flops(7, 2, 3, 5, 4) == 2.0 * 49 * 2 * 3 * 20);
}

TEST_CASE("analytic FLOP count matches the executed operations") {
  for (bool fam : {false, true}) {
    for (bool ppm : {false, true}) {
      ModelConfig cfg;
      cfg.use_fam = fam;
      cfg.use_ppm = ppm;
      ParamStore params = build_params(cfg, 1);
      NoGradGuard no_grad;
      FlopTrace trace;
      model_forward(Tensor::zeros(Shape{1, 3, 96, 64}), params, cfg, Mode::kEval);
      CHECK(trace.total() == count_flops(cfg, 96, 64).total);
    }
  }
}

TEST_CASE("FAM adds FLOPs and they grow with the kernel") {
  ModelConfig cfg;
  cfg.use_fam = false;
  double previous = count_flops(cfg, 1024, 1024).total;
  cfg.use_fam = true;
  for (int k : {1, 3, 5, 7}) {
    cfg.fam.kernel_size = k;
    const FlopReport r = count_flops(cfg, 1024, 1024);
    CHECK(r.total > previous);
    CHECK(r.by_module.at("fam") > 0.0);
    previous = r.total;
  }
}

TEST_CASE("PPM gradient suite") {
  CHECK(run_gradcheck_suite("ppm", 1).report.max_rel_err < 1e-4);
}

TEST_CASE("model config validation") {
  ModelConfig cfg;
  cfg.num_classes = 1;
  CHECK_THROWS(cfg.validate());
  cfg = ModelConfig{};
  cfg.ppm_bins = {};
  CHECK_THROWS(cfg.validate());
}
