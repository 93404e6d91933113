#include "doctest.h"
#include "sfnet/fam.hpp"
#include "sfnet/gradcheck.hpp"
#include "sfnet/ops.hpp"
#include "test_util.hpp"

using namespace sfnet;
using sfnet::testing::max_abs_diff;
using sfnet::testing::random_tensor;

namespace {

FamConfig small_fam(int channels, int layers = 1, int k = 3) {
  FamConfig cfg;
  cfg.fpn_channels = channels;
  cfg.n_layers = layers;
  cfg.kernel_size = k;
  return cfg;
}

void randomize(ParamStore& params, std::uint64_t seed, double amp) {
  Rng rng(seed);
  for (auto& [name, t] : params) {
    for (double& v : t.mutable_data()) v = rng.uniform(-amp, amp);
  }
}

}  // namespace

TEST_CASE("flow field has two channels on the fine grid") {
  const FamConfig cfg = small_fam(64);
  ParamStore params;
  add_fam_params(params, "fam", cfg, 1);
  FlowField flow = predict_flow(random_tensor(Shape{1, 64, 16, 16}, 1),
                                random_tensor(Shape{1, 64, 32, 32}, 2), params, "fam", cfg);
  CHECK(flow.tensor().shape() == Shape{1, 2, 32, 32});
  CHECK(flow.height() == 32);
  CHECK(flow.width() == 32);
}

TEST_CASE("zero-initialised FAM is bilinear upsampling") {
  for (int layers : {1, 2}) {
    const FamConfig cfg = small_fam(8, layers);
    ParamStore params;
    add_fam_params(params, "fam", cfg, 3);
    Tensor coarse = random_tensor(Shape{2, 8, 5, 6}, 4);
    FamOutput out = fam_forward(coarse, random_tensor(Shape{2, 8, 10, 12}, 5), params, "fam", cfg);
    for (double v : out.flow.tensor().data()) CHECK(v == 0.0);
    CHECK(max_abs_diff(out.aligned, upsample_bilinear(coarse, 2)) <= 1e-12);
  }
}

TEST_CASE("all-zero flow weights give a zero field") {
  const FamConfig cfg = small_fam(8, 2);
  ParamStore params;
  add_fam_params(params, "fam", cfg, 3);
  randomize(params, 9, 0.5);
  for (auto& [name, t] : params) {
    if (name.ends_with(".weight")) {
      for (double& v : t.mutable_data()) v = 0.0;
    }
    if (name.ends_with(".bias")) {
      for (double& v : t.mutable_data()) v = 0.0;
    }
  }
  FlowField flow = predict_flow(random_tensor(Shape{1, 8, 4, 4}, 1),
                                random_tensor(Shape{1, 8, 8, 8}, 2), params, "fam", cfg);
  for (double v : flow.tensor().data()) CHECK(v == 0.0);
}

TEST_CASE("constant coarse map aligns to a constant") {
  const FamConfig cfg = small_fam(8);
  ParamStore params;
  add_fam_params(params, "fam", cfg, 3);
  randomize(params, 11, 2.0);
  Tensor coarse = Tensor::full(Shape{1, 8, 4, 4}, -1.25);
  FamOutput out = fam_forward(coarse, random_tensor(Shape{1, 8, 8, 8}, 12), params, "fam", cfg);
  double spread = 0.0;
  for (double v : out.flow.tensor().data()) spread = std::max(spread, std::abs(v));
  CHECK(spread > 0.1);
  for (double v : out.aligned.data()) CHECK(v == doctest::Approx(-1.25).epsilon(1e-14));
}

TEST_CASE("gradient of the flow sum matches finite differences") {
  const FamConfig cfg = small_fam(4, 2);
  ParamStore params;
  add_fam_params(params, "fam", cfg, 3);
  randomize(params, 21, 0.3);
  Tensor coarse = random_tensor(Shape{1, 4, 4, 4}, 22, -1, 1, true);
  Tensor fine = random_tensor(Shape{1, 4, 8, 8}, 23, -1, 1, true);
  auto loss = [&] { return sum(predict_flow(coarse, fine, params, "fam", cfg).tensor()); };
  GradcheckOptions opt;
  opt.samples_per_tensor = 20;
  CHECK(gradcheck(loss, {{"coarse", coarse}, {"fine", fine}}, opt).max_rel_err < 1e-4);
}

TEST_CASE("FAM end-to-end gradient suite") {
  const SuiteResult r = run_gradcheck_suite("fam", 2);
  CHECK(r.report.max_rel_err < 1e-4);
  CHECK(r.report.probes > 0);
}

TEST_CASE("flow FLOPs grow with the kernel size") {
  double previous = 0.0;
  for (int k : {1, 3, 5, 7}) {
    const double f = fam_flow_flops(small_fam(64, 1, k), 32, 32);
    CHECK(f > previous);
    previous = f;
  }
  CHECK(fam_flow_flops(small_fam(64, 1, 1), 32, 32) * 9 ==
        fam_flow_flops(small_fam(64, 1, 3), 32, 32));
}

TEST_CASE("FAM config validation") {
  FamConfig cfg;
  cfg.kernel_size = 4;
  CHECK_THROWS(cfg.validate());
  cfg.kernel_size = 3;
  cfg.n_layers = 0;
  CHECK_THROWS(cfg.validate());
  CHECK(parse_upsample_mode("nearest") == UpsampleMode::kNearest);
  CHECK_THROWS_AS(parse_upsample_mode("cubic"), ConfigError);
}
