#include <cmath>
#include <vector>

#include "doctest.h"
#include "sfnet/gradcheck.hpp"
#include "sfnet/kernels.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/warp.hpp"
#include "test_util.hpp"

using namespace sfnet;
using sfnet::testing::max_abs_diff;
using sfnet::testing::random_tensor;

namespace {

Tensor coords_at(double y, double x) {
  return Tensor::from_data(Shape{1, 2, 1, 1}, {y, x});
}

const Tensor kGrid = Tensor::from_data(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});

}  // namespace

TEST_CASE("map_coords arithmetic") {
  CHECK(map_coords({0, 0}, {0, 0}, 2) == Point2{0, 0});
  CHECK(map_coords({4, 6}, {2, -2}, 2) == Point2{3, 2});
  CHECK(map_coords({7, 7}, {0, 0}, 2) == Point2{3.5, 3.5});
  CHECK_THROWS_AS(map_coords({0, 0}, {0, 0}, 0.0), ShapeError);
}

TEST_CASE("bilinear sampling at hand-picked coordinates") {
  CHECK(bilinear_sample(kGrid, coords_at(1, 0)).item() == 3.0);
  CHECK(bilinear_sample(kGrid, coords_at(0.5, 0.5)).item() == 2.5);
  CHECK(bilinear_sample(kGrid, coords_at(-0.5, 0)).item() == 1.0);
  CHECK(bilinear_sample(kGrid, coords_at(5.0, 5.0)).item() == 4.0);
}

TEST_CASE("clamped axis has zero coordinate gradient") {
  Tensor src = kGrid.detach_copy(true);
  Tensor c = Tensor::from_data(Shape{1, 2, 1, 1}, {-0.5, 0.25}, true);
  backward(sum(bilinear_sample(src, c)));
  CHECK(c.grad()[0] == 0.0);
  CHECK(c.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("warp grid weights sum to one") {
  Tensor c = random_tensor(Shape{1, 2, 6, 6}, 5, -2.0, 7.0);
  WarpGrid grid = WarpGrid::from_coords(c, 0, 4, 5);
  for (int i = 0; i < 36; ++i) CHECK(grid.weight_sum(i) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("sampler gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    Tensor src = random_tensor(Shape{2, 3, 5, 6}, 100 + seed, -1, 1, true);
    std::vector<double> cv(2 * 2 * 7 * 7);
    for (std::size_t i = 0; i < cv.size(); ++i) {
      const bool is_y = (i / 49) % 2 == 0;
      const double hi = is_y ? 3.98 : 4.98;
      double v = rng.uniform(0.01, hi);
      const double frac = v - std::floor(v);
      if (frac < 0.01) v += 0.02;
      if (frac > 0.99) v -= 0.02;
      cv[i] = v;
    }
    Tensor c = Tensor::from_data(Shape{2, 2, 7, 7}, cv, true);
    Tensor wts = random_tensor(Shape{2, 3, 7, 7}, 200 + seed);
    auto loss = [&] { return dot(bilinear_sample(src, c), wts.data()); };
    GradcheckOptions opt;
    opt.samples_per_tensor = 40;
    const GradcheckReport r = gradcheck(loss, {{"source", src}, {"coords", c}}, opt);
    CHECK(r.max_rel_err < 1e-5);
    CHECK(r.skipped == 0);
  }
}

TEST_CASE("parallel sampling kernels match the serial reference") {
  kernels::SampleGeometry g{2, 5, 7, 9, 13, 11};
  const Tensor src = random_tensor(Shape{2, 5, 7, 9}, 61);
  const Tensor c = random_tensor(Shape{2, 2, 13, 11}, 62, -2.0, 10.0);
  const Tensor go = random_tensor(Shape{2, 5, 13, 11}, 63);
  std::vector<double> fast(go.numel()), slow(go.numel());
  kernels::bilinear_forward(g, src.data(), c.data(), fast);
  kernels::ref::bilinear_forward(g, src.data(), c.data(), slow);
  CHECK(max_abs_diff(fast, slow) == 0.0);
  std::vector<double> gs_fast(src.numel()), gs_slow(src.numel());
  std::vector<double> gc_fast(c.numel()), gc_slow(c.numel());
  kernels::bilinear_backward(g, src.data(), c.data(), go.data(), gs_fast, gc_fast);
  kernels::ref::bilinear_backward(g, src.data(), c.data(), go.data(), gs_slow, gc_slow);
  CHECK(max_abs_diff(gs_fast, gs_slow) < 1e-12);
  CHECK(max_abs_diff(gc_fast, gc_slow) < 1e-12);
}

TEST_CASE("zero flow warp equals bilinear upsampling") {
  for (int scale : {2, 4, 8}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Tensor x = random_tensor(Shape{1, 3, 4, 4}, seed * 7 + scale);
      Tensor flow = Tensor::zeros(Shape{1, 2, 4 * scale, 4 * scale});
      CHECK(max_abs_diff(warp_feature(x, flow, scale), upsample_bilinear(x, scale)) <= 1e-12);
    }
  }
}

TEST_CASE("constant source stays constant under any flow") {
  Tensor x = Tensor::full(Shape{1, 2, 3, 3}, 0.7);
  Tensor flow = random_tensor(Shape{1, 2, 6, 6}, 71, -5.0, 5.0);
  const Tensor out = warp_feature(x, flow, 2);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("unit flow shifts a row left with border clamp") {
  Tensor row = Tensor::from_data(Shape{1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  Tensor flow = Tensor::from_data(Shape{1, 2, 1, 4}, {0, 0, 0, 0, 1, 1, 1, 1});
  Tensor out = warp_feature(row, flow, 1);
  const std::vector<double> expected{2.0, 3.0, 4.0, 4.0};
  for (int j = 0; j < 4; ++j) CHECK(out.at(0, 0, 0, j) == expected[j]);
}

TEST_CASE("warp rejects a flow grid of the wrong size") {
  CHECK_THROWS_AS(warp_feature(Tensor::zeros(Shape{1, 1, 4, 4}), Tensor::zeros(Shape{1, 2, 7, 8}), 2),
                  ShapeError);
  CHECK_THROWS_AS(warp_feature(Tensor::zeros(Shape{1, 1, 4, 4}), Tensor::zeros(Shape{1, 3, 8, 8}), 2),
                  ShapeError);
}
