#include <cmath>
#include <vector>

#include "doctest.h"
#include "sfnet/gradcheck.hpp"
#include "sfnet/kernels.hpp"
#include "sfnet/ops.hpp"
#include "test_util.hpp"

using namespace sfnet;
using sfnet::testing::max_abs_diff;
using sfnet::testing::random_tensor;

TEST_CASE("conv of ones under padding") {
  Tensor x = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full(Shape{1, 1, 3, 3}, 1.0);
  Tensor y = conv2d(x, w, Tensor(), 1, 1);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.at(0, 0, 1, 1) == 9.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
  CHECK(y.at(0, 0, 2, 2) == 4.0);
  CHECK(y.at(0, 0, 0, 1) == 6.0);
}

TEST_CASE("identity 1x1 conv") {
  Tensor x = random_tensor(Shape{2, 1, 5, 4}, 3);
  Tensor w = Tensor::full(Shape{1, 1, 1, 1}, 1.0);
  CHECK(max_abs_diff(conv2d(x, w, Tensor(), 1, 0), x) == 0.0);
}

TEST_CASE("conv gradients match finite differences") {
  for (int stride : {1, 2}) {
    Tensor x = random_tensor(Shape{2, 8, 16, 16}, 11, -1, 1, true);
    Tensor w = random_tensor(Shape{4, 8, 3, 3}, 12, -0.3, 0.3, true);
    Tensor b = random_tensor(Shape{1, 4, 1, 1}, 13, -0.1, 0.1, true);
    Tensor wts = random_tensor(Shape{2, 4, 16 / stride, 16 / stride}, 14);
    auto loss = [&] { return dot(conv2d(x, w, b, stride, 1), wts.data()); };
    const GradcheckReport r = gradcheck(loss, {{"x", x}, {"w", w}, {"b", b}}, {});
    CHECK(r.max_rel_err < 1e-5);
    CHECK(r.probes > 0);
  }
}

TEST_CASE("parallel conv kernels match the serial reference") {
  struct Case {
    int n, in_c, h, w, out_c, k, stride, pad;
  };
  const std::vector<Case> cases = {{2, 8, 16, 16, 4, 3, 1, 1},  {1, 3, 33, 31, 16, 3, 2, 1},
                                   {2, 64, 8, 8, 64, 3, 1, 1},  {1, 128, 4, 4, 2, 3, 1, 1},
                                   {3, 16, 9, 7, 24, 1, 1, 0},  {1, 10, 12, 12, 2, 5, 1, 2},
                                   {1, 6, 14, 14, 40, 7, 1, 3}, {2, 5, 11, 13, 9, 3, 2, 0},
                                   {2, 6, 40, 37, 3, 3, 1, 1},  {1, 4, 8, 70, 8, 7, 1, 3},
                                   {1, 5, 10, 10, 1, 1, 1, 0},  {1, 3, 12, 45, 6, 3, 1, 0}};
  std::uint64_t seed = 100;
  for (const Case& c : cases) {
    kernels::ConvGeometry g{c.n, c.in_c, c.h, c.w, c.out_c, c.k, c.stride, c.pad};
    const Tensor x = random_tensor(Shape{c.n, c.in_c, c.h, c.w}, seed++);
    const Tensor w = random_tensor(Shape{c.out_c, c.in_c, c.k, c.k}, seed++);
    const Tensor b = random_tensor(Shape{1, c.out_c, 1, 1}, seed++);
    const Tensor go = random_tensor(Shape{c.n, c.out_c, g.out_h(), g.out_w()}, seed++);
    std::vector<double> fast(go.numel()), slow(go.numel());
    kernels::conv2d_forward(g, x.data(), w.data(), b.data(), fast);
    kernels::ref::conv2d_forward(g, x.data(), w.data(), b.data(), slow);
    CHECK(max_abs_diff(fast, slow) < 1e-12);

    std::vector<double> gi_fast(x.numel(), 0.5), gi_slow(x.numel(), 0.5);
    kernels::conv2d_backward_input(g, go.data(), w.data(), gi_fast);
    kernels::ref::conv2d_backward_input(g, go.data(), w.data(), gi_slow);
    CHECK(max_abs_diff(gi_fast, gi_slow) < 1e-12);

    std::vector<double> gw_fast(w.numel(), 0.25), gw_slow(w.numel(), 0.25);
    std::vector<double> gb_fast(c.out_c, 1.0), gb_slow(c.out_c, 1.0);
    kernels::conv2d_backward_params(g, x.data(), go.data(), gw_fast, gb_fast);
    kernels::ref::conv2d_backward_params(g, x.data(), go.data(), gw_slow, gb_slow);
    CHECK(max_abs_diff(gw_fast, gw_slow) < 1e-11);
    CHECK(max_abs_diff(gb_fast, gb_slow) < 1e-12);
  }
}

TEST_CASE("conv is linear in its input") {
  Tensor a = random_tensor(Shape{1, 4, 8, 8}, 21);
  Tensor b = random_tensor(Shape{1, 4, 8, 8}, 22);
  Tensor w = random_tensor(Shape{6, 4, 3, 3}, 23);
  Tensor lhs = conv2d(add(scalar_mul(a, 2.0), b), w, Tensor(), 1, 1);
  Tensor rhs = add(scalar_mul(conv2d(a, w, Tensor(), 1, 1), 2.0), conv2d(b, w, Tensor(), 1, 1));
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("conv rejects mismatched weights") {
  CHECK_THROWS_AS(conv2d(Tensor::zeros(Shape{1, 3, 4, 4}), Tensor::zeros(Shape{2, 4, 3, 3}),
                         Tensor(), 1, 1),
                  ShapeError);
}

TEST_CASE("group norm of a constant collapses to the shift") {
  Tensor x = Tensor::full(Shape{1, 4, 3, 3}, 5.0);
  Tensor scale = Tensor::full(Shape{1, 4, 1, 1}, 2.0);
  Tensor shift = Tensor::from_data(Shape{1, 4, 1, 1}, {0.1, 0.2, 0.3, 0.4});
  Tensor y = group_norm(x, 2, scale, shift);
  for (int c = 0; c < 4; ++c) CHECK(y.at(0, c, 1, 1) == doctest::Approx(0.1 * (c + 1)));
}

TEST_CASE("group norm standardizes two points to -1 and 1") {
  Tensor x = Tensor::from_data(Shape{1, 2, 1, 2}, {1.0, 3.0, 5.0, 9.0});
  Tensor y = group_norm(x, 2, Tensor::full(Shape{1, 2, 1, 1}, 1.0), Tensor::zeros(Shape{1, 2, 1, 1}));
  for (int c = 0; c < 2; ++c) {
    CHECK(y.at(0, c, 0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.at(0, c, 0, 1) == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("group norm gradients match finite differences") {
  Tensor x = random_tensor(Shape{2, 8, 6, 6}, 31, -1, 1, true);
  Tensor s = random_tensor(Shape{1, 8, 1, 1}, 32, 0.5, 1.5, true);
  Tensor t = random_tensor(Shape{1, 8, 1, 1}, 33, -0.5, 0.5, true);
  Tensor wts = random_tensor(Shape{2, 8, 6, 6}, 34);
  auto loss = [&] { return dot(group_norm(x, 4, s, t), wts.data()); };
  CHECK(gradcheck(loss, {{"x", x}, {"scale", s}, {"shift", t}}, {}).max_rel_err < 1e-4);
}

TEST_CASE("adaptive average pooling") {
  SUBCASE("global mean") {
    Tensor x = random_tensor(Shape{1, 2, 5, 3}, 41);
    Tensor y = avg_pool_adaptive(x, 1, 1);
    for (int c = 0; c < 2; ++c) {
      double s = 0.0;
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 3; ++j) s += x.at(0, c, i, j);
      }
      CHECK(y.at(0, c, 0, 0) == doctest::Approx(s / 15.0).epsilon(1e-14));
    }
  }
  SUBCASE("block means of row indices") {
    std::vector<double> v;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) v.push_back(i);
    }
    Tensor y = avg_pool_adaptive(Tensor::from_data(Shape{1, 1, 4, 4}, v), 2, 2);
    CHECK(y.at(0, 0, 0, 0) == 0.5);
    CHECK(y.at(0, 0, 0, 1) == 0.5);
    CHECK(y.at(0, 0, 1, 0) == 2.5);
    CHECK(y.at(0, 0, 1, 1) == 2.5);
  }
  SUBCASE("gradient spreads 1/bin size") {
    Tensor x = random_tensor(Shape{1, 1, 4, 6}, 42, -1, 1, true);
    backward(sum(avg_pool_adaptive(x, 2, 3)));
    for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));
  }
  SUBCASE("overlapping bins") {
    Tensor x = random_tensor(Shape{1, 1, 5, 5}, 43, -1, 1, true);
    Tensor wts = random_tensor(Shape{1, 1, 3, 3}, 44);
    auto loss = [&] { return dot(avg_pool_adaptive(x, 3, 3), wts.data()); };
    CHECK(gradcheck(loss, {{"x", x}}, {}).max_rel_err < 1e-6);
  }
}

TEST_CASE("bilinear upsampling") {
  Tensor x = random_tensor(Shape{1, 3, 4, 5}, 51);
  CHECK(max_abs_diff(upsample_bilinear(x, 1), x) == 0.0);

  Tensor row = Tensor::from_data(Shape{1, 1, 1, 2}, {1.0, 3.0});
  Tensor up = upsample_bilinear(row, 2);
  CHECK(up.shape() == Shape{1, 1, 2, 4});
  const std::vector<double> expected{1.0, 2.0, 3.0, 3.0};
  for (int j = 0; j < 4; ++j) {
    CHECK(up.at(0, 0, 0, j) == expected[j]);
    CHECK(up.at(0, 0, 1, j) == expected[j]);
  }
}

TEST_CASE("nearest upsampling repeats values") {
  Tensor x = Tensor::from_data(Shape{1, 1, 1, 2}, {1.0, 3.0});
  Tensor up = upsample_nearest(x, 2);
  CHECK(up.at(0, 0, 1, 0) == 1.0);
  CHECK(up.at(0, 0, 0, 1) == 1.0);
  CHECK(up.at(0, 0, 0, 2) == 3.0);
}

TEST_CASE("label downsampling picks the top-left pixel of each cell") {
  LabelMap l(1, 4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) l.at(0, i, j) = static_cast<std::uint8_t>(i * 4 + j);
  }
  LabelMap d = downsample_labels(l, 2);
  CHECK(d.h == 2);
  CHECK(d.at(0, 0, 0) == 0);
  CHECK(d.at(0, 1, 1) == 10);
}
