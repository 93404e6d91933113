#include <cmath>

#include "doctest.h"
#include "sfnet/ops.hpp"
#include "sfnet/tensor.hpp"
#include "test_util.hpp"

using namespace sfnet;
using sfnet::testing::random_tensor;

TEST_CASE("identity chain has unit gradient") {
  Tensor x = Tensor::full(Shape{1, 1, 2, 2}, 3.0, true);
  Tensor y = sum(x);
  backward(y);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("fan-out accumulates gradients") {
  Tensor a = random_tensor(Shape{1, 2, 3, 3}, 1, -1, 1, true);
  backward(sum(add(a, a)));
  for (double g : a.grad()) CHECK(g == 2.0);
}

TEST_CASE("diamond graph visits shared node once") {
  Tensor a = random_tensor(Shape{1, 1, 2, 2}, 2, -1, 1, true);
  Tensor b = scalar_mul(a, 3.0);
  backward(sum(add(relu(b), scalar_mul(b, -1.0))));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double expected = a.data()[i] > 0 ? 0.0 : -3.0;
    CHECK(a.grad()[i] == doctest::Approx(expected));
  }
}

TEST_CASE("relu values and gradients") {
  Tensor x = Tensor::from_data(Shape{1, 1, 1, 3}, {-1.0, 0.0, 2.0}, true);
  Tensor y = relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);
  backward(sum(y));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[2] == 1.0);

  Tensor neg = Tensor::full(Shape{1, 2, 2, 2}, -0.5, true);
  Tensor r = relu(neg);
  for (double v : r.data()) CHECK(v == 0.0);
  backward(sum(r));
  for (double g : neg.grad()) CHECK(g == 0.0);
}

TEST_CASE("concat keeps channel order") {
  Tensor a = Tensor::full(Shape{1, 2, 2, 2}, 1.0);
  Tensor b = Tensor::full(Shape{1, 3, 2, 2}, 2.0);
  Tensor c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 5, 2, 2});
  for (int ch = 0; ch < 5; ++ch) CHECK(c.at(0, ch, 1, 1) == (ch < 2 ? 1.0 : 2.0));
}

TEST_CASE("uniform logits give ln C per pixel") {
  Tensor logits = Tensor::zeros(Shape{1, 4, 3, 3});
  LabelMap labels(1, 3, 3, 2);
  Tensor ce = cross_entropy(logits, labels);
  for (double v : ce.data()) CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
  Tensor logits = random_tensor(Shape{1, 3, 2, 2}, 7, -2, 2, true);
  LabelMap labels(1, 2, 2);
  labels.values = {0, 1, 2, kIgnoreLabel};
  backward(sum(cross_entropy(logits, labels)));
  Tensor p = softmax_channels(logits.detach_copy());
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      const int lab = labels.at(0, y, x);
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = (static_cast<std::size_t>(c) * 2 + y) * 2 + x;
        const double expected =
            lab == kIgnoreLabel ? 0.0 : p.at(0, c, y, x) - (c == lab ? 1.0 : 0.0);
        CHECK(logits.grad()[i] == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("non-finite results raise NumericError") {
  Tensor x = Tensor::from_data(Shape{1, 1, 1, 2}, {1.0, 1e308});
  CHECK_THROWS_AS(scalar_mul(x, 1e10), NumericError);
}

TEST_CASE("no-grad guard records no tape") {
  Tensor x = Tensor::full(Shape{1, 1, 2, 2}, 1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    Tensor y = scalar_mul(x, 2.0);
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(grad_enabled());
}

TEST_CASE("shape mismatch raises ShapeError") {
  CHECK_THROWS_AS(add(Tensor::zeros(Shape{1, 2, 2, 2}), Tensor::zeros(Shape{1, 3, 2, 2})),
                  ShapeError);
}
