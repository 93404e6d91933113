#include <cmath>

#include "doctest.h"
#include "sfnet/metrics.hpp"
#include "sfnet/model.hpp"
#include "test_util.hpp"

using namespace sfnet;

namespace {

std::vector<std::uint8_t> random_labels(std::size_t n, int classes, Rng& rng, double ignore = 0.0) {
  std::vector<std::uint8_t> v(n);
  for (auto& x : v) x = rng.bernoulli(ignore) ? kIgnoreLabel : rng.below(classes);
  return v;
}

}  // namespace

TEST_CASE("confusion matrix counts") {
  ConfusionMatrix cm(3);
  std::vector<std::uint8_t> same(100, 2);
  cm.update(same, same);
  CHECK(cm.at(2, 2) == 100);
  CHECK(cm.total() == 100);

  ConfusionMatrix before = cm;
  std::vector<std::uint8_t> ignored(50, kIgnoreLabel);
  cm.update(std::vector<std::uint8_t>(50, 0), ignored);
  CHECK(cm.ignored() == 50);
  CHECK(cm.total() == 100);
  CHECK(cm.at(0, 0) == 0);

  CHECK_THROWS_AS(cm.update(std::vector<std::uint8_t>{0}, std::vector<std::uint8_t>{0, 1}), ShapeError);
  CHECK_THROWS_AS(cm.update(std::vector<std::uint8_t>{3}, std::vector<std::uint8_t>{0}), ShapeError);
}

TEST_CASE("confusion matrix equals a brute-force count") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + trial % 5;
    auto gt = random_labels(256, c, rng, 0.05);
    auto pred = random_labels(256, c, rng);
    ConfusionMatrix cm(c);
    cm.update(pred, gt);
    for (int g = 0; g < c; ++g) {
      for (int p = 0; p < c; ++p) {
        std::uint64_t n = 0;
        for (std::size_t i = 0; i < 256; ++i) n += gt[i] == g && pred[i] == p;
        CHECK(cm.at(g, p) == n);
      }
    }
  }
}

TEST_CASE("merging equals one combined update") {
  Rng rng(6);
  auto g1 = random_labels(100, 4, rng), p1 = random_labels(100, 4, rng);
  auto g2 = random_labels(100, 4, rng), p2 = random_labels(100, 4, rng);
  ConfusionMatrix a(4), b(4), all(4);
  a.update(p1, g1);
  b.update(p2, g2);
  all.update(p1, g1);
  all.update(p2, g2);
  a.merge(b);
  CHECK(a == all);
}

TEST_CASE("mIoU hand example and degenerate cases") {
  ConfusionMatrix cm(2);
  cm.update(std::vector<std::uint8_t>{0, 1, 1, 0}, std::vector<std::uint8_t>{0, 1, 0, 0});
  MiouResult r = miou(cm);
  CHECK(r.per_class[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.per_class[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.mean == 7.0 / 12.0);
  CHECK(pixel_accuracy(cm) == 0.75);

  ConfusionMatrix perfect(3);
  perfect.update(std::vector<std::uint8_t>{0, 1, 1}, std::vector<std::uint8_t>{0, 1, 1});
  MiouResult p = miou(perfect);
  CHECK(p.mean == 1.0);
  CHECK_FALSE(p.present[2]);
  CHECK(std::isnan(p.per_class[2]));

  CHECK_THROWS(miou(ConfusionMatrix(3)));
}

TEST_CASE("uniform random prediction approaches 1/(2C-1)") {
  for (int c : {2, 5}) {
    Rng rng(100 + c);
    const std::size_t n = 1000000;
    std::vector<std::uint8_t> gt(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = static_cast<std::uint8_t>(i % c);
      pred[i] = static_cast<std::uint8_t>(rng.below(c));
    }
    ConfusionMatrix cm(c);
    cm.update(pred, gt);
    CHECK(std::abs(miou(cm).mean - 1.0 / (2 * c - 1)) < 0.01);
  }
}

TEST_CASE("argmax picks the lowest class on ties") {
  Tensor logits = Tensor::from_data(Shape{1, 3, 1, 2}, {1.0, 0.0, 1.0, 2.0, 0.5, 2.0});
  LabelMap l = argmax_labels(logits);
  CHECK(l.at(0, 0, 0) == 0);
  CHECK(l.at(0, 0, 1) == 1);
}

TEST_CASE("latency statistics") {
  ModelConfig cfg;
  cfg.widths = {8, 16, 16, 32};
  cfg.fpn_channels = 16;
  ParamStore params = build_params(cfg, 1);
  LatencyStats s = benchmark_forward(params, cfg, Shape{1, 3, 64, 64}, 0, 3);
  CHECK(s.runs == 3);
  CHECK(s.samples_ms.size() == 3);
  CHECK(std::isfinite(s.stddev_ms));
  CHECK(s.mean_ms > 0.0);
  CHECK(s.fps == doctest::Approx(1000.0 / s.mean_ms));
  CHECK_FALSE(s.env.compiler.empty());
  CHECK(s.env.threads >= 1);
  CHECK_THROWS(benchmark_forward(params, cfg, Shape{1, 3, 64, 64}, 0, 2));

  LatencyStats big = benchmark_forward(params, cfg, Shape{1, 3, 256, 256}, 1, 3);
  CHECK(big.median_ms > s.median_ms);
}
