#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "sfnet/checkpoint.hpp"
#include "sfnet/data.hpp"
#include "sfnet/pnm.hpp"
#include "sfnet/train.hpp"
#include "test_util.hpp"

using namespace sfnet;
using sfnet::testing::max_abs_diff;
using sfnet::testing::random_tensor;
using sfnet::testing::scratch_dir;

namespace {

Tensor loss_map(const std::vector<double>& values) {
  return Tensor::from_data(Shape{1, 1, 1, static_cast<int>(values.size())}, values);
}

// Per-pixel cross entropy recomputed with plain scalar arithmetic.
double scalar_ce(const Tensor& logits, int b, int y, int x, int label) {
  const int c = logits.shape().c;
  double m = -INFINITY;
  for (int k = 0; k < c; ++k) m = std::max(m, logits.at(b, k, y, x));
  double z = 0.0;
  for (int k = 0; k < c; ++k) z += std::exp(logits.at(b, k, y, x) - m);
  return std::log(z) + m - logits.at(b, label, y, x);
}

}  // namespace

TEST_CASE("poly schedule") {
  CHECK(poly_lr(0.01, 0, 50000, 0.9) == 0.01);
  CHECK(poly_lr(0.01, 50000, 50000, 0.9) == 0.0);
  CHECK(std::abs(poly_lr(0.01, 25000, 50000, 0.9) - 0.005358867312681465821) < 1e-15);
  CHECK(std::abs(poly_lr(0.01, 12500, 50000, 0.9) - 0.007718895067235704380) < 1e-15);
  CHECK_THROWS(poly_lr(0.01, 50001, 50000, 0.9));
  CHECK_THROWS(poly_lr(0.01, -1, 50000, 0.9));
  CHECK_THROWS(poly_lr(0.01, 0, 0, 0.9));
}

TEST_CASE("OHEM keeps the hardest pixels") {
  SUBCASE("hand example") {
    LabelMap l(1, 1, 4);
    OhemLoss r = ohem_ce(loss_map({5, 1, 4, 2}), l, 0.5);
    CHECK(r.selected == 2);
    CHECK(r.loss.item() == 4.5);
  }
  SUBCASE("ten percent of a hundred") {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[i] = (i * 37) % 100;
    OhemLoss r = ohem_ce(loss_map(v), LabelMap(1, 1, 100), 0.1);
    CHECK(r.selected == 10);
    CHECK(r.loss.item() == doctest::Approx(94.5));
  }
  SUBCASE("ceiling rule") {
    std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9};
    LabelMap l(1, 1, 9);
    l.values[0] = l.values[1] = kIgnoreLabel;
    OhemLoss r = ohem_ce(loss_map(v), l, 0.1);
    CHECK(r.valid == 7);
    CHECK(r.selected == 1);
    CHECK(r.loss.item() == 9.0);
  }
  SUBCASE("ties go to the lower index") {
    LabelMap l(1, 1, 5);
    auto idx = ohem_select(std::vector<double>{1, 3, 3, 0, 3}, l.values, 0.5);
    CHECK(idx == std::vector<std::size_t>{1, 2, 4});
  }
  SUBCASE("nothing valid") {
    OhemLoss r = ohem_ce(loss_map({1, 2}), LabelMap(1, 1, 2, kIgnoreLabel), 0.1);
    CHECK(r.no_valid);
    CHECK(r.loss.item() == 0.0);
  }
  SUBCASE("gradient reaches only the selected pixels") {
    Tensor m = Tensor::from_data(Shape{1, 1, 1, 4}, {5, 1, 4, 2}, true);
    backward(ohem_ce(m, LabelMap(1, 1, 4), 0.5).loss);
    CHECK(m.grad()[0] == 0.5);
    CHECK(m.grad()[1] == 0.0);
    CHECK(m.grad()[2] == 0.5);
    CHECK(m.grad()[3] == 0.0);
  }
}

TEST_CASE("total loss against scalar recomputation") {
  Tensor logits = random_tensor(Shape{2, 3, 8, 8}, 1, -3, 3);
  std::vector<Tensor> aux{random_tensor(Shape{2, 3, 4, 4}, 2, -3, 3),
                          random_tensor(Shape{2, 3, 2, 2}, 3, -3, 3)};
  LabelMap labels(2, 8, 8);
  Rng rng(4);
  for (auto& v : labels.values) v = rng.bernoulli(0.1) ? kIgnoreLabel : rng.below(3);

  TrainConfig cfg;
  cfg.ohem_keep_frac = 0.25;
  std::vector<double> losses;
  for (int b = 0; b < 2; ++b) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const int lab = labels.at(b, y, x);
        if (lab != kIgnoreLabel) losses.push_back(scalar_ce(logits, b, y, x, lab));
      }
    }
  }
  std::sort(losses.rbegin(), losses.rend());
  const std::size_t k = static_cast<std::size_t>(std::ceil(0.25 * losses.size()));
  double ohem = 0.0;
  for (std::size_t i = 0; i < k; ++i) ohem += losses[i];
  ohem /= static_cast<double>(k);

  double expected = ohem;
  for (const Tensor& a : aux) {
    const int f = 8 / a.shape().h;
    double s = 0.0;
    int n = 0;
    for (int b = 0; b < 2; ++b) {
      for (int y = 0; y < a.shape().h; ++y) {
        for (int x = 0; x < a.shape().w; ++x) {
          const int lab = labels.at(b, y * f, x * f);
          if (lab == kIgnoreLabel) continue;
          s += scalar_ce(a, b, y, x, lab);
          ++n;
        }
      }
    }
    expected += 0.4 * s / n;
  }
  LossBreakdown r = total_loss(logits, aux, labels, cfg);
  CHECK(r.total.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(r.final_ohem == doctest::Approx(ohem).epsilon(1e-12));

  cfg.aux_weight = 0.0;
  CHECK(total_loss(logits, aux, labels, cfg).total.item() == doctest::Approx(ohem).epsilon(1e-12));
}

TEST_CASE("confident correct logits drive the loss to zero") {
  Tensor logits = Tensor::zeros(Shape{1, 2, 2, 2});
  LabelMap labels(1, 2, 2, 1);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) logits.mutable_data()[4 + y * 2 + x] = 50.0;
  }
  TrainConfig cfg;
  CHECK(total_loss(logits, {}, labels, cfg).total.item() < 1e-20);
}

TEST_CASE("SGD with momentum and weight decay") {
  SUBCASE("vanilla descent") {
    ParamStore p;
    p.add("a.weight", Tensor::from_data(Shape{1, 1, 1, 2}, {1.0, -2.0}, true));
    p.get("a.weight").mutable_grad()[0] = 0.5;
    p.get("a.weight").mutable_grad()[1] = -1.0;
    OptimState s;
    sgd_step(p, s, 0.1, 0.0, 0.0);
    CHECK(p.get("a.weight").data()[0] == doctest::Approx(0.95));
    CHECK(p.get("a.weight").data()[1] == doctest::Approx(-1.9));
  }
  SUBCASE("zero gradient decays the velocity") {
    ParamStore p;
    p.add("a.bias", Tensor::from_data(Shape{1, 1, 1, 1}, {1.0}, true));
    OptimState s;
    s.velocity["a.bias"] = {2.0};
    sgd_step(p, s, 0.1, 0.9, 0.0);
    CHECK(s.velocity["a.bias"][0] == doctest::Approx(1.8));
    CHECK(p.get("a.bias").data()[0] == doctest::Approx(1.0 - 0.18));
  }
  SUBCASE("two steps on a quadratic") {
    ParamStore p;
    p.add("q.weight", Tensor::from_data(Shape{1, 1, 1, 1}, {1.0}, true));
    OptimState s;
    for (int step = 0; step < 2; ++step) {
      Tensor& x = p.get("q.weight");
      x.zero_grad();
      x.mutable_grad()[0] = 2.0 * x.data()[0];
      sgd_step(p, s, 0.1, 0.9, 0.01);
    }
    CHECK(p.get("q.weight").data()[0] == doctest::Approx(0.457501).epsilon(1e-12));
    CHECK(s.velocity["q.weight"][0] == doctest::Approx(3.41499).epsilon(1e-12));
  }
  SUBCASE("non-finite gradient leaves parameters untouched") {
    ParamStore p;
    p.add("a.weight", Tensor::from_data(Shape{1, 1, 1, 2}, {1.0, 2.0}, true));
    p.add("b.weight", Tensor::from_data(Shape{1, 1, 1, 1}, {3.0}, true));
    p.get("a.weight").mutable_grad()[0] = 1.0;
    p.get("b.weight").mutable_grad()[0] = NAN;
    OptimState s;
    CHECK_THROWS_AS(sgd_step(p, s, 0.1, 0.9, 0.0), NumericError);
    CHECK(p.get("a.weight").data()[0] == 1.0);
  }
  CHECK(decays("head.classifier.weight"));
  CHECK_FALSE(decays("head.classifier.bias"));
  CHECK_FALSE(decays("head.fuse.norm.scale"));
}

TEST_CASE("augmentation") {
  const SegSample s = render_sample(42, 3, 64, 5, SynthSpec{});
  SUBCASE("double flip is the identity") {
    AugmentParams a;
    a.flip = true;
    SegSample once = apply_augment(s, a, 64);
    CHECK_FALSE(once.label == s.label);
    SegSample twice = apply_augment(once, a, 64);
    CHECK(max_abs_diff(twice.image, s.image) == 0.0);
    CHECK(twice.label == s.label);
  }
  SUBCASE("unit scale full crop is the identity") {
    SegSample same = apply_augment(s, AugmentParams{}, 64);
    CHECK(max_abs_diff(same.image, s.image) == 0.0);
    CHECK(same.label == s.label);
  }
  SUBCASE("flip moves a marker to the mirrored column") {
    SegSample m = s;
    m.label.at(0, 5, 2) = kIgnoreLabel;
    AugmentParams a;
    a.flip = true;
    SegSample f = apply_augment(m, a, 64);
    CHECK(f.label.at(0, 5, 61) == kIgnoreLabel);
  }
  SUBCASE("labels stay within the original set") {
    std::set<int> allowed(s.label.values.begin(), s.label.values.end());
    allowed.insert(kIgnoreLabel);
    TrainConfig cfg;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      SegSample a = augment(s, cfg, rng);
      CHECK(a.image.shape() == Shape{1, 3, 64, 64});
      for (auto v : a.label.values) CHECK(allowed.count(v) == 1);
    }
  }
  SUBCASE("downscaling pads with the ignore label") {
    AugmentParams a;
    a.scale = 0.75;
    SegSample d = apply_augment(s, a, 64);
    CHECK(d.label.at(0, 63, 63) == kIgnoreLabel);
    CHECK(d.image.at(0, 0, 63, 63) == 0.0);
  }
}

TEST_CASE("training loop") {
  const auto dir = scratch_dir("train_loop");
  GenOptions gen;
  gen.count = 24;
  gen.val_count = 8;
  gen.size = 32;
  gen.num_classes = 3;
  gen_synthetic(dir / "data", gen);
  const Dataset data = Dataset::load(dir / "data");
  ModelConfig mc;
  mc.num_classes = 3;
  mc.widths = {8, 16, 16, 32};
  mc.fpn_channels = 16;
  TrainConfig tc;
  tc.total_iters = 6;
  tc.batch_size = 2;
  tc.crop_size = 32;
  tc.eval_interval = 3;

  SUBCASE("zero iterations write the initial checkpoint") {
    tc.total_iters = 0;
    TrainResult r = train_loop(data, mc, tc, {dir / "zero", false});
    CHECK(r.losses.empty());
    ParamStore saved = load_checkpoint(dir / "zero" / "last.sfal");
    ParamStore init = build_params(mc, tc.seed);
    for (const auto& [name, t] : init) CHECK(max_abs_diff(saved.get(name), t) == 0.0);
  }
  SUBCASE("fixed seed repeats bit for bit") {
    TrainResult a = train_loop(data, mc, tc, {dir / "a", false});
    TrainResult b = train_loop(data, mc, tc, {dir / "b", false});
    CHECK(a.losses.size() == 6);
    CHECK(a.losses == b.losses);
    CHECK(read_file(dir / "a" / "last.sfal") == read_file(dir / "b" / "last.sfal"));
    CHECK(read_file(dir / "a" / "log.jsonl") == read_file(dir / "b" / "log.jsonl"));
    tc.seed = 2;
    TrainResult c = train_loop(data, mc, tc, {dir / "c", false});
    CHECK(c.losses != a.losses);
  }
  SUBCASE("class count mismatch is a config error") {
    mc.num_classes = 4;
    CHECK_THROWS_AS(train_loop(data, mc, tc, {dir / "bad", false}), ConfigError);
  }
}

TEST_CASE("three hundred iterations reduce the loss") {
  const auto dir = scratch_dir("train_smoke");
  gen_synthetic(dir / "data", GenOptions{});
  const Dataset data = Dataset::load(dir / "data");
  TrainConfig tc;
  tc.total_iters = 300;
  tc.eval_interval = 300;
  TrainResult r = train_loop(data, ModelConfig{}, tc, {dir / "run", false});
  REQUIRE(r.losses.size() == 300);
  CHECK(r.losses.back() < r.losses.front());
  CHECK(r.final_miou > 0.3);
}

TEST_CASE("train config validation lists every problem") {
  TrainConfig tc;
  tc.base_lr = -1.0;
  tc.batch_size = 0;
  try {
    tc.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("base_lr") != std::string::npos);
    CHECK(msg.find("batch_size") != std::string::npos);
  }
}
