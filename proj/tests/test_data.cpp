#include <chrono>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "sfnet/data.hpp"
#include "sfnet/pnm.hpp"
#include "test_util.hpp"

using namespace sfnet;
using sfnet::testing::max_abs_diff;
using sfnet::testing::scratch_dir;
namespace fs = std::filesystem;

TEST_CASE("generator writes labelled pairs") {
  const auto dir = scratch_dir("gen_small");
  GenOptions opt;
  opt.count = 10;
  opt.val_count = 2;
  DatasetManifest m = gen_synthetic(dir, opt);
  CHECK(m.count == 10);
  CHECK(m.train.size() == 8);
  CHECK(m.val.size() == 2);
  const Dataset data = Dataset::load(dir);
  for (int i = 0; i < 10; ++i) {
    CHECK(fs::exists(dir / "images" / (sample_stem(i) + ".ppm")));
    const SegSample& s = data.sample(i);
    CHECK(s.image.shape() == Shape{1, 3, 64, 64});
    for (auto v : s.label.values) CHECK(v < 5);
  }
}

TEST_CASE("same seed gives byte-identical files") {
  const auto a = scratch_dir("gen_a");
  const auto b = scratch_dir("gen_b");
  GenOptions opt;
  opt.count = 6;
  opt.val_count = 2;
  gen_synthetic(a, opt);
  gen_synthetic(b, opt);
  for (int i = 0; i < 6; ++i) {
    for (const char* kind : {"images", "labels"}) {
      const std::string ext = std::string(kind) == "images" ? ".ppm" : ".pgm";
      CHECK(read_file(a / kind / (sample_stem(i) + ext)) == read_file(b / kind / (sample_stem(i) + ext)));
    }
  }
  CHECK(read_file(a / "manifest.json") == read_file(b / "manifest.json"));
  opt.seed = 43;
  const auto c = scratch_dir("gen_c");
  gen_synthetic(c, opt);
  CHECK(read_file(a / "images" / "00000.ppm") != read_file(c / "images" / "00000.ppm"));
}

TEST_CASE("every class appears in at least 80 percent of samples") {
  std::vector<int> seen(5, 0);
  for (int i = 0; i < 100; ++i) {
    const SegSample s = render_sample(42, i, 64, 5, SynthSpec{});
    std::set<int> present(s.label.values.begin(), s.label.values.end());
    for (int c : present) ++seen[c];
  }
  for (int c = 0; c < 5; ++c) {
    INFO("class " << c);
    CHECK(seen[c] >= 80);
  }
}

TEST_CASE("rendering is independent of the sample order") {
  const SegSample a = render_sample(7, 12, 32, 4, SynthSpec{});
  render_sample(7, 3, 32, 4, SynthSpec{});
  const SegSample b = render_sample(7, 12, 32, 4, SynthSpec{});
  CHECK(max_abs_diff(a.image, b.image) == 0.0);
  CHECK(a.label == b.label);
}

TEST_CASE("sample round trip preserves every pixel") {
  const auto dir = scratch_dir("roundtrip");
  const SegSample s = render_sample(1, 0, 32, 5, SynthSpec{});
  write_sample(s, dir / "x.ppm", dir / "x.pgm");
  const SegSample r = read_sample(dir / "x.ppm", dir / "x.pgm", 5);
  CHECK(max_abs_diff(r.image, s.image) == 0.0);
  CHECK(r.label == s.label);
}

TEST_CASE("truncated and invalid files are load errors") {
  const auto dir = scratch_dir("truncated");
  const SegSample s = render_sample(1, 0, 32, 5, SynthSpec{});
  write_sample(s, dir / "x.ppm", dir / "x.pgm");
  std::vector<std::uint8_t> bytes = read_file(dir / "x.pgm");
  bytes.resize(bytes.size() - 10);
  write_file(dir / "x.pgm", bytes);
  CHECK_THROWS_AS(read_sample(dir / "x.ppm", dir / "x.pgm", 5), IoError);

  GrayImage bad{32, 32, std::vector<std::uint8_t>(32 * 32, 9)};
  write_pgm(bad, dir / "y.pgm");
  CHECK_THROWS_AS(read_sample(dir / "x.ppm", dir / "y.pgm", 5), IoError);
  CHECK_THROWS_AS(Dataset::load(dir / "missing"), IoError);
}

TEST_CASE("loading a hundred samples is fast") {
  const auto dir = scratch_dir("load_speed");
  GenOptions opt;
  opt.count = 100;
  opt.val_count = 20;
  gen_synthetic(dir, opt);
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = Dataset::load(dir);
  data.preload();
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("loaded 100 samples in " << sec << " s");
  CHECK(sec < 1.0);
}

TEST_CASE("generator options are validated") {
  GenOptions opt;
  opt.val_count = opt.count + 1;
  CHECK_THROWS(gen_synthetic(scratch_dir("gen_bad"), opt));
  SynthSpec spec;
  spec.min_discs = 5;
  CHECK_THROWS(spec.validate());
}
