#include "sfnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "sfnet/pnm.hpp"
#include "sfnet/rng.hpp"

namespace sfnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Point {
  double x;
  double y;
};

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) {
      inside = !inside;
    }
  }
  return inside;
}

double segment_distance(Point a, Point b, double x, double y) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((x - a.x) * vx + (y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = a.x + t * vx - x;
  const double dy = a.y + t * vy - y;
  return std::sqrt(dx * dx + dy * dy);
}

std::vector<int> classes_of_kind(ShapeKind kind, int num_classes) {
  std::vector<int> out;
  for (int c = 1; c < num_classes; ++c) {
    if (class_kind(c) == kind) out.push_back(c);
  }
  return out;
}

// Instance classes for one kind: at least one instance per class of that
// kind so every class shows up, cycling from a random start.
std::vector<int> draw_instances(Rng& rng, ShapeKind kind, int num_classes, int lo, int hi) {
  const std::vector<int> pool = classes_of_kind(kind, num_classes);
  if (pool.empty()) return {};
  const int n_pool = static_cast<int>(pool.size());
  const int count = rng.range(std::max(lo, n_pool), std::max(hi, n_pool));
  const int start = rng.below(n_pool);
  std::vector<int> out;
  for (int i = 0; i < count; ++i) out.push_back(pool[(start + i) % n_pool]);
  return out;
}

std::string kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kPolygon: return "polygon";
    case ShapeKind::kDisc: return "disc";
    case ShapeKind::kBar: return "bar";
  }
  return "shape";
}

json spec_to_json(const SynthSpec& s) {
  return {{"min_polygons", s.min_polygons},
          {"max_polygons", s.max_polygons},
          {"min_discs", s.min_discs},
          {"max_discs", s.max_discs},
          {"min_disc_diameter", s.min_disc_diameter},
          {"max_disc_diameter", s.max_disc_diameter},
          {"min_bars", s.min_bars},
          {"max_bars", s.max_bars},
          {"min_bar_width", s.min_bar_width},
          {"max_bar_width", s.max_bar_width},
          {"noise_sigma", s.noise_sigma},
          {"illumination", s.illumination}};
}

SynthSpec spec_from_json(const json& j) {
  SynthSpec s;
  s.min_polygons = j.at("min_polygons").get<int>();
  s.max_polygons = j.at("max_polygons").get<int>();
  s.min_discs = j.at("min_discs").get<int>();
  s.max_discs = j.at("max_discs").get<int>();
  s.min_disc_diameter = j.at("min_disc_diameter").get<int>();
  s.max_disc_diameter = j.at("max_disc_diameter").get<int>();
  s.min_bars = j.at("min_bars").get<int>();
  s.max_bars = j.at("max_bars").get<int>();
  s.min_bar_width = j.at("min_bar_width").get<int>();
  s.max_bar_width = j.at("max_bar_width").get<int>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.illumination = j.at("illumination").get<double>();
  return s;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void SynthSpec::validate() const {
  auto range = [](int lo, int hi, int floor, const char* what) {
    if (lo < floor || hi < lo) {
      throw ConfigError(std::string("synthetic spec: bad ") + what + " range");
    }
  };
  range(min_polygons, max_polygons, 0, "polygon count");
  range(min_discs, max_discs, 0, "disc count");
  range(min_disc_diameter, max_disc_diameter, 1, "disc diameter");
  range(min_bars, max_bars, 0, "bar count");
  range(min_bar_width, max_bar_width, 1, "bar width");
  if (noise_sigma < 0.0) throw ConfigError("synthetic spec: noise_sigma must be >= 0");
  if (illumination < 0.0) throw ConfigError("synthetic spec: illumination must be >= 0");
}

ShapeKind class_kind(int cls) {
  switch ((cls - 1) % 3) {
    case 0: return ShapeKind::kPolygon;
    case 1: return ShapeKind::kDisc;
    default: return ShapeKind::kBar;
  }
}

std::array<double, 3> class_color(int cls) {
  static constexpr std::array<std::array<double, 3>, 8> kTable{{{0.45, 0.45, 0.45},
                                                                {0.80, 0.30, 0.25},
                                                                {0.25, 0.65, 0.30},
                                                                {0.30, 0.35, 0.80},
                                                                {0.85, 0.75, 0.20},
                                                                {0.65, 0.30, 0.70},
                                                                {0.20, 0.70, 0.75},
                                                                {0.90, 0.55, 0.60}}};
  if (cls >= 0 && cls < static_cast<int>(kTable.size())) return kTable[cls];
  Rng rng(substream_seed(0xc0105, static_cast<std::uint64_t>(cls)));
  return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
}

SegSample render_sample(std::uint64_t seed, int index, int size, int num_classes,
                        const SynthSpec& spec) {
  if (size < 32 || size % 32 != 0) {
    throw ConfigError("synthetic size must be a positive multiple of 32, got " +
                      std::to_string(size));
  }
  if (num_classes < 2 || num_classes > 254) {
    throw ConfigError("synthetic class count must be in [2, 254]");
  }
  spec.validate();
  Rng rng(substream_seed(seed, static_cast<std::uint64_t>(index)));
  LabelMap label(1, size, size, 0);
  const double s = size;

  // Large polygons: star-shaped around a centre, 3 to 7 vertices.
  for (int cls : draw_instances(rng, ShapeKind::kPolygon, num_classes, spec.min_polygons,
                                spec.max_polygons)) {
    const Point c{rng.uniform(0.15 * s, 0.85 * s), rng.uniform(0.15 * s, 0.85 * s)};
    const double radius = rng.uniform(s / 6.0, s / 3.0);
    const int n_vertices = rng.range(3, 7);
    std::vector<double> angles(n_vertices);
    for (double& a : angles) a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    std::vector<Point> poly;
    for (double a : angles) {
      const double r = radius * rng.uniform(0.6, 1.0);
      poly.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a)});
    }
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (inside_polygon(poly, x + 0.5, y + 0.5)) label.at(0, y, x) = static_cast<std::uint8_t>(cls);
      }
    }
  }
  // Small discs.
  for (int cls : draw_instances(rng, ShapeKind::kDisc, num_classes, spec.min_discs,
                                spec.max_discs)) {
    const double d = rng.range(spec.min_disc_diameter, spec.max_disc_diameter);
    const Point c{rng.uniform(d, s - d), rng.uniform(d, s - d)};
    const double r2 = d * d / 4.0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - c.x;
        const double dy = y + 0.5 - c.y;
        if (dx * dx + dy * dy <= r2) label.at(0, y, x) = static_cast<std::uint8_t>(cls);
      }
    }
  }
  // Thin bars.
  for (int cls : draw_instances(rng, ShapeKind::kBar, num_classes, spec.min_bars,
                                spec.max_bars)) {
    const double width = rng.range(spec.min_bar_width, spec.max_bar_width);
    const double length = rng.uniform(s / 3.0, s);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const Point mid{rng.uniform(0.2 * s, 0.8 * s), rng.uniform(0.2 * s, 0.8 * s)};
    const Point a{mid.x - 0.5 * length * std::cos(angle), mid.y - 0.5 * length * std::sin(angle)};
    const Point b{mid.x + 0.5 * length * std::cos(angle), mid.y + 0.5 * length * std::sin(angle)};
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (segment_distance(a, b, x + 0.5, y + 0.5) <= 0.5 * width) {
          label.at(0, y, x) = static_cast<std::uint8_t>(cls);
        }
      }
    }
  }

  // Appearance: class colour + linear illumination ramp + pixel noise,
  // quantised to 8 bits so the in-memory sample matches its file.
  const double ramp_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ramp_x = std::cos(ramp_angle);
  const double ramp_y = std::sin(ramp_angle);
  Tensor image = Tensor::zeros(Shape{1, 3, size, size});
  std::span<double> px = image.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const auto color = class_color(label.at(0, y, x));
      const double u = ((x + 0.5) / s - 0.5) * ramp_x + ((y + 0.5) / s - 0.5) * ramp_y;
      const double light = spec.illumination * u / std::numbers::sqrt2;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = color[ch] + light + spec.noise_sigma * rng.normal();
        px[ch * plane + static_cast<std::size_t>(y) * size + x] = to_byte(v) / 255.0;
      }
    }
  }
  return {image, label};
}

std::string sample_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return buf;
}

void write_sample(const SegSample& sample, const fs::path& image_path, const fs::path& label_path) {
  const Shape s = sample.image.shape();
  RasterImage img(s.w, s.h);
  std::span<const double> px = sample.image.data();
  const std::size_t plane = s.plane();
  for (std::size_t p = 0; p < plane; ++p) {
    for (int ch = 0; ch < 3; ++ch) img.pixels[p * 3 + ch] = to_byte(px[ch * plane + p]);
  }
  write_ppm(img, image_path);
  GrayImage lab{sample.label.w, sample.label.h, sample.label.values};
  write_pgm(lab, label_path);
}

Tensor image_tensor(const RasterImage& img) {
  Tensor t = Tensor::zeros(Shape{1, 3, img.height, img.width});
  std::span<double> px = t.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int ch = 0; ch < 3; ++ch) px[ch * plane + p] = img.pixels[p * 3 + ch] / 255.0;
  }
  return t;
}

SegSample read_sample(const fs::path& image_path, const fs::path& label_path, int num_classes) {
  const RasterImage img = read_ppm(image_path);
  const GrayImage lab = read_pgm(label_path);
  if (img.width != lab.width || img.height != lab.height) {
    throw IoError(label_path.string() + ": size " + std::to_string(lab.width) + "x" +
                  std::to_string(lab.height) + " does not match its image " +
                  std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  for (std::size_t i = 0; i < lab.pixels.size(); ++i) {
    const int v = lab.pixels[i];
    if (v != kIgnoreLabel && v >= num_classes) {
      throw IoError(label_path.string() + ": label " + std::to_string(v) + " at pixel " +
                    std::to_string(i) + " is outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  SegSample sample;
  sample.image = image_tensor(img);
  sample.label = LabelMap(1, lab.height, lab.width);
  sample.label.values = lab.pixels;
  return sample;
}

DatasetManifest gen_synthetic(const fs::path& dir, const GenOptions& o) {
  if (o.count < 1) throw ConfigError("gen-data: sample count must be >= 1");
  if (o.val_count < 0 || o.val_count >= o.count) {
    throw ConfigError("gen-data: validation count must be in [0, count)");
  }
  DatasetManifest m;
  m.num_classes = o.num_classes;
  m.count = o.count;
  m.height = o.size;
  m.width = o.size;
  m.seed = o.seed;
  m.spec = o.spec;
  m.class_names.push_back("background");
  for (int c = 1; c < o.num_classes; ++c) m.class_names.push_back(kind_name(class_kind(c)) + "_" + std::to_string(c));

  std::vector<int> order(o.count);
  for (int i = 0; i < o.count; ++i) order[i] = i;
  Rng split_rng(substream_seed(o.seed, 0x5b117ULL));
  for (int i = o.count - 1; i > 0; --i) std::swap(order[i], order[split_rng.below(i + 1)]);
  m.val.assign(order.begin(), order.begin() + o.val_count);
  m.train.assign(order.begin() + o.val_count, order.end());
  std::sort(m.val.begin(), m.val.end());
  std::sort(m.train.begin(), m.train.end());

  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError((dir / "images").string() + ": " + ec.message());
  fs::create_directories(dir / "labels", ec);
  if (ec) throw IoError((dir / "labels").string() + ": " + ec.message());

  std::vector<SegSample> samples(o.count);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < o.count; ++i) {
    samples[i] = render_sample(o.seed, i, o.size, o.num_classes, o.spec);
  }
  for (int i = 0; i < o.count; ++i) {
    write_sample(samples[i], dir / "images" / (sample_stem(i) + ".ppm"),
                 dir / "labels" / (sample_stem(i) + ".pgm"));
  }

  json j = {{"version", m.version},
            {"num_classes", m.num_classes},
            {"class_names", m.class_names},
            {"count", m.count},
            {"height", m.height},
            {"width", m.width},
            {"splits", {{"train", m.train}, {"val", m.val}}},
            {"generator", {{"name", "sfnet-synthetic"},
                           {"seed", m.seed},
                           {"rng", std::string(Rng::kAlgorithm)},
                           {"spec", spec_to_json(m.spec)}}}};
  const std::string text = j.dump(2) + "\n";
  write_file(dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
  return m;
}

Dataset Dataset::load(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const std::vector<std::uint8_t> bytes = read_file(manifest_path);
  Dataset ds;
  ds.root_ = dir;
  DatasetManifest& m = ds.manifest_;
  try {
    const json j = json::parse(bytes.begin(), bytes.end());
    m.version = j.at("version").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.count = j.at("count").get<int>();
    m.height = j.at("height").get<int>();
    m.width = j.at("width").get<int>();
    m.train = j.at("splits").at("train").get<std::vector<int>>();
    m.val = j.at("splits").at("val").get<std::vector<int>>();
    m.seed = j.at("generator").at("seed").get<std::uint64_t>();
    m.spec = spec_from_json(j.at("generator").at("spec"));
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  auto bad = [&](const std::string& what) { throw IoError(manifest_path.string() + ": " + what); };
  if (m.version != 1) bad("unsupported manifest version " + std::to_string(m.version));
  if (m.num_classes < 2 || m.num_classes > 254) bad("num_classes out of range");
  if (static_cast<int>(m.class_names.size()) != m.num_classes) bad("class_names count mismatch");
  if (m.count < 1) bad("empty dataset");
  std::vector<int> seen(m.count, 0);
  for (const auto* split : {&m.train, &m.val}) {
    for (int i : *split) {
      if (i < 0 || i >= m.count) bad("split index " + std::to_string(i) + " out of range");
      if (seen[i]++) bad("sample " + std::to_string(i) + " appears in more than one split slot");
    }
  }
  if (m.train.size() + m.val.size() != static_cast<std::size_t>(m.count)) {
    bad("splits do not cover all " + std::to_string(m.count) + " samples");
  }
  for (int i = 0; i < m.count; ++i) {
    for (const fs::path& p : {dir / "images" / (sample_stem(i) + ".ppm"),
                              dir / "labels" / (sample_stem(i) + ".pgm")}) {
      if (!fs::is_regular_file(p)) throw IoError(p.string() + ": missing sample file");
    }
  }
  ds.cache_.resize(m.count);
  return ds;
}

const SegSample& Dataset::sample(int index) const {
  if (index < 0 || index >= manifest_.count) {
    throw std::out_of_range("dataset index " + std::to_string(index) + " out of range");
  }
  std::optional<SegSample>& slot = cache_[index];
  if (!slot) {
    const fs::path label_path = root_ / "labels" / (sample_stem(index) + ".pgm");
    SegSample s = read_sample(root_ / "images" / (sample_stem(index) + ".ppm"), label_path,
                              manifest_.num_classes);
    if (s.label.h != manifest_.height || s.label.w != manifest_.width) {
      throw IoError(label_path.string() + ": size differs from the manifest");
    }
    slot = std::move(s);
  }
  return *slot;
}

void Dataset::preload() const {
  for (int i = 0; i < manifest_.count; ++i) sample(i);
}

}  // namespace sfnet
