#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfnet/ops.hpp"
#include "sfnet/pnm.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

// One image (1 x 3 x H x W, values in [0, 1]) and its 1 x H x W label map.
struct SegSample {
  Tensor image;
  LabelMap label;
};

// Geometry and appearance knobs of the synthetic generator.
struct SynthSpec {
  int min_polygons = 1;
  int max_polygons = 3;
  int min_discs = 1;
  int max_discs = 4;
  int min_disc_diameter = 3;
  int max_disc_diameter = 8;
  int min_bars = 1;
  int max_bars = 3;
  int min_bar_width = 1;
  int max_bar_width = 2;
  double noise_sigma = 0.05;
  double illumination = 0.15;  // peak-to-peak amplitude of the linear ramp

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

// Shape kind drawn for class c >= 1; class 0 is the background.
enum class ShapeKind { kPolygon, kDisc, kBar };
ShapeKind class_kind(int cls);

// Base RGB colour of each class.
std::array<double, 3> class_color(int cls);

struct DatasetManifest {
  int version = 1;
  int num_classes = 0;
  std::vector<std::string> class_names;
  int count = 0;
  int height = 0;
  int width = 0;
  std::vector<int> train;
  std::vector<int> val;
  std::uint64_t seed = 0;
  SynthSpec spec;
};

// Renders sample `index` of the dataset defined by (seed, size, classes,
// spec). Pure function of its arguments.
SegSample render_sample(std::uint64_t seed, int index, int size, int num_classes,
                        const SynthSpec& spec);

struct GenOptions {
  std::uint64_t seed = 42;
  int count = 250;
  int val_count = 50;
  int size = 64;
  int num_classes = 5;
  SynthSpec spec;
};

// Writes manifest.json, images/%05d.ppm and labels/%05d.pgm under `dir`.
DatasetManifest gen_synthetic(const std::filesystem::path& dir, const GenOptions& options);

std::string sample_stem(int index);

class Dataset {
 public:
  // Reads and validates the manifest and checks that every listed file
  // exists. Samples are read on first access.
  static Dataset load(const std::filesystem::path& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  int size() const { return manifest_.count; }
  int num_classes() const { return manifest_.num_classes; }

  // Loads (and caches) sample i; throws IoError naming the offending file.
  const SegSample& sample(int index) const;
  // Reads every sample into the cache.
  void preload() const;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
  mutable std::vector<std::optional<SegSample>> cache_;
};

// 1 x 3 x H x W tensor with values in [0, 1].
Tensor image_tensor(const RasterImage& image);

SegSample read_sample(const std::filesystem::path& image_path,
                      const std::filesystem::path& label_path, int num_classes);
void write_sample(const SegSample& sample, const std::filesystem::path& image_path,
                  const std::filesystem::path& label_path);

}  // namespace sfnet
