#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sfnet/model.hpp"
#include "sfnet/ops.hpp"

namespace sfnet {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return num_classes_; }
  std::uint64_t at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }
  std::uint64_t ignored() const { return ignored_; }
  std::uint64_t total() const;  // counted (non-ignored) pixels

  // Adds one count per pixel whose ground truth is not `ignore_label`.
  // Throws ShapeError on a size mismatch or an out-of-range class.
  void update(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
              int ignore_label = kIgnoreLabel);
  void update(const LabelMap& pred, const LabelMap& gt, int ignore_label = kIgnoreLabel);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int num_classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t ignored_ = 0;
};

struct MiouResult {
  double mean = 0.0;
  std::vector<double> per_class;  // NaN for absent classes
  std::vector<bool> present;      // TP + FP + FN > 0
};

// IoU_c = TP / (TP + FP + FN); classes with a zero denominator are left out
// of the mean. Throws std::domain_error when every class is absent.
MiouResult miou(const ConfusionMatrix& cm);
double pixel_accuracy(const ConfusionMatrix& cm);

// Per-pixel argmax over channels; ties go to the lowest class.
LabelMap argmax_labels(const Tensor& logits);

struct EnvironmentFingerprint {
  int threads = 1;
  std::string compiler;
  std::string build_flags;
  std::string cpu;
};
EnvironmentFingerprint environment_fingerprint();

struct LatencyStats {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;  // sample standard deviation
  double median_ms = 0.0;
  double fps = 0.0;        // images per second at the mean latency
  int runs = 0;
  int batch = 0;
  std::vector<double> samples_ms;
  EnvironmentFingerprint env;
};

// Wall-clock timing of eval-mode forwards on a fixed random input of
// `shape`. Throws std::invalid_argument when runs < 3.
LatencyStats benchmark_forward(const ParamStore& params, const ModelConfig& cfg, Shape shape,
                               int warmup, int runs);

struct LatencyComparison {
  LatencyStats candidate;
  LatencyStats baseline;
  double overhead = 0.0;  // median(candidate) / median(baseline) - 1
};

// Times the two configurations on the same parameters and input in
// alternating order, one forward each per round, so that drift in machine
// load hits both alike.
LatencyComparison compare_forward(const ParamStore& params, const ModelConfig& candidate,
                                  const ModelConfig& baseline, Shape shape, int warmup,
                                  int rounds);

}  // namespace sfnet
