#include "sfnet/metrics.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "sfnet/rng.hpp"

#ifndef SFNET_BUILD_FLAGS
#define SFNET_BUILD_FLAGS "unknown"
#endif

namespace sfnet {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(std::max(num_classes, 0)) * std::max(num_classes, 0), 0) {
  if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts_) t += c;
  return t;
}

void ConfusionMatrix::update(std::span<const std::uint8_t> pred,
                             std::span<const std::uint8_t> gt, int ignore_label) {
  if (pred.size() != gt.size()) {
    throw ShapeError("confusion update: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(gt.size()) + " ground-truth pixels");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_label) continue;
    if (gt[i] >= num_classes_ || pred[i] >= num_classes_) {
      throw ShapeError("confusion update: class out of range at pixel " + std::to_string(i) +
                       " (gt " + std::to_string(gt[i]) + ", pred " + std::to_string(pred[i]) +
                       ", classes " + std::to_string(num_classes_) + ")");
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == ignore_label) {
      ++ignored_;
    } else {
      ++counts_[static_cast<std::size_t>(gt[i]) * num_classes_ + pred[i]];
    }
  }
}

void ConfusionMatrix::update(const LabelMap& pred, const LabelMap& gt, int ignore_label) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w) {
    throw ShapeError("confusion update: prediction and ground-truth maps differ in shape");
  }
  update(pred.values, gt.values, ignore_label);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) {
    throw ShapeError("confusion merge: class counts differ");
  }
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  ignored_ += other.ignored_;
}

MiouResult miou(const ConfusionMatrix& cm) {
  const int c = cm.num_classes();
  MiouResult r;
  r.per_class.assign(c, std::numeric_limits<double>::quiet_NaN());
  r.present.assign(c, false);
  long double sum = 0.0L;
  int present = 0;
  for (int k = 0; k < c; ++k) {
    std::uint64_t row = 0;
    std::uint64_t col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    r.present[k] = true;
    r.per_class[k] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += static_cast<long double>(tp) / static_cast<long double>(denom);
    ++present;
  }
  if (present == 0) throw std::domain_error("miou: every class is absent");
  r.mean = static_cast<double>(sum / present);
  return r;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  std::uint64_t diag = 0;
  for (int k = 0; k < cm.num_classes(); ++k) diag += cm.at(k, k);
  const std::uint64_t total = cm.total();
  return total == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(total);
}

LabelMap argmax_labels(const Tensor& logits) {
  const Shape s = logits.shape();
  if (s.c < 1 || s.c > 255) throw ShapeError("argmax_labels: bad class count in " + s.str());
  LabelMap out(s.n, s.h, s.w);
  std::span<const double> x = logits.data();
  const std::size_t plane = s.plane();
  for (int b = 0; b < s.n; ++b) {
    const double* base = x.data() + static_cast<std::size_t>(b) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      for (int c = 1; c < s.c; ++c) {
        if (base[c * plane + p] > base[best * plane + p]) best = c;
      }
      out.values[b * plane + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

EnvironmentFingerprint environment_fingerprint() {
  EnvironmentFingerprint env;
  env.threads = omp_get_max_threads();
#ifdef __VERSION__
  env.compiler = __VERSION__;
#endif
  env.build_flags = SFNET_BUILD_FLAGS;
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) env.cpu = line.substr(colon + 2);
      break;
    }
  }
  return env;
}

namespace {

Tensor bench_image(Shape shape) {
  Tensor image = Tensor::zeros(shape);
  Rng rng(0x5eed);
  for (double& v : image.mutable_data()) v = rng.uniform();
  return image;
}

double time_forward(const Tensor& image, const ParamStore& params, const ModelConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelOutput out = model_forward(image, params, cfg, Mode::kEval);
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

LatencyStats summarize(std::vector<double> samples, int batch) {
  LatencyStats stats;
  const int runs = static_cast<int>(samples.size());
  stats.runs = runs;
  stats.batch = batch;
  double sum = 0.0;
  for (double v : samples) sum += v;
  stats.mean_ms = sum / runs;
  double sq = 0.0;
  for (double v : samples) sq += (v - stats.mean_ms) * (v - stats.mean_ms);
  stats.stddev_ms = std::sqrt(sq / (runs - 1));
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  stats.median_ms = runs % 2 == 1 ? sorted[runs / 2]
                                  : 0.5 * (sorted[runs / 2 - 1] + sorted[runs / 2]);
  stats.fps = stats.mean_ms > 0.0 ? 1000.0 * batch / stats.mean_ms : 0.0;
  stats.samples_ms = std::move(samples);
  stats.env = environment_fingerprint();
  return stats;
}

}  // namespace

LatencyStats benchmark_forward(const ParamStore& params, const ModelConfig& cfg, Shape shape,
                               int warmup, int runs) {
  if (runs < 3) throw std::invalid_argument("benchmark_forward: need at least 3 timed runs");
  const Tensor image = bench_image(shape);
  NoGradGuard no_grad;
  for (int i = 0; i < warmup; ++i) time_forward(image, params, cfg);
  std::vector<double> samples;
  for (int i = 0; i < runs; ++i) samples.push_back(time_forward(image, params, cfg));
  return summarize(std::move(samples), shape.n);
}

LatencyComparison compare_forward(const ParamStore& params, const ModelConfig& candidate,
                                  const ModelConfig& baseline, Shape shape, int warmup,
                                  int rounds) {
  if (rounds < 3) throw std::invalid_argument("compare_forward: need at least 3 rounds");
  const Tensor image = bench_image(shape);
  NoGradGuard no_grad;
  for (int i = 0; i < warmup; ++i) {
    time_forward(image, params, candidate);
    time_forward(image, params, baseline);
  }
  std::vector<double> a;
  std::vector<double> b;
  for (int r = 0; r < rounds; ++r) {
    if (r % 2 == 0) {
      a.push_back(time_forward(image, params, candidate));
      b.push_back(time_forward(image, params, baseline));
    } else {
      b.push_back(time_forward(image, params, baseline));
      a.push_back(time_forward(image, params, candidate));
    }
  }
  LatencyComparison cmp;
  cmp.candidate = summarize(std::move(a), shape.n);
  cmp.baseline = summarize(std::move(b), shape.n);
  cmp.overhead = cmp.candidate.median_ms / cmp.baseline.median_ms - 1.0;
  return cmp;
}

}  // namespace sfnet
