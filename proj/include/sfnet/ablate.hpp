#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfnet/data.hpp"
#include "sfnet/model.hpp"
#include "sfnet/train.hpp"

namespace sfnet {

struct AblationRow {
  std::string config;  // e.g. "FPN+FAM+PPM"
  std::string group;   // "baseline" or "kernel"
  bool use_fam = false;
  bool use_ppm = false;
  int fam_k = 3;
  std::uint64_t seed = 0;
  double miou = 0.0;       // validation mIoU after the last iteration
  double best_miou = 0.0;  // best validation mIoU seen during training
  double pixel_accuracy = 0.0;
  double gflops = 0.0;       // eval forward at the training crop size
  double gflops_1024 = 0.0;  // eval forward at 1024 x 1024
  double seconds = 0.0;
};

struct AblationOptions {
  std::filesystem::path out_dir;
  ModelConfig model;  // use_fam / use_ppm / fam.kernel_size are overridden per run
  TrainConfig train;  // seed is overridden per run
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<int> kernel_sizes{1, 3, 5, 7};
  std::vector<std::uint64_t> kernel_seeds{1};
  bool baseline_grid = true;
  bool kernel_grid = true;
  bool verbose = false;
};

struct AblationSummary {
  std::string config;
  std::string group;
  int fam_k = 3;
  int runs = 0;
  double mean_miou = 0.0;
  double gflops = 0.0;
  double gflops_1024 = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<AblationSummary> summary;
  double seconds = 0.0;

  // Mean final mIoU of the named configuration in the given group.
  double mean_miou(const std::string& config, const std::string& group = "baseline") const;
};

std::string ablation_name(bool use_fam, bool use_ppm);

// Trains {FPN, FPN+FAM} x {without, with PPM} over options.seeds and the
// FAM+PPM kernel-size grid over options.kernel_seeds (runs that coincide
// with the baseline grid are reused). Each run lives in
// <out>/runs/<tag>_s<seed>/. Writes <out>/results.json and
// <out>/results.md.
AblationResult run_ablation(const Dataset& data, const AblationOptions& options);

std::string ablation_table(const AblationResult& result);

}  // namespace sfnet
