#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sfnet/data.hpp"
#include "sfnet/model.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/rng.hpp"

namespace sfnet {

struct TrainConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int total_iters = 2000;
  int batch_size = 4;
  double power = 0.9;
  double ohem_keep_frac = 0.1;
  double aux_weight = 0.4;
  int crop_size = 64;
  double scale_min = 0.75;
  double scale_max = 2.0;
  double flip_prob = 0.5;
  std::uint64_t seed = 1;
  int eval_interval = 250;
  int log_interval = 10;

  void validate() const;
};

// base * (1 - iter / total)^power. Throws std::invalid_argument unless
// 0 <= iter <= total and total > 0.
double poly_lr(double base, int iter, int total, double power);

// Indices of the K = ceil(keep_frac * N_valid) largest losses among valid
// pixels, ordered by descending loss with ties going to the lower index.
std::vector<std::size_t> ohem_select(std::span<const double> losses,
                                     std::span<const std::uint8_t> labels, double keep_frac,
                                     int ignore_label = kIgnoreLabel);

struct OhemLoss {
  Tensor loss;             // scalar
  std::size_t selected = 0;
  std::size_t valid = 0;
  bool no_valid = false;   // set when every pixel is ignored; loss is then 0
};

// Mean of the selected hardest per-pixel losses (N x 1 x H x W input).
OhemLoss ohem_ce(const Tensor& per_pixel, const LabelMap& labels, double keep_frac,
                 int ignore_label = kIgnoreLabel);

struct LossBreakdown {
  Tensor total;  // scalar, differentiable
  double final_ohem = 0.0;
  std::vector<double> aux;  // plain mean CE per aux head
  bool no_valid = false;
};

// OHEM cross-entropy on the final logits plus aux_weight times the plain
// mean cross-entropy of each aux head against nearest-downsampled labels.
LossBreakdown total_loss(const Tensor& final_logits, const std::vector<Tensor>& aux_logits,
                         const LabelMap& labels, const TrainConfig& cfg);

struct OptimState {
  std::map<std::string, std::vector<double>> velocity;
  long long iteration = 0;
};

// Weight decay applies to parameters whose name ends in ".weight".
bool decays(const std::string& param_name);

// v <- momentum * v + grad + wd * param ; param <- param - lr * v.
// Parameters without a gradient buffer are treated as having zero gradient.
// Throws NumericError, before touching anything, if a gradient is not finite.
void sgd_step(ParamStore& params, OptimState& state, double lr, double momentum,
              double weight_decay);

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  int crop_y = 0;
  int crop_x = 0;
};

// Draws flip, scale and crop offsets for a sample of h x w.
AugmentParams draw_augment(int h, int w, const TrainConfig& cfg, Rng& rng);
// Horizontal flip, rescale to round(s * dims) (bilinear image, nearest
// label), pad to the crop size (image 0, label ignore) and crop.
SegSample apply_augment(const SegSample& sample, const AugmentParams& a, int crop_size);
SegSample augment(const SegSample& sample, const TrainConfig& cfg, Rng& rng);

// Stacks samples along the batch axis.
SegSample make_batch(const std::vector<SegSample>& samples);

struct EvalResult {
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::vector<double> per_class;
  std::vector<bool> present;
};

EvalResult evaluate(const ParamStore& params, const ModelConfig& cfg, const Dataset& data,
                    const std::vector<int>& indices, int batch_size = 8);

struct TrainResult {
  std::vector<double> losses;  // one per iteration
  double best_miou = -1.0;
  int best_iter = -1;
  double final_miou = -1.0;
  EvalResult final_eval;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // checkpoints and log.jsonl
  bool verbose = false;
};

// Runs cfg.total_iters SGD steps over the train split. Writes
// <out>/log.jsonl, <out>/last.sfal and <out>/best.sfal. Throws NumericError
// on a non-finite loss after dumping the parameters to <out>/nan_dump.sfal.
TrainResult train_loop(const Dataset& data, const ModelConfig& model_cfg,
                       const TrainConfig& train_cfg, const TrainOptions& options);

}  // namespace sfnet
