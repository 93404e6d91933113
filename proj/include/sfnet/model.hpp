#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sfnet/fam.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

struct ModelConfig {
  // Channel widths of F_2..F_5.
  std::array<int, 4> widths{32, 64, 128, 256};
  int fpn_channels = 64;
  std::vector<int> ppm_bins{1, 2, 3, 6};
  int num_classes = 5;
  int norm_groups = 8;
  bool use_fam = true;
  bool use_ppm = true;
  FamConfig fam;  // fam.fpn_channels is overridden by fpn_channels

  FamConfig fam_config() const;
  void validate() const;
  // Throws ShapeError unless h and w are positive multiples of 32.
  void validate_input(int h, int w) const;
};

// F_2..F_5 from the encoder, and the aligned decoder outputs F~_2..F~_4.
struct FeaturePyramid {
  std::array<Tensor, 4> levels;   // index l - 2
  std::array<Tensor, 3> refined;  // index l - 2, filled by the decoder

  const Tensor& level(int l) const { return levels.at(l - 2); }
  const Tensor& refined_level(int l) const { return refined.at(l - 2); }
};

struct DecoderOutput {
  Tensor logits;                 // N x classes x H x W
  std::vector<Tensor> aux_logits;  // F~_2, F~_3, F~_4 heads, native resolution
  Tensor context;                // PPM output (or compressed F_5)
  std::map<std::string, FlowField> flows;  // keyed by FAM name, e.g. "l3", "fuse5"
};

enum class Mode { kTrain, kEval };

struct ModelOutput {
  Tensor logits;
  std::vector<Tensor> aux_logits;  // empty in eval mode
  FeaturePyramid pyramid;
  Tensor context;
  std::map<std::string, FlowField> flows;
};

// All parameters for `cfg`, initialised from `seed`. Shared layers get the
// same names and values whether or not FAM/PPM are enabled.
ParamStore build_params(const ModelConfig& cfg, std::uint64_t seed);

FeaturePyramid encoder_forward(const Tensor& image, const ParamStore& params,
                               const ModelConfig& cfg);
Tensor ppm_forward(const Tensor& top, const ParamStore& params, const ModelConfig& cfg);
DecoderOutput decoder_forward(FeaturePyramid& pyramid, const ParamStore& params,
                              const ModelConfig& cfg, Mode mode = Mode::kTrain);
ModelOutput model_forward(const Tensor& image, const ParamStore& params, const ModelConfig& cfg,
                          Mode mode);

// PPM bins that fit a top map of h x w.
std::vector<int> active_ppm_bins(const std::vector<int>& bins, int h, int w);

// Analytic operation count: each conv 2*k^2*C_in*C_out*H_out*W_out, each
// bilinear sample 8 per output element. Eval-mode graph (no aux heads).
struct FlopReport {
  double total = 0.0;
  std::map<std::string, double> by_module;  // encoder, ppm, decoder, fam, head
  double gflops() const { return total / 1e9; }
};

double conv_flops(int k, int in_c, int out_c, int out_h, int out_w);
FlopReport count_flops(const ModelConfig& cfg, int height, int width);

}  // namespace sfnet
