#pragma once

#include <cstdint>
#include <string>

#include "sfnet/tensor.hpp"

namespace sfnet {

enum class UpsampleMode { kBilinear, kNearest };

std::string to_string(UpsampleMode mode);
UpsampleMode parse_upsample_mode(const std::string& text);

struct FamConfig {
  int kernel_size = 3;  // one of 1, 3, 5, 7
  int n_layers = 1;     // convs in the flow subnet
  UpsampleMode upsample_mode = UpsampleMode::kBilinear;
  int fpn_channels = 64;

  void validate() const;
};

// Per-pixel (dy, dx) offsets on the target grid: N x 2 x H x W.
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Tensor field);

  const Tensor& tensor() const { return field_; }
  int height() const { return field_.shape().h; }
  int width() const { return field_.shape().w; }
  double dy(int b, int y, int x) const { return field_.at(b, 0, y, x); }
  double dx(int b, int y, int x) const { return field_.at(b, 1, y, x); }

 private:
  Tensor field_;
};

// Registers the flow subnet under "<prefix>.flow.<i>": n_layers k x k convs,
// 2*C -> C -> ... -> 2. The last conv is zero-initialised so the module
// starts out as plain bilinear upsampling.
void add_fam_params(ParamStore& params, const std::string& prefix, const FamConfig& cfg,
                    std::uint64_t seed);

// Upsamples `coarse` by `scale` (cfg.upsample_mode), concatenates it with
// `fine` (coarse first) and runs the flow subnet. Both inputs must already
// have cfg.fpn_channels channels.
FlowField predict_flow(const Tensor& coarse, const Tensor& fine, const ParamStore& params,
                       const std::string& prefix, const FamConfig& cfg, int scale = 2);

struct FamOutput {
  Tensor aligned;  // coarse warped onto the fine grid
  FlowField flow;
};

FamOutput fam_forward(const Tensor& coarse, const Tensor& fine, const ParamStore& params,
                      const std::string& prefix, const FamConfig& cfg, int scale = 2);

// Multiply-add count (2 per MAC) of predict_flow for a fine grid of
// fine_h x fine_w, excluding the parameter-free upsample and warp.
double fam_flow_flops(const FamConfig& cfg, int fine_h, int fine_w);

}  // namespace sfnet
