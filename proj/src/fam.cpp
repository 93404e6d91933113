#include "sfnet/fam.hpp"

#include "sfnet/layers.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/warp.hpp"

namespace sfnet {

std::string to_string(UpsampleMode mode) {
  return mode == UpsampleMode::kBilinear ? "bilinear" : "nearest";
}

UpsampleMode parse_upsample_mode(const std::string& text) {
  if (text == "bilinear") return UpsampleMode::kBilinear;
  if (text == "nearest") return UpsampleMode::kNearest;
  throw ConfigError("upsample mode must be 'bilinear' or 'nearest', got '" + text + "'");
}

void FamConfig::validate() const {
  if (kernel_size != 1 && kernel_size != 3 && kernel_size != 5 && kernel_size != 7) {
    throw ConfigError("fam.kernel_size must be one of 1, 3, 5, 7 (got " +
                      std::to_string(kernel_size) + ")");
  }
  if (n_layers < 1) throw ConfigError("fam.n_layers must be >= 1");
  if (fpn_channels < 1) throw ConfigError("fpn_channels must be positive");
}

FlowField::FlowField(Tensor field) : field_(std::move(field)) {
  if (field_.shape().c != 2) {
    throw ShapeError("flow field needs exactly 2 channels, got " + field_.shape().str());
  }
}

void add_fam_params(ParamStore& params, const std::string& prefix, const FamConfig& cfg,
                    std::uint64_t seed) {
  cfg.validate();
  const int c = cfg.fpn_channels;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const bool last = i + 1 == cfg.n_layers;
    const int in_c = i == 0 ? 2 * c : c;
    const int out_c = last ? 2 : c;
    add_conv(params, prefix + ".flow." + std::to_string(i), out_c, in_c, cfg.kernel_size, seed,
             true, last);
  }
}

FlowField predict_flow(const Tensor& coarse, const Tensor& fine, const ParamStore& params,
                       const std::string& prefix, const FamConfig& cfg, int scale) {
  const Shape& cs = coarse.shape();
  const Shape& fs = fine.shape();
  if (cs.c != cfg.fpn_channels || fs.c != cfg.fpn_channels) {
    throw ShapeError("predict_flow: inputs must have " + std::to_string(cfg.fpn_channels) +
                     " channels, got " + cs.str() + " and " + fs.str());
  }
  if (fs.h != cs.h * scale || fs.w != cs.w * scale || fs.n != cs.n) {
    throw ShapeError("predict_flow: fine map " + fs.str() + " is not " + std::to_string(scale) +
                     "x the coarse map " + cs.str());
  }
  Tensor up = cfg.upsample_mode == UpsampleMode::kBilinear ? upsample_bilinear(coarse, scale)
                                                           : upsample_nearest(coarse, scale);
  Tensor x = concat_channels(up, fine);
  for (int i = 0; i < cfg.n_layers; ++i) {
    x = apply_conv(params, prefix + ".flow." + std::to_string(i), x);
    if (i + 1 < cfg.n_layers) x = relu(x);
  }
  return FlowField(std::move(x));
}

FamOutput fam_forward(const Tensor& coarse, const Tensor& fine, const ParamStore& params,
                      const std::string& prefix, const FamConfig& cfg, int scale) {
  FlowField flow = predict_flow(coarse, fine, params, prefix, cfg, scale);
  Tensor aligned = warp_feature(coarse, flow.tensor(), scale);
  return {std::move(aligned), std::move(flow)};
}

double fam_flow_flops(const FamConfig& cfg, int fine_h, int fine_w) {
  const double k2 = static_cast<double>(cfg.kernel_size) * cfg.kernel_size;
  const double hw = static_cast<double>(fine_h) * fine_w;
  const int c = cfg.fpn_channels;
  double total = 0.0;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const int in_c = i == 0 ? 2 * c : c;
    const int out_c = i + 1 == cfg.n_layers ? 2 : c;
    total += 2.0 * k2 * in_c * out_c * hw;
  }
  return total;
}

}  // namespace sfnet
