#include "sfnet/model.hpp"

#include <algorithm>
#include <iostream>
#include <mutex>
#include <set>

#include "sfnet/layers.hpp"
#include "sfnet/ops.hpp"
#include "sfnet/warp.hpp"

namespace sfnet {

namespace {

std::string level_name(const char* prefix, int l) { return prefix + std::to_string(l); }

void warn_skipped_bins(const std::vector<int>& bins, int h, int w) {
  static std::mutex mu;
  static std::set<std::tuple<int, int, int>> reported;
  std::lock_guard lock(mu);
  for (int b : bins) {
    if (b <= std::min(h, w)) continue;
    if (reported.insert({b, h, w}).second) {
      std::cerr << "warning: PPM bin " << b << " exceeds the " << h << "x" << w
                << " context map and is skipped\n";
    }
  }
}

}  // namespace

FamConfig ModelConfig::fam_config() const {
  FamConfig f = fam;
  f.fpn_channels = fpn_channels;
  return f;
}

void ModelConfig::validate() const {
  for (int c : widths) {
    if (c <= 0) throw ConfigError("model.widths must all be positive");
  }
  if (fpn_channels <= 0) throw ConfigError("model.fpn_channels must be positive");
  if (num_classes < 2 || num_classes > 255) {
    throw ConfigError("model.num_classes must be in [2, 255]");
  }
  if (norm_groups < 1) throw ConfigError("model.norm_groups must be >= 1");
  if (ppm_bins.empty()) throw ConfigError("model.ppm_bins must not be empty");
  for (std::size_t i = 0; i < ppm_bins.size(); ++i) {
    if (ppm_bins[i] < 1) throw ConfigError("model.ppm_bins must be positive");
    if (i > 0 && ppm_bins[i] <= ppm_bins[i - 1]) {
      throw ConfigError("model.ppm_bins must be strictly increasing");
    }
  }
  fam_config().validate();
}

void ModelConfig::validate_input(int h, int w) const {
  if (h <= 0 || w <= 0 || h % 32 != 0 || w % 32 != 0) {
    throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) +
                     " must have height and width divisible by 32");
  }
}

std::vector<int> active_ppm_bins(const std::vector<int>& bins, int h, int w) {
  std::vector<int> out;
  for (int b : bins) {
    if (b <= std::min(h, w)) out.push_back(b);
  }
  return out;
}

ParamStore build_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore p;
  const auto& wd = cfg.widths;
  const int stem = std::max(1, wd[0] / 2);
  const int fpn = cfg.fpn_channels;

  auto conv_norm = [&](const std::string& name, int out_c, int in_c, int k) {
    add_conv(p, name + ".conv", out_c, in_c, k, seed, false);
    add_norm(p, name + ".norm", out_c);
  };

  conv_norm("encoder.stem.0", stem, 3, 3);
  conv_norm("encoder.stem.1", wd[0], stem, 3);
  for (int l = 3; l <= 5; ++l) {
    const std::string s = level_name("encoder.stage", l);
    conv_norm(s + ".down", wd[l - 2], wd[l - 3], 3);
    conv_norm(s + ".block.0", wd[l - 2], wd[l - 2], 3);
    conv_norm(s + ".block.1", wd[l - 2], wd[l - 2], 3);
  }

  if (cfg.use_ppm) {
    for (int b : cfg.ppm_bins) {
      conv_norm("ppm.bin" + std::to_string(b), fpn, wd[3], 1);
    }
    conv_norm("ppm.fuse", fpn, wd[3] + fpn * static_cast<int>(cfg.ppm_bins.size()), 3);
  }

  const int top_lateral = cfg.use_ppm ? 4 : 5;
  for (int l = 2; l <= top_lateral; ++l) {
    const std::string s = level_name("decoder.lateral.l", l);
    conv_norm(s + ".0", fpn, wd[l - 2], 1);
    add_conv(p, s + ".1", fpn, fpn, 1, seed, true);
  }

  if (cfg.use_fam) {
    const FamConfig fam = cfg.fam_config();
    for (int l = 2; l <= 4; ++l) add_fam_params(p, level_name("decoder.fam.l", l), fam, seed);
    for (int l = 3; l <= 5; ++l) add_fam_params(p, level_name("decoder.fam.fuse", l), fam, seed);
  }

  conv_norm("head.fuse", fpn, 4 * fpn, 3);
  add_conv(p, "head.classifier", cfg.num_classes, fpn, 1, seed, true);
  for (int l = 2; l <= 4; ++l) {
    add_conv(p, level_name("aux.l", l), cfg.num_classes, fpn, 1, seed, true);
  }
  return p;
}

FeaturePyramid encoder_forward(const Tensor& image, const ParamStore& params,
                               const ModelConfig& cfg) {
  const Shape& s = image.shape();
  if (s.c != 3) throw ShapeError("encoder expects 3-channel images, got " + s.str());
  cfg.validate_input(s.h, s.w);
  const int g = cfg.norm_groups;
  FeaturePyramid pyr;
  Tensor x = conv_norm_relu(params, "encoder.stem.0", image, 2, g);
  x = conv_norm_relu(params, "encoder.stem.1", x, 2, g);
  pyr.levels[0] = x;
  for (int l = 3; l <= 5; ++l) {
    const std::string st = level_name("encoder.stage", l);
    x = conv_norm_relu(params, st + ".down", x, 2, g);
    Tensor y = conv_norm_relu(params, st + ".block.0", x, 1, g);
    y = apply_norm(params, st + ".block.1.norm", apply_conv(params, st + ".block.1.conv", y), g);
    x = relu(add(x, y));
    pyr.levels[l - 2] = x;
  }
  return pyr;
}

Tensor ppm_forward(const Tensor& top, const ParamStore& params, const ModelConfig& cfg) {
  const Shape& s = top.shape();
  warn_skipped_bins(cfg.ppm_bins, s.h, s.w);
  std::vector<Tensor> parts{top};
  for (int b : active_ppm_bins(cfg.ppm_bins, s.h, s.w)) {
    Tensor pooled = avg_pool_adaptive(top, b, b);
    Tensor branch = conv_norm_relu(params, "ppm.bin" + std::to_string(b), pooled, 1,
                                   cfg.norm_groups);
    parts.push_back(resize_bilinear(branch, s.h, s.w));
  }
  // Skipped bins still own fuse-conv input channels; feed zeros there so the
  // parameter shapes do not depend on the input size.
  const int missing = static_cast<int>(cfg.ppm_bins.size() - (parts.size() - 1));
  if (missing > 0) {
    parts.push_back(Tensor::zeros(Shape{s.n, missing * cfg.fpn_channels, s.h, s.w}));
  }
  return conv_norm_relu(params, "ppm.fuse", concat_channels(parts), 1, cfg.norm_groups);
}

DecoderOutput decoder_forward(FeaturePyramid& pyramid, const ParamStore& params,
                              const ModelConfig& cfg, Mode mode) {
  const int g = cfg.norm_groups;
  const FamConfig fam = cfg.fam_config();
  DecoderOutput out;

  auto lateral = [&](int l) {
    const std::string s = level_name("decoder.lateral.l", l);
    return apply_conv(params, s + ".1", conv_norm_relu(params, s + ".0", pyramid.level(l), 1, g));
  };
  auto align = [&](const Tensor& coarse, const Tensor& fine, const std::string& name,
                   int scale) {
    if (!cfg.use_fam) return upsample_bilinear(coarse, scale);
    FamOutput r = fam_forward(coarse, fine, params, "decoder.fam." + name, fam, scale);
    out.flows.emplace(name, r.flow);
    return r.aligned;
  };

  out.context = cfg.use_ppm ? ppm_forward(pyramid.level(5), params, cfg) : lateral(5);
  Tensor upper = out.context;
  for (int l = 4; l >= 2; --l) {
    Tensor lat = lateral(l);
    pyramid.refined[l - 2] = add(lat, align(upper, lat, level_name("l", l), 2));
    upper = pyramid.refined[l - 2];
  }

  const Tensor& base = pyramid.refined[0];
  std::vector<Tensor> parts{base,
                            align(pyramid.refined[1], base, "fuse3", 2),
                            align(pyramid.refined[2], base, "fuse4", 4),
                            align(out.context, base, "fuse5", 8)};
  Tensor fused = conv_norm_relu(params, "head.fuse", concat_channels(parts), 1, g);
  Tensor quarter = apply_conv(params, "head.classifier", fused);
  out.logits = upsample_bilinear(quarter, 4);

  if (mode == Mode::kTrain) {
    for (int l = 2; l <= 4; ++l) {
      out.aux_logits.push_back(
          apply_conv(params, level_name("aux.l", l), pyramid.refined[l - 2]));
    }
  }
  return out;
}

ModelOutput model_forward(const Tensor& image, const ParamStore& params, const ModelConfig& cfg,
                          Mode mode) {
  ModelOutput out;
  out.pyramid = encoder_forward(image, params, cfg);
  DecoderOutput dec = decoder_forward(out.pyramid, params, cfg, mode);
  out.logits = std::move(dec.logits);
  out.aux_logits = std::move(dec.aux_logits);
  out.context = std::move(dec.context);
  out.flows = std::move(dec.flows);
  return out;
}

double conv_flops(int k, int in_c, int out_c, int out_h, int out_w) {
  return 2.0 * k * k * static_cast<double>(in_c) * out_c * out_h * out_w;
}

FlopReport count_flops(const ModelConfig& cfg, int height, int width) {
  cfg.validate();
  cfg.validate_input(height, width);
  FlopReport r;
  const auto& wd = cfg.widths;
  const int stem = std::max(1, wd[0] / 2);
  const int fpn = cfg.fpn_channels;
  const FamConfig fam = cfg.fam_config();
  auto dim = [&](int l) { return std::pair{height >> l, width >> l}; };
  auto sample = [](int c, int h, int w) { return 8.0 * c * h * w; };

  double& enc = r.by_module["encoder"];
  enc += conv_flops(3, 3, stem, height / 2, width / 2);
  enc += conv_flops(3, stem, wd[0], height / 4, width / 4);
  for (int l = 3; l <= 5; ++l) {
    const auto [h, w] = dim(l);
    enc += conv_flops(3, wd[l - 3], wd[l - 2], h, w);
    enc += 2 * conv_flops(3, wd[l - 2], wd[l - 2], h, w);
  }

  const auto [h5, w5] = dim(5);
  double& dec = r.by_module["decoder"];
  if (cfg.use_ppm) {
    double& ppm = r.by_module["ppm"];
    for (int b : active_ppm_bins(cfg.ppm_bins, h5, w5)) {
      ppm += conv_flops(1, wd[3], fpn, b, b);
      ppm += sample(fpn, h5, w5);
    }
    ppm += conv_flops(3, wd[3] + fpn * static_cast<int>(cfg.ppm_bins.size()), fpn, h5, w5);
  } else {
    dec += conv_flops(1, wd[3], fpn, h5, w5) + conv_flops(1, fpn, fpn, h5, w5);
  }
  for (int l = 2; l <= 4; ++l) {
    const auto [h, w] = dim(l);
    dec += conv_flops(1, wd[l - 2], fpn, h, w) + conv_flops(1, fpn, fpn, h, w);
  }

  // Top-down (scale 2 into levels 4, 3, 2) and final alignment onto level 2.
  const auto [h2, w2] = dim(2);
  std::vector<std::tuple<int, int, int>> aligns;  // fine h, fine w, scale
  for (int l = 4; l >= 2; --l) {
    const auto [h, w] = dim(l);
    aligns.emplace_back(h, w, 2);
  }
  for (int scale : {2, 4, 8}) aligns.emplace_back(h2, w2, scale);
  double& fam_ops = r.by_module["fam"];
  for (const auto& [h, w, scale] : aligns) {
    (void)scale;
    if (cfg.use_fam) {
      fam_ops += fam_flow_flops(fam, h, w);
      if (fam.upsample_mode == UpsampleMode::kBilinear) fam_ops += sample(fpn, h, w);
    }
    dec += sample(fpn, h, w);  // the warp or plain upsample itself
  }

  double& head = r.by_module["head"];
  head += conv_flops(3, 4 * fpn, fpn, h2, w2);
  head += conv_flops(1, fpn, cfg.num_classes, h2, w2);
  head += sample(cfg.num_classes, height, width);

  for (const auto& [_, v] : r.by_module) r.total += v;
  return r;
}

}  // namespace sfnet
