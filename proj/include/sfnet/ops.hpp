#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sfnet/tensor.hpp"

namespace sfnet {

inline constexpr int kIgnoreLabel = 255;

// Integer label maps, N x H x W, 255 = ignore.
struct LabelMap {
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(int n_, int h_, int w_, std::uint8_t fill = 0)
      : n(n_), h(h_), w(w_), values(static_cast<std::size_t>(n_) * h_ * w_, fill) {}

  std::size_t size() const { return values.size(); }
  std::uint8_t& at(int b, int y, int x) {
    return values[(static_cast<std::size_t>(b) * h + y) * w + x];
  }
  std::uint8_t at(int b, int y, int x) const {
    return values[(static_cast<std::size_t>(b) * h + y) * w + x];
  }
  bool operator==(const LabelMap&) const = default;
};

// Nearest label downsampling under the pixel-origin convention:
// out(i, j) = in(i * factor, j * factor).
LabelMap downsample_labels(const LabelMap& labels, int factor);

// weight: C_out x C_in x k x k, bias: 1 x C_out x 1 x 1 or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

Tensor relu(const Tensor& input);

// scale/shift: 1 x C x 1 x 1.
Tensor group_norm(const Tensor& input, int groups, const Tensor& scale,
                  const Tensor& shift, double eps = 1e-5);

// Bin i spans [floor(i*H/out), ceil((i+1)*H/out)).
Tensor avg_pool_adaptive(const Tensor& input, int out_h, int out_w);

// Bilinear resampling under the warp module's coordinate convention (target
// index i reads source coordinate i / factor, clamped at the border). These
// route through the same sampling op as warp_feature.
Tensor upsample_bilinear(const Tensor& input, int factor);
Tensor resize_bilinear(const Tensor& input, int out_h, int out_w);

// out(i) = in(floor(i / factor)).
Tensor upsample_nearest(const Tensor& input, int factor);

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& input, double factor);

// Scalar (1x1x1x1) reductions.
Tensor sum(const Tensor& input);
Tensor dot(const Tensor& input, std::span<const double> weights);

Tensor softmax_channels(const Tensor& logits);

// Per-pixel negative log-likelihood, N x 1 x H x W, zero at ignored pixels.
Tensor cross_entropy(const Tensor& logits, const LabelMap& labels,
                     int ignore_label = kIgnoreLabel);

// Mean of a per-pixel map over non-ignored pixels; 0 when none are valid.
Tensor masked_mean(const Tensor& per_pixel, const LabelMap& labels,
                   int ignore_label = kIgnoreLabel);

}  // namespace sfnet
