#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "sfnet/ops.hpp"
#include "sfnet/pnm.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

using Rgb = std::array<std::uint8_t, 3>;

// Hue encodes direction (0 degrees = +x, counter-clockwise positive with the
// y axis pointing down), saturation encodes |v| / max_mag clipped at 1,
// value is 1. The default max_mag is the 99th-percentile magnitude of the
// field (the maximum when that is 0). Zero vectors are white.
// `flow` is N x 2 x H x W; `batch` selects the image.
RasterImage flow_to_color(const Tensor& flow, std::optional<double> max_mag = std::nullopt,
                          int batch = 0);

// Standard sextant HSV -> RGB, h in degrees, s and v in [0, 1].
Rgb hsv_to_rgb(double h, double s, double v);

// White canvas; every stride-th pixel gets a black line to
// (x + round(scale * dx), y + round(scale * dy)) with a two-stroke
// arrowhead, or a single dot when the rounded offset is zero.
RasterImage flow_arrows(const Tensor& flow, int stride, double scale, int batch = 0);

// Bresenham segment, clipped to the canvas.
void draw_line(RasterImage& image, int x0, int y0, int x1, int y1, Rgb color);

// Channel mean, min-max normalised, through a black-red-orange-yellow-white
// ramp. A constant map renders uniform mid-gray.
RasterImage feature_heatmap(const Tensor& features, int batch = 0);
Rgb hot_color(double t);

// Black where the prediction is right or the ground truth is ignored,
// palette[gt] elsewhere. Throws ShapeError for a class without a colour.
RasterImage error_map(const LabelMap& pred, const LabelMap& gt, const std::vector<Rgb>& palette,
                      int batch = 0);

RasterImage label_image(const LabelMap& labels, const std::vector<Rgb>& palette, int batch = 0);
std::vector<Rgb> default_palette(int num_classes);

// Bilinear display resize of a flow field to height x width. Returns a new
// tensor; vector values are not rescaled.
Tensor upsample_flow_for_view(const Tensor& flow, int height, int width);

// Converts a 1 x 3 x H x W image tensor with values in [0, 1].
RasterImage tensor_to_image(const Tensor& image, int batch = 0);

}  // namespace sfnet
