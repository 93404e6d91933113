#pragma once

#include <vector>

#include "sfnet/sample_tap.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

// A (y, x) position in pixel units, origin at the centre of pixel (0, 0).
struct Point2 {
  double y = 0.0;
  double x = 0.0;
  bool operator==(const Point2&) const = default;
};

// Maps a target-grid position plus its flow offset (both in target pixels)
// onto the source grid: (p + delta) / scale. No clamping here.
Point2 map_coords(Point2 target, Point2 delta, double scale);

// Per-pixel sampling plan for one batch item: source coordinates, the four
// clamped neighbours and their bilinear weights.
struct WarpGrid {
  int height = 0;  // target grid
  int width = 0;
  int src_height = 0;
  int src_width = 0;
  std::vector<Point2> coords;
  std::vector<SampleTap> taps;

  // coords: N x 2 x H x W tensor, channel 0 = y, channel 1 = x.
  static WarpGrid from_coords(const Tensor& coords, int batch_index, int src_h, int src_w);

  double weight_sum(int index) const;
};

// Source coordinates of a flow field: N x 2 x H x W -> N x 2 x H x W,
// computed with the scalar map_coords above. Differentiable in the flow.
Tensor map_coords(const Tensor& flow, double scale_y, double scale_x);

// Coordinates of the zero-flow grid, i.e. map_coords with delta = 0.
Tensor identity_coords(int n, int h, int w, double scale_y, double scale_x);

// Samples `source` (N x C x h x w) at `coords` (N x 2 x H x W) with border
// clamping. Differentiable in both the source values and the coordinates;
// the coordinate gradient is zero on a clamped axis.
Tensor bilinear_sample(const Tensor& source, const Tensor& coords);

// Warps a coarse map onto the grid of `flow` (N x 2 x H x W, offsets in
// target pixels). Requires H = scale * h and W = scale * w.
Tensor warp_feature(const Tensor& source, const Tensor& flow, int scale);

}  // namespace sfnet
