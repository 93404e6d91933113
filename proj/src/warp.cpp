#include "sfnet/warp.hpp"

#include <string>

#include "sfnet/flop_trace.hpp"
#include "sfnet/kernels.hpp"
#include "sfnet/kink_monitor.hpp"
#include "sfnet/ops.hpp"

namespace sfnet {

Point2 map_coords(Point2 target, Point2 delta, double scale) {
  if (!(scale > 0.0)) {
    throw ShapeError("map_coords: scale must be positive, got " + std::to_string(scale));
  }
  return {(target.y + delta.y) / scale, (target.x + delta.x) / scale};
}

WarpGrid WarpGrid::from_coords(const Tensor& coords, int batch_index, int src_h, int src_w) {
  const Shape& s = coords.shape();
  if (s.c != 2) throw ShapeError("WarpGrid: coordinate tensor needs 2 channels, got " + s.str());
  if (batch_index < 0 || batch_index >= s.n) throw ShapeError("WarpGrid: batch index out of range");
  if (src_h < 1 || src_w < 1) throw ShapeError("WarpGrid: empty source grid");
  WarpGrid grid;
  grid.height = s.h;
  grid.width = s.w;
  grid.src_height = src_h;
  grid.src_width = src_w;
  const std::size_t count = s.plane();
  const double* ys = coords.data().data() + static_cast<std::size_t>(batch_index) * 2 * count;
  const double* xs = ys + count;
  grid.coords.resize(count);
  grid.taps.resize(count);
  for (std::size_t p = 0; p < count; ++p) {
    grid.coords[p] = {ys[p], xs[p]};
    grid.taps[p] = make_tap(ys[p], xs[p], src_h, src_w);
  }
  return grid;
}

double WarpGrid::weight_sum(int index) const {
  const SampleTap& t = taps[index];
  return t.weight_00() + t.weight_01() + t.weight_10() + t.weight_11();
}

Tensor map_coords(const Tensor& flow, double scale_y, double scale_x) {
  const Shape s = flow.shape();
  if (s.c != 2) throw ShapeError("map_coords: flow needs 2 channels, got " + s.str());
  const std::size_t count = s.plane();
  std::vector<double> out(s.numel());
  std::span<const double> f = flow.data();
  for (int b = 0; b < s.n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * 2 * count;
    for (int i = 0; i < s.h; ++i) {
      for (int j = 0; j < s.w; ++j) {
        const std::size_t p = static_cast<std::size_t>(i) * s.w + j;
        const Point2 target{static_cast<double>(i), static_cast<double>(j)};
        out[base + p] = map_coords(target, {f[base + p], 0.0}, scale_y).y;
        out[base + count + p] = map_coords(target, {0.0, f[base + count + p]}, scale_x).x;
      }
    }
  }
  TensorImpl* fi = flow.impl();
  return make_result("map_coords", s, std::move(out), {flow},
                     [fi, count, s, scale_y, scale_x](std::span<const double> gout) {
                       std::span<double> g = fi->grad_buffer();
                       for (int b = 0; b < s.n; ++b) {
                         const std::size_t base = static_cast<std::size_t>(b) * 2 * count;
                         for (std::size_t p = 0; p < count; ++p) {
                           g[base + p] += gout[base + p] / scale_y;
                           g[base + count + p] += gout[base + count + p] / scale_x;
                         }
                       }
                     });
}

Tensor identity_coords(int n, int h, int w, double scale_y, double scale_x) {
  NoGradGuard no_grad;
  return map_coords(Tensor::zeros(Shape{n, 2, h, w}), scale_y, scale_x);
}

Tensor bilinear_sample(const Tensor& source, const Tensor& coords) {
  const Shape ss = source.shape();
  const Shape cs = coords.shape();
  if (cs.c != 2 || cs.n != ss.n) {
    throw ShapeError("bilinear_sample: coordinates " + cs.str() + " do not fit source " + ss.str());
  }
  if (ss.h < 1 || ss.w < 1) throw ShapeError("bilinear_sample: empty source " + ss.str());
  kernels::SampleGeometry g{ss.n, ss.c, ss.h, ss.w, cs.h, cs.w};
  Shape os{ss.n, ss.c, cs.h, cs.w};
  std::vector<double> out(os.numel());
  flop_trace_add(8.0 * static_cast<double>(os.numel()));
  kernels::bilinear_forward(g, source.data(), coords.data(), out);
  if (kink_monitor_active()) {
    std::span<const double> cd = coords.data();
    const std::size_t count = cs.plane();
    for (int b = 0; b < cs.n; ++b) {
      for (std::size_t p = 0; p < count; ++p) {
        const std::size_t yi = static_cast<std::size_t>(b) * 2 * count + p;
        const SampleTap t = make_tap(cd[yi], cd[yi + count], ss.h, ss.w);
        kink_record((static_cast<std::uint64_t>(t.y0) << 40) ^
                    (static_cast<std::uint64_t>(t.x0) << 16) ^ (t.live_y ? 2U : 0U) ^
                    (t.live_x ? 1U : 0U));
      }
    }
  }
  TensorImpl* si = source.impl();
  TensorImpl* ci = coords.impl();
  return make_result("bilinear_sample", os, std::move(out), {source, coords},
                     [g, si, ci](std::span<const double> gout) {
                       std::span<double> gs;
                       std::span<double> gc;
                       if (si->requires_grad) gs = si->grad_buffer();
                       if (ci->requires_grad) gc = ci->grad_buffer();
                       kernels::bilinear_backward(g, si->data, ci->data, gout, gs, gc);
                     });
}

Tensor warp_feature(const Tensor& source, const Tensor& flow, int scale) {
  const Shape ss = source.shape();
  const Shape fs = flow.shape();
  if (scale < 1) throw ShapeError("warp_feature: scale must be a positive integer");
  if (fs.c != 2 || fs.n != ss.n) {
    throw ShapeError("warp_feature: flow " + fs.str() + " does not fit source " + ss.str());
  }
  if (fs.h != ss.h * scale || fs.w != ss.w * scale) {
    throw ShapeError("warp_feature: flow grid " + std::to_string(fs.h) + "x" +
                     std::to_string(fs.w) + " is not " + std::to_string(scale) +
                     "x the source grid " + std::to_string(ss.h) + "x" + std::to_string(ss.w));
  }
  return bilinear_sample(source, map_coords(flow, scale, scale));
}

Tensor upsample_bilinear(const Tensor& input, int factor) {
  if (factor < 1) throw ShapeError("upsample_bilinear: factor must be >= 1");
  const Shape s = input.shape();
  return bilinear_sample(input, identity_coords(s.n, s.h * factor, s.w * factor, factor, factor));
}

Tensor resize_bilinear(const Tensor& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: output dims must be positive");
  const Shape s = input.shape();
  const double sy = static_cast<double>(out_h) / s.h;
  const double sx = static_cast<double>(out_w) / s.w;
  return bilinear_sample(input, identity_coords(s.n, out_h, out_w, sy, sx));
}

}  // namespace sfnet
