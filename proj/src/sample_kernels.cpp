#include <vector>

#include "sfnet/kernels.hpp"
#include "sfnet/sample_tap.hpp"

namespace sfnet::kernels {

namespace {

// Taps for one batch item, computed once and shared by all channels.
void build_taps(const SampleGeometry& g, const double* coords,
                std::vector<SampleTap>& taps) {
  const int count = g.dst_h * g.dst_w;
  taps.resize(count);
  const double* ys = coords;
  const double* xs = coords + count;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < count; ++p) {
    taps[p] = make_tap(ys[p], xs[p], g.src_h, g.src_w);
  }
}

}  // namespace

void bilinear_forward(const SampleGeometry& g, std::span<const double> source,
                      std::span<const double> coords, std::span<double> out) {
  const int count = g.dst_h * g.dst_w;
  const std::size_t src_plane = static_cast<std::size_t>(g.src_h) * g.src_w;
  const int sw = g.src_w;
  std::vector<SampleTap> taps;
  // Flattened corner offsets and weights so the channel loop vectorises.
  std::vector<int> i00(count), i01(count), i10(count), i11(count);
  std::vector<double> wy(count), wx(count);
  for (int b = 0; b < g.n; ++b) {
    build_taps(g, coords.data() + static_cast<std::size_t>(b) * 2 * count, taps);
    for (int p = 0; p < count; ++p) {
      const SampleTap& t = taps[p];
      i00[p] = t.y0 * sw + t.x0;
      i01[p] = t.y0 * sw + t.x1;
      i10[p] = t.y1 * sw + t.x0;
      i11[p] = t.y1 * sw + t.x1;
      wy[p] = t.wy;
      wx[p] = t.wx;
    }
#pragma omp parallel for schedule(static)
    for (int c = 0; c < g.c; ++c) {
      const std::size_t plane = static_cast<std::size_t>(b) * g.c + c;
      const double* src = source.data() + plane * src_plane;
      double* dst = out.data() + plane * count;
#pragma omp simd
      for (int p = 0; p < count; ++p) {
        dst[p] = (1.0 - wy[p]) * ((1.0 - wx[p]) * src[i00[p]] + wx[p] * src[i01[p]]) +
                 wy[p] * ((1.0 - wx[p]) * src[i10[p]] + wx[p] * src[i11[p]]);
      }
    }
  }
}

void bilinear_backward(const SampleGeometry& g, std::span<const double> source,
                       std::span<const double> coords,
                       std::span<const double> grad_out,
                       std::span<double> grad_source,
                       std::span<double> grad_coords) {
  const int count = g.dst_h * g.dst_w;
  const int sw = g.src_w;
  const std::size_t src_plane = static_cast<std::size_t>(g.src_h) * g.src_w;
  std::vector<SampleTap> taps;
  for (int b = 0; b < g.n; ++b) {
    build_taps(g, coords.data() + static_cast<std::size_t>(b) * 2 * count, taps);
    if (!grad_source.empty()) {
#pragma omp parallel for schedule(static)
      for (int c = 0; c < g.c; ++c) {
        const std::size_t plane = static_cast<std::size_t>(b) * g.c + c;
        const double* go = grad_out.data() + plane * count;
        double* gs = grad_source.data() + plane * src_plane;
        for (int p = 0; p < count; ++p) {
          const SampleTap& t = taps[p];
          gs[t.y0 * sw + t.x0] += go[p] * t.weight_00();
          gs[t.y0 * sw + t.x1] += go[p] * t.weight_01();
          gs[t.y1 * sw + t.x0] += go[p] * t.weight_10();
          gs[t.y1 * sw + t.x1] += go[p] * t.weight_11();
        }
      }
    }
    if (!grad_coords.empty()) {
      double* gy = grad_coords.data() + static_cast<std::size_t>(b) * 2 * count;
      double* gx = gy + count;
#pragma omp parallel for schedule(static)
      for (int p = 0; p < count; ++p) {
        const SampleTap& t = taps[p];
        if (!t.live_y && !t.live_x) continue;
        double sy = 0.0;
        double sx = 0.0;
        for (int c = 0; c < g.c; ++c) {
          const std::size_t plane = static_cast<std::size_t>(b) * g.c + c;
          const double* src = source.data() + plane * src_plane;
          const double go = grad_out[plane * count + p];
          const double v00 = src[t.y0 * sw + t.x0];
          const double v01 = src[t.y0 * sw + t.x1];
          const double v10 = src[t.y1 * sw + t.x0];
          const double v11 = src[t.y1 * sw + t.x1];
          sy += go * ((1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
          sx += go * ((1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
        }
        if (t.live_y) gy[p] += sy;
        if (t.live_x) gx[p] += sx;
      }
    }
  }
}

namespace ref {

// Direct per-element evaluation, no shared taps.
void bilinear_forward(const SampleGeometry& g, std::span<const double> source,
                      std::span<const double> coords, std::span<double> out) {
  const int count = g.dst_h * g.dst_w;
  const std::size_t src_plane = static_cast<std::size_t>(g.src_h) * g.src_w;
  for (int b = 0; b < g.n; ++b) {
    for (int c = 0; c < g.c; ++c) {
      const double* src = source.data() + (static_cast<std::size_t>(b) * g.c + c) * src_plane;
      for (int p = 0; p < count; ++p) {
        const double y = coords[(static_cast<std::size_t>(b) * 2) * count + p];
        const double x = coords[(static_cast<std::size_t>(b) * 2 + 1) * count + p];
        out[(static_cast<std::size_t>(b) * g.c + c) * count + p] =
            tap_value(make_tap(y, x, g.src_h, g.src_w), src, g.src_w);
      }
    }
  }
}

void bilinear_backward(const SampleGeometry& g, std::span<const double> source,
                       std::span<const double> coords,
                       std::span<const double> grad_out,
                       std::span<double> grad_source,
                       std::span<double> grad_coords) {
  const int count = g.dst_h * g.dst_w;
  const int sw = g.src_w;
  const std::size_t src_plane = static_cast<std::size_t>(g.src_h) * g.src_w;
  for (int b = 0; b < g.n; ++b) {
    for (int c = 0; c < g.c; ++c) {
      const std::size_t plane = static_cast<std::size_t>(b) * g.c + c;
      const double* src = source.data() + plane * src_plane;
      for (int p = 0; p < count; ++p) {
        const std::size_t yi = static_cast<std::size_t>(b) * 2 * count + p;
        const SampleTap t = make_tap(coords[yi], coords[yi + count], g.src_h, g.src_w);
        const double go = grad_out[plane * count + p];
        if (!grad_source.empty()) {
          double* gs = grad_source.data() + plane * src_plane;
          gs[t.y0 * sw + t.x0] += go * t.weight_00();
          gs[t.y0 * sw + t.x1] += go * t.weight_01();
          gs[t.y1 * sw + t.x0] += go * t.weight_10();
          gs[t.y1 * sw + t.x1] += go * t.weight_11();
        }
        if (!grad_coords.empty()) {
          const double v00 = src[t.y0 * sw + t.x0];
          const double v01 = src[t.y0 * sw + t.x1];
          const double v10 = src[t.y1 * sw + t.x0];
          const double v11 = src[t.y1 * sw + t.x1];
          if (t.live_y) {
            grad_coords[yi] += go * ((1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
          }
          if (t.live_x) {
            grad_coords[yi + count] += go * ((1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
          }
        }
      }
    }
  }
}

}  // namespace ref
}  // namespace sfnet::kernels
