#include "sfnet/viz.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sfnet/data.hpp"
#include "sfnet/warp.hpp"

namespace sfnet {

namespace {

void check_flow(const Tensor& flow, int batch, const char* who) {
  const Shape s = flow.shape();
  if (s.c != 2) throw ShapeError(std::string(who) + ": flow needs 2 channels, got " + s.str());
  if (batch < 0 || batch >= s.n) throw ShapeError(std::string(who) + ": batch index out of range");
}

std::uint8_t channel(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0.0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {channel(r + m), channel(g + m), channel(b + m)};
}

RasterImage flow_to_color(const Tensor& flow, std::optional<double> max_mag, int batch) {
  check_flow(flow, batch, "flow_to_color");
  if (max_mag && !(*max_mag > 0.0)) throw std::invalid_argument("flow_to_color: max_mag must be > 0");
  const Shape s = flow.shape();
  const std::size_t plane = s.plane();
  const double* dy = flow.data().data() + static_cast<std::size_t>(batch) * 2 * plane;
  const double* dx = dy + plane;
  std::vector<double> mag(plane);
  for (std::size_t p = 0; p < plane; ++p) mag[p] = std::hypot(dx[p], dy[p]);

  double limit = 0.0;
  if (max_mag) {
    limit = *max_mag;
  } else {
    std::vector<double> sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(plane))) - 1;
    limit = sorted[std::min(rank, plane - 1)];
    if (limit <= 0.0) limit = sorted.back();
  }

  RasterImage out(s.w, s.h, 255);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * s.w + x;
      if (mag[p] == 0.0 || limit <= 0.0) continue;
      double hue = std::atan2(-dy[p], dx[p]) * 180.0 / std::numbers::pi;
      if (hue < 0.0) hue += 360.0;
      const Rgb c = hsv_to_rgb(hue, std::min(1.0, mag[p] / limit), 1.0);
      out.set(x, y, c[0], c[1], c[2]);
    }
  }
  return out;
}

void draw_line(RasterImage& image, int x0, int y0, int x1, int y1, Rgb color) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (x0 >= 0 && x0 < image.width && y0 >= 0 && y0 < image.height) {
      image.set(x0, y0, color[0], color[1], color[2]);
    }
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

RasterImage flow_arrows(const Tensor& flow, int stride, double scale, int batch) {
  check_flow(flow, batch, "flow_arrows");
  if (stride < 1) throw std::invalid_argument("flow_arrows: stride must be >= 1");
  const Shape s = flow.shape();
  const Rgb ink{0, 0, 0};
  RasterImage out(s.w, s.h, 255);
  for (int y = 0; y < s.h; y += stride) {
    for (int x = 0; x < s.w; x += stride) {
      const double vx = scale * flow.at(batch, 1, y, x);
      const double vy = scale * flow.at(batch, 0, y, x);
      const int ex = x + static_cast<int>(std::lround(vx));
      const int ey = y + static_cast<int>(std::lround(vy));
      if (ex == x && ey == y) {
        out.set(x, y, ink[0], ink[1], ink[2]);
        continue;
      }
      draw_line(out, x, y, ex, ey, ink);
      const double len = std::hypot(static_cast<double>(ex - x), static_cast<double>(ey - y));
      const double head = std::max(2.0, 0.3 * len);
      const double back = std::atan2(static_cast<double>(y - ey), static_cast<double>(x - ex));
      for (double side : {-1.0, 1.0}) {
        const double a = back + side * std::numbers::pi / 6.0;
        draw_line(out, ex, ey, ex + static_cast<int>(std::lround(head * std::cos(a))),
                  ey + static_cast<int>(std::lround(head * std::sin(a))), ink);
      }
    }
  }
  return out;
}

Rgb hot_color(double t) {
  static constexpr std::array<std::array<double, 3>, 5> kAnchors{{{0.0, 0.0, 0.0},
                                                                  {1.0, 0.0, 0.0},
                                                                  {1.0, 0.5, 0.0},
                                                                  {1.0, 1.0, 0.0},
                                                                  {1.0, 1.0, 1.0}}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  Rgb out{};
  for (int c = 0; c < 3; ++c) out[c] = channel(kAnchors[i][c] + f * (kAnchors[i + 1][c] - kAnchors[i][c]));
  return out;
}

RasterImage feature_heatmap(const Tensor& features, int batch) {
  const Shape s = features.shape();
  if (batch < 0 || batch >= s.n) throw ShapeError("feature_heatmap: batch index out of range");
  const std::size_t plane = s.plane();
  std::vector<double> mean(plane, 0.0);
  const double* base = features.data().data() + static_cast<std::size_t>(batch) * s.c * plane;
  for (int c = 0; c < s.c; ++c) {
    for (std::size_t p = 0; p < plane; ++p) mean[p] += base[c * plane + p];
  }
  for (double& v : mean) v /= s.c;
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  RasterImage out(s.w, s.h, 128);
  if (*hi - *lo <= 0.0) return out;
  for (std::size_t p = 0; p < plane; ++p) {
    const Rgb c = hot_color((mean[p] - *lo) / (*hi - *lo));
    std::copy(c.begin(), c.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(p * 3));
  }
  return out;
}

RasterImage error_map(const LabelMap& pred, const LabelMap& gt, const std::vector<Rgb>& palette,
                      int batch) {
  if (pred.n != gt.n || pred.h != gt.h || pred.w != gt.w) {
    throw ShapeError("error_map: prediction and ground truth differ in shape");
  }
  if (batch < 0 || batch >= gt.n) throw ShapeError("error_map: batch index out of range");
  RasterImage out(gt.w, gt.h, 0);
  for (int y = 0; y < gt.h; ++y) {
    for (int x = 0; x < gt.w; ++x) {
      const int g = gt.at(batch, y, x);
      if (g == kIgnoreLabel || g == pred.at(batch, y, x)) continue;
      if (g >= static_cast<int>(palette.size())) {
        throw ShapeError("error_map: no palette colour for class " + std::to_string(g));
      }
      out.set(x, y, palette[g][0], palette[g][1], palette[g][2]);
    }
  }
  return out;
}

RasterImage label_image(const LabelMap& labels, const std::vector<Rgb>& palette, int batch) {
  RasterImage out(labels.w, labels.h, 0);
  for (int y = 0; y < labels.h; ++y) {
    for (int x = 0; x < labels.w; ++x) {
      const int v = labels.at(batch, y, x);
      if (v == kIgnoreLabel) {
        out.set(x, y, 255, 255, 255);
        continue;
      }
      if (v >= static_cast<int>(palette.size())) {
        throw ShapeError("label_image: no palette colour for class " + std::to_string(v));
      }
      out.set(x, y, palette[v][0], palette[v][1], palette[v][2]);
    }
  }
  return out;
}

std::vector<Rgb> default_palette(int num_classes) {
  std::vector<Rgb> out;
  for (int c = 0; c < num_classes; ++c) {
    const auto col = class_color(c);
    out.push_back({channel(col[0]), channel(col[1]), channel(col[2])});
  }
  return out;
}

Tensor upsample_flow_for_view(const Tensor& flow, int height, int width) {
  check_flow(flow, 0, "upsample_flow_for_view");
  NoGradGuard no_grad;
  return resize_bilinear(flow.detach_copy(), height, width);
}

RasterImage tensor_to_image(const Tensor& image, int batch) {
  const Shape s = image.shape();
  if (s.c != 3) throw ShapeError("tensor_to_image: expected 3 channels, got " + s.str());
  RasterImage out(s.w, s.h);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      out.set(x, y, channel(image.at(batch, 0, y, x)), channel(image.at(batch, 1, y, x)),
              channel(image.at(batch, 2, y, x)));
    }
  }
  return out;
}

}  // namespace sfnet
