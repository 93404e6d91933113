#pragma once

#include <algorithm>
#include <cmath>

namespace sfnet {

// The four bilinear neighbours of a continuous (y, x) source position after
// clamping to [0, h-1] x [0, w-1]. `live_y`/`live_x` are false when the
// coordinate was clamped on that axis; the coordinate gradient is zero there.
struct SampleTap {
  int y0 = 0;
  int y1 = 0;
  int x0 = 0;
  int x1 = 0;
  double wy = 0.0;  // weight of the y1 row
  double wx = 0.0;  // weight of the x1 column
  bool live_y = true;
  bool live_x = true;

  double weight_00() const { return (1.0 - wy) * (1.0 - wx); }
  double weight_01() const { return (1.0 - wy) * wx; }
  double weight_10() const { return wy * (1.0 - wx); }
  double weight_11() const { return wy * wx; }
};

inline SampleTap make_tap(double y, double x, int h, int w) {
  SampleTap t;
  const double ymax = h - 1;
  const double xmax = w - 1;
  t.live_y = y >= 0.0 && y <= ymax;
  t.live_x = x >= 0.0 && x <= xmax;
  y = std::clamp(y, 0.0, ymax);
  x = std::clamp(x, 0.0, xmax);
  t.y0 = static_cast<int>(std::floor(y));
  t.x0 = static_cast<int>(std::floor(x));
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.wy = y - t.y0;
  t.wx = x - t.x0;
  return t;
}

// Interpolated value of one source plane (row-major, width w).
inline double tap_value(const SampleTap& t, const double* plane, int w) {
  const double v00 = plane[t.y0 * w + t.x0];
  const double v01 = plane[t.y0 * w + t.x1];
  const double v10 = plane[t.y1 * w + t.x0];
  const double v11 = plane[t.y1 * w + t.x1];
  return (1.0 - t.wy) * ((1.0 - t.wx) * v00 + t.wx * v01) +
         t.wy * ((1.0 - t.wx) * v10 + t.wx * v11);
}

}  // namespace sfnet
