#include "sfnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sfnet/flop_trace.hpp"
#include "sfnet/kernels.hpp"
#include "sfnet/kink_monitor.hpp"

namespace sfnet {

namespace {

[[noreturn]] void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

std::span<double> grad_of(TensorImpl* impl) {
  if (!impl->requires_grad) return {};
  return impl->grad_buffer();
}

}  // namespace

LabelMap downsample_labels(const LabelMap& labels, int factor) {
  if (factor < 1) throw ShapeError("downsample_labels: factor must be >= 1");
  if (labels.h % factor != 0 || labels.w % factor != 0) {
    throw ShapeError("downsample_labels: " + std::to_string(labels.h) + "x" +
                     std::to_string(labels.w) + " not divisible by " +
                     std::to_string(factor));
  }
  LabelMap out(labels.n, labels.h / factor, labels.w / factor);
  for (int b = 0; b < out.n; ++b) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) out.at(b, y, x) = labels.at(b, y * factor, x * factor);
    }
  }
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w) shape_fail("conv2d", "kernel must be square, got " + ws.str());
  if (ws.h % 2 == 0) shape_fail("conv2d", "kernel size must be odd, got " + std::to_string(ws.h));
  if (is.c != ws.c) {
    shape_fail("conv2d", "input has " + std::to_string(is.c) +
                             " channels but weight expects " + std::to_string(ws.c));
  }
  if (stride < 1) shape_fail("conv2d", "stride must be positive");
  if (padding < 0) shape_fail("conv2d", "padding must be non-negative");
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(ws.n)) {
    shape_fail("conv2d", "bias has " + std::to_string(bias.numel()) +
                             " elements, expected " + std::to_string(ws.n));
  }
  kernels::ConvGeometry g{is.n, is.c, is.h, is.w, ws.n, ws.h, stride, padding};
  if (is.h + 2 * padding < ws.h || is.w + 2 * padding < ws.h) {
    shape_fail("conv2d", "kernel larger than padded input " + is.str());
  }
  Shape os{is.n, ws.n, g.out_h(), g.out_w()};
  std::vector<double> out(os.numel());
  flop_trace_add(2.0 * static_cast<double>(g.patch()) * os.numel());
  kernels::conv2d_forward(g, input.data(), weight.data(),
                          bias.defined() ? bias.data() : std::span<const double>{}, out);
  TensorImpl* xi = input.impl();
  TensorImpl* wi = weight.impl();
  TensorImpl* bi = bias.defined() ? bias.impl() : nullptr;
  return make_result("conv2d", os, std::move(out), {input, weight, bias},
                     [g, xi, wi, bi](std::span<const double> gout) {
                       if (xi->requires_grad) {
                         kernels::conv2d_backward_input(g, gout, wi->data, xi->grad_buffer());
                       }
                       if (wi->requires_grad || (bi && bi->requires_grad)) {
                         std::vector<double> gw_tmp;
                         std::span<double> gw;
                         if (wi->requires_grad) {
                           gw = wi->grad_buffer();
                         } else {
                           gw_tmp.assign(wi->data.size(), 0.0);
                           gw = gw_tmp;
                         }
                         std::span<double> gb;
                         if (bi && bi->requires_grad) gb = bi->grad_buffer();
                         kernels::conv2d_backward_params(g, xi->data, gout, gw, gb);
                       }
                     });
}

Tensor relu(const Tensor& input) {
  std::span<const double> x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (kink_monitor_active()) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      word = (word << 1) | (x[i] > 0.0 ? 1U : 0U);
      if (i % 64 == 63) {
        kink_record(word);
        word = 0;
      }
    }
    kink_record(word);
  }
  TensorImpl* xi = input.impl();
  return make_result("relu", input.shape(), std::move(out), {input},
                     [xi](std::span<const double> gout) {
                       std::span<double> gx = grad_of(xi);
                       for (std::size_t i = 0; i < gx.size(); ++i) {
                         if (xi->data[i] > 0.0) gx[i] += gout[i];
                       }
                     });
}

Tensor group_norm(const Tensor& input, int groups, const Tensor& scale,
                  const Tensor& shift, double eps) {
  const Shape s = input.shape();
  if (groups < 1 || s.c % groups != 0) {
    shape_fail("group_norm", std::to_string(s.c) + " channels not divisible into " +
                                 std::to_string(groups) + " groups");
  }
  if (eps <= 0.0) shape_fail("group_norm", "eps must be positive");
  if (scale.numel() != static_cast<std::size_t>(s.c) ||
      shift.numel() != static_cast<std::size_t>(s.c)) {
    shape_fail("group_norm", "scale/shift must have " + std::to_string(s.c) + " elements");
  }
  const int per_group = s.c / groups;
  const std::size_t plane = s.plane();
  const std::size_t group_size = plane * per_group;
  const int blocks = s.n * groups;
  std::vector<double> xhat(s.numel());
  std::vector<double> inv_std(blocks);
  std::vector<double> out(s.numel());
  std::span<const double> x = input.data();
  std::span<const double> gamma = scale.data();
  std::span<const double> beta = shift.data();
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < blocks; ++blk) {
    const int b = blk / groups;
    const int grp = blk % groups;
    const std::size_t base = (static_cast<std::size_t>(b) * s.c + grp * per_group) * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) mean += x[base + i];
    mean /= static_cast<double>(group_size);
    double var = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      const double d = x[base + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(group_size);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[blk] = inv;
    for (int cc = 0; cc < per_group; ++cc) {
      const int c = grp * per_group + cc;
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = base + cc * plane + p;
        xhat[i] = (x[i] - mean) * inv;
        out[i] = xhat[i] * gamma[c] + beta[c];
      }
    }
  }
  TensorImpl* xi = input.impl();
  TensorImpl* gi = scale.impl();
  TensorImpl* bi = shift.impl();
  return make_result(
      "group_norm", s, std::move(out), {input, scale, shift},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const double> gout) {
        std::span<double> gscale = grad_of(gi);
        std::span<double> gshift = grad_of(bi);
        if (!gscale.empty() || !gshift.empty()) {
          for (int b = 0; b < s.n; ++b) {
            for (int c = 0; c < s.c; ++c) {
              const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
              double sg = 0.0;
              double sb = 0.0;
              for (std::size_t p = 0; p < plane; ++p) {
                sg += gout[base + p] * xhat[base + p];
                sb += gout[base + p];
              }
              if (!gscale.empty()) gscale[c] += sg;
              if (!gshift.empty()) gshift[c] += sb;
            }
          }
        }
        std::span<double> gx = grad_of(xi);
        if (gx.empty()) return;
        const std::span<const double> gamma_now = gi->data;
#pragma omp parallel for schedule(static)
        for (int blk = 0; blk < blocks; ++blk) {
          const int b = blk / groups;
          const int grp = blk % groups;
          const std::size_t base =
              (static_cast<std::size_t>(b) * s.c + grp * per_group) * plane;
          double sum_d = 0.0;
          double sum_dx = 0.0;
          for (int cc = 0; cc < per_group; ++cc) {
            const double g = gamma_now[grp * per_group + cc];
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = base + cc * plane + p;
              const double d = gout[i] * g;
              sum_d += d;
              sum_dx += d * xhat[i];
            }
          }
          const double m = static_cast<double>(group_size);
          const double inv = inv_std[blk];
          for (int cc = 0; cc < per_group; ++cc) {
            const double g = gamma_now[grp * per_group + cc];
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t i = base + cc * plane + p;
              const double d = gout[i] * g;
              gx[i] += inv / m * (m * d - sum_d - xhat[i] * sum_dx);
            }
          }
        }
      });
}

Tensor avg_pool_adaptive(const Tensor& input, int out_h, int out_w) {
  const Shape s = input.shape();
  if (out_h < 1 || out_w < 1) shape_fail("avg_pool_adaptive", "output dims must be positive");
  if (out_h > s.h || out_w > s.w) {
    shape_fail("avg_pool_adaptive", "output " + std::to_string(out_h) + "x" +
                                        std::to_string(out_w) + " exceeds input " + s.str());
  }
  auto bin = [](int i, int in, int out) {
    const int lo = (i * in) / out;
    const int hi = ((i + 1) * in + out - 1) / out;
    return std::pair{lo, hi};
  };
  Shape os{s.n, s.c, out_h, out_w};
  std::vector<double> out(os.numel());
  std::span<const double> x = input.data();
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* src = x.data() + nc * s.plane();
    for (int i = 0; i < out_h; ++i) {
      const auto [y0, y1] = bin(i, s.h, out_h);
      for (int j = 0; j < out_w; ++j) {
        const auto [x0, x1] = bin(j, s.w, out_w);
        double acc = 0.0;
        for (int y = y0; y < y1; ++y) {
          for (int xx = x0; xx < x1; ++xx) acc += src[y * s.w + xx];
        }
        out[(static_cast<std::size_t>(nc) * out_h + i) * out_w + j] =
            acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  TensorImpl* xi = input.impl();
  return make_result("avg_pool_adaptive", os, std::move(out), {input},
                     [=](std::span<const double> gout) {
                       std::span<double> gx = grad_of(xi);
                       for (int nc = 0; nc < s.n * s.c; ++nc) {
                         double* dst = gx.data() + nc * s.plane();
                         for (int i = 0; i < out_h; ++i) {
                           const auto [y0, y1] = bin(i, s.h, out_h);
                           for (int j = 0; j < out_w; ++j) {
                             const auto [x0, x1] = bin(j, s.w, out_w);
                             const double g =
                                 gout[(static_cast<std::size_t>(nc) * out_h + i) * out_w + j] /
                                 static_cast<double>((y1 - y0) * (x1 - x0));
                             for (int y = y0; y < y1; ++y) {
                               for (int xx = x0; xx < x1; ++xx) dst[y * s.w + xx] += g;
                             }
                           }
                         }
                       }
                     });
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  if (factor < 1) shape_fail("upsample_nearest", "factor must be >= 1");
  const Shape s = input.shape();
  Shape os{s.n, s.c, s.h * factor, s.w * factor};
  std::vector<double> out(os.numel());
  std::span<const double> x = input.data();
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    for (int y = 0; y < os.h; ++y) {
      for (int xx = 0; xx < os.w; ++xx) {
        out[(static_cast<std::size_t>(nc) * os.h + y) * os.w + xx] =
            x[(static_cast<std::size_t>(nc) * s.h + y / factor) * s.w + xx / factor];
      }
    }
  }
  TensorImpl* xi = input.impl();
  return make_result("upsample_nearest", os, std::move(out), {input},
                     [=](std::span<const double> gout) {
                       std::span<double> gx = grad_of(xi);
                       for (int nc = 0; nc < s.n * s.c; ++nc) {
                         for (int y = 0; y < os.h; ++y) {
                           for (int xx = 0; xx < os.w; ++xx) {
                             gx[(static_cast<std::size_t>(nc) * s.h + y / factor) * s.w +
                                xx / factor] +=
                                 gout[(static_cast<std::size_t>(nc) * os.h + y) * os.w + xx];
                           }
                         }
                       }
                     });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_fail("concat_channels", "no inputs");
  Shape os = parts.front().shape();
  os.c = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.n != os.n || s.h != os.h || s.w != os.w) {
      shape_fail("concat_channels", "mismatched non-channel dims " + s.str() + " vs " +
                                        parts.front().shape().str());
    }
    os.c += s.c;
  }
  std::vector<double> out(os.numel());
  const std::size_t plane = os.plane();
  std::vector<std::pair<TensorImpl*, int>> offsets;
  int c0 = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    for (int b = 0; b < s.n; ++b) {
      std::copy_n(t.data().data() + static_cast<std::size_t>(b) * s.c * plane, s.c * plane,
                  out.data() + (static_cast<std::size_t>(b) * os.c + c0) * plane);
    }
    offsets.emplace_back(t.impl(), c0);
    c0 += s.c;
  }
  return make_result("concat_channels", os, std::move(out), parts,
                     [os, plane, offsets](std::span<const double> gout) {
                       for (const auto& [impl, off] : offsets) {
                         std::span<double> g = grad_of(impl);
                         if (g.empty()) continue;
                         const int c = impl->shape.c;
                         for (int b = 0; b < os.n; ++b) {
                           const double* src =
                               gout.data() + (static_cast<std::size_t>(b) * os.c + off) * plane;
                           double* dst = g.data() + static_cast<std::size_t>(b) * c * plane;
                           for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  return concat_channels(std::vector<Tensor>{a, b});
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail("add", "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  TensorImpl* ai = a.impl();
  TensorImpl* bi = b.impl();
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [ai, bi](std::span<const double> gout) {
                       for (TensorImpl* impl : {ai, bi}) {
                         std::span<double> g = grad_of(impl);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
                       }
                     });
}

Tensor scalar_mul(const Tensor& input, double factor) {
  std::vector<double> out(input.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data()[i] * factor;
  TensorImpl* xi = input.impl();
  return make_result("scalar_mul", input.shape(), std::move(out), {input},
                     [xi, factor](std::span<const double> gout) {
                       std::span<double> g = grad_of(xi);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * factor;
                     });
}

Tensor sum(const Tensor& input) {
  double s = 0.0;
  for (double v : input.data()) s += v;
  TensorImpl* xi = input.impl();
  return make_result("sum", Shape{1, 1, 1, 1}, {s}, {input},
                     [xi](std::span<const double> gout) {
                       std::span<double> g = grad_of(xi);
                       for (double& v : g) v += gout[0];
                     });
}

Tensor dot(const Tensor& input, std::span<const double> weights) {
  if (weights.size() != input.numel()) {
    shape_fail("dot", "weight count " + std::to_string(weights.size()) +
                          " does not match " + input.shape().str());
  }
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += input.data()[i] * weights[i];
  TensorImpl* xi = input.impl();
  std::vector<double> w(weights.begin(), weights.end());
  return make_result("dot", Shape{1, 1, 1, 1}, {s}, {input},
                     [xi, w = std::move(w)](std::span<const double> gout) {
                       std::span<double> g = grad_of(xi);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[0] * w[i];
                     });
}

namespace {

// Softmax over channels into `prob` (same layout as logits).
void channel_softmax(const Shape& s, std::span<const double> logits, std::vector<double>& prob) {
  const std::size_t plane = s.plane();
  prob.resize(s.numel());
  for (int b = 0; b < s.n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = logits[base + p];
      for (int c = 1; c < s.c; ++c) mx = std::max(mx, logits[base + c * plane + p]);
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) {
        const double e = std::exp(logits[base + c * plane + p] - mx);
        prob[base + c * plane + p] = e;
        z += e;
      }
      for (int c = 0; c < s.c; ++c) prob[base + c * plane + p] /= z;
    }
  }
}

void check_labels(const Shape& s, const LabelMap& labels, int ignore_label, const char* op) {
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    shape_fail(op, "labels " + std::to_string(labels.n) + "x" + std::to_string(labels.h) + "x" +
                       std::to_string(labels.w) + " do not match logits " + s.str());
  }
  for (std::uint8_t v : labels.values) {
    if (v != ignore_label && v >= s.c) {
      shape_fail(op, "label " + std::to_string(v) + " out of range for " +
                         std::to_string(s.c) + " classes");
    }
  }
}

}  // namespace

Tensor softmax_channels(const Tensor& logits) {
  const Shape s = logits.shape();
  std::vector<double> prob;
  channel_softmax(s, logits.data(), prob);
  std::vector<double> out = prob;
  TensorImpl* xi = logits.impl();
  return make_result("softmax_channels", s, std::move(out), {logits},
                     [s, xi, prob = std::move(prob)](std::span<const double> gout) {
                       std::span<double> g = grad_of(xi);
                       const std::size_t plane = s.plane();
                       for (int b = 0; b < s.n; ++b) {
                         const std::size_t base = static_cast<std::size_t>(b) * s.c * plane;
                         for (std::size_t p = 0; p < plane; ++p) {
                           double dotp = 0.0;
                           for (int c = 0; c < s.c; ++c) {
                             dotp += gout[base + c * plane + p] * prob[base + c * plane + p];
                           }
                           for (int c = 0; c < s.c; ++c) {
                             const std::size_t i = base + c * plane + p;
                             g[i] += prob[i] * (gout[i] - dotp);
                           }
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, const LabelMap& labels, int ignore_label) {
  const Shape s = logits.shape();
  check_labels(s, labels, ignore_label, "cross_entropy");
  std::span<const double> x = logits.data();
  const std::size_t plane = s.plane();
  std::vector<double> prob;
  channel_softmax(s, x, prob);
  Shape os{s.n, 1, s.h, s.w};
  std::vector<double> out(os.numel(), 0.0);
  for (int b = 0; b < s.n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      const int y = labels.values[b * plane + p];
      if (y == ignore_label) continue;
      double mx = x[base + p];
      for (int c = 1; c < s.c; ++c) mx = std::max(mx, x[base + c * plane + p]);
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) z += std::exp(x[base + c * plane + p] - mx);
      out[b * plane + p] = mx + std::log(z) - x[base + y * plane + p];
    }
  }
  TensorImpl* xi = logits.impl();
  std::vector<std::uint8_t> y = labels.values;
  return make_result("cross_entropy", os, std::move(out), {logits},
                     [s, xi, ignore_label, prob = std::move(prob),
                      y = std::move(y)](std::span<const double> gout) {
                       std::span<double> g = grad_of(xi);
                       const std::size_t plane = s.plane();
                       for (int b = 0; b < s.n; ++b) {
                         const std::size_t base = static_cast<std::size_t>(b) * s.c * plane;
                         for (std::size_t p = 0; p < plane; ++p) {
                           const int label = y[b * plane + p];
                           const double go = gout[b * plane + p];
                           if (label == ignore_label || go == 0.0) continue;
                           for (int c = 0; c < s.c; ++c) {
                             const std::size_t i = base + c * plane + p;
                             g[i] += go * (prob[i] - (c == label ? 1.0 : 0.0));
                           }
                         }
                       }
                     });
}

Tensor masked_mean(const Tensor& per_pixel, const LabelMap& labels, int ignore_label) {
  const Shape s = per_pixel.shape();
  if (s.c != 1 || labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    shape_fail("masked_mean", "per-pixel map " + s.str() + " does not match labels");
  }
  std::size_t valid = 0;
  for (std::uint8_t v : labels.values) valid += (v != ignore_label);
  if (valid == 0) return scalar_mul(sum(per_pixel), 0.0);
  std::vector<double> mask(labels.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = labels.values[i] == ignore_label ? 0.0 : 1.0 / static_cast<double>(valid);
  }
  return dot(per_pixel, mask);
}

}  // namespace sfnet
