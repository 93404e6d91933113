#include <algorithm>
#include <cstring>
#include <vector>

#include "sfnet/kernels.hpp"

namespace sfnet::kernels {

namespace {

constexpr int kMr = 4;
constexpr int kNr = 32;
constexpr int kKc = 256;
constexpr int kNc = 1024;

// Convs with at most this many output channels skip im2col + GEMM and run
// as direct loop nests (the packing cost would dominate otherwise).
constexpr int kDirectMaxOutC = 8;

// acc[MR][NR] += A_panel * B_panel over kc, then C += acc on the valid
// mr x nr corner.
inline void micro_kernel(int kc, const double* __restrict a,
                         const double* __restrict b, double* __restrict c,
                         std::ptrdiff_t ldc, int mr, int nr) {
  double acc[kMr][kNr] = {};
  for (int p = 0; p < kc; ++p) {
    const double* bp = b + static_cast<std::ptrdiff_t>(p) * kNr;
    const double* ap = a + static_cast<std::ptrdiff_t>(p) * kMr;
    for (int i = 0; i < kMr; ++i) {
      const double ai = ap[i];
#pragma omp simd
      for (int j = 0; j < kNr; ++j) acc[i][j] += ai * bp[j];
    }
  }
  if (mr == kMr && nr == kNr) {
    for (int i = 0; i < kMr; ++i) {
      double* ci = c + i * ldc;
#pragma omp simd
      for (int j = 0; j < kNr; ++j) ci[j] += acc[i][j];
    }
  } else {
    for (int i = 0; i < mr; ++i) {
      for (int j = 0; j < nr; ++j) c[i * ldc + j] += acc[i][j];
    }
  }
}

enum Slot { kPackA, kPackB, kColumns, kStage };

std::vector<double>& scratch(Slot slot) {
  thread_local std::vector<double> buffers[4];
  return buffers[slot];
}

bool use_direct(const ConvGeometry& g) { return g.out_c <= kDirectMaxOutC; }

// Output columns ow whose input column ow*stride - pad + kw is in range.
inline std::pair<int, int> valid_columns(const ConvGeometry& g, int kw) {
  const int ow_n = g.out_w();
  int lo = 0;
  while (lo < ow_n && lo * g.stride - g.pad + kw < 0) ++lo;
  int hi = ow_n;
  while (hi > lo && (hi - 1) * g.stride - g.pad + kw >= g.in_w) --hi;
  return {lo, hi};
}

// Columns of the batched patch matrix are (image, output position) pairs in
// NCHW order: q = b * positions + p. Each chunk covers [q0, q0 + count).
int column_chunk(std::size_t patch, std::size_t columns) {
  const std::size_t budget = std::size_t{1} << 19;  // doubles
  std::size_t chunk = std::max<std::size_t>(kNr, budget / std::max<std::size_t>(patch, 1));
  chunk = chunk / kNr * kNr;
  return static_cast<int>(std::min(chunk, columns));
}

// Visits the output-row segments of columns [q0, q0 + count): each call
// covers image b, output row oh, columns [ow0, ow1), starting at column
// offset `at` within the chunk.
template <class F>
void for_each_segment(const ConvGeometry& g, int q0, int count, F&& f) {
  const int ow_n = g.out_w();
  const int positions = g.out_h() * ow_n;
  int q = q0;
  while (q < q0 + count) {
    const int b = q / positions;
    const int p = q % positions;
    const int oh = p / ow_n;
    const int ow0 = p % ow_n;
    const int ow1 = std::min(ow_n, ow0 + (q0 + count - q));
    f(b, oh, ow0, ow1, q - q0);
    q += ow1 - ow0;
  }
}

void im2col(const ConvGeometry& g, const double* input, int q0, int count, double* col) {
  const int rows = static_cast<int>(g.patch());
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int kw = r % g.k;
    const int kh = (r / g.k) % g.k;
    const int ci = r / (g.k * g.k);
    const auto [lo, hi] = valid_columns(g, kw);
    double* dst = col + static_cast<std::size_t>(r) * count;
    for_each_segment(g, q0, count, [&](int b, int oh, int ow0, int ow1, int at) {
      double* d = dst + at - ow0;
      const int ih = oh * g.stride - g.pad + kh;
      if (ih < 0 || ih >= g.in_h) {
        std::fill(d + ow0, d + ow1, 0.0);
        return;
      }
      const double* row = input + (static_cast<std::size_t>(b) * g.in_c + ci) * in_plane +
                          static_cast<std::size_t>(ih) * g.in_w - g.pad + kw;
      const int a = std::max(ow0, lo);
      const int e = std::min(ow1, hi);
      for (int ow = ow0; ow < std::min(ow1, a); ++ow) d[ow] = 0.0;
      if (g.stride == 1) {
        if (e > a) std::memcpy(d + a, row + a, sizeof(double) * (e - a));
      } else {
        for (int ow = a; ow < e; ++ow) d[ow] = row[ow * g.stride];
      }
      for (int ow = std::max(e, ow0); ow < ow1; ++ow) d[ow] = 0.0;
    });
  }
}

// Scatter-add of column gradients back onto the input. Parallel over input
// channels; each channel plane is written by its own k*k rows only.
void col2im_add(const ConvGeometry& g, const double* col, int q0, int count, double* image) {
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < g.in_c; ++ci) {
    for (int kh = 0; kh < g.k; ++kh) {
      for (int kw = 0; kw < g.k; ++kw) {
        const int r = (ci * g.k + kh) * g.k + kw;
        const auto [lo, hi] = valid_columns(g, kw);
        const double* src = col + static_cast<std::size_t>(r) * count;
        for_each_segment(g, q0, count, [&](int b, int oh, int ow0, int ow1, int at) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.in_h) return;
          const double* s = src + at - ow0;
          double* row = image + (static_cast<std::size_t>(b) * g.in_c + ci) * in_plane +
                        static_cast<std::size_t>(ih) * g.in_w - g.pad + kw;
          const int a = std::max(ow0, lo);
          const int e = std::min(ow1, hi);
          if (g.stride == 1) {
#pragma omp simd
            for (int ow = a; ow < e; ++ow) row[ow] += s[ow];
          } else {
            for (int ow = a; ow < e; ++ow) row[ow * g.stride] += s[ow];
          }
        });
      }
    }
  }
}

// stage[co][q - q0] <-> NCHW tensor with channel count `channels`.
void gather_columns(const double* nchw, int channels, int positions, int q0, int count,
                    double* stage) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double* dst = stage + static_cast<std::size_t>(c) * count;
    int q = q0;
    while (q < q0 + count) {
      const int b = q / positions;
      const int p = q % positions;
      const int run = std::min(positions - p, q0 + count - q);
      std::memcpy(dst + (q - q0),
                  nchw + (static_cast<std::size_t>(b) * channels + c) * positions + p,
                  sizeof(double) * run);
      q += run;
    }
  }
}

void scatter_columns(const double* stage, int channels, int positions, int q0, int count,
                     double* nchw) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    const double* src = stage + static_cast<std::size_t>(c) * count;
    int q = q0;
    while (q < q0 + count) {
      const int b = q / positions;
      const int p = q % positions;
      const int run = std::min(positions - p, q0 + count - q);
      double* dst = nchw + (static_cast<std::size_t>(b) * channels + c) * positions + p;
      for (int i = 0; i < run; ++i) dst[i] += src[q - q0 + i];
      q += run;
    }
  }
}

// ---- direct loop nests for narrow outputs -------------------------------

// Copies one input plane into a zero-bordered buffer of
// (in_h + 2 pad) x (in_w + 2 pad).
void pad_plane(const ConvGeometry& g, const double* src, double* dst) {
  const int pw = g.in_w + 2 * g.pad;
  const int ph = g.in_h + 2 * g.pad;
  std::fill(dst, dst + static_cast<std::size_t>(ph) * pw, 0.0);
  for (int i = 0; i < g.in_h; ++i) {
    std::memcpy(dst + static_cast<std::size_t>(i + g.pad) * pw + g.pad, src + i * g.in_w,
                sizeof(double) * g.in_w);
  }
}

std::size_t padded_size(const ConvGeometry& g) {
  return static_cast<std::size_t>(g.in_h + 2 * g.pad) * (g.in_w + 2 * g.pad);
}

// Stride-1 forward: every input plane is padded once, then each output row
// is swept in blocks of kDirectBlock columns with all OC output channels
// accumulated in a register-sized tile across the in_c * k * k taps.
constexpr int kDirectBlock = 32;

template <int OC>
void direct_forward_rows(const ConvGeometry& g, const double* padded, const double* weight,
                         double* out) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  const int pw = g.in_w + 2 * g.pad;
  const std::size_t pplane = padded_size(g);
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
  const int kk = g.k * g.k;
#pragma omp parallel for schedule(static)
  for (int oh = 0; oh < oh_n; ++oh) {
    for (int x0 = 0; x0 < ow_n; x0 += kDirectBlock) {
      const int nx = std::min(kDirectBlock, ow_n - x0);
      double acc[OC][kDirectBlock] = {};
      for (int ci = 0; ci < g.in_c; ++ci) {
        const double* plane = padded + ci * pplane + static_cast<std::size_t>(oh) * pw + x0;
        const double* wc = weight + static_cast<std::size_t>(ci) * kk;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            const double* r = plane + static_cast<std::size_t>(kh) * pw + kw;
            for (int co = 0; co < OC; ++co) {
              const double wv = wc[static_cast<std::size_t>(co) * g.in_c * kk + kh * g.k + kw];
#pragma omp simd
              for (int x = 0; x < kDirectBlock; ++x) acc[co][x] += wv * r[x];
            }
          }
        }
      }
      for (int co = 0; co < OC; ++co) {
        double* dst = out + co * out_plane + static_cast<std::size_t>(oh) * ow_n + x0;
        for (int x = 0; x < nx; ++x) dst[x] += acc[co][x];
      }
    }
  }
}

void direct_forward_unit(const ConvGeometry& g, const double* input, const double* weight,
                         double* out) {
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const std::size_t pplane = padded_size(g);
  const std::size_t out_plane = static_cast<std::size_t>(g.out_h()) * g.out_w();
  thread_local std::vector<double> padded;
  // Slack past the last plane covers the overhanging reads of a partial block.
  padded.resize(pplane * g.in_c + kDirectBlock + static_cast<std::size_t>(g.k));
  for (int b = 0; b < g.n; ++b) {
    const double* src = input + static_cast<std::size_t>(b) * g.in_c * in_plane;
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < g.in_c; ++ci) pad_plane(g, src + ci * in_plane, padded.data() + ci * pplane);
    double* dst = out + static_cast<std::size_t>(b) * g.out_c * out_plane;
    switch (g.out_c) {
      case 1: direct_forward_rows<1>(g, padded.data(), weight, dst); break;
      case 2: direct_forward_rows<2>(g, padded.data(), weight, dst); break;
      case 3: direct_forward_rows<3>(g, padded.data(), weight, dst); break;
      case 4: direct_forward_rows<4>(g, padded.data(), weight, dst); break;
      case 5: direct_forward_rows<5>(g, padded.data(), weight, dst); break;
      case 6: direct_forward_rows<6>(g, padded.data(), weight, dst); break;
      case 7: direct_forward_rows<7>(g, padded.data(), weight, dst); break;
      default: direct_forward_rows<kDirectMaxOutC>(g, padded.data(), weight, dst); break;
    }
  }
}

void pitch_plane(const double* src, int h, int w, int pitch, double* dst) {
  std::fill(dst, dst + static_cast<std::size_t>(h) * pitch, 0.0);
  for (int i = 0; i < h; ++i) std::memcpy(dst + i * pitch, src + i * w, sizeof(double) * w);
}

void direct_backward_input_unit(const ConvGeometry& g, const double* grad_out,
                                const double* weight, double* grad_input) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  const int pw = g.in_w + 2 * g.pad;
  const int span = (oh_n - 1) * pw + ow_n;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
  std::vector<double> pitched(static_cast<std::size_t>(g.n) * g.out_c * oh_n * pw);
  for (std::size_t plane = 0; plane < static_cast<std::size_t>(g.n) * g.out_c; ++plane) {
    pitch_plane(grad_out + plane * out_plane, oh_n, ow_n, pw,
                pitched.data() + plane * oh_n * pw);
  }
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < g.n; ++b) {
    for (int ci = 0; ci < g.in_c; ++ci) {
      thread_local std::vector<double> padded;
      padded.assign(padded_size(g), 0.0);
      for (int co = 0; co < g.out_c; ++co) {
        const double* go =
            pitched.data() + (static_cast<std::size_t>(b) * g.out_c + co) * oh_n * pw;
        const double* wp = weight + static_cast<std::size_t>(co * g.in_c + ci) * g.k * g.k;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            const double wv = wp[kh * g.k + kw];
            double* r = padded.data() + static_cast<std::size_t>(kh) * pw + kw;
#pragma omp simd
            for (int q = 0; q < span; ++q) r[q] += wv * go[q];
          }
        }
      }
      double* dst = grad_input + (static_cast<std::size_t>(b) * g.in_c + ci) * in_plane;
      for (int i = 0; i < g.in_h; ++i) {
        const double* src = padded.data() + static_cast<std::size_t>(i + g.pad) * pw + g.pad;
        for (int j = 0; j < g.in_w; ++j) dst[i * g.in_w + j] += src[j];
      }
    }
  }
}

void direct_backward_weight_unit(const ConvGeometry& g, const double* input,
                                 const double* grad_out, double* grad_weight) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  const int pw = g.in_w + 2 * g.pad;
  const int span = (oh_n - 1) * pw + ow_n;
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
  const int taps = g.k * g.k;
  std::vector<double> pitched(static_cast<std::size_t>(g.n) * g.out_c * oh_n * pw);
  for (std::size_t plane = 0; plane < static_cast<std::size_t>(g.n) * g.out_c; ++plane) {
    pitch_plane(grad_out + plane * out_plane, oh_n, ow_n, pw,
                pitched.data() + plane * oh_n * pw);
  }
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < g.in_c; ++ci) {
    thread_local std::vector<double> padded;
    padded.resize(padded_size(g));
    std::vector<double> acc(static_cast<std::size_t>(g.out_c) * taps, 0.0);
    for (int b = 0; b < g.n; ++b) {
      pad_plane(g, input + (static_cast<std::size_t>(b) * g.in_c + ci) * in_plane,
                padded.data());
      for (int co = 0; co < g.out_c; ++co) {
        const double* go =
            pitched.data() + (static_cast<std::size_t>(b) * g.out_c + co) * oh_n * pw;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            const double* r = padded.data() + static_cast<std::size_t>(kh) * pw + kw;
            double s = 0.0;
#pragma omp simd reduction(+ : s)
            for (int q = 0; q < span; ++q) s += go[q] * r[q];
            acc[static_cast<std::size_t>(co) * taps + kh * g.k + kw] += s;
          }
        }
      }
    }
    for (int co = 0; co < g.out_c; ++co) {
      for (int t = 0; t < taps; ++t) {
        grad_weight[static_cast<std::size_t>(co * g.in_c + ci) * taps + t] +=
            acc[static_cast<std::size_t>(co) * taps + t];
      }
    }
  }
}

void direct_forward(const ConvGeometry& g, const double* input, const double* weight,
                    double* out) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < g.n; ++b) {
    for (int co = 0; co < g.out_c; ++co) {
      double* dst = out + (static_cast<std::size_t>(b) * g.out_c + co) * out_plane;
      for (int ci = 0; ci < g.in_c; ++ci) {
        const double* src = input + (static_cast<std::size_t>(b) * g.in_c + ci) * in_plane;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            const double wv = weight[((co * g.in_c + ci) * g.k + kh) * g.k + kw];
            const auto [lo, hi] = valid_columns(g, kw);
            for (int oh = 0; oh < oh_n; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              const double* row = src + ih * g.in_w - g.pad + kw;
              double* orow = dst + oh * ow_n;
              for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * row[ow * g.stride];
            }
          }
        }
      }
    }
  }
}

void direct_backward_input(const ConvGeometry& g, const double* grad_out, const double* weight,
                           double* grad_input) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < g.n; ++b) {
    for (int ci = 0; ci < g.in_c; ++ci) {
      double* dst = grad_input + (static_cast<std::size_t>(b) * g.in_c + ci) * in_plane;
      for (int co = 0; co < g.out_c; ++co) {
        const double* go = grad_out + (static_cast<std::size_t>(b) * g.out_c + co) * out_plane;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            const double wv = weight[((co * g.in_c + ci) * g.k + kh) * g.k + kw];
            const auto [lo, hi] = valid_columns(g, kw);
            for (int oh = 0; oh < oh_n; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              double* row = dst + ih * g.in_w - g.pad + kw;
              const double* grow = go + oh * ow_n;
              for (int ow = lo; ow < hi; ++ow) row[ow * g.stride] += wv * grow[ow];
            }
          }
        }
      }
    }
  }
}

void direct_backward_weight(const ConvGeometry& g, const double* input, const double* grad_out,
                            double* grad_weight) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  const std::size_t out_plane = static_cast<std::size_t>(oh_n) * ow_n;
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < g.out_c; ++co) {
    for (int ci = 0; ci < g.in_c; ++ci) {
      for (int kh = 0; kh < g.k; ++kh) {
        for (int kw = 0; kw < g.k; ++kw) {
          const auto [lo, hi] = valid_columns(g, kw);
          double acc = 0.0;
          for (int b = 0; b < g.n; ++b) {
            const double* src = input + (static_cast<std::size_t>(b) * g.in_c + ci) * in_plane;
            const double* go =
                grad_out + (static_cast<std::size_t>(b) * g.out_c + co) * out_plane;
            for (int oh = 0; oh < oh_n; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              const double* row = src + ih * g.in_w - g.pad + kw;
              const double* grow = go + oh * ow_n;
              for (int ow = lo; ow < hi; ++ow) acc += grow[ow] * row[ow * g.stride];
            }
          }
          grad_weight[((co * g.in_c + ci) * g.k + kh) * g.k + kw] += acc;
        }
      }
    }
  }
}

}  // namespace

void gemm_accumulate(int m, int n, int k, const double* a, std::ptrdiff_t a_row,
                     std::ptrdiff_t a_col, const double* b, std::ptrdiff_t b_row,
                     std::ptrdiff_t b_col, double* c, std::ptrdiff_t ldc) {
  if (m <= 0 || n <= 0 || k <= 0) return;
  std::vector<double>& apack = scratch(kPackA);
  std::vector<double>& bpack = scratch(kPackB);
  const int m_panels = (m + kMr - 1) / kMr;
  for (int jc = 0; jc < n; jc += kNc) {
    const int nc = std::min(kNc, n - jc);
    const int n_panels = (nc + kNr - 1) / kNr;
    for (int pc = 0; pc < k; pc += kKc) {
      const int kc = std::min(kKc, k - pc);
      apack.resize(static_cast<std::size_t>(m_panels) * kMr * kc);
      bpack.resize(static_cast<std::size_t>(n_panels) * kNr * kc);
      double* ap = apack.data();
      double* bp = bpack.data();
#pragma omp parallel
      {
#pragma omp for schedule(static) nowait
        for (int ip = 0; ip < m_panels; ++ip) {
          double* dst = ap + static_cast<std::size_t>(ip) * kc * kMr;
          const int rows = std::min(kMr, m - ip * kMr);
          const double* src = a + (ip * kMr) * a_row + pc * a_col;
          if (a_row == 1) {
            for (int p = 0; p < kc; ++p) {
              for (int i = 0; i < rows; ++i) dst[p * kMr + i] = src[i + p * a_col];
              for (int i = rows; i < kMr; ++i) dst[p * kMr + i] = 0.0;
            }
          } else {
            for (int i = 0; i < rows; ++i) {
              for (int p = 0; p < kc; ++p) dst[p * kMr + i] = src[i * a_row + p * a_col];
            }
            for (int i = rows; i < kMr; ++i) {
              for (int p = 0; p < kc; ++p) dst[p * kMr + i] = 0.0;
            }
          }
        }
#pragma omp for schedule(static)
        for (int jp = 0; jp < n_panels; ++jp) {
          double* dst = bp + static_cast<std::size_t>(jp) * kc * kNr;
          const int cols = std::min(kNr, nc - jp * kNr);
          const double* src = b + pc * b_row + (jc + jp * kNr) * b_col;
          if (b_col == 1) {
            for (int p = 0; p < kc; ++p) {
              std::memcpy(dst + p * kNr, src + p * b_row, sizeof(double) * cols);
              for (int j = cols; j < kNr; ++j) dst[p * kNr + j] = 0.0;
            }
          } else {
            for (int j = 0; j < cols; ++j) {
              for (int p = 0; p < kc; ++p) dst[p * kNr + j] = src[j * b_col + p * b_row];
            }
            for (int j = cols; j < kNr; ++j) {
              for (int p = 0; p < kc; ++p) dst[p * kNr + j] = 0.0;
            }
          }
        }
#pragma omp for schedule(static)
        for (int jp = 0; jp < n_panels; ++jp) {
          const int cols = std::min(kNr, nc - jp * kNr);
          for (int ip = 0; ip < m_panels; ++ip) {
            micro_kernel(kc, ap + static_cast<std::size_t>(ip) * kc * kMr,
                         bp + static_cast<std::size_t>(jp) * kc * kNr,
                         c + (ip * kMr) * ldc + jc + jp * kNr, ldc,
                         std::min(kMr, m - ip * kMr), cols);
          }
        }
      }
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const int positions = g.out_h() * g.out_w();
  for (int b = 0; b < g.n; ++b) {
    for (int co = 0; co < g.out_c; ++co) {
      double* dst = out.data() + (static_cast<std::size_t>(b) * g.out_c + co) * positions;
      std::fill(dst, dst + positions, bias.empty() ? 0.0 : bias[co]);
    }
  }
  if (use_direct(g)) {
    if (g.stride == 1) {
      direct_forward_unit(g, input.data(), weight.data(), out.data());
    } else {
      direct_forward(g, input.data(), weight.data(), out.data());
    }
    return;
  }
  const std::size_t patch = g.patch();
  const int columns = g.n * positions;
  const int chunk = column_chunk(patch, columns);
  std::vector<double>& col = scratch(kColumns);
  std::vector<double>& stage = scratch(kStage);
  col.resize(patch * chunk);
  stage.resize(static_cast<std::size_t>(g.out_c) * chunk);
  for (int q0 = 0; q0 < columns; q0 += chunk) {
    const int count = std::min(chunk, columns - q0);
    im2col(g, input.data(), q0, count, col.data());
    std::fill(stage.begin(), stage.begin() + static_cast<std::ptrdiff_t>(g.out_c) * count, 0.0);
    gemm_accumulate(g.out_c, count, static_cast<int>(patch), weight.data(),
                    static_cast<std::ptrdiff_t>(patch), 1, col.data(), count, 1, stage.data(),
                    count);
    scatter_columns(stage.data(), g.out_c, positions, q0, count, out.data());
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_input) {
  if (use_direct(g)) {
    if (g.stride == 1) {
      direct_backward_input_unit(g, grad_out.data(), weight.data(), grad_input.data());
    } else {
      direct_backward_input(g, grad_out.data(), weight.data(), grad_input.data());
    }
    return;
  }
  const int positions = g.out_h() * g.out_w();
  const std::size_t patch = g.patch();
  const int columns = g.n * positions;
  const int chunk = column_chunk(patch, columns);
  std::vector<double>& col = scratch(kColumns);
  std::vector<double>& stage = scratch(kStage);
  col.resize(patch * chunk);
  stage.resize(static_cast<std::size_t>(g.out_c) * chunk);
  for (int q0 = 0; q0 < columns; q0 += chunk) {
    const int count = std::min(chunk, columns - q0);
    gather_columns(grad_out.data(), g.out_c, positions, q0, count, stage.data());
    std::fill(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(patch) * count, 0.0);
    // W^T: element (kidx, co) lives at weight[co * patch + kidx].
    gemm_accumulate(static_cast<int>(patch), count, g.out_c, weight.data(), 1,
                    static_cast<std::ptrdiff_t>(patch), stage.data(), count, 1, col.data(),
                    count);
    col2im_add(g, col.data(), q0, count, grad_input.data());
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const int positions = g.out_h() * g.out_w();
  if (!grad_bias.empty()) {
    for (int co = 0; co < g.out_c; ++co) {
      double s = 0.0;
      for (int b = 0; b < g.n; ++b) {
        const double* row =
            grad_out.data() + (static_cast<std::size_t>(b) * g.out_c + co) * positions;
        for (int p = 0; p < positions; ++p) s += row[p];
      }
      grad_bias[co] += s;
    }
  }
  if (use_direct(g)) {
    if (g.stride == 1) {
      direct_backward_weight_unit(g, input.data(), grad_out.data(), grad_weight.data());
    } else {
      direct_backward_weight(g, input.data(), grad_out.data(), grad_weight.data());
    }
    return;
  }
  const std::size_t patch = g.patch();
  const int columns = g.n * positions;
  const int chunk = column_chunk(patch, columns);
  std::vector<double>& col = scratch(kColumns);
  std::vector<double>& stage = scratch(kStage);
  col.resize(patch * chunk);
  stage.resize(static_cast<std::size_t>(g.out_c) * chunk);
  for (int q0 = 0; q0 < columns; q0 += chunk) {
    const int count = std::min(chunk, columns - q0);
    gather_columns(grad_out.data(), g.out_c, positions, q0, count, stage.data());
    im2col(g, input.data(), q0, count, col.data());
    // dW[co][kidx] += sum_q stage[co][q] * col[kidx][q]
    gemm_accumulate(g.out_c, static_cast<int>(patch), count, stage.data(), count, 1, col.data(),
                    1, count, grad_weight.data(), static_cast<std::ptrdiff_t>(patch));
  }
}

namespace ref {

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  for (int b = 0; b < g.n; ++b) {
    for (int co = 0; co < g.out_c; ++co) {
      for (int oh = 0; oh < oh_n; ++oh) {
        for (int ow = 0; ow < ow_n; ++ow) {
          double s = bias.empty() ? 0.0 : bias[co];
          for (int ci = 0; ci < g.in_c; ++ci) {
            for (int kh = 0; kh < g.k; ++kh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int kw = 0; kw < g.k; ++kw) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                s += weight[((co * g.in_c + ci) * g.k + kh) * g.k + kw] *
                     input[((static_cast<std::size_t>(b) * g.in_c + ci) * g.in_h + ih) * g.in_w +
                           iw];
              }
            }
          }
          out[((static_cast<std::size_t>(b) * g.out_c + co) * oh_n + oh) * ow_n + ow] = s;
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_input) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  for (int b = 0; b < g.n; ++b) {
    for (int co = 0; co < g.out_c; ++co) {
      for (int oh = 0; oh < oh_n; ++oh) {
        for (int ow = 0; ow < ow_n; ++ow) {
          const double go =
              grad_out[((static_cast<std::size_t>(b) * g.out_c + co) * oh_n + oh) * ow_n + ow];
          for (int ci = 0; ci < g.in_c; ++ci) {
            for (int kh = 0; kh < g.k; ++kh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int kw = 0; kw < g.k; ++kw) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                grad_input[((static_cast<std::size_t>(b) * g.in_c + ci) * g.in_h + ih) * g.in_w +
                           iw] += go * weight[((co * g.in_c + ci) * g.k + kh) * g.k + kw];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const int oh_n = g.out_h();
  const int ow_n = g.out_w();
  for (int b = 0; b < g.n; ++b) {
    for (int co = 0; co < g.out_c; ++co) {
      for (int oh = 0; oh < oh_n; ++oh) {
        for (int ow = 0; ow < ow_n; ++ow) {
          const double go =
              grad_out[((static_cast<std::size_t>(b) * g.out_c + co) * oh_n + oh) * ow_n + ow];
          if (!grad_bias.empty()) grad_bias[co] += go;
          for (int ci = 0; ci < g.in_c; ++ci) {
            for (int kh = 0; kh < g.k; ++kh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int kw = 0; kw < g.k; ++kw) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                grad_weight[((co * g.in_c + ci) * g.k + kh) * g.k + kw] +=
                    go * input[((static_cast<std::size_t>(b) * g.in_c + ci) * g.in_h + ih) *
                                   g.in_w + iw];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace ref
}  // namespace sfnet::kernels
