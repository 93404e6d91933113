#pragma once

// Raw compute kernels on contiguous NCHW float64 buffers.
//
// Two implementations of each kernel live here:
//   sfnet::kernels       OpenMP-parallel, blocked; used by the autograd ops.
//   sfnet::kernels::ref  plain serial loop nests; kept as the test oracle and
//                        as the benchmark baseline.
// Parallel versions split work over independent output elements only, so
// results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace sfnet::kernels {

struct ConvGeometry {
  int n = 0;
  int in_c = 0;
  int in_h = 0;
  int in_w = 0;
  int out_c = 0;
  int k = 1;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
  std::size_t patch() const { return static_cast<std::size_t>(in_c) * k * k; }
};

// C[M x N] += A[M x K] * B[K x N] with arbitrary element strides, so the same
// routine serves transposed operands. C is row-major with leading dim ldc.
void gemm_accumulate(int m, int n, int k, const double* a, std::ptrdiff_t a_row,
                     std::ptrdiff_t a_col, const double* b, std::ptrdiff_t b_row,
                     std::ptrdiff_t b_col, double* c, std::ptrdiff_t ldc);

// out is overwritten. bias may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out);
// grad_input += d(out)/d(input)^T grad_out
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight,
                           std::span<double> grad_input);
// grad_weight += ..., grad_bias += ... (grad_bias may be empty)
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_out,
                            std::span<double> grad_weight,
                            std::span<double> grad_bias);

// Bilinear sampling with border clamping. `coords` is N x 2 x H x W holding
// (y, x) source positions; source is N x C x h x w; out is N x C x H x W.
struct SampleGeometry {
  int n = 0;
  int c = 0;
  int src_h = 0;
  int src_w = 0;
  int dst_h = 0;
  int dst_w = 0;
};

void bilinear_forward(const SampleGeometry& g, std::span<const double> source,
                      std::span<const double> coords, std::span<double> out);
// Either gradient span may be empty to skip that output.
void bilinear_backward(const SampleGeometry& g, std::span<const double> source,
                       std::span<const double> coords,
                       std::span<const double> grad_out,
                       std::span<double> grad_source,
                       std::span<double> grad_coords);

namespace ref {

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight,
                           std::span<double> grad_input);
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_out,
                            std::span<double> grad_weight,
                            std::span<double> grad_bias);

void bilinear_forward(const SampleGeometry& g, std::span<const double> source,
                      std::span<const double> coords, std::span<double> out);
void bilinear_backward(const SampleGeometry& g, std::span<const double> source,
                       std::span<const double> coords,
                       std::span<const double> grad_out,
                       std::span<double> grad_source,
                       std::span<double> grad_coords);

}  // namespace ref
}  // namespace sfnet::kernels
