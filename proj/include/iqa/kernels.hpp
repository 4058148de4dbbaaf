#pragma once

#include <cstddef>
#include <span>

// Dense inner loops behind the convolution and windowed-filter primitives.
//
// Every kernel in the top-level namespace is OpenMP-parallel over output rows
// (or output channels for kernel gradients). Each output element is summed by
// a single thread in a fixed order, so results do not depend on the number of
// threads. The `reference` namespace holds straight nested-loop versions used
// by the tests and the benchmark.
//
// All buffers are row-major channels-last: (H, W, C) for images and
// (C_out, C_in, K_h, K_w) for convolution kernels.

namespace iqa::kernels {

struct ConvGeometry {
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t out_c = 0;
  std::size_t k_h = 0, k_w = 0;
  std::size_t stride = 1;
  std::size_t pad_h = 0, pad_w = 0;

  std::size_t out_h() const { return (in_h + 2 * pad_h - k_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad_w - k_w) / stride + 1; }
};

// out = in (*) kernel   (cross-correlation, zero padding)
void conv2d_forward(const ConvGeometry& g, const double* in, const double* kernel, double* out);
// din += dL/din
void conv2d_backward_input(const ConvGeometry& g, const double* dout, const double* kernel, double* din);
// dkernel += dL/dkernel
void conv2d_backward_kernel(const ConvGeometry& g, const double* in, const double* dout, double* dkernel);

/// Depthwise 1-D filter along one spatial axis (0 = rows/y, 1 = columns/x).
struct FilterGeometry {
  std::size_t in_h = 0, in_w = 0, channels = 0;
  std::size_t axis = 0;
  std::size_t taps = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t in_len() const { return axis == 0 ? in_h : in_w; }
  std::size_t out_len() const { return (in_len() + 2 * pad - taps) / stride + 1; }
  std::size_t out_h() const { return axis == 0 ? out_len() : in_h; }
  std::size_t out_w() const { return axis == 1 ? out_len() : in_w; }
};

void filter1d_forward(const FilterGeometry& g, std::span<const double> taps, const double* in, double* out);
void filter1d_backward(const FilterGeometry& g, std::span<const double> taps, const double* dout, double* din);

namespace reference {

void conv2d_forward(const ConvGeometry& g, const double* in, const double* kernel, double* out);
void conv2d_backward_input(const ConvGeometry& g, const double* dout, const double* kernel, double* din);
void conv2d_backward_kernel(const ConvGeometry& g, const double* in, const double* dout, double* dkernel);
void filter1d_forward(const FilterGeometry& g, std::span<const double> taps, const double* in, double* out);
void filter1d_backward(const FilterGeometry& g, std::span<const double> taps, const double* dout, double* din);

}  // namespace reference

/// Number of threads the parallel kernels would use outside any enclosing
/// parallel region.
int max_threads();

}  // namespace iqa::kernels
