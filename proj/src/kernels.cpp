#include "iqa/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdint>
#include <vector>

namespace iqa::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline long long as_signed(std::size_t v) { return static_cast<long long>(v); }

}  // namespace

int max_threads() { return omp_get_max_threads(); }

void conv2d_forward(const ConvGeometry& g, const double* in, const double* kernel, double* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t ci_n = g.in_c, co_n = g.out_c;
  // Repack to (k_h, k_w, C_in, C_out), C_out innermost.
  std::vector<double> packed(g.k_h * g.k_w * ci_n * co_n);
  for (std::size_t co = 0; co < co_n; ++co)
    for (std::size_t ci = 0; ci < ci_n; ++ci)
      for (std::size_t ky = 0; ky < g.k_h; ++ky)
        for (std::size_t kx = 0; kx < g.k_w; ++kx)
          packed[((ky * g.k_w + kx) * ci_n + ci) * co_n + co] = kernel[((co * ci_n + ci) * g.k_h + ky) * g.k_w + kx];

  const std::size_t work = oh * ow * co_n * ci_n * g.k_h * g.k_w;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long long oy_s = 0; oy_s < as_signed(oh); ++oy_s) {
    const auto oy = static_cast<std::size_t>(oy_s);
    std::vector<double> acc(co_n);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        const long long iy = as_signed(oy * g.stride + ky) - as_signed(g.pad_h);
        if (iy < 0 || iy >= as_signed(g.in_h)) continue;
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          const long long ix = as_signed(ox * g.stride + kx) - as_signed(g.pad_w);
          if (ix < 0 || ix >= as_signed(g.in_w)) continue;
          const double* px = in + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * ci_n;
          const double* w = packed.data() + (ky * g.k_w + kx) * ci_n * co_n;
          double* __restrict a = acc.data();
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const double v = px[ci];
            const double* __restrict wr = w + ci * co_n;
            for (std::size_t co = 0; co < co_n; ++co) a[co] += v * wr[co];
          }
        }
      }
      double* o = out + (oy * ow + ox) * co_n;
      for (std::size_t co = 0; co < co_n; ++co) o[co] = acc[co];
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, const double* dout, const double* kernel, double* din) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t ci_n = g.in_c, co_n = g.out_c;
  // Gather form: each input pixel collects from the outputs it fed.
  // packed layout (k_h, k_w, C_in, C_out) again.
  std::vector<double> packed(g.k_h * g.k_w * ci_n * co_n);
  for (std::size_t co = 0; co < co_n; ++co)
    for (std::size_t ci = 0; ci < ci_n; ++ci)
      for (std::size_t ky = 0; ky < g.k_h; ++ky)
        for (std::size_t kx = 0; kx < g.k_w; ++kx)
          packed[((ky * g.k_w + kx) * ci_n + ci) * co_n + co] = kernel[((co * ci_n + ci) * g.k_h + ky) * g.k_w + kx];

  // Output pixels whose gradient is entirely zero are skipped.
  std::vector<unsigned char> live(oh * ow, 0);
  for (std::size_t p = 0; p < oh * ow; ++p) {
    const double* go = dout + p * co_n;
    for (std::size_t co = 0; co < co_n; ++co) {
      if (go[co] != 0.0) {
        live[p] = 1;
        break;
      }
    }
  }

  const std::size_t work = oh * ow * co_n * ci_n * g.k_h * g.k_w;
  const std::size_t st = g.stride;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long long iy_s = 0; iy_s < as_signed(g.in_h); ++iy_s) {
    const auto iy = static_cast<std::size_t>(iy_s);
    const std::size_t ny = iy + g.pad_h;
    for (std::size_t ix = 0; ix < g.in_w; ++ix) {
      double* d = din + (iy * g.in_w + ix) * ci_n;
      const std::size_t nx = ix + g.pad_w;
      for (std::size_t ky = ny % st; ky < g.k_h && ky <= ny; ky += st) {
        const std::size_t oy = (ny - ky) / st;
        if (oy >= oh) continue;
        for (std::size_t kx = nx % st; kx < g.k_w && kx <= nx; kx += st) {
          const std::size_t ox = (nx - kx) / st;
          if (ox >= ow || !live[oy * ow + ox]) continue;
          const double* go = dout + (oy * ow + ox) * co_n;
          const double* w = packed.data() + (ky * g.k_w + kx) * ci_n * co_n;
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const double* wr = w + ci * co_n;
            double s = 0.0;
            for (std::size_t co = 0; co < co_n; ++co) s += go[co] * wr[co];
            d[ci] += s;
          }
        }
      }
    }
  }
}

void conv2d_backward_kernel(const ConvGeometry& g, const double* in, const double* dout, double* dkernel) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t ci_n = g.in_c, co_n = g.out_c;
  const std::size_t work = oh * ow * co_n * ci_n * g.k_h * g.k_w;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long long co_s = 0; co_s < as_signed(co_n); ++co_s) {
    const auto co = static_cast<std::size_t>(co_s);
    for (std::size_t ci = 0; ci < ci_n; ++ci) {
      for (std::size_t ky = 0; ky < g.k_h; ++ky) {
        for (std::size_t kx = 0; kx < g.k_w; ++kx) {
          double s = 0.0;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long long iy = as_signed(oy * g.stride + ky) - as_signed(g.pad_h);
            if (iy < 0 || iy >= as_signed(g.in_h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long long ix = as_signed(ox * g.stride + kx) - as_signed(g.pad_w);
              if (ix < 0 || ix >= as_signed(g.in_w)) continue;
              s += dout[(oy * ow + ox) * co_n + co] *
                   in[(static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * ci_n + ci];
            }
          }
          dkernel[((co * ci_n + ci) * g.k_h + ky) * g.k_w + kx] += s;
        }
      }
    }
  }
}

void filter1d_forward(const FilterGeometry& g, std::span<const double> taps, const double* in, double* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), c_n = g.channels;
  const std::size_t work = oh * ow * c_n * g.taps;
  const long long in_len = as_signed(g.in_len());
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long long oy_s = 0; oy_s < as_signed(oh); ++oy_s) {
    const auto oy = static_cast<std::size_t>(oy_s);
    double* o = out + oy * ow * c_n;
    std::fill(o, o + ow * c_n, 0.0);
    if (g.axis == 0) {
      // whole output row = sum over taps of input rows
      for (std::size_t k = 0; k < g.taps; ++k) {
        const long long iy = as_signed(oy * g.stride + k) - as_signed(g.pad);
        if (iy < 0 || iy >= in_len) continue;
        const double* row = in + static_cast<std::size_t>(iy) * g.in_w * c_n;
        const double t = taps[k];
        for (std::size_t j = 0; j < ow * c_n; ++j) o[j] += t * row[j];
      }
    } else {
      const double* row = in + oy * g.in_w * c_n;
      for (std::size_t k = 0; k < g.taps; ++k) {
        const double t = taps[k];
        // output positions whose tap k lands inside the row
        const long long shift = as_signed(k) - as_signed(g.pad);
        const long long st = as_signed(g.stride);
        long long lo = shift >= 0 ? 0 : (-shift + st - 1) / st;
        long long hi = (in_len - 1 - shift) >= 0 ? (in_len - 1 - shift) / st + 1 : 0;
        hi = std::min<long long>(hi, as_signed(ow));
        if (g.stride == 1) {
          const double* src = row + (lo + shift) * as_signed(c_n);
          double* dst = o + lo * as_signed(c_n);
          const std::size_t n = lo < hi ? static_cast<std::size_t>(hi - lo) * c_n : 0;
          for (std::size_t j = 0; j < n; ++j) dst[j] += t * src[j];
        } else {
          for (long long ox = lo; ox < hi; ++ox) {
            const double* src = row + (ox * st + shift) * as_signed(c_n);
            double* dst = o + ox * as_signed(c_n);
            for (std::size_t c = 0; c < c_n; ++c) dst[c] += t * src[c];
          }
        }
      }
    }
  }
}

void filter1d_backward(const FilterGeometry& g, std::span<const double> taps, const double* dout, double* din) {
  const std::size_t ow = g.out_w(), c_n = g.channels, out_len = g.out_len();
  const std::size_t work = g.in_h * g.in_w * c_n * g.taps;
  const long long st = as_signed(g.stride);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long long iy_s = 0; iy_s < as_signed(g.in_h); ++iy_s) {
    const auto iy = static_cast<std::size_t>(iy_s);
    double* d = din + iy * g.in_w * c_n;
    if (g.axis == 0) {
      for (std::size_t k = 0; k < g.taps; ++k) {
        const long long n = as_signed(iy + g.pad) - as_signed(k);
        if (n < 0 || n % st != 0) continue;
        const auto oy = static_cast<std::size_t>(n / st);
        if (oy >= out_len) continue;
        const double* go = dout + oy * ow * c_n;
        const double t = taps[k];
        for (std::size_t j = 0; j < g.in_w * c_n; ++j) d[j] += t * go[j];
      }
    } else {
      const double* grow = dout + iy * ow * c_n;
      for (std::size_t k = 0; k < g.taps; ++k) {
        const double t = taps[k];
        // input ix receives from output (ix + pad - k) / stride when divisible
        const long long shift = as_signed(g.pad) - as_signed(k);
        if (g.stride == 1) {
          long long lo = std::max<long long>(0, -shift);
          long long hi = std::min<long long>(as_signed(g.in_w), as_signed(out_len) - shift);
          if (lo >= hi) continue;
          const double* src = grow + (lo + shift) * as_signed(c_n);
          double* dst = d + lo * as_signed(c_n);
          const std::size_t n = static_cast<std::size_t>(hi - lo) * c_n;
          for (std::size_t j = 0; j < n; ++j) dst[j] += t * src[j];
        } else {
          for (long long ox = 0; ox < as_signed(out_len); ++ox) {
            const long long ix = ox * st - shift;
            if (ix < 0 || ix >= as_signed(g.in_w)) continue;
            const double* src = grow + ox * as_signed(c_n);
            double* dst = d + ix * as_signed(c_n);
            for (std::size_t c = 0; c < c_n; ++c) dst[c] += t * src[c];
          }
        }
      }
    }
  }
}

namespace reference {

namespace {
double padded(const ConvGeometry& g, const double* in, long long y, long long x, std::size_t c) {
  if (y < 0 || x < 0 || y >= as_signed(g.in_h) || x >= as_signed(g.in_w)) return 0.0;
  return in[(static_cast<std::size_t>(y) * g.in_w + static_cast<std::size_t>(x)) * g.in_c + c];
}
}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* in, const double* kernel, double* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t co = 0; co < g.out_c; ++co) {
        double s = 0.0;
        for (std::size_t ci = 0; ci < g.in_c; ++ci)
          for (std::size_t ky = 0; ky < g.k_h; ++ky)
            for (std::size_t kx = 0; kx < g.k_w; ++kx)
              s += kernel[((co * g.in_c + ci) * g.k_h + ky) * g.k_w + kx] *
                   padded(g, in, as_signed(oy * g.stride + ky) - as_signed(g.pad_h),
                          as_signed(ox * g.stride + kx) - as_signed(g.pad_w), ci);
        out[(oy * ow + ox) * g.out_c + co] = s;
      }
}

void conv2d_backward_input(const ConvGeometry& g, const double* dout, const double* kernel, double* din) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t co = 0; co < g.out_c; ++co)
        for (std::size_t ci = 0; ci < g.in_c; ++ci)
          for (std::size_t ky = 0; ky < g.k_h; ++ky)
            for (std::size_t kx = 0; kx < g.k_w; ++kx) {
              const long long iy = as_signed(oy * g.stride + ky) - as_signed(g.pad_h);
              const long long ix = as_signed(ox * g.stride + kx) - as_signed(g.pad_w);
              if (iy < 0 || ix < 0 || iy >= as_signed(g.in_h) || ix >= as_signed(g.in_w)) continue;
              din[(static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c + ci] +=
                  dout[(oy * ow + ox) * g.out_c + co] * kernel[((co * g.in_c + ci) * g.k_h + ky) * g.k_w + kx];
            }
}

void conv2d_backward_kernel(const ConvGeometry& g, const double* in, const double* dout, double* dkernel) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t co = 0; co < g.out_c; ++co)
        for (std::size_t ci = 0; ci < g.in_c; ++ci)
          for (std::size_t ky = 0; ky < g.k_h; ++ky)
            for (std::size_t kx = 0; kx < g.k_w; ++kx)
              dkernel[((co * g.in_c + ci) * g.k_h + ky) * g.k_w + kx] +=
                  dout[(oy * ow + ox) * g.out_c + co] *
                  padded(g, in, as_signed(oy * g.stride + ky) - as_signed(g.pad_h),
                         as_signed(ox * g.stride + kx) - as_signed(g.pad_w), ci);
}

void filter1d_forward(const FilterGeometry& g, std::span<const double> taps, const double* in, double* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t c = 0; c < g.channels; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < g.taps; ++k) {
          long long y = as_signed(oy), x = as_signed(ox);
          if (g.axis == 0) y = as_signed(oy * g.stride + k) - as_signed(g.pad);
          else x = as_signed(ox * g.stride + k) - as_signed(g.pad);
          if (y < 0 || x < 0 || y >= as_signed(g.in_h) || x >= as_signed(g.in_w)) continue;
          s += taps[k] * in[(static_cast<std::size_t>(y) * g.in_w + static_cast<std::size_t>(x)) * g.channels + c];
        }
        out[(oy * ow + ox) * g.channels + c] = s;
      }
}

void filter1d_backward(const FilterGeometry& g, std::span<const double> taps, const double* dout, double* din) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t k = 0; k < g.taps; ++k) {
          long long y = as_signed(oy), x = as_signed(ox);
          if (g.axis == 0) y = as_signed(oy * g.stride + k) - as_signed(g.pad);
          else x = as_signed(ox * g.stride + k) - as_signed(g.pad);
          if (y < 0 || x < 0 || y >= as_signed(g.in_h) || x >= as_signed(g.in_w)) continue;
          din[(static_cast<std::size_t>(y) * g.in_w + static_cast<std::size_t>(x)) * g.channels + c] +=
              taps[k] * dout[(oy * ow + ox) * g.channels + c];
        }
}

}  // namespace reference

}  // namespace iqa::kernels
