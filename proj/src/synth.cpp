#include "iqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "iqa/fidelity.hpp"
#include "iqa/rng.hpp"

namespace iqa::synth {

std::string_view to_string(Distortion d) {
  switch (d) {
    case Distortion::blur: return "blur";
    case Distortion::noise: return "noise";
    case Distortion::block_dct: return "blockdct";
    case Distortion::wavelet: return "wavelet";
  }
  return "?";
}

ImageTensor pristine(std::uint64_t seed, std::size_t height, std::size_t width) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  const double pi = std::numbers::pi;

  // per-channel base colour and a linear shading
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.25 + 0.5 * u(rng);
    gx[c] = 0.3 * (u(rng) - 0.5);
    gy[c] = 0.3 * (u(rng) - 0.5);
  }
  ImageTensor img(height, width, 3);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, static_cast<std::size_t>(c)) = base[c] + gx[c] * (x / W - 0.5) + gy[c] * (y / H - 0.5);

  // flat shapes with soft edges
  const int shapes = 4 + static_cast<int>(u(rng) * 7);
  for (int s = 0; s < shapes; ++s) {
    const double cx = u(rng) * W, cy = u(rng) * H;
    const double rx = (0.05 + 0.2 * u(rng)) * W, ry = (0.05 + 0.2 * u(rng)) * H;
    const bool ellipse = u(rng) < 0.5;
    double colour[3];
    for (double& v : colour) v = 0.1 + 0.8 * u(rng);
    const double alpha = 0.5 + 0.5 * u(rng);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        const double r = ellipse ? std::sqrt(dx * dx + dy * dy) : std::max(std::fabs(dx), std::fabs(dy));
        const double edge = std::clamp((1.0 - r) * std::min(rx, ry) + 0.5, 0.0, 1.0);
        const double a = alpha * edge;
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = (1 - a) * img.at(y, x, c) + a * colour[c];
      }
    }
  }

  // 1/f texture from random plane waves
  const double strength = 0.04 + 0.08 * u(rng);
  const int waves = 80;
  for (int k = 0; k < waves; ++k) {
    const double f = std::exp(std::log(1.0 / 64.0) + u(rng) * (std::log(0.45) - std::log(1.0 / 64.0)));
    const double theta = u(rng) * pi, phase = u(rng) * 2 * pi;
    const double amp = strength * n(rng) * std::pow(f * 64.0, -0.6) * 0.3;
    double tint[3];
    for (double& v : tint) v = 0.7 + 0.3 * u(rng);
    const double fx = f * std::cos(theta), fy = f * std::sin(theta);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double v = amp * std::sin(2 * pi * (fx * x + fy * y) + phase);
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) += tint[c] * v;
      }
  }
  img.quantize();
  return img;
}

namespace {

std::size_t reflect(long i, std::size_t n) {
  const long m = static_cast<long>(n);
  while (i < 0 || i >= m) i = i < 0 ? -i - 1 : 2 * m - i - 1;
  return static_cast<std::size_t>(i);
}

ImageTensor gaussian_blur(const ImageTensor& img, double sigma) {
  const long r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * r + 1));
  double total = 0;
  for (long i = -r; i <= r; ++i) total += taps[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2 * sigma * sigma));
  for (auto& t : taps) t /= total;
  ImageTensor tmp = img, out = img;
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) {
        double acc = 0;
        for (long i = -r; i <= r; ++i) acc += taps[static_cast<std::size_t>(i + r)] * img.at(y, reflect(static_cast<long>(x) + i, img.width()), c);
        tmp.at(y, x, c) = acc;
      }
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c) {
        double acc = 0;
        for (long i = -r; i <= r; ++i) acc += taps[static_cast<std::size_t>(i + r)] * tmp.at(reflect(static_cast<long>(y) + i, img.height()), x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

// Orthonormal 8-point DCT-II basis.
const std::vector<double>& dct_basis() {
  static const std::vector<double> basis = [] {
    std::vector<double> b(64);
    for (int k = 0; k < 8; ++k)
      for (int i = 0; i < 8; ++i)
        b[static_cast<std::size_t>(k * 8 + i)] =
            (k == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8)) * std::cos(std::numbers::pi * (2 * i + 1) * k / 16.0);
    return b;
  }();
  return basis;
}

ImageTensor block_dct(const ImageTensor& img, double level) {
  const auto& B = dct_basis();
  ImageTensor out = img;
  const double step0 = 0.02 + 0.5 * level * level;
  for (std::size_t c = 0; c < img.channels(); ++c) {
    for (std::size_t by = 0; by + 8 <= img.height(); by += 8) {
      for (std::size_t bx = 0; bx + 8 <= img.width(); bx += 8) {
        double blk[8][8], coef[8][8], tmp[8][8];
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) blk[i][j] = img.at(by + i, bx + j, c) - 0.5;
        for (int k = 0; k < 8; ++k)
          for (int j = 0; j < 8; ++j) {
            double a = 0;
            for (int i = 0; i < 8; ++i) a += B[k * 8 + i] * blk[i][j];
            tmp[k][j] = a;
          }
        for (int k = 0; k < 8; ++k)
          for (int l = 0; l < 8; ++l) {
            double a = 0;
            for (int j = 0; j < 8; ++j) a += B[l * 8 + j] * tmp[k][j];
            const double q = step0 * (1.0 + 0.5 * (k + l));
            coef[k][l] = q * std::nearbyint(a / q);
          }
        for (int i = 0; i < 8; ++i)
          for (int l = 0; l < 8; ++l) {
            double a = 0;
            for (int k = 0; k < 8; ++k) a += B[k * 8 + i] * coef[k][l];
            tmp[i][l] = a;
          }
        for (int i = 0; i < 8; ++i)
          for (int j = 0; j < 8; ++j) {
            double a = 0;
            for (int l = 0; l < 8; ++l) a += B[l * 8 + j] * tmp[i][l];
            out.at(by + i, bx + j, c) = a + 0.5;
          }
      }
    }
  }
  return out;
}

// One level of the orthonormal 2-D Haar transform on the top-left n x n block.
void haar_forward(std::vector<double>& a, std::size_t stride, std::size_t n) {
  std::vector<double> t(n);
  const double s = std::sqrt(0.5);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t i = 0; i < n / 2; ++i) {
      t[i] = s * (a[y * stride + 2 * i] + a[y * stride + 2 * i + 1]);
      t[n / 2 + i] = s * (a[y * stride + 2 * i] - a[y * stride + 2 * i + 1]);
    }
    for (std::size_t i = 0; i < n; ++i) a[y * stride + i] = t[i];
  }
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t i = 0; i < n / 2; ++i) {
      t[i] = s * (a[2 * i * stride + x] + a[(2 * i + 1) * stride + x]);
      t[n / 2 + i] = s * (a[2 * i * stride + x] - a[(2 * i + 1) * stride + x]);
    }
    for (std::size_t i = 0; i < n; ++i) a[i * stride + x] = t[i];
  }
}

void haar_inverse(std::vector<double>& a, std::size_t stride, std::size_t n) {
  std::vector<double> t(n);
  const double s = std::sqrt(0.5);
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t i = 0; i < n / 2; ++i) {
      t[2 * i] = s * (a[i * stride + x] + a[(n / 2 + i) * stride + x]);
      t[2 * i + 1] = s * (a[i * stride + x] - a[(n / 2 + i) * stride + x]);
    }
    for (std::size_t i = 0; i < n; ++i) a[i * stride + x] = t[i];
  }
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t i = 0; i < n / 2; ++i) {
      t[2 * i] = s * (a[y * stride + i] + a[y * stride + n / 2 + i]);
      t[2 * i + 1] = s * (a[y * stride + i] - a[y * stride + n / 2 + i]);
    }
    for (std::size_t i = 0; i < n; ++i) a[y * stride + i] = t[i];
  }
}

ImageTensor wavelet_threshold(const ImageTensor& img, double level) {
  std::size_t n = 1;
  while (n * 2 <= std::min(img.height(), img.width())) n *= 2;
  const int levels = 3;
  if (n < 8) return img;
  const double threshold = 0.02 + 0.45 * level;
  ImageTensor out = img;
  std::vector<double> a(n * n);
  for (std::size_t c = 0; c < img.channels(); ++c) {
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) a[y * n + x] = img.at(y, x, c);
    std::size_t m = n;
    for (int l = 0; l < levels; ++l, m /= 2) haar_forward(a, n, m);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        if (y < m && x < m) continue;  // coarse approximation band
        if (std::fabs(a[y * n + x]) < threshold) a[y * n + x] = 0.0;
      }
    for (int l = 0; l < levels; ++l) {
      m *= 2;
      haar_inverse(a, n, m);
    }
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) out.at(y, x, c) = a[y * n + x];
  }
  return out;
}

}  // namespace

ImageTensor distort(const ImageTensor& img, Distortion d, double level, std::uint64_t seed) {
  level = std::clamp(level, 0.0, 1.0);
  ImageTensor out;
  switch (d) {
    case Distortion::blur: out = gaussian_blur(img, 0.4 + 2.6 * level); break;
    case Distortion::noise: {
      out = img;
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> n(0.0, 0.01 + 0.17 * level);
      for (auto& v : out.values()) v += n(rng);
      break;
    }
    case Distortion::block_dct: out = block_dct(img, level); break;
    case Distortion::wavelet: out = wavelet_threshold(img, level); break;
  }
  out.quantize();
  return out;
}

double proxy_mos(const ImageTensor& distorted, const ImageTensor& reference) {
  const double ssim = -fidelity::neg_ssim(distorted.to_gray(), reference.to_gray());
  return std::clamp(10.0 * ssim, 0.0, 10.0);
}

std::vector<RatedImage> rated_set(std::uint64_t seed, std::size_t per_distortion, std::size_t size) {
  std::vector<RatedImage> out;
  std::size_t index = 0;
  for (auto d : kDistortions) {
    for (std::size_t k = 0; k < per_distortion; ++k, ++index) {
      RatedImage r;
      const double level = per_distortion == 1 ? 0.5 : 0.15 + 0.75 * static_cast<double>(k) / static_cast<double>(per_distortion - 1);
      r.pristine = pristine(mix_seed(seed, 2 * index), size, size);
      r.image = distort(r.pristine, d, level, mix_seed(seed, 2 * index + 1));
      r.distortion = d;
      r.level = level;
      r.mos = proxy_mos(r.image, r.pristine);
      char name[64];
      std::snprintf(name, sizeof name, "img%02zu_%s", index + 1, std::string(to_string(d)).c_str());
      r.name = name;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<RatedImage> training_set(std::uint64_t seed, std::size_t scenes, std::size_t per_scene, std::size_t size) {
  std::vector<RatedImage> out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t s = 0; s < scenes; ++s) {
    const auto p = pristine(mix_seed(seed, 1000 + s), size, size);
    RatedImage clean;
    clean.name = "train" + std::to_string(s) + "_pristine";
    clean.pristine = p;
    clean.image = p;
    clean.mos = 10.0;
    out.push_back(clean);
    for (std::size_t k = 0; k < per_scene; ++k) {
      RatedImage r;
      r.distortion = kDistortions[(s + k) % 4];
      r.level = 0.02 + 0.98 * u(rng);
      r.pristine = p;
      r.image = distort(p, r.distortion, r.level, mix_seed(seed, 100000 + s * per_scene + k));
      r.mos = proxy_mos(r.image, p);
      r.name = "train" + std::to_string(s) + "_" + std::to_string(k);
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace iqa::synth
