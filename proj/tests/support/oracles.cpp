#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

using iqa::ImageTensor;
using iqa::Shape;
using iqa::Tensor;

ImageTensor random_image(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageTensor img(h, w, c);
  for (auto& v : img.values()) v = u(rng);
  return img;
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

std::vector<double> gray(const ImageTensor& x) {
  std::vector<double> g(x.height() * x.width());
  for (std::size_t y = 0; y < x.height(); ++y) {
    for (std::size_t i = 0; i < x.width(); ++i) {
      if (x.channels() == 1) {
        g[y * x.width() + i] = x.at(y, i, 0);
      } else {
        g[y * x.width() + i] = 0.299 * x.at(y, i, 0) + 0.587 * x.at(y, i, 1) + 0.114 * x.at(y, i, 2);
      }
    }
  }
  return g;
}

Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  const long H = static_cast<long>(x.dim(0)), W = static_cast<long>(x.dim(1));
  const std::size_t ci = x.dim(2), co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (x.dim(0) + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (x.dim(1) + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{oh, ow, co});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t o = 0; o < co; ++o) {
        double acc = 0.0;
        for (std::size_t c = 0; c < ci; ++c) {
          for (std::size_t a = 0; a < kh; ++a) {
            for (std::size_t b = 0; b < kw; ++b) {
              const long y = static_cast<long>(oy * stride + a) - static_cast<long>(pad);
              const long xx = static_cast<long>(ox * stride + b) - static_cast<long>(pad);
              if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
              acc += x.at(static_cast<std::size_t>(y), static_cast<std::size_t>(xx), c) *
                     k[((o * ci + c) * kh + a) * kw + b];
            }
          }
        }
        out.at(oy, ox, o) = acc;
      }
    }
  }
  return out;
}

double chebyshev(const ImageTensor& x, const ImageTensor& x0) {
  double m = 0.0;
  for (std::size_t y = 0; y < x.height(); ++y)
    for (std::size_t i = 0; i < x.width(); ++i)
      for (std::size_t c = 0; c < x.channels(); ++c) m = std::max(m, std::fabs(x.at(y, i, c) - x0.at(y, i, c)));
  return m;
}

double ssim(const ImageTensor& xa, const ImageTensor& xb) {
  const int win = 11;
  const double sigma = 1.5;
  double w[11][11];
  double total = 0.0;
  for (int a = 0; a < win; ++a) {
    for (int b = 0; b < win; ++b) {
      const double dy = a - 5, dx = b - 5;
      w[a][b] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      total += w[a][b];
    }
  }
  for (auto& row : w)
    for (auto& v : row) v /= total;
  const auto ga = gray(xa), gb = gray(xb);
  const std::size_t H = xa.height(), W = xa.width();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + win <= H; ++y) {
    for (std::size_t x = 0; x + win <= W; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int a = 0; a < win; ++a) {
        for (int b = 0; b < win; ++b) {
          const double p = ga[(y + a) * W + x + b], q = gb[(y + a) * W + x + b];
          ma += w[a][b] * p;
          mb += w[a][b] * q;
          saa += w[a][b] * p * p;
          sbb += w[a][b] * q * q;
          sab += w[a][b] * p * q;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

std::vector<Tensor> features(const iqa::FeatureExtractor& fe, const ImageTensor& img) {
  Tensor x = img.tensor();
  if (img.channels() == 1 && fe.input_channels() != 1) {
    Tensor b(Shape{img.height(), img.width(), fe.input_channels()});
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t i = 0; i < img.width(); ++i)
        for (std::size_t c = 0; c < fe.input_channels(); ++c) b.at(y, i, c) = img.at(y, i, 0);
    x = b;
  }
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < fe.stage_count(); ++s) {
    const auto& st = fe.stage(s);
    Tensor z = conv2d(x, st.kernel, st.stride, (st.kernel.dim(2) - 1) / 2);
    for (std::size_t y = 0; y < z.dim(0); ++y)
      for (std::size_t i = 0; i < z.dim(1); ++i)
        for (std::size_t c = 0; c < z.dim(2); ++c) z.at(y, i, c) = std::max(0.0, z.at(y, i, c) + st.bias[c]);
    out.push_back(z);
    x = z;
  }
  return out;
}

double feature_l2(const ImageTensor& x, const ImageTensor& x0, const iqa::FeatureExtractor& fe) {
  const auto fa = features(fe, x), fb = features(fe, x0);
  double total = 0.0;
  for (std::size_t s = 0; s < fa.size(); ++s) {
    const std::size_t H = fa[s].dim(0), W = fa[s].dim(1), C = fa[s].dim(2);
    double acc = 0.0;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t i = 0; i < W; ++i) {
        double na = 0, nb = 0;
        for (std::size_t c = 0; c < C; ++c) {
          na += fa[s].at(y, i, c) * fa[s].at(y, i, c);
          nb += fb[s].at(y, i, c) * fb[s].at(y, i, c);
        }
        na = std::sqrt(na + 1e-10);
        nb = std::sqrt(nb + 1e-10);
        for (std::size_t c = 0; c < C; ++c) {
          const double d = fa[s].at(y, i, c) / na - fb[s].at(y, i, c) / nb;
          acc += d * d;
        }
      }
    }
    total += fe.stage_weights()[s] * acc / static_cast<double>(H * W);
  }
  return total;
}

double structure_texture(const ImageTensor& x, const ImageTensor& x0, const iqa::FeatureExtractor& fe) {
  const auto fa = features(fe, x), fb = features(fe, x0);
  double total = 0.0;
  for (std::size_t s = 0; s < fa.size(); ++s) {
    const std::size_t H = fa[s].dim(0), W = fa[s].dim(1), C = fa[s].dim(2);
    const double n = static_cast<double>(H * W);
    for (std::size_t c = 0; c < C; ++c) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t i = 0; i < W; ++i) {
          const double p = fa[s].at(y, i, c), q = fb[s].at(y, i, c);
          ma += p;
          mb += q;
          saa += p * p;
          sbb += q * q;
          sab += p * q;
        }
      }
      ma /= n;
      mb /= n;
      const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
      const double l = (2 * ma * mb + 1e-6) / (ma * ma + mb * mb + 1e-6);
      const double r = (2 * cov + 1e-6) / (va + vb + 1e-6);
      total += fe.stage(s).texture_weights[c] * l + fe.stage(s).structure_weights[c] * r;
    }
  }
  return -total;
}

std::vector<double> fractional_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) less += 1;
      if (v[j] == v[i]) equal += 1;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double srcc(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(fractional_ranks(a), fractional_ranks(b));
}

double logistic(double raw, double b3, double b4) { return 10.0 / (1.0 + std::exp(-(raw - b3) / std::fabs(b4))); }

double stability_ratio(const std::vector<double>& initial, const std::vector<double>& attacked) {
  double total = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < initial.size(); ++i) {
    const double d = std::fabs(initial[i] - attacked[i]);
    if (d == 0.0) continue;
    total += std::log(std::max(10.0 - initial[i], initial[i]) / d);
    ++used;
  }
  return total / used;
}

std::vector<double> codebook_pooled(const ImageTensor& x, const Tensor& atoms, std::size_t stride) {
  const auto g = gray(x);
  const std::size_t W = x.width(), P = atoms.dim(0), k = 7;
  std::vector<double> pos(P, 0.0), neg(P, 0.0);
  for (std::size_t y0 = 0; y0 + k <= x.height(); y0 += stride) {
    for (std::size_t x0 = 0; x0 + k <= W; x0 += stride) {
      double mean = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) mean += g[(y0 + a) * W + x0 + b];
      }
      mean /= 49.0;
      double ss = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
          const double d = g[(y0 + a) * W + x0 + b] - mean;
          ss += d * d;
        }
      }
      const double norm = std::sqrt(ss + 1e-6);
      for (std::size_t p = 0; p < P; ++p) {
        double dot = 0.0;
        for (std::size_t a = 0; a < k; ++a) {
          for (std::size_t b = 0; b < k; ++b) dot += atoms[(p * k + a) * k + b] * (g[(y0 + a) * W + x0 + b] - mean);
        }
        const double r = dot / norm;
        pos[p] = std::max(pos[p], r);
        neg[p] = std::max(neg[p], -r);
      }
    }
  }
  pos.insert(pos.end(), neg.begin(), neg.end());
  return pos;
}

double binomial_upper_tail(std::size_t n, std::size_t k, double p) {
  double total = 0.0;
  for (std::size_t j = k; j <= n; ++j) {
    total += std::exp(std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) + j * std::log(p) +
                      (n - j) * std::log1p(-p));
  }
  return total;
}

}  // namespace oracle
