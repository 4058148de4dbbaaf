#include "iqa/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace iqa {

void CalibrationParams::validate() const {
  if (!(beta1 > beta2)) throw CalibrationError("calibration requires beta1 > beta2");
  if (beta4 == 0.0 || !std::isfinite(beta4) || !std::isfinite(beta3)) {
    throw CalibrationError("calibration requires a finite beta3 and a finite non-zero beta4");
  }
}

double calibrate(double raw, const CalibrationParams& p) {
  if (!std::isfinite(raw)) throw CalibrationError("calibrate: raw score is not finite");
  const double t = (raw - p.beta3) / std::fabs(p.beta4);
  const double s = t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  return (p.beta1 - p.beta2) * s + p.beta2;
}

ad::Expr calibrate(ad::Expr raw, const CalibrationParams& p) {
  p.validate();
  return ad::sigmoid((raw - p.beta3) * (1.0 / std::fabs(p.beta4))) * (p.beta1 - p.beta2) + p.beta2;
}

double calibration_rmse(const CalibrationParams& p, const std::vector<double>& raw, const std::vector<double>& targets) {
  double acc = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double e = calibrate(raw[i], p) - targets[i];
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(raw.size()));
}

namespace {

struct Fitter {
  const std::vector<double>& raw;
  const std::vector<double>& targets;
  CalibrationParams p;

  double loss(double b3, double log_b4) {
    p.beta3 = b3;
    p.beta4 = std::exp(log_b4);
    double acc = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double e = calibrate(raw[i], p) - targets[i];
      acc += e * e;
    }
    return acc;
  }
};

// Golden-section minimisation of f on [lo, hi].
template <typename F>
double golden(F f, double lo, double hi, int iterations) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iterations; ++i) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

}  // namespace

CalibrationParams fit_calibration(const std::vector<double>& raw, const std::vector<double>& targets,
                                  const std::string& model) {
  if (raw.size() != targets.size()) throw CalibrationError("fit_calibration: raw and target counts differ");
  if (raw.size() < 4) throw CalibrationError("fit_calibration: at least 4 pairs are required");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i]) || !std::isfinite(targets[i])) throw CalibrationError("fit_calibration: non-finite input");
    if (targets[i] < 0.0 || targets[i] > 10.0) throw CalibrationError("fit_calibration: targets must lie in [0, 10]");
  }
  const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
  const double rmin = *lo_it, rmax = *hi_it;
  const double spread = rmax - rmin;
  if (!(spread > 0.0)) throw CalibrationError("fit_calibration: all raw scores are equal, beta4 is unidentifiable");

  Fitter fit{raw, targets, {}};
  fit.p.model = model;

  // Coarse grid over log|b4|, each with a scan plus golden refinement in b3.
  const int n_scale = 321;
  const double log_lo = std::log(spread * 1e-4), log_hi = std::log(spread * 1e12);
  double best = std::numeric_limits<double>::infinity(), best_b3 = 0.0, best_lb4 = 0.0;
  auto line_b3 = [&](double lb4, double& b3_out) {
    const double s = std::exp(lb4);
    const double lo = rmin - 25.0 * s, hi = rmax + 25.0 * s;
    const int n = 200;
    double bl = std::numeric_limits<double>::infinity();
    int bi = 0;
    for (int i = 0; i <= n; ++i) {
      const double b3 = lo + (hi - lo) * i / n;
      const double l = fit.loss(b3, lb4);
      if (l < bl) {
        bl = l;
        bi = i;
      }
    }
    const double step = (hi - lo) / n;
    const double c = lo + step * bi;
    b3_out = golden([&](double b3) { return fit.loss(b3, lb4); }, c - step, c + step, 80);
    return fit.loss(b3_out, lb4);
  };
  for (int k = 0; k < n_scale; ++k) {
    const double lb4 = log_lo + (log_hi - log_lo) * k / (n_scale - 1);
    double b3 = 0.0;
    const double l = line_b3(lb4, b3);
    if (l < best) {
      best = l;
      best_b3 = b3;
      best_lb4 = lb4;
    }
  }

  // Coordinate descent: alternate one-dimensional golden searches with
  // brackets that follow the size of the last move.
  const double grid_step = (log_hi - log_lo) / (n_scale - 1);
  double w4 = grid_step, w3 = std::exp(best_lb4);
  for (int round = 0; round < 400; ++round) {
    const double lb4 = golden([&](double v) { return fit.loss(best_b3, v); }, best_lb4 - w4, best_lb4 + w4, 60);
    const double b3 = golden([&](double v) { return fit.loss(v, lb4); }, best_b3 - w3, best_b3 + w3, 60);
    const double l = fit.loss(b3, lb4);
    if (l > best) break;
    w4 = std::max(2.0 * std::fabs(lb4 - best_lb4), 1e-12);
    w3 = std::max(2.0 * std::fabs(b3 - best_b3), 1e-12 * (std::fabs(b3) + spread));
    const bool stalled = best - l <= 1e-18 * (1.0 + best);
    best = l;
    best_b3 = b3;
    best_lb4 = lb4;
    if (stalled) break;
  }

  CalibrationParams out;
  out.model = model;
  out.beta3 = best_b3;
  out.beta4 = std::exp(best_lb4);
  return out;
}

void save_calibration(const std::filesystem::path& path, const CalibrationParams& p) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CalibrationError("cannot write calibration file " + path.string());
  out.precision(17);
  out << "model=" << p.model << "\n"
      << "beta1=" << p.beta1 << "\n"
      << "beta2=" << p.beta2 << "\n"
      << "beta3=" << p.beta3 << "\n"
      << "beta4=" << p.beta4 << "\n";
}

CalibrationParams load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CalibrationError("cannot open calibration file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CalibrationError("malformed calibration line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  CalibrationParams p;
  auto number = [&](const char* key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw CalibrationError(std::string("calibration value '") + key + "' is not a number");
    }
  };
  if (!kv.count("beta3") || !kv.count("beta4")) throw CalibrationError("calibration file lacks beta3/beta4");
  p.model = kv.count("model") ? kv["model"] : "";
  p.beta1 = number("beta1", 10.0);
  p.beta2 = number("beta2", 0.0);
  p.beta3 = number("beta3", 0.0);
  p.beta4 = number("beta4", 1.0);
  p.validate();
  return p;
}

}  // namespace iqa
