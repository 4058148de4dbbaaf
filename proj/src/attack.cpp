#include "iqa/attack.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "iqa/image_io.hpp"
#include "iqa/rng.hpp"
#include "json.hpp"

namespace iqa::attack {

using ad::Expr;
using fidelity::AscentNorm;
using json = nlohmann::json;

std::string_view to_string(QualityScale s) { return s == QualityScale::calibrated ? "calibrated" : "raw"; }

QualityScale parse_scale(std::string_view id) {
  if (id == "calibrated") return QualityScale::calibrated;
  if (id == "raw") return QualityScale::raw;
  throw AttackError("unknown quality scale '" + std::string(id) + "'");
}

std::vector<double> log_spaced(double lo, double hi, std::size_t k) {
  if (k == 0) throw AttackError("log_spaced: need at least one value");
  if (!(lo > 0.0) || !(hi >= lo)) throw AttackError("log_spaced: need 0 < lo <= hi");
  if (k == 1) return {lo};
  std::vector<double> out(k);
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(k - 1));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

std::vector<double> default_lambdas() { return log_spaced(1e-3, 1e3, 32); }

void AttackConfig::validate() const {
  if (lambdas.empty()) throw AttackError("attack config: the lambda list is empty");
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw AttackError("attack config: lambdas must be finite and non-negative");
  }
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw AttackError("attack config: step size must be finite and non-negative");
  if (max_iterations < 1) throw AttackError("attack config: need at least one iteration");
  if (target && !std::isfinite(*target)) throw AttackError("attack config: target quality must be finite");
}

namespace {

Expr quality_expr(Expr x, const QualityModel& model, QualityScale scale) {
  return scale == QualityScale::calibrated ? model.calibrated(x) : model.raw(x);
}

double model_output(const ImageTensor& x, const QualityModel& model, QualityScale scale) {
  return scale == QualityScale::calibrated ? model.score(x) : model.raw_score(x);
}

}  // namespace

Expr objective(Expr x, Expr x0, double f0, const QualityModel& model, const fidelity::FidelityMeasure& d,
               double lambda, QualityScale scale) {
  if (!(lambda >= 0.0)) throw AttackError("objective: lambda must be non-negative");
  if (x.shape() != x0.shape()) throw ShapeError("objective", x.shape(), x0.shape());
  const Expr fid = d.build(x, x0);
  if (lambda == 0.0) return -fid;
  return ad::square(quality_expr(x, model, scale) - f0) * lambda - fid;
}

double objective(const ImageTensor& x, const ImageTensor& x0, double f0, const QualityModel& model,
                 const fidelity::FidelityMeasure& d, double lambda, QualityScale scale) {
  ad::Graph g;
  return g.forward(objective(g.constant(x.tensor()), g.constant(x0.tensor()), f0, model, d, lambda, scale));
}

Tensor steepest_direction(const Tensor& grad, AscentNorm p) {
  Tensor out(grad.shape());
  if (p == AscentNorm::linf) {
    for (std::size_t i = 0; i < grad.size(); ++i) out[i] = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    return out;
  }
  double ss = 0.0;
  for (double v : grad.values()) ss += v * v;
  if (ss == 0.0) return out;
  const double inv = 1.0 / std::sqrt(ss);
  for (std::size_t i = 0; i < grad.size(); ++i) out[i] = grad[i] * inv;
  return out;
}

ImageTensor initial_point(const ImageTensor& x0, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ImageTensor x = x0;
  for (auto& v : x.values()) {
    const auto r = static_cast<int>(rng() % 3) - 1;
    v += static_cast<double>(r) / 255.0;
  }
  x.clamp_unit();
  return x;
}

std::uint64_t candidate_seed(std::uint64_t seed, std::size_t index) { return mix_seed(seed, index); }

namespace {

struct AscentRun {
  ImageTensor image;
  std::vector<double> trace;
  std::size_t iterations = 0;
  bool failed = false;
  std::string stop_reason;
};

// Fixed-step ascent on `root` with respect to leaf `x`, clamped to [0, 1].
AscentRun ascend(ad::Graph& g, Expr x, Expr root, ImageTensor start, double gamma, std::size_t steps,
                 AscentNorm norm) {
  AscentRun run;
  run.image = std::move(start);
  run.stop_reason = "max-iterations";
  Tensor grad;
  for (std::size_t it = 0; it < steps; ++it) {
    g.bind(x, run.image.tensor());
    const double j = g.forward(root);
    if (!std::isfinite(j)) {
      run.failed = true;
      run.stop_reason = "non-finite objective at iteration " + std::to_string(it);
      return run;
    }
    run.trace.push_back(j);
    g.backward(root, x, grad);
    for (double v : grad.values()) {
      if (!std::isfinite(v)) {
        run.failed = true;
        run.stop_reason = "non-finite gradient at iteration " + std::to_string(it);
        return run;
      }
    }
    const Tensor dir = steepest_direction(grad, norm);
    bool moved = false;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      if (dir[i] == 0.0) continue;
      double& v = run.image[i];
      const double nv = std::clamp(v + gamma * dir[i], 0.0, 1.0);
      moved = moved || nv != v;
      v = nv;
    }
    ++run.iterations;
    if (!moved) {
      run.stop_reason = "stalled";
      break;
    }
  }
  return run;
}

}  // namespace

Candidate run_candidate(const ImageTensor& x0, double lambda, std::uint64_t seed, const AttackConfig& config,
                        const QualityModel& model, const fidelity::FidelityMeasure& d) {
  config.validate();
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw AttackError("run_candidate: lambda must be finite and >= 0");
  const double q0 = model_output(x0, model, config.scale);
  const double f0 = config.target.value_or(q0);

  Candidate c;
  c.lambda = lambda;
  c.seed = seed;

  ad::Graph g;
  const Expr x = g.input(x0.shape(), "x");
  const Expr root = objective(x, g.constant(x0.tensor()), f0, model, d, lambda, config.scale);
  auto run = ascend(g, x, root, initial_point(x0, seed), config.gamma, config.max_iterations, config.norm_for(d));
  c.trace = std::move(run.trace);
  c.iterations = run.iterations;
  c.failed = run.failed;
  c.stop_reason = std::move(run.stop_reason);
  c.image = std::move(run.image);
  c.image.quantize();
  c.fidelity = d(c.image, x0);
  c.raw = model.raw_score(c.image);
  c.quality = calibrate(c.raw, model.calibration());
  if (!std::isfinite(c.raw) || !std::isfinite(c.fidelity)) {
    c.failed = true;
    c.stop_reason = "non-finite score of the quantized candidate";
  }
  c.delta = c.quality - model.score(x0);
  return c;
}

CandidateSet run_sweep(const ImageTensor& x0, const AttackConfig& config, const QualityModel& model,
                       const fidelity::FidelityMeasure& d, std::string image_name) {
  config.validate();
  CandidateSet set;
  set.image_name = std::move(image_name);
  set.x0 = x0;
  set.model = std::string(model.id());
  set.measure = std::string(d.id());
  set.config = config;
  set.norm = config.norm_for(d);
  set.initial_raw = model.raw_score(x0);
  set.initial_quality = calibrate(set.initial_raw, model.calibration());
  if (!std::isfinite(set.initial_raw)) throw NumericalError("model output on the initial image is not finite");
  set.target = config.target.value_or(config.scale == QualityScale::calibrated ? set.initial_quality : set.initial_raw);
  AttackConfig fixed = config;
  fixed.target = set.target;

  const std::size_t k = config.lambdas.size();
  set.candidates.resize(k);
  std::vector<std::string> errors(k);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long i = 0; i < static_cast<long long>(k); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      set.candidates[idx] = run_candidate(x0, config.lambdas[idx], candidate_seed(config.seed, idx), fixed, model, d);
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
    set.candidates[idx].index = idx;
  }
  for (std::size_t i = 0; i < k; ++i) {
    auto& c = set.candidates[i];
    if (!errors[i].empty()) {
      c.lambda = config.lambdas[i];
      c.seed = candidate_seed(config.seed, i);
      c.failed = true;
      c.stop_reason = errors[i];
      c.image = initial_point(x0, c.seed);
      c.image.quantize();
    }
  }
  return set;
}

EnhanceResult enhance(const ImageTensor& x0, std::size_t steps, const QualityModel& model, double gamma,
                      AscentNorm norm, std::uint64_t seed) {
  if (steps < 1) throw AttackError("enhance: steps must be at least 1");
  if (!(gamma > 0.0)) throw AttackError("enhance: step size must be positive");
  EnhanceResult r;
  r.initial_quality = model.score(x0);
  ad::Graph g;
  const Expr x = g.input(x0.shape(), "x");
  const Expr root = model.calibrated(x);
  auto run = ascend(g, x, root, initial_point(x0, seed), gamma, steps, norm);
  if (run.failed) throw NumericalError("enhance: " + run.stop_reason);
  r.trace = std::move(run.trace);
  r.iterations = run.iterations;
  r.stop_reason = std::move(run.stop_reason);
  r.image = std::move(run.image);
  r.image.quantize();
  r.final_quality = model.score(r.image);
  return r;
}

std::string candidate_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "candidate_%02zu.png", index);
  return buf;
}

void save_candidate_set(const std::filesystem::path& dir, const CandidateSet& set) {
  std::filesystem::create_directories(dir);
  io::write_png(dir / "x0.png", set.x0);
  json m;
  m["image"] = set.image_name;
  m["model"] = set.model;
  m["measure"] = set.measure;
  m["norm"] = std::string(fidelity::to_string(set.norm));
  m["scale"] = std::string(to_string(set.config.scale));
  m["gamma"] = set.config.gamma;
  m["max_iterations"] = set.config.max_iterations;
  m["seed"] = set.config.seed;
  m["target"] = set.target;
  m["target_source"] = set.config.target ? "given" : "model";
  m["initial_raw"] = set.initial_raw;
  m["initial_quality"] = set.initial_quality;
  m["lambdas"] = set.config.lambdas;
  json cands = json::array();
  for (const auto& c : set.candidates) {
    const std::string file = candidate_file_name(c.index);
    io::write_png(dir / file, c.image);
    json j;
    j["index"] = c.index;
    j["file"] = file;
    j["lambda"] = c.lambda;
    j["seed"] = c.seed;
    j["fidelity"] = c.fidelity;
    j["raw"] = c.raw;
    j["quality"] = c.quality;
    j["delta"] = c.delta;
    j["iterations"] = c.iterations;
    j["failed"] = c.failed;
    j["stop_reason"] = c.stop_reason;
    j["trace"] = c.trace;
    cands.push_back(std::move(j));
  }
  m["candidates"] = std::move(cands);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << '\n';
}

CandidateSet load_candidate_set(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw AttackError("no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw AttackError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  CandidateSet set;
  try {
    set.image_name = m.at("image").get<std::string>();
    set.model = m.at("model").get<std::string>();
    set.measure = m.at("measure").get<std::string>();
    set.norm = fidelity::parse_norm(m.at("norm").get<std::string>());
    set.config.norm = set.norm;
    set.config.scale = parse_scale(m.at("scale").get<std::string>());
    set.config.gamma = m.at("gamma").get<double>();
    set.config.max_iterations = m.at("max_iterations").get<std::size_t>();
    set.config.seed = m.at("seed").get<std::uint64_t>();
    set.target = m.at("target").get<double>();
    if (m.at("target_source").get<std::string>() == "given") set.config.target = set.target;
    set.initial_raw = m.at("initial_raw").get<double>();
    set.initial_quality = m.at("initial_quality").get<double>();
    set.config.lambdas = m.at("lambdas").get<std::vector<double>>();
    set.x0 = io::read_image(dir / "x0.png");
    for (const auto& j : m.at("candidates")) {
      Candidate c;
      c.index = j.at("index").get<std::size_t>();
      c.lambda = j.at("lambda").get<double>();
      c.seed = j.at("seed").get<std::uint64_t>();
      c.fidelity = j.at("fidelity").get<double>();
      c.raw = j.at("raw").get<double>();
      c.quality = j.at("quality").get<double>();
      c.delta = j.at("delta").get<double>();
      c.iterations = j.at("iterations").get<std::size_t>();
      c.failed = j.at("failed").get<bool>();
      c.stop_reason = j.at("stop_reason").get<std::string>();
      c.trace = j.at("trace").get<std::vector<double>>();
      c.image = io::read_image(dir / j.at("file").get<std::string>());
      set.candidates.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw AttackError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return set;
}

}  // namespace iqa::attack
