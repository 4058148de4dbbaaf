#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iqa/fidelity.hpp"
#include "iqa/quality.hpp"
#include "iqa/tensor.hpp"

// Lagrangian counterexample search: maximize
//   J(x) = -D(x, x0) + lambda * (q(f_w(x)) - f0)^2
// by fixed-step steepest ascent inside [0, 1], one run per lambda.

namespace iqa::attack {

class AttackError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when the objective or a model output stops being finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Which model output enters the squared discrepancy.
enum class QualityScale { calibrated, raw };

std::string_view to_string(QualityScale s);
QualityScale parse_scale(std::string_view id);

/// `k` values spaced evenly in log10 between `lo` and `hi` inclusive.
std::vector<double> log_spaced(double lo, double hi, std::size_t k);
/// 32 values over [1e-3, 1e3].
std::vector<double> default_lambdas();

struct AttackConfig {
  std::vector<double> lambdas = default_lambdas();
  double gamma = 1e-3;
  std::size_t max_iterations = 200;
  std::optional<fidelity::AscentNorm> norm;  // unset: follow the measure
  std::uint64_t seed = 0;
  /// f0; unset means the model's own prediction on x0.
  std::optional<double> target;
  QualityScale scale = QualityScale::calibrated;

  void validate() const;
  fidelity::AscentNorm norm_for(const fidelity::FidelityMeasure& d) const {
    return norm ? *norm : d.ascent_norm();
  }
};

/// Graph of J for a given input leaf `x` and constant reference `x0`.
ad::Expr objective(ad::Expr x, ad::Expr x0, double f0, const QualityModel& model,
                   const fidelity::FidelityMeasure& d, double lambda, QualityScale scale = QualityScale::calibrated);
double objective(const ImageTensor& x, const ImageTensor& x0, double f0, const QualityModel& model,
                 const fidelity::FidelityMeasure& d, double lambda, QualityScale scale = QualityScale::calibrated);

/// linf: elementwise sign with sign(0) = 0. l2: grad / |grad| (zero if grad is 0).
Tensor steepest_direction(const Tensor& grad, fidelity::AscentNorm p);

/// Starting point clamp(x0 + eps), eps uniform over {-1, 0, 1} / 255.
ImageTensor initial_point(const ImageTensor& x0, std::uint64_t seed);

struct Candidate {
  std::size_t index = 0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  ImageTensor image;
  double fidelity = 0.0;        // D(y, x0)
  double raw = 0.0;             // f_w(y)
  double quality = 0.0;         // q(f_w(y))
  double delta = 0.0;           // q(f_w(y)) - q(f_w(x0)), signed
  std::vector<double> trace;    // J at each iterate before its step
  std::size_t iterations = 0;   // steps actually taken
  bool failed = false;
  std::string stop_reason;      // "max-iterations", "stalled" (no pixel moved) or a failure diagnostic

  double abs_delta() const { return delta < 0.0 ? -delta : delta; }
};

struct CandidateSet {
  std::string image_name;
  ImageTensor x0;
  std::string model;
  std::string measure;
  AttackConfig config;
  fidelity::AscentNorm norm = fidelity::AscentNorm::linf;
  double target = 0.0;          // f0 actually used
  double initial_raw = 0.0;
  double initial_quality = 0.0;
  std::vector<Candidate> candidates;
};

/// Per-candidate seed derived from the sweep seed and the candidate index.
std::uint64_t candidate_seed(std::uint64_t seed, std::size_t index);

Candidate run_candidate(const ImageTensor& x0, double lambda, std::uint64_t seed, const AttackConfig& config,
                        const QualityModel& model, const fidelity::FidelityMeasure& d);
/// One candidate per lambda, in the order of config.lambdas. Candidates run in
/// parallel; results do not depend on the number of threads.
CandidateSet run_sweep(const ImageTensor& x0, const AttackConfig& config, const QualityModel& model,
                       const fidelity::FidelityMeasure& d, std::string image_name = {});

struct EnhanceResult {
  ImageTensor image;
  double initial_quality = 0.0;
  double final_quality = 0.0;
  std::vector<double> trace;    // q at each iterate before its step
  std::size_t iterations = 0;
  std::string stop_reason;
};

/// Steepest ascent on q(f_w(x)) alone from clamp(x0 + eps).
EnhanceResult enhance(const ImageTensor& x0, std::size_t steps, const QualityModel& model, double gamma = 1e-3,
                      fidelity::AscentNorm norm = fidelity::AscentNorm::linf, std::uint64_t seed = 0);

/// Directory layout: manifest.json, x0.png, candidate_NN.png.
void save_candidate_set(const std::filesystem::path& dir, const CandidateSet& set);
CandidateSet load_candidate_set(const std::filesystem::path& dir);
std::string candidate_file_name(std::size_t index);

}  // namespace iqa::attack
