#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "iqa/graph.hpp"

namespace iqa {

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Four-parameter logistic q(r) = (b1 - b2) / (1 + exp(-(r - b3) / |b4|)) + b2
/// with b1 = 10 and b2 = 0 held fixed.
struct CalibrationParams {
  std::string model;
  double beta1 = 10.0;
  double beta2 = 0.0;
  double beta3 = 0.0;
  double beta4 = 1.0;

  void validate() const;
};

double calibrate(double raw, const CalibrationParams& p);
ad::Expr calibrate(ad::Expr raw, const CalibrationParams& p);

/// Least-squares fit of beta3 and beta4. Needs at least 4 pairs, targets in
/// [beta2, beta1] and at least two distinct raw scores.
CalibrationParams fit_calibration(const std::vector<double>& raw, const std::vector<double>& targets,
                                  const std::string& model = {});
double calibration_rmse(const CalibrationParams& p, const std::vector<double>& raw, const std::vector<double>& targets);

/// Text file with one "key=value" per line: model, beta1 ... beta4.
void save_calibration(const std::filesystem::path& path, const CalibrationParams& p);
CalibrationParams load_calibration(const std::filesystem::path& path);

}  // namespace iqa
