#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "iqa/calibration.hpp"
#include "iqa/graph.hpp"
#include "iqa/tensor.hpp"
#include "iqa/weights.hpp"

// No-reference quality models f_w. Each builds a differentiable graph from an
// (H, W, C) image to a raw scalar; the attached logistic calibration maps the
// raw score to the common [0, 10] scale.

namespace iqa {

enum class ModelKind { nss, codebook, cnn };

std::string_view to_string(ModelKind k);
ModelKind parse_model(std::string_view id);

class QualityModel {
 public:
  virtual ~QualityModel() = default;

  virtual ModelKind kind() const = 0;
  std::string_view id() const { return to_string(kind()); }
  /// Smallest supported height/width.
  virtual std::size_t min_size() const = 0;

  /// Pooled feature vector that feeds the regression head.
  virtual ad::Expr features(ad::Expr x) const = 0;
  /// Regression head applied to features(x).
  virtual ad::Expr head(ad::Expr features) const = 0;
  virtual void store(WeightStore& store) const = 0;

  ad::Expr raw(ad::Expr x) const;
  ad::Expr calibrated(ad::Expr x) const;

  double raw_score(const ImageTensor& x) const;
  double score(const ImageTensor& x) const;
  std::vector<double> feature_vector(const ImageTensor& x) const;

  const CalibrationParams& calibration() const { return calibration_; }
  void set_calibration(CalibrationParams p);

 protected:
  void check_input(ad::Expr x) const;

 private:
  CalibrationParams calibration_;
};

/// Local-normalization statistics model: MSCN coefficients and their
/// neighbour products at two scales, moment features, RBF-kernel regressor.
class NssModel final : public QualityModel {
 public:
  static constexpr std::size_t kFeatureCount = 40;
  static constexpr std::size_t kWindow = 7;
  static constexpr double kSigma = 7.0 / 6.0;
  static constexpr double kStabilizer = 1.0 / 255.0;

  struct Head {
    Tensor feature_mean;     // (40)
    Tensor feature_scale;    // (40)
    Tensor support_vectors;  // (S, 40), standardized space
    Tensor coefficients;     // (S)
    double bias = 0.0;
    double gamma = 0.05;
  };

  explicit NssModel(Head head);
  static NssModel from_weights(const WeightStore& store);

  ModelKind kind() const override { return ModelKind::nss; }
  std::size_t min_size() const override { return 2 * kWindow; }
  ad::Expr features(ad::Expr x) const override;
  ad::Expr head(ad::Expr features) const override;
  void store(WeightStore& store) const override;

  /// MSCN field of a single-channel map.
  static ad::Expr mscn(ad::Expr gray);

  const Head& head_params() const { return head_; }

 private:
  Head head_;
};

/// Patch-codebook model: contrast-normalized patches on a stride grid,
/// rectified positive/negative responses to P atoms, global max pooling,
/// linear head on the 2P pooled activations.
class CodebookModel final : public QualityModel {
 public:
  static constexpr std::size_t kPatch = 7;
  static constexpr std::size_t kStride = 2;
  static constexpr double kNormEps = 1e-6;

  /// `atoms` is (P, 1, 7, 7); atoms are made zero-mean and unit-norm.
  CodebookModel(Tensor atoms, Tensor head_weight, double head_bias);
  static CodebookModel from_weights(const WeightStore& store);

  ModelKind kind() const override { return ModelKind::codebook; }
  std::size_t min_size() const override { return kPatch; }
  ad::Expr features(ad::Expr x) const override;
  ad::Expr head(ad::Expr features) const override;
  void store(WeightStore& store) const override;

  /// (oh, ow, P) normalized responses before rectification.
  ad::Expr responses(ad::Expr x) const;

  const Tensor& atoms() const { return atoms_; }
  std::size_t atom_count() const { return atoms_.dim(0); }

 private:
  Tensor atoms_;
  Tensor head_weight_;  // (2P)
  double head_bias_;
};

/// Small convolutional regressor: three stride-2 conv stages with divisive
/// normalization y = z / sqrt(beta + gamma * z^2), pyramid max pooling over
/// 1x1 and 2x2 grids, linear head.
class CnnModel final : public QualityModel {
 public:
  struct Stage {
    Tensor kernel;  // (Cout, Cin, 3, 3)
    Tensor bias;    // (Cout)
    Tensor gamma;   // (Cout, Cout, 1, 1), non-negative
    Tensor beta;    // (Cout), positive
  };

  CnnModel(std::vector<Stage> stages, Tensor head_weight, double head_bias);
  static CnnModel from_weights(const WeightStore& store);

  ModelKind kind() const override { return ModelKind::cnn; }
  std::size_t min_size() const override { return 13; }
  ad::Expr features(ad::Expr x) const override;
  ad::Expr head(ad::Expr features) const override;
  void store(WeightStore& store) const override;

  std::size_t feature_count() const;
  const std::vector<Stage>& stages() const { return stages_; }

 private:
  std::vector<Stage> stages_;
  Tensor head_weight_;
  double head_bias_;
};

std::unique_ptr<QualityModel> load_model(ModelKind kind, const WeightStore& store);

/// Returns "<dir>/<id>.calib" for the shipped calibrations.
std::filesystem::path calibration_path(const std::filesystem::path& dir, ModelKind kind);

}  // namespace iqa
