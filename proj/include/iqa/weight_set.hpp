#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include "iqa/fidelity.hpp"
#include "iqa/quality.hpp"
#include "iqa/weights.hpp"

namespace iqa {

/// A weight directory: default.iqaw plus one <model>.calib per model.
class WeightSet {
 public:
  static constexpr const char* kWeightFile = "default.iqaw";

  explicit WeightSet(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  const WeightStore& store() const { return store_; }
  std::filesystem::path weight_file() const { return dir_ / kWeightFile; }

  /// Model with its calibration attached.
  std::unique_ptr<QualityModel> model(ModelKind kind) const;
  fidelity::FidelityMeasure measure(fidelity::MeasureKind kind) const;
  /// Files a model or measure was read from, for run manifests.
  std::vector<std::filesystem::path> files_for(ModelKind kind) const;

 private:
  std::filesystem::path dir_;
  WeightStore store_;
};

}  // namespace iqa
