#include "iqa/weight_set.hpp"

namespace iqa {

WeightSet::WeightSet(std::filesystem::path dir) : dir_(std::move(dir)), store_(WeightStore::load(dir_ / kWeightFile)) {}

std::unique_ptr<QualityModel> WeightSet::model(ModelKind kind) const {
  auto m = load_model(kind, store_);
  m->set_calibration(load_calibration(calibration_path(dir_, kind)));
  return m;
}

fidelity::FidelityMeasure WeightSet::measure(fidelity::MeasureKind kind) const {
  using fidelity::FidelityMeasure;
  switch (kind) {
    case fidelity::MeasureKind::chebyshev: return FidelityMeasure::make_chebyshev();
    case fidelity::MeasureKind::neg_ssim: return FidelityMeasure::make_neg_ssim();
    case fidelity::MeasureKind::feature_l2: return FidelityMeasure::make_feature_l2(FeatureExtractor::from_weights(store_));
    case fidelity::MeasureKind::structure_texture:
      return FidelityMeasure::make_structure_texture(FeatureExtractor::from_weights(store_));
  }
  throw std::logic_error("unreachable measure kind");
}

std::vector<std::filesystem::path> WeightSet::files_for(ModelKind kind) const {
  return {weight_file(), calibration_path(dir_, kind)};
}

}  // namespace iqa
