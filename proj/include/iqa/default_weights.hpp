#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "iqa/calibration.hpp"
#include "iqa/quality.hpp"
#include "iqa/weights.hpp"

// Builds the shipped weight set: a seeded feature extractor and the three
// quality models with heads regressed onto proxy opinion scores of a
// synthetic training set, followed by the logistic calibration of each model.

namespace iqa {

struct WeightGenOptions {
  std::uint64_t seed = 20190611;
  std::size_t scenes = 60;
  std::size_t per_scene = 8;
  std::size_t image_size = 64;
  std::size_t support_vectors = 64;
  std::size_t codebook_atoms = 64;
};

struct GeneratedWeights {
  WeightStore store;  // already rounded to on-disk precision
  std::map<ModelKind, CalibrationParams> calibrations;
  std::map<ModelKind, double> training_srcc;
};

GeneratedWeights generate_default_weights(const WeightGenOptions& opt = {});

/// Writes default.iqaw and one <model>.calib per model into `dir`.
void write_weight_set(const std::filesystem::path& dir, const GeneratedWeights& w);

}  // namespace iqa
