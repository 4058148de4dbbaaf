#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iqa/graph.hpp"
#include "iqa/weights.hpp"

namespace iqa {

/// Small convolutional feature pyramid: each stage is conv (same padding,
/// stride s) + bias + rectifier. Used by the deep-feature fidelity measures.
class FeatureExtractor {
 public:
  struct Stage {
    Tensor kernel;  // (Cout, Cin, K, K)
    Tensor bias;    // (Cout)
    std::size_t stride = 2;
    // per-channel weights of the texture and structure terms
    std::vector<double> texture_weights;
    std::vector<double> structure_weights;
  };

  FeatureExtractor() = default;
  explicit FeatureExtractor(std::vector<Stage> stages, std::vector<double> stage_weights);

  /// Reads "<prefix>.stage<i>.{weight,bias,stride}", "<prefix>.lpips.weights" and
  /// "<prefix>.dists.{alpha,beta}<i>".
  static FeatureExtractor from_weights(const WeightStore& store, const std::string& prefix = "extractor");
  /// 3-stage 3->8->16->32 extractor with He-initialised kernels.
  static FeatureExtractor seeded(std::uint64_t seed);
  /// One stage, 1x1 identity kernel, stride 1.
  static FeatureExtractor identity(std::size_t channels);

  void store(WeightStore& store, const std::string& prefix = "extractor") const;

  std::size_t stage_count() const { return stages_.size(); }
  std::size_t input_channels() const;
  const Stage& stage(std::size_t i) const { return stages_.at(i); }
  const std::vector<double>& stage_weights() const { return stage_weights_; }

  /// Copy with every kernel and bias multiplied by `factor`.
  FeatureExtractor scaled(double factor) const;

  /// Per-stage rectified feature maps of an (H, W, C) input.
  std::vector<ad::Expr> features(ad::Graph& g, ad::Expr x) const;

 private:
  std::vector<Stage> stages_;
  std::vector<double> stage_weights_;
};

}  // namespace iqa
