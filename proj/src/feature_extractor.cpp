#include "iqa/feature_extractor.hpp"

#include <cmath>
#include <random>

namespace iqa {

FeatureExtractor::FeatureExtractor(std::vector<Stage> stages, std::vector<double> stage_weights)
    : stages_(std::move(stages)), stage_weights_(std::move(stage_weights)) {
  if (stages_.empty()) throw WeightError("feature extractor needs at least one stage");
  if (stage_weights_.size() != stages_.size()) throw WeightError("feature extractor: stage weight count mismatch");
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const auto& s = stages_[i];
    if (s.kernel.rank() != 4 || s.bias.shape() != Shape{s.kernel.dim(0)}) {
      throw WeightError("feature extractor stage " + std::to_string(i) + ": malformed kernel/bias");
    }
    if (i > 0 && s.kernel.dim(1) != stages_[i - 1].kernel.dim(0)) {
      throw WeightError("feature extractor stage " + std::to_string(i) + ": channel mismatch with previous stage");
    }
    if (s.texture_weights.size() != s.kernel.dim(0) || s.structure_weights.size() != s.kernel.dim(0)) {
      throw WeightError("feature extractor stage " + std::to_string(i) + ": term weight count mismatch");
    }
  }
}

std::size_t FeatureExtractor::input_channels() const { return stages_.front().kernel.dim(1); }

FeatureExtractor FeatureExtractor::from_weights(const WeightStore& store, const std::string& prefix) {
  std::vector<Stage> stages;
  for (std::size_t i = 0;; ++i) {
    const std::string base = prefix + ".stage" + std::to_string(i);
    if (!store.has(base + ".weight")) break;
    Stage s;
    s.kernel = store.get(base + ".weight");
    if (s.kernel.rank() != 4) throw WeightError("weight tensor '" + base + ".weight' must have rank 4");
    s.bias = store.get(base + ".bias", Shape{s.kernel.dim(0)});
    s.stride = store.has(base + ".stride") ? static_cast<std::size_t>(store.get(base + ".stride").item()) : 2;
    const auto& alpha = store.get(prefix + ".dists.alpha" + std::to_string(i), Shape{s.kernel.dim(0)});
    const auto& beta = store.get(prefix + ".dists.beta" + std::to_string(i), Shape{s.kernel.dim(0)});
    s.texture_weights.assign(alpha.values().begin(), alpha.values().end());
    s.structure_weights.assign(beta.values().begin(), beta.values().end());
    stages.push_back(std::move(s));
  }
  if (stages.empty()) throw WeightError("weight tensor '" + prefix + ".stage0.weight' is missing");
  const auto& w = store.get(prefix + ".lpips.weights", Shape{stages.size()});
  return FeatureExtractor(std::move(stages), std::vector<double>(w.values().begin(), w.values().end()));
}

FeatureExtractor FeatureExtractor::seeded(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t channels[] = {3, 8, 16, 32};
  std::size_t total = 0;
  for (std::size_t i = 1; i < 4; ++i) total += channels[i];
  std::vector<Stage> stages;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t ci = channels[i], co = channels[i + 1];
    Stage s;
    s.kernel = Tensor(Shape{co, ci, 3, 3});
    const double scale = std::sqrt(2.0 / static_cast<double>(ci * 9));
    for (auto& v : s.kernel.values()) v = normal(rng) * scale;
    s.bias = Tensor(Shape{co});
    for (auto& v : s.bias.values()) v = 0.01 * normal(rng);
    s.stride = 2;
    s.texture_weights.assign(co, 1.0 / (2.0 * static_cast<double>(total)));
    s.structure_weights.assign(co, 1.0 / (2.0 * static_cast<double>(total)));
    stages.push_back(std::move(s));
  }
  return FeatureExtractor(std::move(stages), std::vector<double>(3, 1.0 / 3.0));
}

FeatureExtractor FeatureExtractor::identity(std::size_t channels) {
  Stage s;
  s.kernel = Tensor(Shape{channels, channels, 1, 1});
  for (std::size_t c = 0; c < channels; ++c) s.kernel[c * channels + c] = 1.0;
  s.bias = Tensor(Shape{channels});
  s.stride = 1;
  s.texture_weights.assign(channels, 0.5 / static_cast<double>(channels));
  s.structure_weights.assign(channels, 0.5 / static_cast<double>(channels));
  return FeatureExtractor({std::move(s)}, {1.0});
}

void FeatureExtractor::store(WeightStore& store, const std::string& prefix) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string base = prefix + ".stage" + std::to_string(i);
    const auto& s = stages_[i];
    store.put(base + ".weight", s.kernel);
    store.put(base + ".bias", s.bias);
    store.put(base + ".stride", Tensor(Shape{1}, {static_cast<double>(s.stride)}));
    store.put(prefix + ".dists.alpha" + std::to_string(i), Tensor(Shape{s.texture_weights.size()}, s.texture_weights));
    store.put(prefix + ".dists.beta" + std::to_string(i), Tensor(Shape{s.structure_weights.size()}, s.structure_weights));
  }
  store.put(prefix + ".lpips.weights", Tensor(Shape{stage_weights_.size()}, stage_weights_));
}

FeatureExtractor FeatureExtractor::scaled(double factor) const {
  FeatureExtractor out = *this;
  for (auto& s : out.stages_) {
    for (auto& v : s.kernel.values()) v *= factor;
    for (auto& v : s.bias.values()) v *= factor;
  }
  return out;
}

std::vector<ad::Expr> FeatureExtractor::features(ad::Graph& g, ad::Expr x) const {
  if (x.shape().size() == 3 && x.shape()[2] == 1 && input_channels() != 1) {
    x = ad::broadcast_channels(x, input_channels());
  }
  std::vector<ad::Expr> out;
  for (const auto& s : stages_) {
    auto z = ad::conv2d(x, g.constant(s.kernel), s.stride, ad::Padding::same);
    x = ad::relu(ad::bias_add(z, g.constant(s.bias)));
    out.push_back(x);
  }
  return out;
}

}  // namespace iqa
