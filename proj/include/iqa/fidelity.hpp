#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "iqa/feature_extractor.hpp"
#include "iqa/graph.hpp"
#include "iqa/tensor.hpp"

// Full-reference distances D(x, x0). Larger always means more distorted:
// similarity indices are negated, so D(x0, x0) is 0 for the distances and -1
// for the negated similarities.

namespace iqa::fidelity {

enum class MeasureKind { chebyshev, neg_ssim, feature_l2, structure_texture };
enum class AscentNorm { linf, l2 };

std::string_view to_string(MeasureKind k);
MeasureKind parse_measure(std::string_view id);
std::string_view to_string(AscentNorm n);
AscentNorm parse_norm(std::string_view id);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

/// Stabilisers of the feature-space structure/texture terms.
inline constexpr double kTextureC1 = 1e-6;
inline constexpr double kStructureC2 = 1e-6;
/// Added under the square root of the per-position channel norm.
inline constexpr double kUnitNormEps = 1e-10;

/// Differentiable fixed luminance front-end; identity for one channel.
ad::Expr grayscale(ad::Expr x);

ad::Expr chebyshev(ad::Expr x, ad::Expr x0);
ad::Expr neg_ssim(ad::Expr x, ad::Expr x0, const SsimParams& p = {});
ad::Expr feature_l2(ad::Expr x, ad::Expr x0, const FeatureExtractor& fe);
ad::Expr structure_texture(ad::Expr x, ad::Expr x0, const FeatureExtractor& fe);

struct StructureTextureTerms {
  double texture = 0.0;    // weighted mean of the mean-similarity terms
  double structure = 0.0;  // weighted mean of the covariance-similarity terms
};

// Plain evaluators.
double chebyshev(const ImageTensor& x, const ImageTensor& x0);
double neg_ssim(const ImageTensor& x, const ImageTensor& x0, const SsimParams& p = {});
double feature_l2(const ImageTensor& x, const ImageTensor& x0, const FeatureExtractor& fe);
double structure_texture(const ImageTensor& x, const ImageTensor& x0, const FeatureExtractor& fe);
StructureTextureTerms structure_texture_terms(const ImageTensor& x, const ImageTensor& x0, const FeatureExtractor& fe);

/// One of the four measures with its parameters bound.
class FidelityMeasure {
 public:
  static FidelityMeasure make_chebyshev();
  static FidelityMeasure make_neg_ssim(SsimParams p = {});
  static FidelityMeasure make_feature_l2(FeatureExtractor fe);
  static FidelityMeasure make_structure_texture(FeatureExtractor fe);

  MeasureKind kind() const { return kind_; }
  std::string_view id() const { return to_string(kind_); }
  /// Chebyshev pairs with the l-inf steepest direction, the rest with l2.
  AscentNorm ascent_norm() const { return kind_ == MeasureKind::chebyshev ? AscentNorm::linf : AscentNorm::l2; }

  ad::Expr build(ad::Expr x, ad::Expr x0) const;
  double operator()(const ImageTensor& x, const ImageTensor& x0) const;

 private:
  FidelityMeasure(MeasureKind k) : kind_(k) {}
  MeasureKind kind_;
  SsimParams ssim_;
  std::shared_ptr<const FeatureExtractor> extractor_;
};

}  // namespace iqa::fidelity
