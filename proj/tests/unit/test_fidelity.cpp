#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "iqa/fidelity.hpp"
#include "oracles.hpp"

using namespace iqa;
using namespace iqa::fidelity;

namespace {

FeatureExtractor zero_bias_extractor(std::uint64_t seed) {
  const auto fe = FeatureExtractor::seeded(seed);
  std::vector<FeatureExtractor::Stage> stages;
  for (std::size_t s = 0; s < fe.stage_count(); ++s) {
    auto st = fe.stage(s);
    st.bias.fill(0.0);
    stages.push_back(st);
  }
  return FeatureExtractor(stages, fe.stage_weights());
}

}  // namespace

TEST_CASE("chebyshev distance") {
  std::mt19937_64 rng(1);
  auto x0 = oracle::random_image(8, 8, 3, rng);
  CHECK(chebyshev(x0, x0) == 0.0);
  auto x = x0;
  x.at(3, 4, 0) += 0.1;
  CHECK(chebyshev(x, x0) == doctest::Approx(0.1).epsilon(1e-12));
  for (int t = 0; t < 100; ++t) {
    const auto a = oracle::random_image(9, 7, 3, rng), b = oracle::random_image(9, 7, 3, rng);
    CHECK(chebyshev(a, b) == oracle::chebyshev(a, b));
    CHECK(chebyshev(a, b) == chebyshev(b, a));
  }
  CHECK_THROWS_AS(chebyshev(ImageTensor(8, 8, 3), ImageTensor(8, 8, 1)), ShapeError);
}

TEST_CASE("negated SSIM") {
  std::mt19937_64 rng(2);
  auto x0 = oracle::random_image(32, 32, 3, rng);
  CHECK(neg_ssim(x0, x0) == doctest::Approx(-1.0).epsilon(1e-14));
  ImageTensor inv = x0;
  for (auto& v : inv.values()) v = 1.0 - v;
  const double d = neg_ssim(inv, x0);
  CHECK(d > -1.0);
  CHECK(d < 1.0);
  for (int t = 0; t < 100; ++t) {
    const std::size_t c = t % 2 ? 3 : 1;
    const auto a = oracle::random_image(32, 32, c, rng), b = oracle::random_image(32, 32, c, rng);
    CHECK(std::fabs(neg_ssim(a, b) + oracle::ssim(a, b)) <= 1e-10);
  }
  CHECK_THROWS_AS(neg_ssim(ImageTensor(10, 32, 1), ImageTensor(10, 32, 1)), ShapeError);
}

TEST_CASE("feature distance") {
  std::mt19937_64 rng(3);
  const auto fe = FeatureExtractor::seeded(5);
  const auto x0 = oracle::random_image(16, 16, 3, rng);
  CHECK(feature_l2(x0, x0, fe) == 0.0);
  for (int t = 0; t < 20; ++t) {
    const auto a = oracle::random_image(16, 16, 3, rng), b = oracle::random_image(16, 16, 3, rng);
    CHECK(std::fabs(feature_l2(a, b, fe) - oracle::feature_l2(a, b, fe)) <= 1e-10);
  }
  SUBCASE("scale invariance of the normalized features") {
    const auto z = zero_bias_extractor(6);
    const auto a = oracle::random_image(16, 16, 3, rng), b = oracle::random_image(16, 16, 3, rng);
    CHECK(feature_l2(a, b, z.scaled(2.0)) == doctest::Approx(feature_l2(a, b, z)).epsilon(1e-9));
  }
  SUBCASE("identity extractor reduces to unit-normalized pixel differences") {
    const auto id = FeatureExtractor::identity(3);
    const auto a = oracle::random_image(6, 5, 3, rng), b = oracle::random_image(6, 5, 3, rng);
    double expect = 0.0;
    for (std::size_t y = 0; y < 6; ++y) {
      for (std::size_t x = 0; x < 5; ++x) {
        double na = 0, nb = 0;
        for (std::size_t c = 0; c < 3; ++c) {
          na += a.at(y, x, c) * a.at(y, x, c);
          nb += b.at(y, x, c) * b.at(y, x, c);
        }
        for (std::size_t c = 0; c < 3; ++c) {
          const double d = a.at(y, x, c) / std::sqrt(na + 1e-10) - b.at(y, x, c) / std::sqrt(nb + 1e-10);
          expect += d * d;
        }
      }
    }
    CHECK(feature_l2(a, b, id) == doctest::Approx(expect / 30.0).epsilon(1e-12));
  }
}

TEST_CASE("structure-texture distance") {
  std::mt19937_64 rng(4);
  const auto fe = FeatureExtractor::seeded(5);
  const auto x0 = oracle::random_image(16, 16, 3, rng);
  CHECK(structure_texture(x0, x0, fe) == doctest::Approx(-1.0).epsilon(1e-12));
  for (int t = 0; t < 20; ++t) {
    const auto a = oracle::random_image(16, 16, 3, rng), b = oracle::random_image(16, 16, 3, rng);
    CHECK(std::fabs(structure_texture(a, b, fe) - oracle::structure_texture(a, b, fe)) <= 1e-10);
  }
  SUBCASE("a constant shift changes texture only") {
    const auto id = FeatureExtractor::identity(3);
    auto a = oracle::random_image(8, 8, 3, rng);
    for (auto& v : a.values()) v *= 0.5;
    auto shifted = a;
    for (auto& v : shifted.values()) v += 0.3;
    const auto terms = structure_texture_terms(shifted, a, id);
    CHECK(terms.texture < 1.0);
    CHECK(terms.structure == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("every measure is minimized at the reference") {
  std::mt19937_64 rng(7);
  const auto fe = FeatureExtractor::seeded(5);
  std::vector<FidelityMeasure> measures = {FidelityMeasure::make_chebyshev(), FidelityMeasure::make_neg_ssim(),
                                           FidelityMeasure::make_feature_l2(fe),
                                           FidelityMeasure::make_structure_texture(fe)};
  const auto x0 = oracle::random_image(16, 16, 3, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(1e-3, 0.5);
  for (const auto& m : measures) {
    CAPTURE(m.id());
    const double base = m(x0, x0);
    int violations = 0;
    for (int t = 0; t < 250; ++t) {
      auto x = x0;
      const double s = scale(rng);
      for (auto& v : x.values()) v = std::clamp(v + s * n(rng), 0.0, 1.0);
      if (m(x, x0) < base - 1e-12) ++violations;
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("measure gradients match finite differences") {
  std::mt19937_64 rng(8);
  const auto fe = FeatureExtractor::seeded(5);
  std::vector<FidelityMeasure> measures = {FidelityMeasure::make_neg_ssim(), FidelityMeasure::make_feature_l2(fe),
                                           FidelityMeasure::make_structure_texture(fe),
                                           FidelityMeasure::make_chebyshev()};
  for (const auto& m : measures) {
    CAPTURE(m.id());
    ad::Graph g;
    auto x = g.input(Shape{16, 16, 3});
    const auto x0 = oracle::random_image(16, 16, 3, rng);
    auto root = m.build(x, g.constant(x0.tensor()));
    const auto r = gradcheck::check(g, root, x, oracle::random_image(16, 16, 3, rng).tensor(), 150, rng);
    CHECK(r.checked() >= 100);
    CHECK(r.pass_fraction() >= 0.99);
  }
}

TEST_CASE("measure ids parse") {
  CHECK(parse_measure("chebyshev") == MeasureKind::chebyshev);
  CHECK(parse_measure("neg-ssim") == MeasureKind::neg_ssim);
  CHECK(parse_measure("feature-l2") == MeasureKind::feature_l2);
  CHECK(parse_measure("structure-texture") == MeasureKind::structure_texture);
  CHECK_THROWS_AS(parse_measure("psnr"), std::invalid_argument);
  CHECK(FidelityMeasure::make_chebyshev().ascent_norm() == AscentNorm::linf);
  CHECK(FidelityMeasure::make_neg_ssim().ascent_norm() == AscentNorm::l2);
}
