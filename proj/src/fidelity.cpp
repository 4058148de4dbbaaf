#include "iqa/fidelity.hpp"

#include <stdexcept>

namespace iqa::fidelity {

using ad::Expr;

std::string_view to_string(MeasureKind k) {
  switch (k) {
    case MeasureKind::chebyshev: return "chebyshev";
    case MeasureKind::neg_ssim: return "neg-ssim";
    case MeasureKind::feature_l2: return "feature-l2";
    case MeasureKind::structure_texture: return "structure-texture";
  }
  return "?";
}

MeasureKind parse_measure(std::string_view id) {
  if (id == "chebyshev") return MeasureKind::chebyshev;
  if (id == "neg-ssim" || id == "ssim") return MeasureKind::neg_ssim;
  if (id == "feature-l2" || id == "lpips") return MeasureKind::feature_l2;
  if (id == "structure-texture" || id == "dists") return MeasureKind::structure_texture;
  throw std::invalid_argument("unknown fidelity measure '" + std::string(id) + "'");
}

std::string_view to_string(AscentNorm n) { return n == AscentNorm::linf ? "linf" : "l2"; }

AscentNorm parse_norm(std::string_view id) {
  if (id == "linf" || id == "inf") return AscentNorm::linf;
  if (id == "l2") return AscentNorm::l2;
  throw std::invalid_argument("unknown ascent norm '" + std::string(id) + "'");
}

Expr grayscale(Expr x) {
  if (x.shape().size() == 3 && x.shape()[2] == 3) return ad::channel_weighted_sum(x, {0.299, 0.587, 0.114});
  return x;
}

namespace {

void require_same(const char* op, Expr x, Expr x0) {
  if (x.shape() != x0.shape()) throw ShapeError(op, x.shape(), x0.shape());
}

}  // namespace

Expr chebyshev(Expr x, Expr x0) {
  require_same("chebyshev", x, x0);
  return ad::max(ad::abs(x - x0));
}

Expr neg_ssim(Expr x, Expr x0, const SsimParams& p) {
  require_same("neg-ssim", x, x0);
  if (x.shape()[0] < p.window || x.shape()[1] < p.window) {
    throw ShapeError("neg-ssim", "image " + iqa::to_string(x.shape()) + " is smaller than the " +
                                     std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
  }
  const Expr a = grayscale(x);
  const Expr b = grayscale(x0);
  const auto valid = ad::Padding::valid;
  const Expr mu_a = ad::local_mean(a, p.window, p.sigma, valid);
  const Expr mu_b = ad::local_mean(b, p.window, p.sigma, valid);
  const Expr var_a = ad::local_variance(a, mu_a, p.window, p.sigma, valid);
  const Expr var_b = ad::local_variance(b, mu_b, p.window, p.sigma, valid);
  const Expr cov = ad::local_mean(a * b, p.window, p.sigma, valid) - mu_a * mu_b;
  const Expr num = (2.0 * (mu_a * mu_b) + p.c1()) * (2.0 * cov + p.c2());
  const Expr den = (ad::square(mu_a) + ad::square(mu_b) + p.c1()) * (var_a + var_b + p.c2());
  return -ad::mean(num / den);
}

namespace {

// Unit-normalises each spatial position across channels.
Expr unit_normalize(Expr f) {
  const std::size_t c = f.shape()[2];
  const Expr norm = ad::sqrt(ad::channel_weighted_sum(ad::square(f), std::vector<double>(c, 1.0)) + kUnitNormEps);
  return f / ad::broadcast_channels(norm, c);
}

struct TermExprs {
  Expr texture;
  Expr structure;
};

TermExprs structure_texture_exprs(Expr x, Expr x0, const FeatureExtractor& fe) {
  require_same("structure-texture", x, x0);
  ad::Graph& g = x.graph();
  const auto fx = fe.features(g, x);
  const auto fy = fe.features(g, x0);
  Expr texture, structure;
  for (std::size_t s = 0; s < fx.size(); ++s) {
    const auto& st = fe.stage(s);
    const std::size_t c = st.kernel.dim(0);
    const Expr mx = ad::spatial_mean(fx[s]);
    const Expr my = ad::spatial_mean(fy[s]);
    const Expr vx = ad::spatial_mean(ad::square(fx[s])) - ad::square(mx);
    const Expr vy = ad::spatial_mean(ad::square(fy[s])) - ad::square(my);
    const Expr cxy = ad::spatial_mean(fx[s] * fy[s]) - mx * my;
    const Expr l = (2.0 * (mx * my) + kTextureC1) / (ad::square(mx) + ad::square(my) + kTextureC1);
    const Expr r = (2.0 * cxy + kStructureC2) / (vx + vy + kStructureC2);
    const Expr alpha = g.constant(Tensor(Shape{1, 1, c}, st.texture_weights));
    const Expr beta = g.constant(Tensor(Shape{1, 1, c}, st.structure_weights));
    const Expr t = ad::sum(alpha * l);
    const Expr u = ad::sum(beta * r);
    texture = texture.valid() ? texture + t : t;
    structure = structure.valid() ? structure + u : u;
  }
  return {texture, structure};
}

}  // namespace

Expr feature_l2(Expr x, Expr x0, const FeatureExtractor& fe) {
  require_same("feature-l2", x, x0);
  ad::Graph& g = x.graph();
  const auto fx = fe.features(g, x);
  const auto fy = fe.features(g, x0);
  Expr total;
  for (std::size_t s = 0; s < fx.size(); ++s) {
    const Expr d = unit_normalize(fx[s]) - unit_normalize(fy[s]);
    const double positions = static_cast<double>(fx[s].shape()[0] * fx[s].shape()[1]);
    const Expr term = ad::sum(ad::square(d)) * (fe.stage_weights()[s] / positions);
    total = total.valid() ? total + term : term;
  }
  return total;
}

Expr structure_texture(Expr x, Expr x0, const FeatureExtractor& fe) {
  auto t = structure_texture_exprs(x, x0, fe);
  return -(t.texture + t.structure);
}

namespace {

template <typename Build>
double evaluate_pair(const ImageTensor& x, const ImageTensor& x0, Build build) {
  ad::Graph g;
  const Expr a = g.constant(x.tensor());
  const Expr b = g.constant(x0.tensor());
  return g.forward(build(a, b));
}

}  // namespace

double chebyshev(const ImageTensor& x, const ImageTensor& x0) {
  return evaluate_pair(x, x0, [](Expr a, Expr b) { return chebyshev(a, b); });
}

double neg_ssim(const ImageTensor& x, const ImageTensor& x0, const SsimParams& p) {
  return evaluate_pair(x, x0, [&p](Expr a, Expr b) { return neg_ssim(a, b, p); });
}

double feature_l2(const ImageTensor& x, const ImageTensor& x0, const FeatureExtractor& fe) {
  return evaluate_pair(x, x0, [&fe](Expr a, Expr b) { return feature_l2(a, b, fe); });
}

double structure_texture(const ImageTensor& x, const ImageTensor& x0, const FeatureExtractor& fe) {
  return evaluate_pair(x, x0, [&fe](Expr a, Expr b) { return structure_texture(a, b, fe); });
}

StructureTextureTerms structure_texture_terms(const ImageTensor& x, const ImageTensor& x0,
                                              const FeatureExtractor& fe) {
  ad::Graph g;
  auto t = structure_texture_exprs(g.constant(x.tensor()), g.constant(x0.tensor()), fe);
  double alpha_sum = 0.0, beta_sum = 0.0;
  for (std::size_t s = 0; s < fe.stage_count(); ++s) {
    for (double v : fe.stage(s).texture_weights) alpha_sum += v;
    for (double v : fe.stage(s).structure_weights) beta_sum += v;
  }
  return {g.forward(t.texture) / alpha_sum, g.forward(t.structure) / beta_sum};
}

FidelityMeasure FidelityMeasure::make_chebyshev() { return FidelityMeasure(MeasureKind::chebyshev); }

FidelityMeasure FidelityMeasure::make_neg_ssim(SsimParams p) {
  FidelityMeasure m(MeasureKind::neg_ssim);
  m.ssim_ = p;
  return m;
}

FidelityMeasure FidelityMeasure::make_feature_l2(FeatureExtractor fe) {
  FidelityMeasure m(MeasureKind::feature_l2);
  m.extractor_ = std::make_shared<const FeatureExtractor>(std::move(fe));
  return m;
}

FidelityMeasure FidelityMeasure::make_structure_texture(FeatureExtractor fe) {
  FidelityMeasure m(MeasureKind::structure_texture);
  m.extractor_ = std::make_shared<const FeatureExtractor>(std::move(fe));
  return m;
}

Expr FidelityMeasure::build(Expr x, Expr x0) const {
  switch (kind_) {
    case MeasureKind::chebyshev: return chebyshev(x, x0);
    case MeasureKind::neg_ssim: return neg_ssim(x, x0, ssim_);
    case MeasureKind::feature_l2: return feature_l2(x, x0, *extractor_);
    case MeasureKind::structure_texture: return structure_texture(x, x0, *extractor_);
  }
  throw std::logic_error("unreachable measure kind");
}

double FidelityMeasure::operator()(const ImageTensor& x, const ImageTensor& x0) const {
  return evaluate_pair(x, x0, [this](Expr a, Expr b) { return build(a, b); });
}

}  // namespace iqa::fidelity
