#include "iqa/quality.hpp"

#include <cmath>

#include "iqa/fidelity.hpp"

namespace iqa {

using ad::Expr;

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::nss: return "nss";
    case ModelKind::codebook: return "codebook";
    case ModelKind::cnn: return "cnn";
  }
  return "?";
}

ModelKind parse_model(std::string_view id) {
  if (id == "nss" || id == "nss-svr") return ModelKind::nss;
  if (id == "codebook") return ModelKind::codebook;
  if (id == "cnn") return ModelKind::cnn;
  throw std::invalid_argument("unknown quality model '" + std::string(id) + "'");
}

// ---------------------------------------------------------------------------

void QualityModel::check_input(Expr x) const {
  const auto& s = x.shape();
  if (s.size() != 3 || (s[2] != 1 && s[2] != 3)) throw ShapeError(std::string(id()), "expected an (H, W, 1|3) image, got " + to_string(s));
  if (s[0] < min_size() || s[1] < min_size()) {
    throw ShapeError(std::string(id()), "image " + to_string(s) + " is smaller than the minimum " +
                                            std::to_string(min_size()) + "x" + std::to_string(min_size()));
  }
}

Expr QualityModel::raw(Expr x) const { return head(features(x)); }

Expr QualityModel::calibrated(Expr x) const { return calibrate(raw(x), calibration_); }

double QualityModel::raw_score(const ImageTensor& x) const {
  ad::Graph g;
  return g.forward(raw(g.constant(x.tensor())));
}

double QualityModel::score(const ImageTensor& x) const { return calibrate(raw_score(x), calibration_); }

std::vector<double> QualityModel::feature_vector(const ImageTensor& x) const {
  ad::Graph g;
  const auto& t = g.evaluate(features(g.constant(x.tensor())));
  return {t.values().begin(), t.values().end()};
}

void QualityModel::set_calibration(CalibrationParams p) {
  p.validate();
  if (p.model.empty()) p.model = std::string(id());
  calibration_ = std::move(p);
}

// ---------------------------------------------------------------------------
// NSS

NssModel::NssModel(Head head) : head_(std::move(head)) {
  if (head_.feature_mean.shape() != Shape{kFeatureCount} || head_.feature_scale.shape() != Shape{kFeatureCount}) {
    throw WeightError("nss: feature standardization must have 40 entries");
  }
  if (head_.support_vectors.rank() != 2 || head_.support_vectors.dim(1) != kFeatureCount ||
      head_.coefficients.shape() != Shape{head_.support_vectors.dim(0)}) {
    throw WeightError("nss: support vectors and coefficients disagree in shape");
  }
  for (double s : head_.feature_scale.values()) {
    if (!(s > 0.0)) throw WeightError("nss: feature scales must be positive");
  }
}

NssModel NssModel::from_weights(const WeightStore& store) {
  Head h;
  h.feature_mean = store.get("nss.feature_mean", Shape{kFeatureCount});
  h.feature_scale = store.get("nss.feature_scale", Shape{kFeatureCount});
  h.support_vectors = store.get("nss.support_vectors");
  h.coefficients = store.get("nss.coefficients");
  h.bias = store.get("nss.bias", Shape{1}).item();
  h.gamma = store.get("nss.gamma", Shape{1}).item();
  return NssModel(std::move(h));
}

void NssModel::store(WeightStore& store) const {
  store.put("nss.feature_mean", head_.feature_mean);
  store.put("nss.feature_scale", head_.feature_scale);
  store.put("nss.support_vectors", head_.support_vectors);
  store.put("nss.coefficients", head_.coefficients);
  store.put("nss.bias", Tensor(Shape{1}, {head_.bias}));
  store.put("nss.gamma", Tensor(Shape{1}, {head_.gamma}));
}

Expr NssModel::mscn(Expr u) {
  ad::Graph& g = u.graph();
  const auto taps = ad::gaussian_taps(kWindow, kSigma);
  // Normalized convolution: border windows average in-image pixels only.
  const Expr ones = g.constant(Tensor(u.shape(), 1.0));
  const Expr norm = ad::separable_filter(ones, taps, taps, 1, ad::Padding::same);
  const Expr mu = ad::separable_filter(u, taps, taps, 1, ad::Padding::same) / norm;
  const Expr second = ad::separable_filter(ad::square(u), taps, taps, 1, ad::Padding::same) / norm;
  const Expr sigma = ad::sqrt(ad::relu(second - ad::square(mu)) + 1e-10);
  return (u - mu) / (sigma + kStabilizer);
}

namespace {

void append_moments(std::vector<Expr>& out, Expr f) {
  const Expr m = ad::mean(f);
  out.push_back(ad::flatten(m));
  out.push_back(ad::flatten(ad::mean(ad::square(f)) - ad::square(m)));
  out.push_back(ad::flatten(ad::mean(ad::relu(f))));
  out.push_back(ad::flatten(ad::mean(ad::relu(-f))));
}

}  // namespace

Expr NssModel::features(Expr x) const {
  check_input(x);
  Expr u = fidelity::grayscale(x);
  std::vector<Expr> parts;
  for (int scale = 0; scale < 2; ++scale) {
    if (scale == 1) u = ad::separable_filter(u, {0.5, 0.5}, {0.5, 0.5}, 2, ad::Padding::valid);
    const Expr m = mscn(u);
    const std::size_t h = m.shape()[0], w = m.shape()[1];
    append_moments(parts, m);
    append_moments(parts, ad::crop(m, 0, 0, h, w - 1) * ad::crop(m, 0, 1, h, w - 1));
    append_moments(parts, ad::crop(m, 0, 0, h - 1, w) * ad::crop(m, 1, 0, h - 1, w));
    append_moments(parts, ad::crop(m, 0, 0, h - 1, w - 1) * ad::crop(m, 1, 1, h - 1, w - 1));
    append_moments(parts, ad::crop(m, 0, 1, h - 1, w - 1) * ad::crop(m, 1, 0, h - 1, w - 1));
  }
  return ad::concat(parts);
}

Expr NssModel::head(Expr f) const {
  ad::Graph& g = f.graph();
  Tensor inv_scale(Shape{kFeatureCount});
  for (std::size_t i = 0; i < kFeatureCount; ++i) inv_scale[i] = 1.0 / head_.feature_scale[i];
  const Expr z = (f - g.constant(head_.feature_mean)) * g.constant(inv_scale);
  const std::size_t n_sv = head_.support_vectors.dim(0);
  Tensor sv_norm(Shape{n_sv});
  for (std::size_t i = 0; i < n_sv; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      const double v = head_.support_vectors[i * kFeatureCount + j];
      acc += v * v;
    }
    sv_norm[i] = acc;
  }
  // |z - s_i|^2 = |z|^2 - 2 s_i.z + |s_i|^2
  const Expr dist = ad::sum(ad::square(z)) - 2.0 * ad::matvec(g.constant(head_.support_vectors), z) +
                    g.constant(sv_norm);
  const Expr k = ad::exp(ad::relu(dist) * -head_.gamma);
  return ad::sum(k * g.constant(head_.coefficients)) + head_.bias;
}

// ---------------------------------------------------------------------------
// Codebook

CodebookModel::CodebookModel(Tensor atoms, Tensor head_weight, double head_bias)
    : atoms_(std::move(atoms)), head_weight_(std::move(head_weight)), head_bias_(head_bias) {
  if (atoms_.rank() != 4 || atoms_.dim(1) != 1 || atoms_.dim(2) != kPatch || atoms_.dim(3) != kPatch) {
    throw WeightError("codebook.atoms must have shape (P, 1, 7, 7)");
  }
  if (head_weight_.shape() != Shape{2 * atoms_.dim(0)}) throw WeightError("codebook.head.weight must have 2P entries");
  const std::size_t n = kPatch * kPatch;
  for (std::size_t a = 0; a < atoms_.dim(0); ++a) {
    double* v = atoms_.data() + a * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += v[i];
    mean /= static_cast<double>(n);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v[i] -= mean;
      norm += v[i] * v[i];
    }
    if (!(norm > 0.0)) throw WeightError("codebook atom " + std::to_string(a) + " is constant");
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) v[i] /= norm;
  }
}

CodebookModel CodebookModel::from_weights(const WeightStore& store) {
  const Tensor& atoms = store.get("codebook.atoms");
  if (atoms.rank() != 4) throw WeightError("weight tensor 'codebook.atoms' must have rank 4");
  return CodebookModel(atoms, store.get("codebook.head.weight", Shape{2 * atoms.dim(0)}),
                       store.get("codebook.head.bias", Shape{1}).item());
}

void CodebookModel::store(WeightStore& store) const {
  store.put("codebook.atoms", atoms_);
  store.put("codebook.head.weight", head_weight_);
  store.put("codebook.head.bias", Tensor(Shape{1}, {head_bias_}));
}

Expr CodebookModel::responses(Expr x) const {
  check_input(x);
  ad::Graph& g = x.graph();
  const Expr u = fidelity::grayscale(x);
  const double n = static_cast<double>(kPatch * kPatch);
  const std::vector<double> box(kPatch, 1.0 / static_cast<double>(kPatch));
  const Expr dots = ad::conv2d(u, g.constant(atoms_), kStride, ad::Padding::valid);
  const Expr mu = ad::separable_filter(u, box, box, kStride, ad::Padding::valid);
  const Expr second = ad::separable_filter(ad::square(u), box, box, kStride, ad::Padding::valid);
  // atoms are zero-mean, so <atom, patch> = <atom, patch - mean(patch)>
  const Expr norm = ad::sqrt(ad::relu(second - ad::square(mu)) * n + kNormEps);
  return dots / ad::broadcast_channels(norm, atom_count());
}

Expr CodebookModel::features(Expr x) const {
  const Expr r = responses(x);
  std::vector<Expr> parts = {ad::flatten(ad::adaptive_max_pool(ad::relu(r), 1)),
                             ad::flatten(ad::adaptive_max_pool(ad::relu(-r), 1))};
  return ad::concat(parts);
}

Expr CodebookModel::head(Expr f) const {
  ad::Graph& g = f.graph();
  return ad::sum(f * g.constant(head_weight_)) + head_bias_;
}

// ---------------------------------------------------------------------------
// CNN

CnnModel::CnnModel(std::vector<Stage> stages, Tensor head_weight, double head_bias)
    : stages_(std::move(stages)), head_weight_(std::move(head_weight)), head_bias_(head_bias) {
  if (stages_.empty()) throw WeightError("cnn: no stages");
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const auto& s = stages_[i];
    const std::string name = "cnn.stage" + std::to_string(i);
    if (s.kernel.rank() != 4 || s.kernel.dim(2) != 3 || s.kernel.dim(3) != 3) throw WeightError(name + ".weight must be (Cout, Cin, 3, 3)");
    const std::size_t co = s.kernel.dim(0);
    if (i == 0 && s.kernel.dim(1) != 3) throw WeightError(name + ".weight must take 3 input channels");
    if (i > 0 && s.kernel.dim(1) != stages_[i - 1].kernel.dim(0)) throw WeightError(name + ".weight channel mismatch");
    if (s.bias.shape() != Shape{co}) throw WeightError(name + ".bias has the wrong shape");
    if (s.gamma.shape() != Shape{co, co, 1, 1}) throw WeightError(name + ".gdn.gamma has the wrong shape");
    if (s.beta.shape() != Shape{co}) throw WeightError(name + ".gdn.beta has the wrong shape");
    for (double v : s.beta.values()) {
      if (!(v > 0.0)) throw WeightError(name + ".gdn.beta must be positive");
    }
    for (double v : s.gamma.values()) {
      if (v < 0.0) throw WeightError(name + ".gdn.gamma must be non-negative");
    }
  }
  if (head_weight_.shape() != Shape{feature_count()}) throw WeightError("cnn.head.weight has the wrong shape");
}

std::size_t CnnModel::feature_count() const { return 5 * stages_.back().kernel.dim(0); }

CnnModel CnnModel::from_weights(const WeightStore& store) {
  std::vector<Stage> stages;
  for (std::size_t i = 0;; ++i) {
    const std::string base = "cnn.stage" + std::to_string(i);
    if (!store.has(base + ".weight")) break;
    Stage s;
    s.kernel = store.get(base + ".weight");
    if (s.kernel.rank() != 4) throw WeightError("weight tensor '" + base + ".weight' must have rank 4");
    const std::size_t co = s.kernel.dim(0);
    s.bias = store.get(base + ".bias", Shape{co});
    s.gamma = store.get(base + ".gdn.gamma", Shape{co, co, 1, 1});
    s.beta = store.get(base + ".gdn.beta", Shape{co});
    stages.push_back(std::move(s));
  }
  if (stages.empty()) throw WeightError("weight tensor 'cnn.stage0.weight' is missing");
  const std::size_t f = 5 * stages.back().kernel.dim(0);
  return CnnModel(std::move(stages), store.get("cnn.head.weight", Shape{f}), store.get("cnn.head.bias", Shape{1}).item());
}

void CnnModel::store(WeightStore& store) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string base = "cnn.stage" + std::to_string(i);
    store.put(base + ".weight", stages_[i].kernel);
    store.put(base + ".bias", stages_[i].bias);
    store.put(base + ".gdn.gamma", stages_[i].gamma);
    store.put(base + ".gdn.beta", stages_[i].beta);
  }
  store.put("cnn.head.weight", head_weight_);
  store.put("cnn.head.bias", Tensor(Shape{1}, {head_bias_}));
}

Expr CnnModel::features(Expr x) const {
  check_input(x);
  ad::Graph& g = x.graph();
  if (x.shape()[2] == 1) x = ad::broadcast_channels(x, 3);
  for (const auto& s : stages_) {
    const Expr z = ad::bias_add(ad::conv2d(x, g.constant(s.kernel), 2, ad::Padding::same), g.constant(s.bias));
    const Expr energy = ad::bias_add(ad::conv2d(ad::square(z), g.constant(s.gamma), 1, ad::Padding::valid), g.constant(s.beta));
    x = z / ad::sqrt(energy);
  }
  std::vector<Expr> parts = {ad::flatten(ad::adaptive_max_pool(x, 1)), ad::flatten(ad::adaptive_max_pool(x, 2))};
  return ad::concat(parts);
}

Expr CnnModel::head(Expr f) const {
  ad::Graph& g = f.graph();
  return ad::sum(f * g.constant(head_weight_)) + head_bias_;
}

// ---------------------------------------------------------------------------

std::unique_ptr<QualityModel> load_model(ModelKind kind, const WeightStore& store) {
  switch (kind) {
    case ModelKind::nss: return std::make_unique<NssModel>(NssModel::from_weights(store));
    case ModelKind::codebook: return std::make_unique<CodebookModel>(CodebookModel::from_weights(store));
    case ModelKind::cnn: return std::make_unique<CnnModel>(CnnModel::from_weights(store));
  }
  throw std::logic_error("unreachable model kind");
}

std::filesystem::path calibration_path(const std::filesystem::path& dir, ModelKind kind) {
  return dir / (std::string(to_string(kind)) + ".calib");
}

}  // namespace iqa
