#include "iqa/default_weights.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "iqa/evaluation.hpp"
#include "iqa/feature_extractor.hpp"
#include "iqa/rng.hpp"
#include "iqa/synth.hpp"

namespace iqa {

namespace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix feature_matrix(const QualityModel& model, const std::vector<synth::RatedImage>& set) {
  Matrix F;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto f = model.feature_vector(set[i].image);
    if (i == 0) F.resize(static_cast<Eigen::Index>(set.size()), static_cast<Eigen::Index>(f.size()));
    for (std::size_t j = 0; j < f.size(); ++j) F(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
  }
  return F;
}

Vector targets(const std::vector<synth::RatedImage>& set) {
  Vector y(static_cast<Eigen::Index>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) y(static_cast<Eigen::Index>(i)) = set[i].mos;
  return y;
}

// Ridge regression with an unpenalized intercept; returns (weights, bias).
std::pair<Vector, double> ridge(const Matrix& X, const Vector& y, double rho) {
  const Vector mean = X.colwise().mean();
  const Matrix Xc = X.rowwise() - mean.transpose();
  const double ym = y.mean();
  Matrix A = Xc.transpose() * Xc;
  const double scale = A.trace() / static_cast<double>(A.rows());
  A.diagonal().array() += rho * scale;
  const Vector w = A.ldlt().solve(Xc.transpose() * (y.array() - ym).matrix());
  return {w, ym - mean.dot(w)};
}

Tensor to_tensor(const Vector& v) {
  Tensor t(Shape{static_cast<std::size_t>(v.size())});
  for (Eigen::Index i = 0; i < v.size(); ++i) t[static_cast<std::size_t>(i)] = v(i);
  return t;
}

// Linear head on standardized features, folded back to raw feature space.
std::pair<Tensor, double> fit_linear_head(const Matrix& F, const Vector& y, double rho) {
  Vector sd = ((F.rowwise() - F.colwise().mean()).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 1e-9 ? sd(j) : 1.0;
  const Matrix Z = F * sd.cwiseInverse().asDiagonal();
  auto [w, b] = ridge(Z, y, rho);
  return {to_tensor(w.cwiseQuotient(sd)), b};
}

NssModel fit_nss(const std::vector<synth::RatedImage>& train, std::size_t n_sv) {
  // identity standardization for the first feature pass
  NssModel::Head h;
  h.feature_mean = Tensor(Shape{NssModel::kFeatureCount}, 0.0);
  h.feature_scale = Tensor(Shape{NssModel::kFeatureCount}, 1.0);
  h.support_vectors = Tensor(Shape{1, NssModel::kFeatureCount});
  h.coefficients = Tensor(Shape{1});
  const Matrix F = feature_matrix(NssModel(h), train);
  const Vector mean = F.colwise().mean();
  Vector sd = ((F.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 1e-9 ? sd(j) : 1.0;
  const Matrix Z = (F.rowwise() - mean.transpose()) * sd.cwiseInverse().asDiagonal();
  const auto n = static_cast<std::size_t>(Z.rows());

  // farthest-point selection of support vectors, starting from the sample
  // nearest the centroid
  std::vector<std::size_t> chosen;
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::size_t next = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = Z.row(static_cast<Eigen::Index>(i)).squaredNorm();
    if (d < best) {
      best = d;
      next = i;
    }
  }
  n_sv = std::min(n_sv, n);
  while (chosen.size() < n_sv) {
    const std::size_t current = next;
    chosen.push_back(current);
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (Z.row(static_cast<Eigen::Index>(i)) - Z.row(static_cast<Eigen::Index>(current))).squaredNorm());
      if (dist[i] > far) {
        far = dist[i];
        next = i;
      }
    }
  }
  const auto m = static_cast<Eigen::Index>(chosen.size());
  Matrix S(m, Z.cols());
  for (Eigen::Index i = 0; i < m; ++i) S.row(i) = Z.row(static_cast<Eigen::Index>(chosen[static_cast<std::size_t>(i)]));
  std::vector<double> pair_d;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) pair_d.push_back((S.row(i) - S.row(j)).squaredNorm());
  std::nth_element(pair_d.begin(), pair_d.begin() + static_cast<std::ptrdiff_t>(pair_d.size() / 2), pair_d.end());
  const double gamma = 1.0 / pair_d[pair_d.size() / 2];

  Matrix K(Z.rows(), m);
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index j = 0; j < m; ++j) K(i, j) = std::exp(-gamma * (Z.row(i) - S.row(j)).squaredNorm());
  auto [alpha, bias] = ridge(K, targets(train), 1e-3);

  NssModel::Head out;
  out.feature_mean = to_tensor(mean);
  out.feature_scale = to_tensor(sd);
  out.support_vectors = Tensor(Shape{static_cast<std::size_t>(m), NssModel::kFeatureCount});
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < Z.cols(); ++j)
      out.support_vectors[static_cast<std::size_t>(i * Z.cols() + j)] = S(i, j);
  out.coefficients = to_tensor(alpha);
  out.bias = bias;
  out.gamma = gamma;
  return NssModel(std::move(out));
}

// Spherical k-means over contrast-normalized 7x7 luminance patches.
Tensor learn_codebook(const std::vector<synth::RatedImage>& train, std::size_t atoms, std::uint64_t seed) {
  constexpr std::size_t P = CodebookModel::kPatch, D = P * P;
  std::vector<std::array<double, D>> patches;
  for (const auto& r : train) {
    const auto g = r.image.to_gray();
    for (std::size_t y = 0; y + P <= g.height(); y += 3) {
      for (std::size_t x = 0; x + P <= g.width(); x += 3) {
        std::array<double, D> p;
        double mean = 0;
        for (std::size_t a = 0; a < P; ++a)
          for (std::size_t b = 0; b < P; ++b) mean += p[a * P + b] = g.at(y + a, x + b, 0);
        mean /= D;
        double norm = 0;
        for (auto& v : p) {
          v -= mean;
          norm += v * v;
        }
        if (norm < 1e-3) continue;
        norm = std::sqrt(norm);
        for (auto& v : p) v /= norm;
        patches.push_back(p);
      }
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::array<double, D>> centers;
  std::uniform_int_distribution<std::size_t> pick(0, patches.size() - 1);
  for (std::size_t k = 0; k < atoms; ++k) centers.push_back(patches[pick(rng)]);
  std::vector<std::size_t> assign(patches.size());
  for (int iter = 0; iter < 20; ++iter) {
    for (std::size_t i = 0; i < patches.size(); ++i) {
      double best = -2;
      for (std::size_t k = 0; k < atoms; ++k) {
        double d = 0;
        for (std::size_t j = 0; j < D; ++j) d += patches[i][j] * centers[k][j];
        if (d > best) {
          best = d;
          assign[i] = k;
        }
      }
    }
    std::vector<std::array<double, D>> sum(atoms);
    for (auto& s : sum) s.fill(0.0);
    std::vector<std::size_t> count(atoms, 0);
    for (std::size_t i = 0; i < patches.size(); ++i) {
      ++count[assign[i]];
      for (std::size_t j = 0; j < D; ++j) sum[assign[i]][j] += patches[i][j];
    }
    for (std::size_t k = 0; k < atoms; ++k) {
      if (count[k] == 0) {
        centers[k] = patches[pick(rng)];
        continue;
      }
      double norm = 0;
      for (double v : sum[k]) norm += v * v;
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < D; ++j) centers[k][j] = sum[k][j] / norm;
    }
  }
  Tensor out(Shape{atoms, 1, P, P});
  for (std::size_t k = 0; k < atoms; ++k)
    for (std::size_t j = 0; j < D; ++j) out[k * D + j] = centers[k][j];
  return out;
}

std::vector<CnnModel::Stage> seeded_cnn_stages(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t ch[] = {3, 8, 16, 32};
  std::vector<CnnModel::Stage> stages;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t ci = ch[i], co = ch[i + 1];
    CnnModel::Stage s;
    s.kernel = Tensor(Shape{co, ci, 3, 3});
    const double scale = std::sqrt(2.0 / static_cast<double>(ci * 9));
    for (auto& v : s.kernel.values()) v = scale * n(rng);
    s.bias = Tensor(Shape{co});
    for (auto& v : s.bias.values()) v = 0.02 * n(rng);
    s.gamma = Tensor(Shape{co, co, 1, 1});
    for (std::size_t a = 0; a < co; ++a)
      for (std::size_t b = 0; b < co; ++b) s.gamma[a * co + b] = a == b ? 1.0 : 0.05 * u(rng);
    s.beta = Tensor(Shape{co}, 0.01);
    stages.push_back(std::move(s));
  }
  return stages;
}

}  // namespace

GeneratedWeights generate_default_weights(const WeightGenOptions& opt) {
  const auto train = synth::training_set(mix_seed(opt.seed, 1), opt.scenes, opt.per_scene, opt.image_size);
  const Vector y = targets(train);
  WeightStore store;
  FeatureExtractor::seeded(mix_seed(opt.seed, 2)).store(store);

  fit_nss(train, opt.support_vectors).store(store);

  {
    Tensor atoms = learn_codebook(train, opt.codebook_atoms, mix_seed(opt.seed, 3));
    CodebookModel probe(atoms, Tensor(Shape{2 * opt.codebook_atoms}), 0.0);
    auto [w, b] = fit_linear_head(feature_matrix(probe, train), y, 1e-2);
    CodebookModel(atoms, w, b).store(store);
  }
  {
    auto stages = seeded_cnn_stages(mix_seed(opt.seed, 4));
    CnnModel probe(stages, Tensor(Shape{5 * stages.back().kernel.dim(0)}), 0.0);
    auto [w, b] = fit_linear_head(feature_matrix(probe, train), y, 1e-2);
    CnnModel(stages, w, b).store(store);
  }
  store.round_to_storage();

  GeneratedWeights out;
  out.store = store;
  std::vector<double> mos(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) mos[i] = train[i].mos;
  for (auto kind : {ModelKind::nss, ModelKind::codebook, ModelKind::cnn}) {
    const auto model = load_model(kind, store);
    std::vector<double> raw(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) raw[i] = model->raw_score(train[i].image);
    out.calibrations[kind] = fit_calibration(raw, mos, std::string(to_string(kind)));
    out.training_srcc[kind] = evaluation::srcc(raw, mos);
  }
  return out;
}

void write_weight_set(const std::filesystem::path& dir, const GeneratedWeights& w) {
  std::filesystem::create_directories(dir);
  w.store.save(dir / "default.iqaw");
  for (const auto& [kind, p] : w.calibrations) save_calibration(calibration_path(dir, kind), p);
}

}  // namespace iqa
