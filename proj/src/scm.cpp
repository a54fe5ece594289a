#include "decaf/scm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <thread>

#include "decaf/error.hpp"
#include "decaf/random.hpp"

namespace decaf::scm {

namespace {

constexpr std::size_t kRowsPerBlock = 64;

enum Stream : std::uint64_t {
  kLabelMapStream = 1,
  kCalibrationStream = 2,
  kShiftDirectionStream = 3,
  kShiftMapStream = 4,
  kShiftOffsetStream = 5,
  kShiftTargetStream = 6,
};

Matrix random_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

// Rows of Z M^T, i.e. the projections M z_i.
Matrix project(const Matrix& z, const Matrix& map) { return num::matmul_nt(z, map); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Sum over i < j of 1 / (||M_s z_i - M_o z_j||^2 + 1).
double similarity_mass(const ScmParams& params, const LatentSample& latents) {
  const Matrix src = project(latents.z, params.edgeSource);
  const Matrix dst = project(latents.z, params.edgeTarget);
  const std::size_t n = latents.z.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double rowSum = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) rowSum += 1.0 / (squared_distance(src.row(i), dst.row(j)) + 1.0);
    total += rowSum;
  }
  return total;
}

void interpolate(Matrix& target, const Matrix& toward, double t) {
  for (std::size_t i = 0; i < target.size(); ++i)
    target.values()[i] = (1.0 - t) * target.values()[i] + t * toward.values()[i];
}

}  // namespace

void ScmParams::validate() const {
  const std::size_t p = latent_dim();
  if (p == 0) throw Error("ScmParams: latent dimension must be positive");
  if (featureMap.cols() != p || labelMap.cols() != p || edgeSource.cols() != p || edgeTarget.cols() != p ||
      neighborMap.cols() != p) {
    throw ShapeError("ScmParams: every map must have p = " + std::to_string(p) + " columns");
  }
  if (featureOffset.size() != featureMap.rows()) throw ShapeError("ScmParams: feature offset length");
  if (labelOffset.size() != labelMap.rows()) throw ShapeError("ScmParams: label offset length");
  if (edgeSource.rows() != edgeTarget.rows()) throw ShapeError("ScmParams: edge maps differ in rows");
  if (latentCov.rows() != p || latentCov.cols() != p) throw ShapeError("ScmParams: latent covariance shape");
  if (!(density >= 0.0 && density <= 1.0)) throw Error("ScmParams: density must lie in [0, 1]");
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j)
      if (std::abs(latentCov(i, j) - latentCov(j, i)) > 1e-12) throw Error("ScmParams: covariance not symmetric");
}

LatentSample sample_latents(const ScmParams& params, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw Error("sample_latents: need at least 2 samples");
  params.validate();
  const std::size_t p = params.latent_dim();

  Eigen::MatrixXd cov(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = params.latentCov(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("sample_latents: covariance eigendecomposition failed");
  const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) throw Error("sample_latents: covariance is not PSD");

  // Sigma = V diag(l) V^T; factor = V diag(sqrt(l)).
  Matrix factor(p, p);
  for (std::size_t c = 0; c < p; ++c) {
    const double root = std::sqrt(std::max(0.0, eig.eigenvalues()(static_cast<Eigen::Index>(c))));
    for (std::size_t r = 0; r < p; ++r)
      factor(r, c) = eig.eigenvectors()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * root;
  }

  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  LatentSample out{Matrix(n, p)};
  std::vector<double> eps(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& e : eps) e = dist(rng);
    auto row = out.z.row(i);
    for (std::size_t r = 0; r < p; ++r) {
      double v = 0.0;
      for (std::size_t c = 0; c < p; ++c) v += factor(r, c) * eps[c];
      row[r] = params.latentMean[r] + v;
    }
  }
  return out;
}

double edge_probability(const ScmParams& params, std::span<const double> zi, std::span<const double> zj) {
  const std::size_t q = params.edgeSource.rows();
  const std::size_t p = params.latent_dim();
  double dist = 0.0;
  for (std::size_t r = 0; r < q; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < p; ++c) s += params.edgeSource(r, c) * zi[c] - params.edgeTarget(r, c) * zj[c];
    dist += s * s;
  }
  return params.density / (dist + 1.0);
}

GraphData generate_graph(const ScmParams& params, const LatentSample& latents, std::uint64_t seed,
                         unsigned threads) {
  params.validate();
  const Matrix& z = latents.z;
  if (z.cols() != params.latent_dim()) throw ShapeError("generate_graph: latent width does not match params");
  const std::size_t n = z.rows();

  Matrix features = project(z, params.featureMap);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < features.cols(); ++c) features(i, c) += params.featureOffset[c];

  const Matrix src = project(z, params.edgeSource);
  const Matrix dst = project(z, params.edgeTarget);
  const std::size_t blocks = (n + kRowsPerBlock - 1) / kRowsPerBlock;
  std::vector<std::vector<std::pair<int, int>>> blockEdges(blocks);
  auto sampleBlock = [&](std::size_t b) {
    Rng rng(derive_seed(seed, b));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto& out = blockEdges[b];
    const std::size_t end = std::min(n, (b + 1) * kRowsPerBlock);
    for (std::size_t i = b * kRowsPerBlock; i < end; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double prob = params.density / (squared_distance(src.row(i), dst.row(j)) + 1.0);
        if (unit(rng) < prob) out.emplace_back(static_cast<int>(i), static_cast<int>(j));
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(blocks)));
  if (workers <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) sampleBlock(b);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t b = w; b < blocks; b += workers) sampleBlock(b);
      });
    }
    for (auto& t : pool) t.join();
  }
  std::vector<std::pair<int, int>> edges;
  for (auto& be : blockEdges) edges.insert(edges.end(), be.begin(), be.end());

  GraphData g = GraphData::from_edges(std::move(features), std::vector<int>(n, 0), params.class_count(), edges);

  Matrix labelInput = z;
  if (params.labelMode == LabelMode::NeighborMixed) {
    for (std::size_t i = 0; i < n; ++i) {
      auto nb = g.neighbors(i);
      if (nb.empty()) continue;
      auto row = labelInput.row(i);
      std::vector<double> mean(z.cols(), 0.0);
      for (int j : nb)
        for (std::size_t c = 0; c < z.cols(); ++c) mean[c] += z(static_cast<std::size_t>(j), c);
      for (std::size_t c = 0; c < z.cols(); ++c) row[c] = 0.5 * z(i, c) + 0.5 * mean[c] / static_cast<double>(nb.size());
    }
  }
  Matrix scores = project(labelInput, params.labelMap);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < scores.cols(); ++c) scores(i, c) += params.labelOffset[c];
  g.labels = num::argmax_rows(scores);
  return g;
}

double expected_mean_degree(const ScmParams& params, const LatentSample& latents) {
  const auto n = static_cast<double>(latents.z.rows());
  return params.density * 2.0 * similarity_mass(params, latents) / n;
}

DensityCalibration calibrate_density(const ScmParams& params, const LatentSample& latents,
                                     double targetMeanDegree) {
  if (latents.z.cols() != params.latent_dim()) throw ShapeError("calibrate_density: latent width mismatch");
  DensityCalibration out;
  if (!(targetMeanDegree > 0.0)) return out;

  const double perUnit = 2.0 * similarity_mass(params, latents) / static_cast<double>(latents.z.rows());
  auto degreeAt = [&](double c) { return c * perUnit; };
  if (degreeAt(1.0) < targetMeanDegree) {
    out.density = 1.0;
    out.expectedDegree = degreeAt(1.0);
    out.clamped = true;
    return out;
  }
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double deg = degreeAt(mid);
    if (std::abs(deg - targetMeanDegree) <= 1e-6 * targetMeanDegree) {
      lo = hi = mid;
      break;
    }
    (deg < targetMeanDegree ? lo : hi) = mid;
  }
  out.density = 0.5 * (lo + hi);
  out.expectedDegree = degreeAt(out.density);
  return out;
}

std::vector<std::string> recipe_names() { return {"h-feat", "qtr-feat", "full-feat"}; }

ScmParams make_recipe(const std::string& name, std::uint64_t seed, const RecipeOptions& options) {
  constexpr std::size_t p = 16;
  constexpr std::size_t k = 4;
  std::size_t d = 0;
  if (name == "h-feat") {
    d = 8;
  } else if (name == "qtr-feat") {
    d = 4;
  } else if (name == "full-feat") {
    d = 16;
  } else {
    throw Error("unknown recipe '" + name + "' (expected h-feat, qtr-feat or full-feat)");
  }

  ScmParams params;
  params.featureMap = Matrix(d, p);
  for (std::size_t i = 0; i < d; ++i) params.featureMap(i, i) = 1.0;
  params.featureOffset.assign(d, 0.0);
  Rng rng(derive_seed(seed, kLabelMapStream));
  params.labelMap = random_normal(k, p, rng);
  params.labelOffset.assign(k, 0.0);
  params.neighborMap = Matrix::identity(p);
  params.latentMean.assign(p, 0.0);
  params.latentCov = Matrix::identity(p);

  if (name == "h-feat") {
    params.edgeSource = params.labelMap;
    params.edgeTarget = params.labelMap;
  } else if (name == "qtr-feat") {
    Matrix masked = params.labelMap;
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < 4; ++c) masked(r, c) = 0.0;
    params.edgeSource = masked;
    params.edgeTarget = masked;
  } else {
    params.edgeSource = Matrix(k, p);
    params.edgeTarget = Matrix(k, p);
    params.labelMode = LabelMode::NeighborMixed;
  }

  params.density = 1.0;
  const LatentSample calib = sample_latents(params, std::max<std::size_t>(options.nodes, 2),
                                            derive_seed(seed, kCalibrationStream));
  params.density = calibrate_density(params, calib, options.targetMeanDegree).density;
  return params;
}

std::string to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::None: return "none";
    case ShiftKind::Covariate: return "covariate";
    case ShiftKind::ConceptX: return "concept-x";
    case ShiftKind::ConceptA: return "concept-a";
  }
  return "none";
}

ShiftKind parse_shift(const std::string& name) {
  if (name == "none") return ShiftKind::None;
  if (name == "covariate") return ShiftKind::Covariate;
  if (name == "concept-x") return ShiftKind::ConceptX;
  if (name == "concept-a") return ShiftKind::ConceptA;
  throw Error("unknown shift '" + name + "' (expected none, covariate, concept-x or concept-a)");
}

ScmParams apply_shift(const ScmParams& params, const ShiftSpec& spec) {
  if (spec.magnitude < 0.0) throw Error("apply_shift: magnitude must be non-negative");
  ScmParams out = params;
  if (spec.kind == ShiftKind::None || spec.magnitude == 0.0) return out;
  const double t = spec.magnitude;

  switch (spec.kind) {
    case ShiftKind::Covariate: {
      Rng rng(derive_seed(spec.seed, kShiftDirectionStream));
      std::normal_distribution<double> dist(0.0, 1.0);
      std::vector<double> u(params.latent_dim());
      double norm = 0.0;
      while (norm == 0.0) {
        norm = 0.0;
        for (double& v : u) {
          v = dist(rng);
          norm += v * v;
        }
      }
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < u.size(); ++i) out.latentMean[i] += t * u[i] / norm;
      break;
    }
    case ShiftKind::ConceptX: {
      Rng mapRng(derive_seed(spec.seed, kShiftMapStream));
      interpolate(out.featureMap, random_normal(out.featureMap.rows(), out.featureMap.cols(), mapRng), t);
      Rng offRng(derive_seed(spec.seed, kShiftOffsetStream));
      std::normal_distribution<double> dist(0.0, 1.0);
      for (double& b : out.featureOffset) b = (1.0 - t) * b + t * dist(offRng);
      break;
    }
    case ShiftKind::ConceptA: {
      Rng srcRng(derive_seed(spec.seed, kShiftMapStream));
      interpolate(out.edgeSource, random_normal(out.edgeSource.rows(), out.edgeSource.cols(), srcRng), t);
      Rng dstRng(derive_seed(spec.seed, kShiftTargetStream));
      interpolate(out.edgeTarget, random_normal(out.edgeTarget.rows(), out.edgeTarget.cols(), dstRng), t);
      break;
    }
    case ShiftKind::None:
      break;
  }
  return out;
}

Matrix latent_neighborhood(const ScmParams& params, const LatentSample& latents, const GraphData& g) {
  if (latents.z.rows() != g.node_count()) throw ShapeError("latent_neighborhood: node count mismatch");
  const Matrix mapped = project(latents.z, params.neighborMap);
  return graph::mean_adjacency(g).multiply(mapped);
}

}  // namespace decaf::scm
