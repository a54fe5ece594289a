#include <algorithm>
#include <cmath>

#include "decaf/adam.hpp"
#include "decaf/error.hpp"
#include "decaf/tape.hpp"
#include "decaf/scm.hpp"
#include "doctest.h"
#include "test_support.hpp"

using decaf::num::Matrix;
using namespace decaf::scm;

namespace {

ScmParams small_params(std::size_t p, std::size_t d, std::size_t k, double c) {
  ScmParams s;
  s.featureMap = Matrix(d, p);
  for (std::size_t i = 0; i < std::min(d, p); ++i) s.featureMap(i, i) = 1.0;
  s.featureOffset.assign(d, 0.0);
  decaf::Rng rng(99);
  s.labelMap = testing::random_matrix(k, p, rng);
  s.labelOffset.assign(k, 0.0);
  s.edgeSource = Matrix::identity(p);
  s.edgeTarget = Matrix::identity(p);
  s.neighborMap = Matrix::identity(p);
  s.density = c;
  s.latentMean.assign(p, 0.0);
  s.latentCov = Matrix::identity(p);
  return s;
}

/// Multinomial logistic regression on x, trained with Adam.
std::vector<Matrix> fit_linear_classifier(const decaf::graph::GraphData& g, int steps) {
  const std::size_t d = g.feature_dim();
  const std::size_t k = g.numClasses;
  Matrix w(d, k), b(1, k);
  std::vector<Matrix> params{w, b};
  decaf::num::AdamConfig cfg;
  cfg.learningRate = 0.05;
  cfg.weightDecay = 0.0;
  decaf::num::AdamState state(cfg, params);
  for (int s = 0; s < steps; ++s) {
    decaf::num::Tape t;
    auto wv = t.parameter(params[0]);
    auto bv = t.parameter(params[1]);
    auto logits = t.add_row(t.matmul(t.constant(g.features), wv), bv);
    auto res = t.backward(t.softmax_cross_entropy(logits, g.labels));
    decaf::num::adam_step(params, res.grads, state);
  }
  return params;
}

double linear_accuracy(const std::vector<Matrix>& model, const decaf::graph::GraphData& g) {
  Matrix logits = decaf::num::matmul(g.features, model[0]);
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t c = 0; c < logits.cols(); ++c) logits(i, c) += model[1](0, c);
  const auto pred = decaf::num::argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == g.labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace

TEST_SUITE("scmgen") {

TEST_CASE("degenerate covariance returns the mean") {
  ScmParams s = small_params(3, 2, 2, 0.5);
  s.latentMean = {1.0, -2.0, 0.5};
  s.latentCov = Matrix(3, 3);
  const LatentSample z = sample_latents(s, 5, 1);
  for (std::size_t i = 0; i < 5; ++i) CHECK(z.z.row(i)[1] == -2.0);
}

TEST_CASE("latent sampling is deterministic and centered") {
  const ScmParams s = small_params(4, 2, 2, 0.5);
  CHECK(sample_latents(s, 20, 7).z == sample_latents(s, 20, 7).z);
  const LatentSample z = sample_latents(s, 10000, 3);
  const Matrix mean = decaf::num::column_means(z.z);
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(mean(0, c)) <= 4.0 / std::sqrt(10000.0));
}

TEST_CASE("non-PSD covariance is rejected") {
  ScmParams s = small_params(2, 2, 2, 0.5);
  s.latentCov = Matrix{{1.0, 2.0}, {2.0, 1.0}};
  CHECK_THROWS_AS(sample_latents(s, 4, 1), decaf::Error);
}

TEST_CASE("density endpoints of the edge model") {
  ScmParams s = small_params(3, 3, 2, 0.0);
  const LatentSample z = sample_latents(s, 30, 2);
  CHECK(generate_graph(s, z, 5).edge_count() == 0);

  s.density = 0.37;
  const std::vector<double> zi{0.4, -1.0, 2.0};
  CHECK(edge_probability(s, zi, zi) == 0.37);
  decaf::Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = testing::random_matrix(1, 3, rng, -3, 3);
    const Matrix b = testing::random_matrix(1, 3, rng, -3, 3);
    const double p = edge_probability(s, a.row(0), b.row(0));
    CHECK(p >= 0.0);
    CHECK(p <= 0.37);
  }
}

TEST_CASE("features and labels follow the generating maps") {
  ScmParams s = small_params(4, 3, 3, 0.2);
  s.featureOffset = {1.0, 0.0, -1.0};
  const LatentSample z = sample_latents(s, 40, 8);
  const auto g = generate_graph(s, z, 9);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t r = 0; r < 3; ++r) CHECK(g.features(i, r) == z.z(i, r) + s.featureOffset[r]);
    std::vector<double> score(3, 0.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 4; ++j) score[c] += s.labelMap(c, j) * z.z(i, j);
    CHECK(g.labels[i] == std::max_element(score.begin(), score.end()) - score.begin());
  }
}

TEST_CASE("neighbor-mixed labels average the node with its neighbor mean") {
  ScmParams s = small_params(4, 4, 3, 0.3);
  s.labelMode = LabelMode::NeighborMixed;
  const LatentSample z = sample_latents(s, 30, 10);
  const auto g = generate_graph(s, z, 11);
  for (std::size_t i = 0; i < 30; ++i) {
    std::vector<double> mix(4);
    const auto nb = g.neighbors(i);
    for (std::size_t j = 0; j < 4; ++j) {
      double m = z.z(i, j);
      if (!nb.empty()) {
        m = 0.0;
        for (int v : nb) m += z.z(static_cast<std::size_t>(v), j);
        m /= static_cast<double>(nb.size());
      }
      mix[j] = 0.5 * z.z(i, j) + 0.5 * m;
    }
    std::vector<double> score(3, 0.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t j = 0; j < 4; ++j) score[c] += s.labelMap(c, j) * mix[j];
    CHECK(g.labels[i] == std::max_element(score.begin(), score.end()) - score.begin());
  }
}

TEST_CASE("generation is deterministic and independent of the thread count") {
  const ScmParams s = make_recipe("h-feat", 3, {300, 10.0});
  const LatentSample z = sample_latents(s, 300, 4);
  const auto a = generate_graph(s, z, 12, 1);
  CHECK(a == generate_graph(s, z, 12, 1));
  CHECK(a == generate_graph(s, z, 12, 4));
  CHECK_FALSE(a == generate_graph(s, z, 13, 1));
}

TEST_CASE("small Monte-Carlo check of edge frequencies") {
  ScmParams s = small_params(2, 2, 2, 0.8);
  const LatentSample z{Matrix{{0.0, 0.0}, {0.5, -0.5}, {2.0, 1.0}}};
  int counts[3] = {0, 0, 0};
  const int reps = 3000;
  for (int r = 0; r < reps; ++r) {
    const auto g = generate_graph(s, z, decaf::derive_seed(77, static_cast<std::uint64_t>(r)));
    for (auto [u, v] : g.edge_list()) counts[u + v - 1] += 1;  // pairs (0,1), (0,2), (1,2)
  }
  const std::pair<int, int> pairs[3] = {{0, 1}, {0, 2}, {1, 2}};
  for (int k = 0; k < 3; ++k) {
    const double p = edge_probability(s, z.z.row(static_cast<std::size_t>(pairs[k].first)),
                                      z.z.row(static_cast<std::size_t>(pairs[k].second)));
    const double se = std::sqrt(p * (1 - p) / reps);
    CHECK(std::abs(counts[k] / static_cast<double>(reps) - p) <= 4 * se);
  }
}

TEST_CASE("recipes") {
  const ScmParams h = make_recipe("h-feat", 1, {200, 10.0});
  CHECK(h.feature_dim() == 8);
  CHECK(h.class_count() == 4);
  CHECK(h.latent_dim() == 16);
  CHECK(h.edgeSource == h.labelMap);
  CHECK(h == make_recipe("h-feat", 1, {200, 10.0}));
  CHECK_FALSE(h.labelMap == make_recipe("h-feat", 2, {200, 10.0}).labelMap);

  const ScmParams f = make_recipe("full-feat", 1, {200, 10.0});
  CHECK(f.feature_dim() == 16);
  CHECK(f.labelMode == LabelMode::NeighborMixed);
  decaf::Rng rng(3);
  const Matrix a = testing::random_matrix(2, 16, rng, -2, 2);
  CHECK(edge_probability(f, a.row(0), a.row(1)) == f.density);

  const ScmParams q = make_recipe("qtr-feat", 1, {200, 10.0});
  CHECK(q.feature_dim() == 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(q.edgeSource(r, c) == 0.0);
  LatentSample z = sample_latents(q, 10, 5);
  const auto g1 = generate_graph(q, z, 6);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t c = 4; c < 16; ++c) z.z(i, c) += 3.0;
  const auto g2 = generate_graph(q, z, 6);
  CHECK(g1.features == g2.features);

  CHECK_THROWS_AS(make_recipe("half-feat", 1), decaf::Error);
}

TEST_CASE("density calibration") {
  const ScmParams s = make_recipe("h-feat", 2, {200, 10.0});
  const LatentSample z = sample_latents(s, 200, 3);
  CHECK(calibrate_density(s, z, 0.0).density == 0.0);
  const DensityCalibration cal = calibrate_density(s, z, 2.0);
  CHECK_FALSE(cal.clamped);
  ScmParams t = s;
  t.density = cal.density;
  CHECK(std::abs(expected_mean_degree(t, z) - 2.0) <= 0.02);
  CHECK(calibrate_density(s, z, 1e6).clamped);
  CHECK(calibrate_density(s, z, 1e6).density == 1.0);

  double prev = -1.0;
  for (double c : {0.1, 0.3, 0.6, 0.9}) {
    t.density = c;
    const double deg = expected_mean_degree(t, z);
    CHECK(deg > prev);
    prev = deg;
  }
}

TEST_CASE("calibrated density realizes the target mean degree") {
  const ScmParams s = small_params(3, 3, 2, 1.0);
  const LatentSample z = sample_latents(s, 50, 4);
  ScmParams t = s;
  t.density = calibrate_density(s, z, 5.0).density;
  double total = 0.0;
  for (int r = 0; r < 200; ++r) total += generate_graph(t, z, decaf::derive_seed(5, static_cast<std::uint64_t>(r))).mean_degree();
  CHECK(std::abs(total / 200.0 - 5.0) <= 0.5);
}

TEST_CASE("shifts touch only their own parameters") {
  const ScmParams base = make_recipe("h-feat", 4, {200, 10.0});
  for (ShiftKind kind : {ShiftKind::Covariate, ShiftKind::ConceptX, ShiftKind::ConceptA}) {
    CHECK(apply_shift(base, {kind, 0.0, 3}) == base);
  }
  const ScmParams x = apply_shift(base, {ShiftKind::ConceptX, 0.8, 3});
  CHECK(x.labelMap == base.labelMap);
  CHECK(x.labelOffset == base.labelOffset);
  CHECK(x.edgeSource == base.edgeSource);
  CHECK(x.edgeTarget == base.edgeTarget);
  CHECK(x.latentMean == base.latentMean);
  CHECK_FALSE(x.featureMap == base.featureMap);

  const ScmParams a = apply_shift(base, {ShiftKind::ConceptA, 0.8, 3});
  CHECK(a.featureMap == base.featureMap);
  CHECK(a.featureOffset == base.featureOffset);
  CHECK(a.labelMap == base.labelMap);
  CHECK_FALSE(a.edgeSource == base.edgeSource);
  CHECK_FALSE(a.edgeTarget == base.edgeTarget);

  const ScmParams c = apply_shift(base, {ShiftKind::Covariate, 0.8, 3});
  CHECK(c.featureMap == base.featureMap);
  CHECK(c.edgeSource == base.edgeSource);
  CHECK(c.latentCov == base.latentCov);
  double norm = 0.0;
  for (std::size_t i = 0; i < 16; ++i) norm += std::pow(c.latentMean[i] - base.latentMean[i], 2);
  CHECK(std::sqrt(norm) == doctest::Approx(0.8).epsilon(1e-12));

  CHECK(parse_shift("concept-a") == ShiftKind::ConceptA);
  CHECK_THROWS(parse_shift("label"));
}

TEST_CASE("covariate shift moves the feature mean by M_f delta") {
  const ScmParams base = make_recipe("full-feat", 6, {200, 10.0});
  const ScmParams shifted = apply_shift(base, {ShiftKind::Covariate, 1.0, 8});
  const std::size_t n = 20000;
  const Matrix m0 = decaf::num::column_means(sample_latents(base, n, 1).z);
  const Matrix m1 = decaf::num::column_means(sample_latents(shifted, n, 2).z);
  for (std::size_t r = 0; r < 16; ++r) {
    double expected = 0.0;
    for (std::size_t c = 0; c < 16; ++c) expected += base.featureMap(r, c) * (shifted.latentMean[c] - base.latentMean[c]);
    // M_f is the identity here, so the feature mean equals the latent mean.
    CHECK(std::abs((m1(0, r) - m0(0, r)) - expected) <= 6.0 * std::sqrt(2.0 / n));
  }
}

TEST_CASE("covariate shift keeps the x to label law: fitted classifier transfers") {
  std::vector<double> drops;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ScmParams s = small_params(6, 6, 3, 0.0);
    decaf::Rng rng(seed + 40);
    s.labelMap = testing::random_matrix(3, 6, rng, -1.0, 1.0);
    const ScmParams shifted = apply_shift(s, {ShiftKind::Covariate, 0.8, seed});
    const auto train = generate_graph(s, sample_latents(s, 2000, seed * 3 + 1), 1);
    const auto iid = generate_graph(s, sample_latents(s, 2000, seed * 3 + 2), 1);
    const auto test = generate_graph(shifted, sample_latents(shifted, 2000, seed * 3 + 3), 1);
    const auto clf = fit_linear_classifier(train, 400);
    drops.push_back(linear_accuracy(clf, iid) - linear_accuracy(clf, test));
  }
  std::sort(drops.begin(), drops.end());
  CHECK(drops[2] <= 0.02);
}

TEST_CASE("spillover of one latent perturbation on mean aggregation") {
  const ScmParams s = make_recipe("h-feat", 5, {2000, 20.0});
  LatentSample z = sample_latents(s, 2000, 6);
  const auto g = generate_graph(s, z, 7);
  const Matrix before = latent_neighborhood(s, z, g);
  const std::size_t target = 0;
  const std::size_t j = static_cast<std::size_t>(g.neighbors(target)[0]);
  std::size_t stranger = 1;
  auto nb = g.neighbors(target);
  while (std::find(nb.begin(), nb.end(), static_cast<int>(stranger)) != nb.end() || stranger == target) ++stranger;

  LatentSample zs = z;
  for (std::size_t c = 0; c < 16; ++c) zs.z(stranger, c) += 1.0;
  CHECK(latent_neighborhood(s, zs, g).select_rows(std::vector<int>{0}) == before.select_rows(std::vector<int>{0}));

  LatentSample zn = z;
  const double delta = 0.5;
  zn.z(j, 3) += delta;
  const Matrix after = latent_neighborhood(s, zn, g);
  double change = 0.0;
  for (std::size_t c = 0; c < 16; ++c) change += std::pow(after(target, c) - before(target, c), 2);
  // M_a is the identity, so the bound is tight.
  CHECK(std::sqrt(change) == doctest::Approx(delta / static_cast<double>(g.degree(target))).epsilon(1e-9));
}

}
