#include "decaf/diagnostics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <sstream>

#include "decaf/error.hpp"

namespace decaf::diag {

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  return out;
}

void check_samples(const Matrix& a, const Matrix& b) {
  if (a.rows() < 2 || b.rows() < 2) throw Error("hotelling_t2: each sample needs at least two rows");
  if (a.cols() != b.cols() || a.cols() == 0) throw ShapeError("hotelling_t2: sample widths differ");
}

Matrix rows_with_label(const Matrix& m, std::span<const int> labels, int c) {
  std::vector<int> rows;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == c) rows.push_back(static_cast<int>(i));
  return m.select_rows(rows);
}

std::size_t count_label(std::span<const int> labels, int c) {
  std::size_t n = 0;
  for (int y : labels) n += y == c ? 1 : 0;
  return n;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

Matrix pooled_covariance(const Matrix& sampleA, const Matrix& sampleB) {
  check_samples(sampleA, sampleB);
  const std::size_t m = sampleA.cols();
  const Matrix muA = num::column_means(sampleA);
  const Matrix muB = num::column_means(sampleB);
  Matrix cov(m, m);
  auto accumulate = [&](const Matrix& s, const Matrix& mu) {
    for (std::size_t r = 0; r < s.rows(); ++r)
      for (std::size_t i = 0; i < m; ++i) {
        const double di = s(r, i) - mu(0, i);
        for (std::size_t j = 0; j < m; ++j) cov(i, j) += di * (s(r, j) - mu(0, j));
      }
  };
  accumulate(sampleA, muA);
  accumulate(sampleB, muB);
  cov *= 1.0 / static_cast<double>(sampleA.rows() + sampleB.rows() - 2);
  return cov;
}

double default_ridge(const Matrix& pooledCov) {
  double trace = 0.0;
  for (std::size_t i = 0; i < pooledCov.rows(); ++i) trace += pooledCov(i, i);
  return 1e-3 * trace / static_cast<double>(pooledCov.rows());
}

double hotelling_t2(const Matrix& sampleA, const Matrix& sampleB, std::optional<double> ridge) {
  const Matrix pooled = pooled_covariance(sampleA, sampleB);
  const double lambda = ridge.value_or(default_ridge(pooled));
  if (lambda < 0.0) throw Error("hotelling_t2: ridge must be non-negative");
  Eigen::MatrixXd cov = to_eigen(pooled);
  cov.diagonal().array() += lambda;
  const Eigen::VectorXd diff = to_eigen(num::column_means(sampleA) - num::column_means(sampleB)).row(0).transpose();
  if (diff.isZero(0.0)) return 0.0;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(cov);
  const Eigen::VectorXd pivots = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || pivots.minCoeff() <= 1e-12 * std::max(pivots.cwiseAbs().maxCoeff(), 1e-300)) {
    throw Error("hotelling_t2: pooled covariance is singular");
  }
  const Eigen::VectorXd solved = ldlt.solve(diff);
  const double quad = diff.dot(solved);
  const double na = static_cast<double>(sampleA.rows());
  const double nb = static_cast<double>(sampleB.rows());
  return na * nb / (na + nb) * quad;
}

double ShiftReport::mean_feature() const { return mean_of(perClassFeatureT2); }
double ShiftReport::mean_neighbor() const { return mean_of(perClassNeighborT2); }

std::string ShiftReport::to_csv() const {
  std::ostringstream out;
  out << "class,feature_t2,neighbor_t2\n";
  char buf[64];
  for (std::size_t i = 0; i < classIds.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", perClassFeatureT2[i]);
    out << classIds[i] << ',' << buf;
    std::snprintf(buf, sizeof buf, "%.17g", perClassNeighborT2[i]);
    out << ',' << buf << '\n';
  }
  return out.str();
}

nlohmann::json ShiftReport::to_json() const {
  nlohmann::json j;
  j["class_ids"] = classIds;
  j["feature_t2"] = perClassFeatureT2;
  j["neighbor_t2"] = perClassNeighborT2;
  j["omitted_classes"] = omittedClasses;
  j["mean_feature_t2"] = mean_feature();
  j["mean_neighbor_t2"] = mean_neighbor();
  return j;
}

ShiftReport shift_report(const Matrix& featuresA, const Matrix& neighborsA, std::span<const int> labelsA,
                         const Matrix& featuresB, const Matrix& neighborsB, std::span<const int> labelsB,
                         std::size_t numClasses, const ShiftOptions& options) {
  if (featuresA.rows() != labelsA.size() || neighborsA.rows() != labelsA.size() ||
      featuresB.rows() != labelsB.size() || neighborsB.rows() != labelsB.size()) {
    throw ShapeError("shift_report: sample rows do not match labels");
  }
  ShiftReport report;
  for (std::size_t c = 0; c < numClasses; ++c) {
    const int cls = static_cast<int>(c);
    if (count_label(labelsA, cls) < 2 || count_label(labelsB, cls) < 2) {
      report.omittedClasses.push_back(cls);
      continue;
    }
    report.classIds.push_back(cls);
    report.perClassFeatureT2.push_back(hotelling_t2(rows_with_label(featuresA, labelsA, cls),
                                                    rows_with_label(featuresB, labelsB, cls), options.ridge));
    report.perClassNeighborT2.push_back(hotelling_t2(rows_with_label(neighborsA, labelsA, cls),
                                                     rows_with_label(neighborsB, labelsB, cls), options.ridge));
    if (options.scope == ClassScope::First) break;
  }
  return report;
}

ShiftReport shift_report(const graph::GraphData& gTrain, const graph::GraphData& gTest,
                         const graph::EncoderWeights& encoder, const ShiftOptions& options) {
  if (gTrain.numClasses != gTest.numClasses) throw Error("shift_report: class vocabularies differ");
  const Matrix nA = graph::neighborhood_encode(gTrain, encoder);
  const Matrix nB = graph::neighborhood_encode(gTest, encoder);
  if (options.embedFeatures) {
    const Matrix& w = encoder.weights.front();
    return shift_report(num::matmul(gTrain.features, w), nA, gTrain.labels, num::matmul(gTest.features, w), nB,
                        gTest.labels, gTrain.numClasses, options);
  }
  return shift_report(gTrain.features, nA, gTrain.labels, gTest.features, nB, gTest.labels, gTrain.numClasses,
                      options);
}

}  // namespace decaf::diag
