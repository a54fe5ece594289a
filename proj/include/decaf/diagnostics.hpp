#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decaf/graph.hpp"
#include "decaf/matrix.hpp"
#include "json.hpp"

namespace decaf::diag {

using num::Matrix;

/// Default ridge: 1e-3 * trace(pooled) / m.
double default_ridge(const Matrix& pooledCov);

/// Rows are observations. Throws when either sample has fewer than two rows,
/// widths differ, or the ridged pooled covariance is not positive definite.
double hotelling_t2(const Matrix& sampleA, const Matrix& sampleB, std::optional<double> ridge = std::nullopt);

/// Pooled covariance with an (nA + nB - 2) denominator.
Matrix pooled_covariance(const Matrix& sampleA, const Matrix& sampleB);

struct ShiftReport {
  std::vector<int> classIds;
  std::vector<double> perClassFeatureT2;
  std::vector<double> perClassNeighborT2;
  /// Classes skipped because either side had fewer than two samples.
  std::vector<int> omittedClasses;

  double mean_feature() const;
  double mean_neighbor() const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

enum class ClassScope { First, All };

struct ShiftOptions {
  std::optional<double> ridge;
  ClassScope scope = ClassScope::First;
  /// Compare X W (first encoder map) instead of raw features.
  bool embedFeatures = false;
};

/// Class-conditional T^2 between two (feature, neighborhood) samples.
ShiftReport shift_report(const Matrix& featuresA, const Matrix& neighborsA, std::span<const int> labelsA,
                         const Matrix& featuresB, const Matrix& neighborsB, std::span<const int> labelsB,
                         std::size_t numClasses, const ShiftOptions& options = {});

/// Neighborhood embeddings of both graphs come from the same frozen encoder.
ShiftReport shift_report(const graph::GraphData& gTrain, const graph::GraphData& gTest,
                         const graph::EncoderWeights& encoder, const ShiftOptions& options = {});

}  // namespace decaf::diag
