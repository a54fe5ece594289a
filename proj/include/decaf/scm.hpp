#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "decaf/graph.hpp"
#include "decaf/matrix.hpp"

namespace decaf::scm {

using graph::GraphData;
using num::Matrix;

enum class LabelMode {
  Direct,         // argmax(M_y z + b_y)
  NeighborMixed,  // argmax(M_y (z/2 + zbar/2) + b_y), zbar the 1-hop neighbor mean
};

/// Latent-variable generative model for (X, Y, A).
struct ScmParams {
  Matrix featureMap;                  // d x p
  std::vector<double> featureOffset;  // d
  Matrix labelMap;                    // k x p
  std::vector<double> labelOffset;    // k
  Matrix edgeSource;                  // q x p
  Matrix edgeTarget;                  // q x p
  Matrix neighborMap;                 // o x p
  double density = 0.0;               // c in [0, 1]
  std::vector<double> latentMean;     // p
  Matrix latentCov;                   // p x p
  LabelMode labelMode = LabelMode::Direct;

  std::size_t latent_dim() const { return latentMean.size(); }
  std::size_t feature_dim() const { return featureMap.rows(); }
  std::size_t class_count() const { return labelMap.rows(); }

  void validate() const;
  friend bool operator==(const ScmParams&, const ScmParams&) = default;
};

struct LatentSample {
  Matrix z;  // n x p
};

/// n i.i.d. draws from Normal(mu, Sigma). Throws if Sigma is not PSD.
LatentSample sample_latents(const ScmParams& params, std::size_t n, std::uint64_t seed);

/// c / (||M_s z_i - M_o z_j||^2 + 1)
double edge_probability(const ScmParams& params, std::span<const double> zi, std::span<const double> zj);

/// Samples features, edges (independently for i < j, then symmetrized) and
/// labels. Rows are processed in fixed blocks with per-block seeds, so the
/// output does not depend on the thread count.
GraphData generate_graph(const ScmParams& params, const LatentSample& latents, std::uint64_t seed,
                         unsigned threads = 1);

/// Expected mean degree implied by params.density on a latent sample.
double expected_mean_degree(const ScmParams& params, const LatentSample& latents);

struct DensityCalibration {
  double density = 0.0;
  double expectedDegree = 0.0;
  bool clamped = false;  // target needed c > 1
};

DensityCalibration calibrate_density(const ScmParams& params, const LatentSample& latents,
                                     double targetMeanDegree);

struct RecipeOptions {
  std::size_t nodes = 2000;
  double targetMeanDegree = 20.0;
};

/// "h-feat", "qtr-feat" or "full-feat" with p = 16 latent dims and 4 classes.
ScmParams make_recipe(const std::string& name, std::uint64_t seed, const RecipeOptions& options = {});
std::vector<std::string> recipe_names();

enum class ShiftKind { None, Covariate, ConceptX, ConceptA };

std::string to_string(ShiftKind kind);
ShiftKind parse_shift(const std::string& name);

struct ShiftSpec {
  ShiftKind kind = ShiftKind::None;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
};

/// covariate: mu += magnitude * u for a random unit u.
/// concept-x: (M_f, b_f) interpolated toward a fresh random draw.
/// concept-a: (M_s, M_o) interpolated toward fresh random draws.
ScmParams apply_shift(const ScmParams& params, const ShiftSpec& spec);

/// Latent neighborhood representation a_i = mean over 1-hop neighbors of
/// M_a z_j; zero for isolated nodes.
Matrix latent_neighborhood(const ScmParams& params, const LatentSample& latents, const GraphData& g);

}  // namespace decaf::scm
