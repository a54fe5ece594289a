#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "decaf/matrix.hpp"
#include "decaf/random.hpp"
#include "decaf/sparse.hpp"
#include "decaf/tape.hpp"

namespace decaf::graph {

using num::Matrix;
using num::SparseMatrix;

/// Node features, class labels and a symmetric adjacency in CSR form.
struct GraphData {
  std::size_t numClasses = 0;
  Matrix features;  // n x d
  std::vector<int> labels;
  std::vector<std::size_t> rowStarts{0};
  std::vector<int> columnIds;

  /// Builds the symmetric adjacency from undirected pairs. Duplicates are
  /// merged; self-loops are rejected.
  static GraphData from_edges(Matrix features, std::vector<int> labels, std::size_t numClasses,
                              std::span<const std::pair<int, int>> edges);

  std::size_t node_count() const { return features.rows(); }
  std::size_t feature_dim() const { return features.cols(); }
  std::size_t degree(std::size_t i) const { return rowStarts[i + 1] - rowStarts[i]; }
  std::span<const int> neighbors(std::size_t i) const {
    return {columnIds.data() + rowStarts[i], degree(i)};
  }
  /// Undirected edge count.
  std::size_t edge_count() const { return columnIds.size() / 2; }
  /// Pairs (u, v) with u < v.
  std::vector<std::pair<int, int>> edge_list() const;
  double mean_degree() const;

  /// Throws decaf::Error describing the first violated invariant.
  void validate(bool requireAllClasses) const;

  friend bool operator==(const GraphData&, const GraphData&) = default;
};

/// Same graph with node i relabelled to perm[i].
GraphData permute(const GraphData& g, std::span<const int> perm);

/// D^-1/2 A D^-1/2, or with self loops D~^-1/2 (A + I) D~^-1/2. Rows of
/// zero-degree nodes are empty.
SparseMatrix normalize_adjacency(const GraphData& g, bool selfLoops);

/// Row-normalized D^-1 A (neighbor mean, no self loops).
SparseMatrix mean_adjacency(const GraphData& g);

/// Unnormalized adjacency, optionally with unit self loops.
SparseMatrix raw_adjacency(const GraphData& g, bool selfLoops);

enum class BackboneKind { Sgc, Gcn };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone(const std::string& name);

/// SGC: weights = {Theta (d x k)}, logits S^hops X Theta.
/// GCN: weights = {W1 (d x h), W2 (h x k)}, logits S relu(S X W1) W2.
struct BackboneModel {
  BackboneKind kind = BackboneKind::Sgc;
  int hops = 2;
  std::vector<Matrix> weights;

  static BackboneModel create(BackboneKind kind, int hops, std::size_t inputDim, std::size_t hidden,
                              std::size_t classes, Rng& rng);
};

/// Graph-dependent precomputation shared by forward passes and training.
struct BackbonePlan {
  BackboneKind kind = BackboneKind::Sgc;
  std::shared_ptr<const SparseMatrix> smooth;
  Matrix input;  // S^hops X for SGC, X for GCN
};

BackbonePlan plan_backbone(const GraphData& g, BackboneKind kind, int hops);
num::Var backbone_forward(num::Tape& tape, const BackbonePlan& plan, std::span<const num::Var> weights);
/// Pre-activation logits, n x k.
Matrix backbone_forward(const BackboneModel& model, const GraphData& g);

struct SgcDecomposition {
  Matrix psiX;  // central-feature branch, X Theta
  Matrix psiA;  // neighbor branch, first hop over A without self loops
};

/// Splits a k-hop SGC into central and neighbor branches: psiX = X Theta and
/// psiA = D_k^-1/2 A (A + I)^(k-1) D_k^-1/2 X Theta, where D_k holds the row
/// sums of A (A + I)^(k-1). gamma * psiX + (1 - gamma) * psiA is the forward
/// pass with weight gamma pinned on the central node.
SgcDecomposition sgc_decomposed(const GraphData& g, const Matrix& theta, int hops);
Matrix combine_branches(const SgcDecomposition& parts, double gamma);

enum class EncoderKind { Linear, Gcn };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder(const std::string& name);

/// Neighborhood encoder weights. Linear: {W (d x o)}. Gcn: one matrix per
/// layer, d x o then o x o.
struct EncoderWeights {
  EncoderKind kind = EncoderKind::Linear;
  int layers = 2;
  std::vector<Matrix> weights;

  static EncoderWeights create(EncoderKind kind, int layers, std::size_t inputDim, std::size_t outputDim,
                               Rng& rng);
  std::size_t output_dim() const { return weights.back().cols(); }
};

struct EncoderPlan {
  EncoderKind kind = EncoderKind::Linear;
  int layers = 2;
  std::shared_ptr<const SparseMatrix> smooth;
  Matrix input;  // Linear: S^(L-1) M X; Gcn: M X, with M the neighbor mean
};

EncoderPlan plan_encoder(const GraphData& g, EncoderKind kind, int layers);
num::Var encode(num::Tape& tape, const EncoderPlan& plan, std::span<const num::Var> weights);

/// Neighborhood representation a_i: the first hop averages neighbors only,
/// later hops smooth over A + I, then the encoder's maps apply. Isolated
/// nodes map to zero.
Matrix neighborhood_encode(const GraphData& g, const EncoderWeights& encoder);

}  // namespace decaf::graph
