#include "decaf/graph.hpp"

#include <algorithm>
#include <cmath>

#include "decaf/error.hpp"
#include "decaf/mlp.hpp"

namespace decaf::graph {

GraphData GraphData::from_edges(Matrix features, std::vector<int> labels, std::size_t numClasses,
                                std::span<const std::pair<int, int>> edges) {
  GraphData g;
  g.numClasses = numClasses;
  g.features = std::move(features);
  g.labels = std::move(labels);
  const std::size_t n = g.features.rows();

  std::vector<std::vector<int>> adj(n);
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
      throw Error("edge (" + std::to_string(u) + "," + std::to_string(v) + ") references a missing node");
    }
    if (u == v) throw Error("self-loop on node " + std::to_string(u));
    adj[static_cast<std::size_t>(u)].push_back(v);
    adj[static_cast<std::size_t>(v)].push_back(u);
  }
  g.rowStarts.assign(1, 0);
  g.rowStarts.reserve(n + 1);
  for (auto& nb : adj) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    g.columnIds.insert(g.columnIds.end(), nb.begin(), nb.end());
    g.rowStarts.push_back(g.columnIds.size());
  }
  return g;
}

std::vector<std::pair<int, int>> GraphData::edge_list() const {
  std::vector<std::pair<int, int>> out;
  out.reserve(edge_count());
  for (std::size_t i = 0; i < node_count(); ++i)
    for (int j : neighbors(i))
      if (static_cast<std::size_t>(j) > i) out.emplace_back(static_cast<int>(i), j);
  return out;
}

double GraphData::mean_degree() const {
  return node_count() == 0 ? 0.0 : static_cast<double>(columnIds.size()) / static_cast<double>(node_count());
}

void GraphData::validate(bool requireAllClasses) const {
  const std::size_t n = node_count();
  if (n < 2) throw Error("graph must have at least 2 nodes");
  if (feature_dim() == 0) throw Error("graph features must have at least one column");
  if (!features.all_finite()) throw Error("graph features contain non-finite values");
  if (labels.size() != n) throw Error("label count does not match node count");
  if (numClasses == 0) throw Error("graph must declare at least one class");
  if (rowStarts.size() != n + 1 || rowStarts.back() != columnIds.size()) {
    throw Error("adjacency row offsets are inconsistent with node count");
  }
  std::vector<char> seen(numClasses, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= numClasses) {
      throw Error("label " + std::to_string(y) + " of node " + std::to_string(i) + " outside [0, " +
                  std::to_string(numClasses) + ")");
    }
    seen[static_cast<std::size_t>(y)] = 1;
    for (int j : neighbors(i)) {
      if (j < 0 || static_cast<std::size_t>(j) >= n) throw Error("adjacency references a missing node");
      if (static_cast<std::size_t>(j) == i) throw Error("self-loop on node " + std::to_string(i));
      auto nb = neighbors(static_cast<std::size_t>(j));
      if (!std::binary_search(nb.begin(), nb.end(), static_cast<int>(i))) {
        throw Error("adjacency is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
  if (requireAllClasses) {
    for (std::size_t c = 0; c < numClasses; ++c)
      if (!seen[c]) throw Error("class " + std::to_string(c) + " has no nodes");
  }
}

GraphData permute(const GraphData& g, std::span<const int> perm) {
  const std::size_t n = g.node_count();
  if (perm.size() != n) throw ShapeError("permute: permutation size mismatch");
  Matrix x(n, g.feature_dim());
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = static_cast<std::size_t>(perm[i]);
    auto src = g.features.row(i);
    std::copy(src.begin(), src.end(), x.row(p).begin());
    y[p] = g.labels[i];
  }
  std::vector<std::pair<int, int>> edges;
  for (auto [u, v] : g.edge_list()) edges.emplace_back(perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]);
  return GraphData::from_edges(std::move(x), std::move(y), g.numClasses, edges);
}

namespace {

SparseMatrix scaled_adjacency(const GraphData& g, bool selfLoops, bool symmetric) {
  const std::size_t n = g.node_count();
  std::vector<double> scale(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double deg = static_cast<double>(g.degree(i)) + (selfLoops ? 1.0 : 0.0);
    if (deg > 0.0) scale[i] = symmetric ? 1.0 / std::sqrt(deg) : 1.0 / deg;
  }
  SparseMatrix s;
  s.rows = n;
  s.cols = n;
  s.rowStarts.assign(1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool diagonalDone = !selfLoops;
    for (int j : g.neighbors(i)) {
      const auto ju = static_cast<std::size_t>(j);
      if (!diagonalDone && ju > i) {
        s.columnIds.push_back(static_cast<int>(i));
        s.values.push_back(symmetric ? scale[i] * scale[i] : scale[i]);
        diagonalDone = true;
      }
      s.columnIds.push_back(j);
      s.values.push_back(symmetric ? scale[i] * scale[ju] : scale[i]);
    }
    if (!diagonalDone) {
      s.columnIds.push_back(static_cast<int>(i));
      s.values.push_back(symmetric ? scale[i] * scale[i] : scale[i]);
    }
    s.rowStarts.push_back(s.columnIds.size());
  }
  return s;
}

}  // namespace

SparseMatrix normalize_adjacency(const GraphData& g, bool selfLoops) {
  return scaled_adjacency(g, selfLoops, true);
}

SparseMatrix mean_adjacency(const GraphData& g) { return scaled_adjacency(g, false, false); }

SparseMatrix raw_adjacency(const GraphData& g, bool selfLoops) {
  SparseMatrix s = scaled_adjacency(g, selfLoops, false);
  std::fill(s.values.begin(), s.values.end(), 1.0);
  return s;
}

std::string to_string(BackboneKind kind) { return kind == BackboneKind::Sgc ? "sgc" : "gcn"; }

BackboneKind parse_backbone(const std::string& name) {
  if (name == "sgc") return BackboneKind::Sgc;
  if (name == "gcn") return BackboneKind::Gcn;
  throw Error("unknown backbone '" + name + "' (expected sgc or gcn)");
}

BackboneModel BackboneModel::create(BackboneKind kind, int hops, std::size_t inputDim, std::size_t hidden,
                                    std::size_t classes, Rng& rng) {
  if (hops < 1) throw Error("backbone needs at least one hop");
  BackboneModel m;
  m.kind = kind;
  m.hops = kind == BackboneKind::Gcn ? 2 : hops;
  if (kind == BackboneKind::Sgc) {
    m.weights.push_back(num::glorot(inputDim, classes, rng));
  } else {
    m.weights.push_back(num::glorot(inputDim, hidden, rng));
    m.weights.push_back(num::glorot(hidden, classes, rng));
  }
  return m;
}

BackbonePlan plan_backbone(const GraphData& g, BackboneKind kind, int hops) {
  if (hops < 1) throw Error("backbone needs at least one hop");
  BackbonePlan plan;
  plan.kind = kind;
  auto s = std::make_shared<SparseMatrix>(normalize_adjacency(g, true));
  plan.input = g.features;
  if (kind == BackboneKind::Sgc) {
    for (int h = 0; h < hops; ++h) plan.input = s->multiply(plan.input);
  }
  plan.smooth = std::move(s);
  return plan;
}

num::Var backbone_forward(num::Tape& tape, const BackbonePlan& plan, std::span<const num::Var> weights) {
  num::Var x = tape.constant(plan.input);
  if (plan.kind == BackboneKind::Sgc) {
    if (weights.size() != 1) throw ShapeError("SGC backbone expects one weight matrix");
    return tape.matmul(x, weights[0]);
  }
  if (weights.size() != 2) throw ShapeError("GCN backbone expects two weight matrices");
  num::Var h = tape.relu(tape.sparse_matmul(plan.smooth, tape.matmul(x, weights[0])));
  return tape.sparse_matmul(plan.smooth, tape.matmul(h, weights[1]));
}

Matrix backbone_forward(const BackboneModel& model, const GraphData& g) {
  if (model.weights.empty() || model.weights.front().rows() != g.feature_dim()) {
    throw ShapeError("backbone weights do not match feature dimension");
  }
  BackbonePlan plan = plan_backbone(g, model.kind, model.hops);
  num::Tape tape;
  std::vector<num::Var> w;
  for (const Matrix& m : model.weights) w.push_back(tape.constant(m));
  return tape.value(backbone_forward(tape, plan, w));
}

SgcDecomposition sgc_decomposed(const GraphData& g, const Matrix& theta, int hops) {
  if (hops < 1) throw Error("sgc_decomposed: hops must be >= 1");
  const std::size_t n = g.node_count();
  const SparseMatrix a = raw_adjacency(g, false);
  const SparseMatrix aTilde = raw_adjacency(g, true);

  Matrix ones(n, 1, 1.0);
  for (int h = 1; h < hops; ++h) ones = aTilde.multiply(ones);
  const Matrix rowSums = a.multiply(ones);
  std::vector<double> invSqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (rowSums(i, 0) > 0.0) invSqrt[i] = 1.0 / std::sqrt(rowSums(i, 0));

  SgcDecomposition out;
  out.psiX = num::matmul(g.features, theta);
  Matrix y = out.psiX;
  for (std::size_t i = 0; i < n; ++i)
    for (double& v : y.row(i)) v *= invSqrt[i];
  for (int h = 1; h < hops; ++h) y = aTilde.multiply(y);
  y = a.multiply(y);
  for (std::size_t i = 0; i < n; ++i)
    for (double& v : y.row(i)) v *= invSqrt[i];
  out.psiA = std::move(y);
  return out;
}

Matrix combine_branches(const SgcDecomposition& parts, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw Error("gamma must lie in [0, 1]");
  return parts.psiX * gamma + parts.psiA * (1.0 - gamma);
}

std::string to_string(EncoderKind kind) { return kind == EncoderKind::Linear ? "linear" : "gcn"; }

EncoderKind parse_encoder(const std::string& name) {
  if (name == "linear" || name == "sgc") return EncoderKind::Linear;
  if (name == "gcn") return EncoderKind::Gcn;
  throw Error("unknown encoder '" + name + "' (expected linear or gcn)");
}

EncoderWeights EncoderWeights::create(EncoderKind kind, int layers, std::size_t inputDim, std::size_t outputDim,
                                      Rng& rng) {
  if (layers < 1) throw Error("encoder needs at least one layer");
  EncoderWeights e;
  e.kind = kind;
  e.layers = layers;
  e.weights.push_back(num::glorot(inputDim, outputDim, rng));
  if (kind == EncoderKind::Gcn) {
    for (int l = 1; l < layers; ++l) e.weights.push_back(num::glorot(outputDim, outputDim, rng));
  }
  return e;
}

EncoderPlan plan_encoder(const GraphData& g, EncoderKind kind, int layers) {
  if (layers < 1) throw Error("encoder needs at least one layer");
  EncoderPlan plan;
  plan.kind = kind;
  plan.layers = layers;
  auto s = std::make_shared<SparseMatrix>(normalize_adjacency(g, true));
  plan.input = mean_adjacency(g).multiply(g.features);
  if (kind == EncoderKind::Linear) {
    for (int l = 1; l < layers; ++l) plan.input = s->multiply(plan.input);
  }
  plan.smooth = std::move(s);
  return plan;
}

num::Var encode(num::Tape& tape, const EncoderPlan& plan, std::span<const num::Var> weights) {
  num::Var x = tape.constant(plan.input);
  if (plan.kind == EncoderKind::Linear) {
    if (weights.size() != 1) throw ShapeError("linear encoder expects one weight matrix");
    return tape.matmul(x, weights[0]);
  }
  if (weights.size() != static_cast<std::size_t>(plan.layers)) {
    throw ShapeError("gcn encoder expects one weight matrix per layer");
  }
  num::Var h = tape.matmul(x, weights[0]);
  for (int l = 1; l < plan.layers; ++l) {
    h = tape.relu(h);
    h = tape.sparse_matmul(plan.smooth, tape.matmul(h, weights[static_cast<std::size_t>(l)]));
  }
  return h;
}

Matrix neighborhood_encode(const GraphData& g, const EncoderWeights& encoder) {
  if (encoder.weights.empty() || encoder.weights.front().rows() != g.feature_dim()) {
    throw ShapeError("encoder weights do not match feature dimension");
  }
  EncoderPlan plan = plan_encoder(g, encoder.kind, encoder.layers);
  num::Tape tape;
  std::vector<num::Var> w;
  for (const Matrix& m : encoder.weights) w.push_back(tape.constant(m));
  return tape.value(encode(tape, plan, w));
}

}  // namespace decaf::graph
