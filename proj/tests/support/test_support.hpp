#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "decaf/graph.hpp"
#include "decaf/matrix.hpp"
#include "decaf/random.hpp"

namespace testing {

using decaf::Rng;
using decaf::graph::GraphData;
using decaf::num::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

/// Erdos-Renyi graph with every class present when n >= k.
inline GraphData random_graph(std::size_t n, double edgeProb, std::size_t d, std::size_t k, Rng& rng) {
  std::bernoulli_distribution coin(edgeProb);
  std::vector<std::pair<int, int>> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (coin(rng)) edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
  std::vector<int> labels(n);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(k) - 1);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < k ? static_cast<int>(i) : cls(rng);
  return GraphData::from_edges(random_matrix(n, d, rng), labels, k, edges);
}

inline Matrix dense_adjacency(const GraphData& g) {
  Matrix a(g.node_count(), g.node_count());
  for (std::size_t i = 0; i < g.node_count(); ++i)
    for (int j : g.neighbors(i)) a(i, static_cast<std::size_t>(j)) = 1.0;
  return a;
}

inline Matrix dense_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += a(i, t) * b(t, j);
      out(i, j) = s;
    }
  return out;
}

/// D^-1/2 M D^-1/2 with D the row sums of M, zero rows where the sum is 0.
inline Matrix dense_sym_normalize(const Matrix& m) {
  const std::size_t n = m.rows();
  std::vector<double> s(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s[i] += m(i, j);
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (s[i] > 0 && s[j] > 0) out(i, j) = m(i, j) / std::sqrt(s[i] * s[j]);
  return out;
}

inline double frobenius(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

/// ||a - f|| / (||a|| + ||f||), 0 when both vanish.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double denom = frobenius(analytic) + frobenius(numeric);
  if (denom < 1e-12) return 0.0;
  return frobenius(analytic - numeric) / denom;
}

/// Central differences of f with respect to every entry of params[p].
inline std::vector<Matrix> numeric_gradients(std::vector<Matrix> params,
                                             const std::function<double(const std::vector<Matrix>&)>& f,
                                             double h = 1e-5) {
  std::vector<Matrix> grads;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix g(params[p].rows(), params[p].cols());
    for (std::size_t i = 0; i < params[p].values().size(); ++i) {
      const double orig = params[p].values()[i];
      params[p].values()[i] = orig + h;
      const double up = f(params);
      params[p].values()[i] = orig - h;
      const double down = f(params);
      params[p].values()[i] = orig;
      g.values()[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace testing

namespace testing {

/// Two cliques of `half` nodes each plus a few cross edges. Features are
/// noise, so only neighborhoods (and the labels of their members) separate
/// the classes when `signal` is 0; otherwise feature 0 carries +-signal.
inline GraphData two_communities(std::size_t half, std::size_t d, double signal, Rng& rng) {
  const std::size_t n = 2 * half;
  std::vector<std::pair<int, int>> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if ((i < half) == (j < half)) edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
  std::vector<int> labels(n);
  Matrix x = random_matrix(n, d, rng, -0.5, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = i < half ? 0 : 1;
    x(i, 0) += labels[i] == 0 ? signal : -signal;
  }
  // Neighbor means see feature 1 as a community marker.
  for (std::size_t i = 0; i < n; ++i) x(i, 1) += labels[i] == 0 ? 1.0 : -1.0;
  return GraphData::from_edges(x, labels, 2, edges);
}

/// out(i, c) = sum_j g(i, c*o + j) r(i, j), written out directly.
inline Matrix per_class_contract(const Matrix& g, const Matrix& r) {
  const std::size_t o = r.cols();
  const std::size_t k = g.cols() / o;
  Matrix out(g.rows(), k);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t j = 0; j < o; ++j) out(i, c) += g(i, c * o + j) * r(i, j);
  return out;
}

}  // namespace testing
