#pragma once

#include <cstddef>
#include <vector>

#include "decaf/matrix.hpp"
#include "decaf/random.hpp"
#include "decaf/tape.hpp"

namespace decaf::num {

/// Two-layer perceptron: relu(x W1 + b1) W2 + b2.
struct Mlp {
  /// W1 (in x hidden), b1 (1 x hidden), W2 (hidden x out), b2 (1 x out)
  std::vector<Matrix> params;

  static Mlp create(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

  std::size_t input_dim() const { return params.at(0).rows(); }
  std::size_t hidden_dim() const { return params.at(0).cols(); }
  std::size_t output_dim() const { return params.at(2).cols(); }

  Matrix forward(const Matrix& x) const;
};

struct MlpVars {
  Var w1, b1, w2, b2;
};

MlpVars bind(Tape& tape, const Mlp& mlp, bool trainable);
Var forward(Tape& tape, const MlpVars& vars, Var x);

/// Glorot-uniform initialized matrix.
Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace decaf::num
