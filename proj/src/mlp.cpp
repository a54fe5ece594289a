#include "decaf/mlp.hpp"

#include <cmath>

namespace decaf::num {

Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

Mlp Mlp::create(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  Mlp mlp;
  mlp.params.push_back(glorot(in, hidden, rng));
  mlp.params.emplace_back(1, hidden);
  mlp.params.push_back(glorot(hidden, out, rng));
  mlp.params.emplace_back(1, out);
  return mlp;
}

Matrix Mlp::forward(const Matrix& x) const {
  Tape tape;
  MlpVars vars = bind(tape, *this, false);
  return tape.value(num::forward(tape, vars, tape.constant(x)));
}

MlpVars bind(Tape& tape, const Mlp& mlp, bool trainable) {
  auto make = [&](const Matrix& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  return MlpVars{make(mlp.params[0]), make(mlp.params[1]), make(mlp.params[2]), make(mlp.params[3])};
}

Var forward(Tape& tape, const MlpVars& vars, Var x) {
  Var hidden = tape.relu(tape.add_row(tape.matmul(x, vars.w1), vars.b1));
  return tape.add_row(tape.matmul(hidden, vars.w2), vars.b2);
}

}  // namespace decaf::num
