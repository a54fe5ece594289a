#include "decaf/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "decaf/error.hpp"

namespace decaf::num {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

Matrix scalar_matrix(double v) { return Matrix(1, 1, v); }

}  // namespace

Var Tape::push(Node node) {
  const std::size_t id = nodes_.size();
  if (!node.value.all_finite()) throw NumericError("non-finite value in forward pass", id);
  nodes_.push_back(std::move(node));
  return Var{id};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Matrix value) {
  Node n;
  n.kind = OpKind::Parameter;
  n.value = std::move(value);
  n.needsGrad = true;
  Var v = push(std::move(n));
  parameters_.push_back(v.id);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  Node n;
  n.kind = OpKind::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.value = num::matmul(value(a), value(b));
  n.needsGrad = needs(a.id) || needs(b.id);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require(value(a).same_shape(value(b)), "add: shape mismatch");
  Node n;
  n.kind = OpKind::Add;
  n.a = a.id;
  n.b = b.id;
  n.value = value(a) + value(b);
  n.needsGrad = needs(a.id) || needs(b.id);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  require(value(a).same_shape(value(b)), "sub: shape mismatch");
  Node n;
  n.kind = OpKind::Sub;
  n.a = a.id;
  n.b = b.id;
  n.value = value(a) - value(b);
  n.needsGrad = needs(a.id) || needs(b.id);
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& x = value(a);
  const Matrix& r = value(row);
  require(r.rows() == 1 && r.cols() == x.cols(), "add_row: row must be 1 x cols");
  Node n;
  n.kind = OpKind::AddRow;
  n.a = a.id;
  n.b = row.id;
  n.value = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto out = n.value.row(i);
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += r(0, c);
  }
  n.needsGrad = needs(a.id) || needs(row.id);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  Node n;
  n.kind = OpKind::Mul;
  n.a = a.id;
  n.b = b.id;
  n.value = hadamard(value(a), value(b));
  n.needsGrad = needs(a.id) || needs(b.id);
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  Node n;
  n.kind = OpKind::Scale;
  n.a = a.id;
  n.factor = factor;
  n.value = value(a) * factor;
  n.needsGrad = needs(a.id);
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n;
  n.kind = OpKind::Relu;
  n.a = a.id;
  n.value = value(a);
  for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
  n.needsGrad = needs(a.id);
  return push(std::move(n));
}

Var Tape::sparse_matmul(std::shared_ptr<const SparseMatrix> s, Var a) {
  require(s != nullptr, "sparse_matmul: null matrix");
  Node n;
  n.kind = OpKind::SparseMatMul;
  n.a = a.id;
  n.value = s->multiply(value(a));
  n.sparse = std::move(s);
  n.needsGrad = needs(a.id);
  return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
  const Matrix& x = value(a);
  for (int r : rows) require(r >= 0 && static_cast<std::size_t>(r) < x.rows(), "gather_rows: index out of range");
  Node n;
  n.kind = OpKind::GatherRows;
  n.a = a.id;
  n.value = x.select_rows(rows);
  n.ints = std::move(rows);
  n.needsGrad = needs(a.id);
  return push(std::move(n));
}

Var Tape::row_contract(Var g, Var r) {
  const Matrix& gm = value(g);
  const Matrix& rm = value(r);
  require(gm.rows() == rm.rows(), "row_contract: row mismatch");
  require(rm.cols() > 0 && gm.cols() % rm.cols() == 0, "row_contract: g width must be a multiple of r width");
  const std::size_t o = rm.cols();
  const std::size_t k = gm.cols() / o;
  Node n;
  n.kind = OpKind::RowContract;
  n.a = g.id;
  n.b = r.id;
  n.value = Matrix(gm.rows(), k);
  for (std::size_t i = 0; i < gm.rows(); ++i) {
    auto gi = gm.row(i);
    auto ri = rm.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < o; ++j) s += gi[c * o + j] * ri[j];
      n.value(i, c) = s;
    }
  }
  n.needsGrad = needs(g.id) || needs(r.id);
  return push(std::move(n));
}

Var Tape::softmax_cross_entropy(Var logits, std::vector<int> labels) {
  const Matrix& z = value(logits);
  require(labels.size() == z.rows(), "softmax_cross_entropy: one label per row required");
  require(z.rows() > 0, "softmax_cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
      throw Error("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                  std::to_string(z.cols()) + ")");
    }
  }
  Node n;
  n.kind = OpKind::SoftmaxCrossEntropy;
  n.a = logits.id;
  n.cache = softmax_rows(z);
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    total += mx + std::log(sum) - row[static_cast<std::size_t>(labels[i])];
  }
  n.value = scalar_matrix(total / static_cast<double>(z.rows()));
  n.ints = std::move(labels);
  n.needsGrad = needs(logits.id);
  return push(std::move(n));
}

Var Tape::mean_squared_error(Var a, Var b) {
  require(value(a).same_shape(value(b)), "mean_squared_error: shape mismatch");
  require(value(a).rows() > 0, "mean_squared_error: empty input");
  Node n;
  n.kind = OpKind::MeanSquaredError;
  n.a = a.id;
  n.b = b.id;
  n.cache = value(a) - value(b);
  double s = 0.0;
  for (double v : n.cache.values()) s += v * v;
  n.value = scalar_matrix(s / static_cast<double>(value(a).rows()));
  n.needsGrad = needs(a.id) || needs(b.id);
  return push(std::move(n));
}

Var Tape::squared_norm(Var a) {
  Node n;
  n.kind = OpKind::SquaredNorm;
  n.a = a.id;
  double s = 0.0;
  for (double v : value(a).values()) s += v * v;
  n.value = scalar_matrix(s);
  n.needsGrad = needs(a.id);
  return push(std::move(n));
}

Var Tape::row_mean(Var a) {
  require(value(a).rows() > 0, "row_mean: empty input");
  Node n;
  n.kind = OpKind::RowMean;
  n.a = a.id;
  n.value = column_means(value(a));
  n.needsGrad = needs(a.id);
  return push(std::move(n));
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("scalar: node is not 1 x 1");
  return m(0, 0);
}

std::size_t Tape::parameter_slot(Var p) const {
  auto it = std::find(parameters_.begin(), parameters_.end(), p.id);
  if (it == parameters_.end()) throw Error("parameter_slot: node is not a parameter");
  return static_cast<std::size_t>(it - parameters_.begin());
}

GradientResult Tape::backward(Var loss) const {
  if (loss.id >= nodes_.size()) throw Error("backward: loss index out of range");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("backward: loss node " + std::to_string(loss.id) + " is not scalar");
  }

  std::vector<Matrix> grad(loss.id + 1);
  auto accumulate = [&](std::size_t id, const Matrix& g) {
    if (!nodes_[id].needsGrad) return;
    if (grad[id].empty()) {
      grad[id] = g;
    } else {
      grad[id] += g;
    }
  };
  grad[loss.id] = scalar_matrix(1.0);

  for (std::size_t idx = loss.id + 1; idx-- > 0;) {
    const Node& n = nodes_[idx];
    if (!n.needsGrad || grad[idx].empty()) continue;
    const Matrix& g = grad[idx];
    switch (n.kind) {
      case OpKind::Constant:
      case OpKind::Parameter:
        break;
      case OpKind::MatMul:
        if (needs(n.a)) accumulate(n.a, matmul_nt(g, nodes_[n.b].value));
        if (needs(n.b)) accumulate(n.b, matmul_tn(nodes_[n.a].value, g));
        break;
      case OpKind::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case OpKind::Sub:
        accumulate(n.a, g);
        if (needs(n.b)) accumulate(n.b, g * -1.0);
        break;
      case OpKind::AddRow:
        accumulate(n.a, g);
        if (needs(n.b)) {
          Matrix gr(1, g.cols());
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(i, c);
          accumulate(n.b, gr);
        }
        break;
      case OpKind::Mul:
        if (needs(n.a)) accumulate(n.a, hadamard(g, nodes_[n.b].value));
        if (needs(n.b)) accumulate(n.b, hadamard(g, nodes_[n.a].value));
        break;
      case OpKind::Scale:
        accumulate(n.a, g * n.factor);
        break;
      case OpKind::Relu: {
        Matrix ga = g;
        const Matrix& out = n.value;
        for (std::size_t i = 0; i < ga.size(); ++i)
          if (out.values()[i] <= 0.0) ga.values()[i] = 0.0;
        accumulate(n.a, ga);
        break;
      }
      case OpKind::SparseMatMul:
        accumulate(n.a, n.sparse->multiply_transposed(g));
        break;
      case OpKind::GatherRows: {
        const Matrix& src = nodes_[n.a].value;
        Matrix ga(src.rows(), src.cols());
        for (std::size_t i = 0; i < n.ints.size(); ++i) {
          auto dst = ga.row(static_cast<std::size_t>(n.ints[i]));
          auto from = g.row(i);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += from[c];
        }
        accumulate(n.a, ga);
        break;
      }
      case OpKind::RowContract: {
        const Matrix& gm = nodes_[n.a].value;
        const Matrix& rm = nodes_[n.b].value;
        const std::size_t o = rm.cols();
        const std::size_t k = gm.cols() / o;
        if (needs(n.a)) {
          Matrix ga(gm.rows(), gm.cols());
          for (std::size_t i = 0; i < gm.rows(); ++i)
            for (std::size_t c = 0; c < k; ++c)
              for (std::size_t j = 0; j < o; ++j) ga(i, c * o + j) = g(i, c) * rm(i, j);
          accumulate(n.a, ga);
        }
        if (needs(n.b)) {
          Matrix gr(rm.rows(), o);
          for (std::size_t i = 0; i < gm.rows(); ++i)
            for (std::size_t c = 0; c < k; ++c)
              for (std::size_t j = 0; j < o; ++j) gr(i, j) += g(i, c) * gm(i, c * o + j);
          accumulate(n.b, gr);
        }
        break;
      }
      case OpKind::SoftmaxCrossEntropy: {
        Matrix ga = n.cache;
        const double scale = g(0, 0) / static_cast<double>(ga.rows());
        for (std::size_t i = 0; i < ga.rows(); ++i) ga(i, static_cast<std::size_t>(n.ints[i])) -= 1.0;
        ga *= scale;
        accumulate(n.a, ga);
        break;
      }
      case OpKind::MeanSquaredError: {
        const double scale = 2.0 * g(0, 0) / static_cast<double>(n.cache.rows());
        if (needs(n.a)) accumulate(n.a, n.cache * scale);
        if (needs(n.b)) accumulate(n.b, n.cache * -scale);
        break;
      }
      case OpKind::SquaredNorm:
        accumulate(n.a, nodes_[n.a].value * (2.0 * g(0, 0)));
        break;
      case OpKind::RowMean: {
        const Matrix& src = nodes_[n.a].value;
        Matrix ga(src.rows(), src.cols());
        const double inv = 1.0 / static_cast<double>(src.rows());
        for (std::size_t i = 0; i < src.rows(); ++i)
          for (std::size_t c = 0; c < src.cols(); ++c) ga(i, c) = g(0, c) * inv;
        accumulate(n.a, ga);
        break;
      }
    }
  }

  GradientResult result;
  result.loss = lv(0, 0);
  result.grads.reserve(parameters_.size());
  for (std::size_t p : parameters_) {
    if (p <= loss.id && !grad[p].empty()) {
      result.grads.push_back(grad[p]);
    } else {
      result.grads.emplace_back(nodes_[p].value.rows(), nodes_[p].value.cols());
    }
  }
  return result;
}

GradientResult evaluate_with_gradients(const Tape& tape, Var loss) { return tape.backward(loss); }

}  // namespace decaf::num
