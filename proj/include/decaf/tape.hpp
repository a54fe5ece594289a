#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "decaf/matrix.hpp"
#include "decaf/sparse.hpp"

namespace decaf::num {

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class OpKind {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  AddRow,
  Mul,
  Scale,
  Relu,
  SparseMatMul,
  GatherRows,
  RowContract,
  SoftmaxCrossEntropy,
  MeanSquaredError,
  SquaredNorm,
  RowMean,
};

struct GradientResult {
  double loss = 0.0;
  /// One gradient per parameter, in registration order.
  std::vector<Matrix> grads;
};

/// Eager reverse-mode tape. Every op computes its value when recorded, so
/// node inputs always precede their consumers.
class Tape {
 public:
  Var constant(Matrix value);
  Var parameter(Matrix value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// a (n x m) plus a 1 x m row broadcast over every row.
  Var add_row(Var a, Var row);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var relu(Var a);
  /// Constant sparse matrix times a node.
  Var sparse_matmul(std::shared_ptr<const SparseMatrix> s, Var a);
  Var gather_rows(Var a, std::vector<int> rows);
  /// Per-row bilinear contraction: g is n x (k*o), r is n x o, output n x k
  /// with out(i, c) = sum_j g(i, c*o + j) * r(i, j).
  Var row_contract(Var g, Var r);
  /// Mean over rows of -log softmax(logits)[label]; 1 x 1.
  Var softmax_cross_entropy(Var logits, std::vector<int> labels);
  /// Mean over rows of the squared L2 distance between a and b rows; 1 x 1.
  Var mean_squared_error(Var a, Var b);
  Var squared_norm(Var a);
  Var row_mean(Var a);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  std::span<const std::size_t> parameter_nodes() const { return parameters_; }
  /// Index of a parameter node in the gradient vector.
  std::size_t parameter_slot(Var p) const;

  GradientResult backward(Var loss) const;

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    std::size_t a = 0;
    std::size_t b = 0;
    Matrix value;
    bool needsGrad = false;
    double factor = 0.0;
    std::vector<int> ints;
    Matrix cache;
    std::shared_ptr<const SparseMatrix> sparse;
  };

  Var push(Node node);
  bool needs(std::size_t id) const { return nodes_[id].needsGrad; }

  std::vector<Node> nodes_;
  std::vector<std::size_t> parameters_;
};

/// Loss value and exact reverse-mode gradients for every parameter.
GradientResult evaluate_with_gradients(const Tape& tape, Var loss);

}  // namespace decaf::num
