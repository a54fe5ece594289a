#include "decaf/sparse.hpp"

#include "decaf/error.hpp"

namespace decaf::num {

Matrix SparseMatrix::multiply(const Matrix& dense) const {
  if (dense.rows() != cols) throw ShapeError("sparse multiply: inner dimension mismatch");
  Matrix out(rows, dense.cols());
  const std::size_t width = dense.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    double* dst = out.row(r).data();
    for (std::size_t e = rowStarts[r]; e < rowStarts[r + 1]; ++e) {
      const double w = values[e];
      const double* src = dense.row(static_cast<std::size_t>(columnIds[e])).data();
      for (std::size_t c = 0; c < width; ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

Matrix SparseMatrix::multiply_transposed(const Matrix& dense) const {
  if (dense.rows() != rows) throw ShapeError("sparse multiply_transposed: dimension mismatch");
  Matrix out(cols, dense.cols());
  const std::size_t width = dense.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = dense.row(r).data();
    for (std::size_t e = rowStarts[r]; e < rowStarts[r + 1]; ++e) {
      const double w = values[e];
      double* dst = out.row(static_cast<std::size_t>(columnIds[e])).data();
      for (std::size_t c = 0; c < width; ++c) dst[c] += w * src[c];
    }
  }
  return out;
}

Matrix SparseMatrix::to_dense() const {
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t e = rowStarts[r]; e < rowStarts[r + 1]; ++e)
      out(r, static_cast<std::size_t>(columnIds[e])) += values[e];
  return out;
}

}  // namespace decaf::num
