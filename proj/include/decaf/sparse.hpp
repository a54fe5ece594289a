#pragma once

#include <cstddef>
#include <vector>

#include "decaf/matrix.hpp"

namespace decaf::num {

/// Compressed sparse rows with explicit values.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> rowStarts;  // rows + 1 entries
  std::vector<int> columnIds;
  std::vector<double> values;

  std::size_t nonzeros() const { return columnIds.size(); }

  /// this * dense
  Matrix multiply(const Matrix& dense) const;
  /// this^T * dense
  Matrix multiply_transposed(const Matrix& dense) const;
  Matrix to_dense() const;
};

}  // namespace decaf::num
