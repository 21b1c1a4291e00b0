#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sacn {

using Index = std::ptrdiff_t;

/// Dense row-major matrix used throughout the library.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Sparsity pattern in compressed sparse row layout. Column indices are
/// sorted and unique within each row.
struct CsrPattern {
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> row_ptr{0};
  std::vector<Index> col_idx;

  Index nnz() const { return static_cast<Index>(col_idx.size()); }
  Index degree(Index row) const { return row_ptr[row + 1] - row_ptr[row]; }

  /// Builds a pattern from (row, col) pairs; duplicates collapse.
  static CsrPattern from_pairs(Index rows, Index cols,
                               std::vector<std::pair<Index, Index>> pairs) {
    for (const auto& [r, c] : pairs) {
      if (r < 0 || r >= rows || c < 0 || c >= cols) {
        throw std::out_of_range("CsrPattern: entry outside matrix bounds");
      }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    CsrPattern p;
    p.rows = rows;
    p.cols = cols;
    p.row_ptr.assign(static_cast<std::size_t>(rows) + 1, 0);
    p.col_idx.reserve(pairs.size());
    for (const auto& [r, c] : pairs) {
      ++p.row_ptr[r + 1];
      p.col_idx.push_back(c);
    }
    for (Index r = 0; r < rows; ++r) p.row_ptr[r + 1] += p.row_ptr[r];
    return p;
  }

  bool contains(Index row, Index col) const {
    auto first = col_idx.begin() + row_ptr[row];
    auto last = col_idx.begin() + row_ptr[row + 1];
    return std::binary_search(first, last, col);
  }

  bool is_symmetric() const {
    if (rows != cols) return false;
    for (Index r = 0; r < rows; ++r) {
      for (Index k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
        if (!contains(col_idx[k], r)) return false;
      }
    }
    return true;
  }

  bool has_diagonal_entries() const {
    for (Index r = 0; r < std::min(rows, cols); ++r) {
      if (contains(r, r)) return true;
    }
    return false;
  }

  /// Pattern of A + I (square patterns only).
  CsrPattern with_self_loops() const {
    assert(rows == cols);
    std::vector<std::pair<Index, Index>> pairs;
    pairs.reserve(col_idx.size() + static_cast<std::size_t>(rows));
    for (Index r = 0; r < rows; ++r) {
      pairs.emplace_back(r, r);
      for (Index k = row_ptr[r]; k < row_ptr[r + 1]; ++k) pairs.emplace_back(r, col_idx[k]);
    }
    return from_pairs(rows, cols, std::move(pairs));
  }

  /// Row index of every stored entry, in storage order.
  std::vector<Index> entry_rows() const {
    std::vector<Index> out(col_idx.size());
    for (Index r = 0; r < rows; ++r) {
      for (Index k = row_ptr[r]; k < row_ptr[r + 1]; ++k) out[k] = r;
    }
    return out;
  }

  friend bool operator==(const CsrPattern&, const CsrPattern&) = default;
};

template <class T>
struct CsrMatrix {
  CsrPattern pattern;
  std::vector<T> values;

  Index rows() const { return pattern.rows; }
  Index cols() const { return pattern.cols; }
  Index nnz() const { return pattern.nnz(); }

  Matrix<T> to_dense() const {
    Matrix<T> out = Matrix<T>::Zero(pattern.rows, pattern.cols);
    for (Index r = 0; r < pattern.rows; ++r) {
      for (Index k = pattern.row_ptr[r]; k < pattern.row_ptr[r + 1]; ++k) {
        out(r, pattern.col_idx[k]) = values[k];
      }
    }
    return out;
  }
};

/// out = S * dense, where S is weighted CSR.
template <class T>
Matrix<T> multiply(const CsrMatrix<T>& s, const Matrix<T>& dense) {
  if (s.cols() != dense.rows()) throw std::invalid_argument("multiply: shape mismatch");
  Matrix<T> out = Matrix<T>::Zero(s.rows(), dense.cols());
  const auto& p = s.pattern;
  for (Index r = 0; r < p.rows; ++r) {
    for (Index k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
      out.row(r).noalias() += s.values[k] * dense.row(p.col_idx[k]);
    }
  }
  return out;
}

/// out = S^T * dense without forming the transpose.
template <class T>
Matrix<T> multiply_transpose(const CsrMatrix<T>& s, const Matrix<T>& dense) {
  if (s.rows() != dense.rows()) throw std::invalid_argument("multiply_transpose: shape mismatch");
  Matrix<T> out = Matrix<T>::Zero(s.cols(), dense.cols());
  const auto& p = s.pattern;
  for (Index r = 0; r < p.rows; ++r) {
    for (Index k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
      out.row(p.col_idx[k]).noalias() += s.values[k] * dense.row(r);
    }
  }
  return out;
}

/// out = P * dense, treating every stored entry of P as 1.
template <class T>
Matrix<T> multiply(const CsrPattern& p, const Matrix<T>& dense) {
  if (p.cols != dense.rows()) throw std::invalid_argument("multiply: shape mismatch");
  Matrix<T> out = Matrix<T>::Zero(p.rows, dense.cols());
  for (Index r = 0; r < p.rows; ++r) {
    for (Index k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
      out.row(r).noalias() += dense.row(p.col_idx[k]);
    }
  }
  return out;
}

}  // namespace sacn
