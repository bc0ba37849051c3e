#pragma once

#include <vector>

#include "dsen/matrix.hpp"

namespace dsen::linalg {

struct SymEig {
  std::vector<double> values;  // descending
  Matrix vectors;              // columns are eigenvectors
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Throws
/// NumericError if off-diagonal mass does not vanish within the sweep cap.
SymEig sym_eig(const Matrix& a, int max_sweeps = 100);

struct Svd {
  Matrix u;                // m x r
  std::vector<double> s;   // r = min(m, n), descending, nonnegative
  Matrix v;                // n x r
};

/// One-sided (Hestenes) Jacobi SVD.
Svd svd(const Matrix& a, int max_sweeps = 100);

Matrix transpose(const Matrix& a);
Matrix multiply(const Matrix& a, const Matrix& b);

}  // namespace dsen::linalg
