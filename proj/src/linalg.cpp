#include "dsen/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dsen/error.hpp"

namespace dsen::linalg {

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  }
  return t;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeError("multiply: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

SymEig sym_eig(const Matrix& input, int max_sweeps) {
  if (input.rows != input.cols) throw ShapeError("sym_eig: matrix is not square");
  const std::size_t n = input.rows;
  Matrix a = input;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double total = 0.0;
  for (double x : a.data) total += x * x;
  const double tol = 1e-30 * std::max(total, 1e-300);

  bool converged = n < 2;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off <= tol) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) throw NumericError("sym_eig: Jacobi iteration did not converge");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymEig out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(idx[k], idx[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, idx[k]);
  }
  return out;
}

namespace {

// Columns of `w` (m x n, m >= n) are orthogonalised in place; `v` accumulates
// the rotations.
void hestenes(Matrix& w, Matrix& v, int max_sweeps) {
  const std::size_t m = w.rows;
  const std::size_t n = w.cols;
  constexpr double eps = 1e-15;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += w(i, p) * w(i, p);
          beta += w(i, q) * w(i, q);
          gamma += w(i, p) * w(i, q);
        }
        if (std::abs(gamma) <= eps * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw NumericError("svd: Jacobi iteration did not converge");
}

}  // namespace

Svd svd(const Matrix& a, int max_sweeps) {
  for (double x : a.data) {
    if (!std::isfinite(x)) throw NumericError("svd: non-finite entry");
  }
  if (a.rows < a.cols) {
    auto t = svd(transpose(a), max_sweeps);
    return {std::move(t.v), std::move(t.s), std::move(t.u)};
  }
  const std::size_t m = a.rows;
  const std::size_t n = a.cols;
  Matrix w = a;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  hestenes(w, v, max_sweeps);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return norms[i] > norms[j]; });

  Svd out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double cutoff = (norms.empty() ? 0.0 : norms[idx[0]]) * 1e-13;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = idx[k];
    out.s[k] = norms[j];
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v(i, j);
    if (norms[j] > cutoff && norms[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = w(i, j) / norms[j];
    }
  }
  // Complete U for (near-)zero singular values with Gram-Schmidt on the unit basis.
  for (std::size_t k = 0; k < n; ++k) {
    if (!(out.s[k] <= cutoff)) continue;
    for (std::size_t e = 0; e < m; ++e) {
      std::vector<double> cand(m, 0.0);
      cand[e] = 1.0;
      for (std::size_t c = 0; c < n; ++c) {
        if (c == k || (out.s[c] <= cutoff && c > k)) continue;
        double d = 0.0;
        for (std::size_t i = 0; i < m; ++i) d += out.u(i, c) * cand[i];
        for (std::size_t i = 0; i < m; ++i) cand[i] -= d * out.u(i, c);
      }
      double nn = 0.0;
      for (double x : cand) nn += x * x;
      nn = std::sqrt(nn);
      if (nn > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = cand[i] / nn;
        break;
      }
    }
  }
  return out;
}

}  // namespace dsen::linalg
