#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "langevin/rng.hpp"

namespace langevin {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace linalg {

inline double asymmetry(const Matrix& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw std::invalid_argument(std::string(what) + ": matrix must be square and non-empty");
}

inline void require_symmetric(const Matrix& m, const char* what, double rel_tol = 1e-10) {
  require_square(m, what);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (asymmetry(m) > rel_tol * scale)
    throw std::invalid_argument(std::string(what) + ": matrix is not symmetric");
}

inline Vector eigenvalues(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

inline double spectral_norm_sym(const Matrix& sym) {
  return eigenvalues(sym).cwiseAbs().maxCoeff();
}

/// L with L L^T = S for a symmetric PSD S (eigen route, so singular S is fine).
inline Matrix psd_factor(const Matrix& sym) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

inline double positive_part_trace(const Matrix& sym) {
  return eigenvalues(sym).cwiseMax(0.0).sum();
}

/// Haar-distributed orthonormal columns (n x k) from QR of a Gaussian matrix.
inline Matrix random_orthonormal(Eigen::Index n, Eigen::Index k, GaussianStream& rng) {
  Matrix g(n, n);
  rng.fill(g);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q.leftCols(k);
}

}  // namespace linalg
}  // namespace langevin
