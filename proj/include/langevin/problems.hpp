#pragma once

#include <cmath>
#include <concepts>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "langevin/linalg.hpp"
#include "langevin/rng.hpp"

namespace langevin {

// Every objective exposes the population loss F, its gradient and Hessian,
// and a sampler for the stochastic gradient grad f(x, omega) whose mean is
// grad F(x). Matrix-valued parameters are flattened column-major.
template <class P>
concept Objective = requires(const P& p, const Vector& x, Vector& out, GaussianStream& rng) {
  { p.dim() } -> std::convertible_to<Eigen::Index>;
  { p.loss(x) } -> std::convertible_to<double>;
  p.grad_into(x, out);
  p.sample_grad_into(x, rng, out);
  { p.hessian(x) } -> std::convertible_to<Matrix>;
  { p.name() } -> std::convertible_to<std::string_view>;
};

namespace detail {
inline void check_dim(Eigen::Index expected, const Vector& x, const char* what) {
  if (x.size() != expected)
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (expected " +
                                std::to_string(expected) + ", got " +
                                std::to_string(x.size()) + ")");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Spectra for generated covariance matrices.

/// Parses "flat", "decay(beta)" into a length-n eigenvalue list,
/// lambda_k = k^(-beta) for decay.
inline Vector make_spectrum(std::string_view spec, Eigen::Index n) {
  if (n <= 0) throw std::invalid_argument("make_spectrum: size must be positive");
  if (spec == "flat") return Vector::Ones(n);
  constexpr std::string_view prefix = "decay(";
  if (spec.starts_with(prefix) && spec.ends_with(")")) {
    const std::string inner(spec.substr(prefix.size(), spec.size() - prefix.size() - 1));
    std::size_t used = 0;
    double beta = 0.0;
    try {
      beta = std::stod(inner, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != inner.size() || !std::isfinite(beta))
      throw std::invalid_argument("make_spectrum: bad decay exponent in '" + std::string(spec) + "'");
    Vector v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = std::pow(static_cast<double>(k + 1), -beta);
    return v;
  }
  throw std::invalid_argument("make_spectrum: unknown spectrum '" + std::string(spec) + "'");
}

inline Vector make_spectrum(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("make_spectrum: empty eigenvalue list");
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

// ---------------------------------------------------------------------------

/// F(x) = x^T H x around a saddle at the origin. Noiseless unless a noise
/// covariance is given, in which case sample_grad adds N(0, noise_cov).
class QuadraticSaddle {
 public:
  explicit QuadraticSaddle(Matrix h) : h_(std::move(h)) {
    linalg::require_symmetric(h_, "QuadraticSaddle");
  }
  QuadraticSaddle(Matrix h, const Matrix& noise_cov) : QuadraticSaddle(std::move(h)) {
    linalg::require_symmetric(noise_cov, "QuadraticSaddle noise covariance");
    if (noise_cov.rows() != h_.rows())
      throw std::invalid_argument("QuadraticSaddle: noise covariance size mismatch");
    noise_factor_ = linalg::psd_factor(noise_cov);
  }

  std::string_view name() const { return "quadratic_saddle"; }
  Eigen::Index dim() const { return h_.rows(); }
  const Matrix& h() const { return h_; }
  bool noisy() const { return noise_factor_.has_value(); }

  double loss(const Vector& x) const { return x.dot(h_ * x); }
  void grad_into(const Vector& x, Vector& out) const { out.noalias() = 2.0 * (h_ * x); }
  void sample_grad_into(const Vector& x, GaussianStream& rng, Vector& out) const {
    grad_into(x, out);
    if (noise_factor_) {
      for (Eigen::Index j = 0; j < noise_factor_->cols(); ++j) out += noise_factor_->col(j) * rng.next();
    }
  }
  Matrix hessian(const Vector&) const { return 2.0 * h_; }
  std::optional<Vector> minimizer() const { return std::nullopt; }

 private:
  Matrix h_;
  std::optional<Matrix> noise_factor_;
};

/// Online least squares: a ~ N(0, A), b = a^T x* + e, e ~ N(0, 1),
/// f(x, (a, b)) = (a^T x - b)^2 / 2, F(x) = (x - x*)^T A (x - x*) / 2 + 1/2.
class LinearRegression {
 public:
  LinearRegression(Matrix a, Vector x_star) : a_(std::move(a)), x_star_(std::move(x_star)) {
    linalg::require_symmetric(a_, "LinearRegression");
    if (x_star_.size() != a_.rows())
      throw std::invalid_argument("LinearRegression: x_star size mismatch");
    const Vector ev = linalg::eigenvalues(a_);
    if (ev.minCoeff() < -1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("LinearRegression: covariance must be PSD");
    factor_ = linalg::psd_factor(a_);
  }

  std::string_view name() const { return "linear_regression"; }
  Eigen::Index dim() const { return a_.rows(); }
  const Matrix& covariance() const { return a_; }
  const Vector& x_star() const { return x_star_; }

  double loss(const Vector& x) const {
    const Vector v = x - x_star_;
    return 0.5 * v.dot(a_ * v) + 0.5;
  }
  void grad_into(const Vector& x, Vector& out) const { out.noalias() = a_ * (x - x_star_); }
  void sample_grad_into(const Vector& x, GaussianStream& rng, Vector& out) const {
    // out holds the regressor a = L z while the residual is formed.
    out.setZero(dim());
    for (Eigen::Index j = 0; j < factor_.cols(); ++j) out += factor_.col(j) * rng.next();
    const double residual = out.dot(x) - out.dot(x_star_) - rng.next();
    out *= residual;
  }
  Matrix hessian(const Vector&) const { return a_; }
  std::optional<Vector> minimizer() const { return x_star_; }

 private:
  Matrix a_;
  Vector x_star_;
  Matrix factor_;
};

namespace detail {
inline Eigen::Map<const Matrix> as_matrix(const Vector& x, Eigen::Index m, Eigen::Index r) {
  return Eigen::Map<const Matrix>(x.data(), m, r);
}

/// Dense Hessian of G(X) = scale/4 * ||X X^T - M||_F^2 on the flattened
/// parameter. Its quadratic form is
///   scale/2 * (||X Z^T + Z X^T||_F^2 + 2 <X X^T - M, Z Z^T>).
inline Matrix factor_hessian(const Vector& x, const Matrix& m_target, Eigen::Index r, double scale) {
  const Eigen::Index m = m_target.rows();
  const auto xm = as_matrix(x, m, r);
  const Matrix resid = xm * xm.transpose() - m_target;
  const Eigen::Index n = m * r;
  Matrix h(n, n);
  Matrix z = Matrix::Zero(m, r);
  for (Eigen::Index c = 0; c < n; ++c) {
    z.setZero();
    z(c % m, c / m) = 1.0;
    const Matrix hz = scale * ((z * xm.transpose() + xm * z.transpose()) * xm + resid * z);
    h.col(c) = Eigen::Map<const Vector>(hz.data(), n);
  }
  return 0.5 * (h + h.transpose());
}
}  // namespace detail

/// F(X) = ||X X^T - M||_F^2 with f(X, w) = <w, X X^T - M>^2, w an m x m
/// matrix of i.i.d. standard normals.
class MatrixFactorization {
 public:
  MatrixFactorization(Matrix m_target, Eigen::Index rank) : m_(std::move(m_target)), r_(rank) {
    linalg::require_symmetric(m_, "MatrixFactorization");
    if (r_ <= 0 || r_ > m_.rows()) throw std::invalid_argument("MatrixFactorization: bad rank");
  }

  std::string_view name() const { return "matrix_factorization"; }
  Eigen::Index dim() const { return m_.rows() * r_; }
  Eigen::Index rows() const { return m_.rows(); }
  Eigen::Index rank() const { return r_; }
  const Matrix& target() const { return m_; }

  double loss(const Vector& x) const {
    const auto xm = detail::as_matrix(x, rows(), r_);
    return (xm * xm.transpose() - m_).squaredNorm();
  }
  void grad_into(const Vector& x, Vector& out) const {
    const auto xm = detail::as_matrix(x, rows(), r_);
    const Matrix g = 4.0 * (xm * xm.transpose() - m_) * xm;
    out = Eigen::Map<const Vector>(g.data(), dim());
  }
  void sample_grad_into(const Vector& x, GaussianStream& rng, Vector& out) const {
    const auto xm = detail::as_matrix(x, rows(), r_);
    Matrix w(rows(), rows());
    rng.fill(w);
    const double s = (xm * xm.transpose() - m_).cwiseProduct(w).sum();
    const Matrix g = 2.0 * s * (w + w.transpose()) * xm;
    out = Eigen::Map<const Vector>(g.data(), dim());
  }
  Matrix hessian(const Vector& x) const { return detail::factor_hessian(x, m_, r_, 4.0); }
  std::optional<Vector> minimizer() const { return std::nullopt; }

 private:
  Matrix m_;
  Eigen::Index r_;
};

/// Streaming PCA: samples v ~ N(0, M), f(X, v) = ||X X^T - v v^T||_F^2 / 2,
/// F(X) = ||X X^T - M||_F^2 / 2 + C where C = E||v v^T - M||_F^2 / 2
/// = ((tr M)^2 + ||M||_F^2) / 2 for Gaussian v.
class OnlinePCA {
 public:
  OnlinePCA(Matrix m_cov, Eigen::Index rank) : m_(std::move(m_cov)), r_(rank) {
    linalg::require_symmetric(m_, "OnlinePCA");
    if (r_ <= 0 || r_ > m_.rows()) throw std::invalid_argument("OnlinePCA: bad rank");
    const Vector ev = linalg::eigenvalues(m_);
    if (ev.minCoeff() < -1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("OnlinePCA: covariance must be PSD");
    factor_ = linalg::psd_factor(m_);
    const double tr = m_.trace();
    offset_ = 0.5 * (tr * tr + m_.squaredNorm());
  }

  std::string_view name() const { return "online_pca"; }
  Eigen::Index dim() const { return m_.rows() * r_; }
  Eigen::Index rows() const { return m_.rows(); }
  Eigen::Index rank() const { return r_; }
  const Matrix& covariance() const { return m_; }
  double offset() const { return offset_; }

  double loss(const Vector& x) const {
    const auto xm = detail::as_matrix(x, rows(), r_);
    return 0.5 * (xm * xm.transpose() - m_).squaredNorm() + offset_;
  }
  void grad_into(const Vector& x, Vector& out) const {
    const auto xm = detail::as_matrix(x, rows(), r_);
    const Matrix g = 2.0 * (xm * xm.transpose() - m_) * xm;
    out = Eigen::Map<const Vector>(g.data(), dim());
  }
  void sample_grad_into(const Vector& x, GaussianStream& rng, Vector& out) const {
    const auto xm = detail::as_matrix(x, rows(), r_);
    Vector v = Vector::Zero(rows());
    for (Eigen::Index j = 0; j < factor_.cols(); ++j) v += factor_.col(j) * rng.next();
    // 2 (X X^T - v v^T) X
    const Matrix g = 2.0 * (xm * (xm.transpose() * xm) - v * (v.transpose() * xm));
    out = Eigen::Map<const Vector>(g.data(), dim());
  }
  Matrix hessian(const Vector& x) const { return detail::factor_hessian(x, m_, r_, 2.0); }
  std::optional<Vector> minimizer() const { return std::nullopt; }

 private:
  Matrix m_;
  Eigen::Index r_;
  Matrix factor_;
  double offset_ = 0.0;
};

/// F(x) = x^2 / 2 with exact gradients.
class ScalarQuadratic {
 public:
  std::string_view name() const { return "scalar_quadratic"; }
  Eigen::Index dim() const { return 1; }
  double loss(const Vector& x) const { return 0.5 * x[0] * x[0]; }
  void grad_into(const Vector& x, Vector& out) const { out[0] = x[0]; }
  void sample_grad_into(const Vector& x, GaussianStream&, Vector& out) const { out[0] = x[0]; }
  Matrix hessian(const Vector&) const { return Matrix::Identity(1, 1); }
  std::optional<Vector> minimizer() const { return Vector::Zero(1); }
};

using AnyProblem =
    std::variant<QuadraticSaddle, LinearRegression, MatrixFactorization, OnlinePCA, ScalarQuadratic>;

// ---------------------------------------------------------------------------
// Checked entry points.

template <Objective P>
double loss(const P& p, const Vector& x) {
  detail::check_dim(p.dim(), x, "loss");
  return p.loss(x);
}

template <Objective P>
Vector grad(const P& p, const Vector& x) {
  detail::check_dim(p.dim(), x, "grad");
  Vector out(p.dim());
  p.grad_into(x, out);
  return out;
}

template <Objective P>
Vector sample_grad(const P& p, const Vector& x, GaussianStream& rng) {
  detail::check_dim(p.dim(), x, "sample_grad");
  Vector out(p.dim());
  p.sample_grad_into(x, rng, out);
  return out;
}

template <Objective P>
Matrix hessian(const P& p, const Vector& x) {
  detail::check_dim(p.dim(), x, "hessian");
  return p.hessian(x);
}

inline Eigen::Index problem_dim(const AnyProblem& p) {
  return std::visit([](const auto& q) { return q.dim(); }, p);
}

inline std::string problem_name(const AnyProblem& p) {
  return std::string(std::visit([](const auto& q) { return q.name(); }, p));
}

}  // namespace langevin
