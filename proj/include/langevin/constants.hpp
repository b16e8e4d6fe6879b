#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "langevin/linalg.hpp"
#include "langevin/problems.hpp"
#include "langevin/rng.hpp"

namespace langevin {

enum class Provenance { analytic, empirical };

inline std::string to_string(Provenance p) { return p == Provenance::analytic ? "analytic" : "empirical"; }

struct ConstantBundle {
  double C2 = 0.0, C3 = 0.0, C0 = 0.0, B1 = 0.0, B2 = 0.0, D4 = 0.0, c7 = 0.0, D7 = 0.0;
  double gamma = 1.0;
  Provenance provenance = Provenance::analytic;
  /// Monte Carlo standard errors of the moment-based estimates (empirical only).
  double B1_se = 0.0, B2_se = 0.0;
  /// Whether c7 and D7 are meaningful for this problem.
  bool has_coercivity = false;

  /// Violated structural invariants, empty when all hold.
  std::vector<std::string> invariant_violations(Eigen::Index d) const {
    std::vector<std::string> out;
    if (B2 < 1.0) out.emplace_back("B2 < 1");
    if (C3 < C2) out.emplace_back("C3 < C2");
    if (D4 > static_cast<double>(d) * C2 * (1.0 + 1e-12)) out.emplace_back("D4 > d * C2");
    for (double v : {C2, C3, C0, B1, B2, D4, c7, D7})
      if (!(v >= 0.0)) out.emplace_back("negative constant");
    return out;
  }
};

/// The universal constant c of the analytic bounds, per problem family.
/// Defaults are the smallest powers of two that dominated the empirical
/// estimates on reference_instances() with 200 points per instance (see
/// calibrate_c and the calibrate-constants tool).
struct UniversalConstants {
  double linear_regression = 4.0;
  double matrix_factorization = 128.0;
  double online_pca = 8.0;
};

// ---------------------------------------------------------------------------
// Analytic bundles.

inline ConstantBundle analytic_constants(const LinearRegression& p, double gamma, double c) {
  if (!(gamma > 0.0)) throw std::invalid_argument("analytic_constants: gamma must be positive");
  const Matrix& a = p.covariance();
  const double tr = a.trace();
  const Vector ev = linalg::eigenvalues(a);
  ConstantBundle b;
  b.gamma = gamma;
  b.C2 = b.C3 = b.D4 = tr;
  b.B1 = c * tr * tr * tr * gamma * gamma;
  b.B2 = std::max(1.0, c * tr * tr * gamma * gamma);
  b.C0 = 0.5 + 0.5 * ev.maxCoeff() * gamma * gamma;
  b.c7 = 0.25 * ev.minCoeff();
  b.D7 = 0.25 * ev.minCoeff() * p.x_star().squaredNorm();
  b.has_coercivity = true;
  return b;
}

namespace detail {
inline void require_matrix_gamma(const Matrix& m, double gamma) {
  if (!(gamma >= 1.0)) throw std::invalid_argument("analytic_constants: gamma must be >= 1");
  if (m.norm() > gamma * (1.0 + 1e-12))
    throw std::invalid_argument("analytic_constants: ||M||_F exceeds gamma");
}
}  // namespace detail

inline ConstantBundle analytic_constants(const MatrixFactorization& p, double gamma, double c) {
  detail::require_matrix_gamma(p.target(), gamma);
  const double m = static_cast<double>(p.rows()), r = static_cast<double>(p.rank());
  const double lmax = linalg::eigenvalues(p.target()).maxCoeff();
  ConstantBundle b;
  b.gamma = gamma;
  // The curvature bounds are derived for half the true Hessian; kappa = 2
  // restores the derivative the problem actually implements.
  const double kappa = 2.0;
  b.C2 = kappa * 24.0 * gamma;
  b.C3 = kappa * std::max(12.0 * std::sqrt(gamma), 24.0 * gamma);
  b.D4 = kappa * (4.0 * m + 2.0 * r) * gamma;
  b.B1 = c * m * r * std::pow(gamma, 4);
  b.B2 = std::max(1.0, c * m * r * std::pow(gamma, 3));
  b.C0 = 4.0 * gamma * gamma;  // (||XX^T||_F + ||M||_F)^2
  b.c7 = 4.0 * lmax;
  b.D7 = std::max(p.target().norm(), 8.0 * m * lmax * lmax * lmax);
  b.has_coercivity = true;
  return b;
}

inline ConstantBundle analytic_constants(const OnlinePCA& p, double gamma, double c) {
  detail::require_matrix_gamma(p.covariance(), gamma);
  const double m = static_cast<double>(p.rows());
  const double tr = p.covariance().trace();
  const double lmax = linalg::eigenvalues(p.covariance()).maxCoeff();
  ConstantBundle b;
  b.gamma = gamma;
  b.C2 = 24.0 * gamma;
  b.C3 = std::max(12.0 * std::sqrt(gamma), b.C2);
  b.D4 = 6.0 * m * gamma;
  b.B1 = c * gamma * gamma * tr * tr;
  b.B2 = std::max(1.0, tr * tr);
  b.C0 = 2.0 * gamma * gamma + p.offset();
  b.c7 = 4.0 * lmax;
  b.D7 = std::max(p.covariance().norm(), 8.0 * m * lmax * lmax * lmax);
  b.has_coercivity = true;
  return b;
}

inline ConstantBundle analytic_constants(const AnyProblem& p, double gamma,
                                         const UniversalConstants& c = {}) {
  return std::visit(
      [&](const auto& q) -> ConstantBundle {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, LinearRegression>)
          return analytic_constants(q, gamma, c.linear_regression);
        else if constexpr (std::is_same_v<T, MatrixFactorization>)
          return analytic_constants(q, gamma, c.matrix_factorization);
        else if constexpr (std::is_same_v<T, OnlinePCA>)
          return analytic_constants(q, gamma, c.online_pca);
        else
          throw std::invalid_argument("analytic_constants: unsupported problem '" +
                                      std::string(q.name()) + "'");
      },
      p);
}

// ---------------------------------------------------------------------------
// Admissible points and empirical estimates.

/// Centre of the admissible set: x* for linear regression, otherwise 0.
template <Objective P>
Vector admissible_center(const P& p) {
  if constexpr (std::is_same_v<P, LinearRegression>) return p.x_star();
  else return Vector::Zero(p.dim());
}

/// A random point of the admissible set: uniform in the gamma-ball around
/// the centre, or X with ||X X^T||_F <= gamma for the factor problems.
template <Objective P>
Vector admissible_point(const P& p, double gamma, GaussianStream& rng) {
  const Eigen::Index d = p.dim();
  Vector dir = rng.vector(d);
  const double u = rng.uniform();
  if constexpr (std::is_same_v<P, MatrixFactorization> || std::is_same_v<P, OnlinePCA>) {
    const auto xm = detail::as_matrix(dir, p.rows(), p.rank());
    const double unit = std::sqrt((xm * xm.transpose()).norm());
    // ||(sX)(sX)^T||_F = s^2 ||XX^T||_F
    const double s = std::sqrt(gamma) * std::pow(u, 1.0 / static_cast<double>(d)) / unit;
    return dir * s;
  } else {
    return admissible_center(p) + dir.normalized() * (gamma * std::pow(u, 1.0 / static_cast<double>(d)));
  }
}

struct EmpiricalOptions {
  std::int64_t samples = 10000;  // noise draws per point
  std::int64_t points = 10;
  std::int64_t pairs = 1000;  // Hessian difference quotients
};

template <Objective P>
ConstantBundle empirical_constants(const P& p, double gamma, GaussianStream& rng,
                                   const EmpiricalOptions& opts = {}) {
  if (opts.samples < 2 || opts.points < 1)
    throw std::invalid_argument("empirical_constants: need samples >= 2 and points >= 1");
  const Eigen::Index d = p.dim();
  ConstantBundle b;
  b.provenance = Provenance::empirical;
  b.gamma = gamma;
  Vector g(d), xi(d), sg(d);
  const double ns = static_cast<double>(opts.samples);

  for (std::int64_t k = 0; k < opts.points; ++k) {
    const Vector x = admissible_point(p, gamma, rng);
    const Matrix h = p.hessian(x);
    const Vector ev = linalg::eigenvalues(h);
    b.C2 = std::max(b.C2, ev.cwiseAbs().maxCoeff());
    b.D4 = std::max(b.D4, ev.cwiseMax(0.0).sum());
    b.C0 = std::max(b.C0, std::abs(p.loss(x)));

    p.grad_into(x, g);
    double s2 = 0.0, s4 = 0.0, s8 = 0.0, q1 = 0.0, q2 = 0.0;
    for (std::int64_t i = 0; i < opts.samples; ++i) {
      p.sample_grad_into(x, rng, sg);
      xi = sg - g;
      const double n2 = xi.squaredNorm();
      const double quad = xi.dot(h * xi);
      s2 += n2;
      s4 += n2 * n2;
      s8 += n2 * n2 * n2 * n2;
      q1 += quad;
      q2 += quad * quad;
    }
    const double m2 = s2 / ns, m4 = s4 / ns, m8 = s8 / ns;
    const double mq = q1 / ns;
    const double se_q = std::sqrt(std::max(0.0, q2 / ns - mq * mq) / ns);
    if (mq > b.B1) {
      b.B1 = mq;
      b.B1_se = se_q;
    }
    // B2 = max(sqrt(E||xi||^4), E||xi||^2); the first always dominates.
    const double root4 = std::sqrt(m4);
    const double se4 = std::sqrt(std::max(0.0, m8 - m4 * m4) / ns);
    const double se_root4 = root4 > 0.0 ? se4 / (2.0 * root4) : 0.0;
    const double b2 = std::max(root4, m2);
    if (b2 > b.B2) {
      b.B2 = b2;
      b.B2_se = se_root4;
    }
  }

  for (std::int64_t k = 0; k < opts.pairs; ++k) {
    const Vector x = admissible_point(p, gamma, rng);
    const Vector y = admissible_point(p, gamma, rng);
    const double dist = (x - y).norm();
    if (dist == 0.0) continue;
    const Matrix diff = p.hessian(x) - p.hessian(y);
    b.C3 = std::max(b.C3, linalg::spectral_norm_sym(0.5 * (diff + diff.transpose())) / dist);
  }
  return b;
}

inline ConstantBundle empirical_constants(const AnyProblem& p, double gamma, GaussianStream& rng,
                                          const EmpiricalOptions& opts = {}) {
  return std::visit([&](const auto& q) { return empirical_constants(q, gamma, rng, opts); }, p);
}

// ---------------------------------------------------------------------------
// Coercivity: ||grad F||^2 >= c7 F - D7 and ||x|| <= c7 F + D7.

struct CoercivityReport {
  double min_radius = 0.0;
  std::int64_t points = 0;
  /// Smallest D7 making both inequalities hold at every sampled point.
  double required_D7 = 0.0;
  bool pass = true;
};

template <Objective P>
CoercivityReport coercivity_check(const P& p, double c7, double D7, double min_radius,
                                  std::int64_t points, GaussianStream& rng) {
  if (!(min_radius > 0.0)) throw std::invalid_argument("coercivity_check: radius must be positive");
  CoercivityReport rep;
  rep.min_radius = min_radius;
  rep.points = points;
  Vector g(p.dim());
  for (std::int64_t k = 0; k < points; ++k) {
    const double r = min_radius * (1.0 + rng.uniform());
    const Vector x = rng.vector(p.dim()).normalized() * r;
    p.grad_into(x, g);
    const double f = p.loss(x);
    const double need = std::max(c7 * f - g.squaredNorm(), x.norm() - c7 * f);
    rep.required_D7 = std::max(rep.required_D7, need);
  }
  rep.pass = rep.required_D7 <= D7;
  return rep;
}

/// Upper bound of ||grad F(x)|| over ||x|| <= radius.
inline double gradient_bound_on_ball(const AnyProblem& p, double radius) {
  return std::visit(
      [&](const auto& q) -> double {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, ScalarQuadratic>) {
          return radius;
        } else if constexpr (std::is_same_v<T, QuadraticSaddle>) {
          return 2.0 * linalg::spectral_norm_sym(q.h()) * radius;
        } else if constexpr (std::is_same_v<T, LinearRegression>) {
          return linalg::spectral_norm_sym(q.covariance()) * (radius + q.x_star().norm());
        } else if constexpr (std::is_same_v<T, MatrixFactorization>) {
          const double mn = linalg::spectral_norm_sym(q.target());
          return 4.0 * (radius * radius * radius + mn * radius);
        } else {
          const double mn = linalg::spectral_norm_sym(q.covariance());
          return 2.0 * (radius * radius * radius + mn * radius);
        }
      },
      p);
}

// ---------------------------------------------------------------------------
// Dominance and calibration.

struct DominanceRow {
  std::string name;
  double empirical = 0.0;
  double se = 0.0;
  double analytic = 0.0;
  bool pass = true;
};

/// empirical <= analytic + 3 se for every compared constant.
inline std::vector<DominanceRow> dominance(const ConstantBundle& emp, const ConstantBundle& ana) {
  auto row = [](std::string n, double e, double se, double a) {
    const double slack = 1e-9 * std::max(1.0, std::abs(a));
    return DominanceRow{std::move(n), e, se, a, e <= a + 3.0 * se + slack};
  };
  return {row("C2", emp.C2, 0.0, ana.C2), row("C3", emp.C3, 0.0, ana.C3),
          row("C0", emp.C0, 0.0, ana.C0), row("B1", emp.B1, emp.B1_se, ana.B1),
          row("B2", emp.B2, emp.B2_se, ana.B2), row("D4", emp.D4, 0.0, ana.D4)};
}

inline bool all_pass(const std::vector<DominanceRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const DominanceRow& r) { return r.pass; });
}

/// Smallest power of two c such that every c-scaled analytic constant of
/// every instance dominates its empirical estimate plus three standard
/// errors.
template <class Problem>
double calibrate_c(const std::vector<Problem>& instances, const std::vector<double>& gammas,
                   GaussianStream& rng, const EmpiricalOptions& opts = {}) {
  if (instances.size() != gammas.size() || instances.empty())
    throw std::invalid_argument("calibrate_c: one gamma per instance required");
  double ratio = 0.0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const ConstantBundle emp = empirical_constants(instances[i], gammas[i], rng, opts);
    const ConstantBundle unit = analytic_constants(instances[i], gammas[i], 1.0);
    ratio = std::max(ratio, (emp.B1 + 3.0 * emp.B1_se) / unit.B1);
    if constexpr (!std::is_same_v<Problem, OnlinePCA>)
      ratio = std::max(ratio, (emp.B2 + 3.0 * emp.B2_se) / unit.B2);
  }
  if (ratio <= 0.0) return std::ldexp(1.0, -30);
  return std::ldexp(1.0, static_cast<int>(std::ceil(std::log2(ratio))));
}

// ---------------------------------------------------------------------------
// Reference instances for calibrating the universal constants: two sizes per
// family, drawn from a fixed seed.

struct ReferenceInstances {
  std::vector<LinearRegression> lr;
  std::vector<MatrixFactorization> mf;
  std::vector<OnlinePCA> pca;
  std::vector<double> lr_gamma, mf_gamma, pca_gamma;
};

inline ReferenceInstances reference_instances(std::uint64_t seed = 20240601) {
  GaussianStream rng(seed);
  ReferenceInstances out;
  auto spd = [&](Eigen::Index n, Eigen::Index rank) {
    Vector ev = Vector::Zero(n);
    for (Eigen::Index i = 0; i < rank; ++i) ev[i] = 1.0 / static_cast<double>(i + 1);
    const Matrix q = linalg::random_orthonormal(n, n, rng);
    const Matrix m = q * ev.asDiagonal() * q.transpose();
    return Matrix(0.5 * (m + m.transpose()));
  };
  for (Eigen::Index d : {5, 20}) {
    Vector xs = rng.vector(d);
    out.lr.emplace_back(spd(d, d), xs);
    out.lr_gamma.push_back(std::max(1.0, xs.norm()));
  }
  for (auto [m, r] : {std::pair<Eigen::Index, Eigen::Index>{4, 2}, {8, 3}}) {
    const Matrix t = spd(m, r);
    out.mf.emplace_back(t, r);
    out.mf_gamma.push_back(std::max(1.0, t.norm()));
  }
  for (auto [m, r] : {std::pair<Eigen::Index, Eigen::Index>{4, 1}, {8, 2}}) {
    const Matrix c = spd(m, m);
    out.pca.emplace_back(c, r);
    out.pca_gamma.push_back(std::max(1.0, c.norm()));
  }
  return out;
}

}  // namespace langevin
