#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "langevin/dynamics.hpp"
#include "langevin/linalg.hpp"
#include "langevin/rng.hpp"
#include "langevin/schedule.hpp"

namespace langevin {

namespace detail {
inline void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw std::invalid_argument(std::string(name) + " must be positive and finite");
}
inline void require_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in [0, 1)");
}
/// log(exp(a) + exp(b)) without overflow.
inline double log_add(double a, double b) {
  const double hi = std::max(a, b), lo = std::min(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log1p(std::exp(lo - hi));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// First-order hitting bound.

struct FospBoundInputs {
  double F0 = 1.0;
  double C2 = 1.0;
  double B1 = 1.0;
  double eta0 = 0.01;
  double alpha = 0.0;
  double eps = 0.1;
  double rho = 0.1;
  std::int64_t d = 1;
  double C_alpha = 1.0;

  void validate() const {
    detail::require_alpha(alpha);
    detail::require_positive(F0, "F0");
    detail::require_positive(C2, "C2");
    detail::require_positive(B1, "B1");
    detail::require_positive(eta0, "eta0");
    detail::require_positive(eps, "eps");
    detail::require_positive(C_alpha, "C_alpha");
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0, 1)");
    if (d < 1) throw std::invalid_argument("d must be >= 1");
  }
};

enum class FospRegime { constant_step, slow_decay, fast_decay };

inline std::string to_string(FospRegime r) {
  switch (r) {
    case FospRegime::constant_step: return "alpha=0";
    case FospRegime::slow_decay: return "0<alpha<1/2";
    case FospRegime::fast_decay: return "alpha>=1/2";
  }
  return "unknown";
}

struct FospBound {
  double delta0_max = 0.0;
  double eta0_max = 0.0;
  double N = 0.0;  // real-valued; callers round up
  FospRegime regime = FospRegime::constant_step;
  /// The two entries of the max in the 0 < alpha <= 1/2 formula (zero when alpha = 0).
  double loss_term = 0.0;
  double noise_term = 0.0;
  bool eta0_admissible = false;
};

inline FospBound fosp_bound(const FospBoundInputs& in) {
  in.validate();
  FospBound out;
  const double eps2 = in.eps * in.eps;
  out.delta0_max = in.eps * std::sqrt(in.rho) / (2.0 * std::sqrt(3.0 * static_cast<double>(in.d) * in.C2));
  out.eta0_max = 1.0 / (6.0 * in.C2);
  if (in.alpha == 0.0) out.eta0_max = std::min(out.eta0_max, eps2 * in.rho / (24.0 * in.B1 * in.C2));
  out.eta0_admissible = in.eta0 <= out.eta0_max;

  const double a = in.alpha;
  if (a == 0.0) {
    out.regime = FospRegime::constant_step;
    out.N = 8.0 * in.F0 / (eps2 * in.rho * in.eta0);
    return out;
  }
  out.loss_term = std::pow(in.F0 / (in.rho * in.eta0 * eps2), 1.0 / (1.0 - a));
  out.noise_term = std::pow(in.B1 * in.C2 * in.eta0 / (in.rho * eps2), 1.0 / a);
  if (a >= 0.5) {
    out.regime = FospRegime::fast_decay;
    const double base = (in.F0 + in.B1 * in.C2 * in.eta0 * in.eta0) / (in.rho * in.eta0 * eps2);
    out.N = in.C_alpha * std::pow(base, 1.0 / (1.0 - a));
  } else {
    out.regime = FospRegime::slow_decay;
    out.N = in.C_alpha * std::max(out.loss_term, out.noise_term);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Saddle escape window and second-order hitting bound.

struct EscapeWindow {
  double d5 = 0.0;
  bool degenerate = false;
};

/// D5 = (2 / lambda_H) log((16 D4 + 40) / lambda_H); degenerate when the log
/// argument is <= 1.
inline EscapeWindow escape_window(double lambda_h, double d4) {
  detail::require_positive(lambda_h, "lambda_H");
  if (!(d4 >= 0.0)) throw std::invalid_argument("D4 must be >= 0");
  const double ratio = (16.0 * d4 + 40.0) / lambda_h;
  EscapeWindow w;
  w.degenerate = ratio <= 1.0;
  w.d5 = w.degenerate ? 0.0 : 2.0 / lambda_h * std::log(ratio);
  return w;
}

struct SospBoundInputs {
  double C0 = 1.0;
  double C3 = 1.0;
  double D4 = 1.0;
  double B2 = 1.0;
  double lambda_eps = 1.0;
  double q = 1.0;
  double eps = 0.1;
  double rho = 0.1;
  std::int64_t d = 1;
  /// Step size used for N; nonpositive means "use eta0_max".
  double eta0 = 0.0;
  double alpha = 0.0;
  double C_alpha = 1.0;
  /// Multiplier of the max{...} defining C6.
  double C6_factor = 1.0;

  void validate() const {
    detail::require_alpha(alpha);
    for (auto [v, n] : {std::pair{C0, "C0"}, {C3, "C3"}, {D4, "D4"}, {B2, "B2"},
                        {lambda_eps, "lambda_eps"}, {q, "q"}, {eps, "eps"}, {C_alpha, "C_alpha"},
                        {C6_factor, "C6_factor"}})
      detail::require_positive(v, n);
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0, 1)");
    if (d < 1) throw std::invalid_argument("d must be >= 1");
  }
};

/// Values are also given as natural logs since delta0 and N leave the
/// double range for realistic inputs.
struct SospBound {
  double Q = 0.0;
  double C6 = 0.0;
  double delta0 = 0.0;
  double log_delta0 = 0.0;
  double eta0_max = 0.0;
  double log_eta0_max = 0.0;
  double eta0_used = 0.0;
  double log_eta0_used = 0.0;
  double eps0 = 0.0;
  double log_eps0 = 0.0;
  double N = 0.0;
  double log_N = 0.0;
};

inline SospBound sosp_bound(const SospBoundInputs& in) {
  in.validate();
  const double ratio = (16.0 * in.D4 + 40.0) / in.lambda_eps;
  if (!(ratio > 1.0)) throw std::invalid_argument("sosp_bound: log((16 D4 + 40) / lambda_eps) must be positive");
  const double ratio3 = (16.0 * in.D4 + 40.0) / in.C3;
  if (!(ratio3 > 1.0)) throw std::invalid_argument("sosp_bound: log((16 D4 + 40) / C3) must be positive");

  SospBound out;
  out.Q = 2.0 / in.lambda_eps * std::log(ratio);
  out.C6 = in.C6_factor *
           std::max({std::pow(in.q, -1.5) * in.C3, 1.0 / in.lambda_eps, 1.0, out.Q});
  out.log_delta0 = -1.5 * std::log(static_cast<double>(in.d)) - 3.5 * std::log(out.C6) -
                   (9.0 + 18.0 * in.q) * std::log(ratio);
  out.delta0 = std::exp(out.log_delta0);

  const double log_cap_b = -std::log(in.B2) + 2.0 * out.log_delta0;
  const double log_cap_c = std::log(std::log(ratio3) / in.C3);
  out.log_eta0_max = std::min(log_cap_b, log_cap_c);
  out.eta0_max = std::exp(out.log_eta0_max);
  out.log_eta0_used = in.eta0 > 0.0 ? std::log(in.eta0) : out.log_eta0_max;
  out.eta0_used = std::exp(out.log_eta0_used);

  const double m = std::min({in.lambda_eps, 1.0, 1.0 / out.Q});
  out.log_eps0 = std::log(0.5) + std::min(std::log(in.eps), out.log_delta0 + 0.5 * std::log(m));
  out.eps0 = std::exp(out.log_eps0);

  const double log_rho = std::log(in.rho);
  const double log_a = std::log(2.0 * in.C0) - log_rho - out.log_eta0_used - 2.0 * out.log_eps0;
  const double log_b = std::log(out.Q) - out.log_eta0_used - log_rho;
  out.log_N = std::log(in.C_alpha) + detail::log_add(log_a, log_b) / (1.0 - in.alpha);
  out.N = std::exp(out.log_N);
  return out;
}

// ---------------------------------------------------------------------------
// Ergodicity constants.

struct ErgodicBoundInputs {
  double c7 = 1.0;
  double D7 = 0.0;
  double B1 = 0.0;
  double B2 = 1.0;
  std::int64_t d = 1;
  double delta0 = 1.0;
  double eta0 = 0.1;
  double alpha = 0.0;
  Vector z0 = Vector::Zero(1);
  double eps = 0.1;
  double p0 = 0.5;
  /// Gradient-norm bound over the ball ||x|| <= 4 D_X. Either a fixed value
  /// (>= 0) or a callable of the radius.
  double D_F = -1.0;
  std::function<double(double)> gradient_bound;
  /// F(X_{n0}); defaults to M_V when unset (nonpositive).
  double F_n0 = -1.0;
  std::int64_t mc_samples = 10'000'000;
  std::uint64_t seed = 0xe4600d1cULL;

  void validate() const {
    detail::require_alpha(alpha);
    detail::require_positive(c7, "c7");
    detail::require_positive(delta0, "delta0");
    detail::require_positive(eta0, "eta0");
    detail::require_positive(eps, "eps");
    if (!(D7 >= 0.0) || !(B1 >= 0.0) || !(B2 >= 0.0))
      throw std::invalid_argument("D7, B1, B2 must be >= 0");
    if (d < 1) throw std::invalid_argument("d must be >= 1");
    if (!(p0 > 0.0 && p0 < 1.0)) throw std::invalid_argument("p0 must lie in (0, 1)");
    if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
    if (D_F < 0.0 && !gradient_bound)
      throw std::invalid_argument("either D_F or a gradient bound must be supplied");
  }
};

struct ErgodicConstants {
  double M_V = 0.0;
  double D_X = 0.0;
  double D_F = 0.0;
  double eps0 = 0.0;
  double n0 = 0.0;
  double mu = 0.0;      // noncentrality of the Gaussian ball
  double radius = 0.0;  // radius of the Gaussian ball
  double c_alpha = 0.0;
  double c_alpha_lo = 0.0;
  double c_alpha_hi = 0.0;
  bool c_alpha_upper_bound_only = false;
  std::int64_t hits = 0;
  std::int64_t samples = 0;
  double K = 0.0;
  double J = 0.0;
  double T = 0.0;
  double N = 0.0;
  bool N_lower_bound_only = false;
};

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// P(|Z - mu| <= r) for a standard normal Z.
inline double gaussian_interval_probability(double mu, double r) {
  if (!(r >= 0.0)) throw std::invalid_argument("radius must be >= 0");
  return standard_normal_cdf(mu + r) - standard_normal_cdf(mu - r);
}

struct BallProbability {
  double p = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::int64_t hits = 0;
  std::int64_t samples = 0;
};

/// Wilson score interval at ~95% (z = 1.96); with zero hits the upper end is
/// the exact one-sided bound 1 - 0.025^(1/n).
inline BallProbability binomial_interval(std::int64_t hits, std::int64_t n) {
  BallProbability b;
  b.hits = hits;
  b.samples = n;
  const double nn = static_cast<double>(n);
  b.p = static_cast<double>(hits) / nn;
  if (hits == 0) {
    b.lo = 0.0;
    b.hi = 1.0 - std::pow(0.025, 1.0 / nn);
    return b;
  }
  const double z = 1.959963984540054;
  const double denom = 1.0 + z * z / nn;
  const double centre = (b.p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(b.p * (1.0 - b.p) / nn + z * z / (4.0 * nn * nn)) / denom;
  b.lo = std::max(0.0, centre - half);
  b.hi = std::min(1.0, centre + half);
  return b;
}

/// Monte Carlo estimate of P(||Z - mu e1|| <= r), Z ~ N(0, I_d), using
/// ||Z - mu e1||^2 = (Z1 - mu)^2 + chi^2_{d-1}.
inline BallProbability gaussian_ball_probability(std::int64_t d, double mu, double r,
                                                 std::int64_t samples, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("d must be >= 1");
  if (samples < 1) throw std::invalid_argument("samples must be >= 1");
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> normal;
  std::gamma_distribution<double> chi2(0.5 * static_cast<double>(d - 1), 2.0);
  const double r2 = r * r;
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < samples; ++i) {
    const double z = normal(eng) - mu;
    double s = z * z;
    if (s > r2) continue;
    if (d > 1) s += chi2(eng);
    if (s <= r2) ++hits;
  }
  return binomial_interval(hits, samples);
}

/// First t >= 1 with eta_t <= eps0 (infinite if the schedule never gets there).
inline double first_index_below(const StepSchedule& sched, double eps0) {
  if (sched.eta0() <= eps0) return 1.0;
  if (sched.alpha() == 0.0) return std::numeric_limits<double>::infinity();
  double t = std::ceil(std::pow(sched.eta0() / eps0, 1.0 / sched.alpha()));
  if (t > 9.0e15) return t;
  auto n = static_cast<Index1>(t);
  while (sched.step_at(n) > eps0) ++n;
  while (n > 1 && sched.step_at(n - 1) <= eps0) --n;
  return static_cast<double>(n);
}

inline ErgodicConstants ergodic_constants(const ErgodicBoundInputs& in) {
  in.validate();
  ErgodicConstants out;
  const double d = static_cast<double>(in.d);
  const double dd2 = d * in.delta0 * in.delta0;
  out.M_V = 8.0 / in.c7 * (in.D7 + 6.0 * in.B1 + 6.0 * dd2);
  out.D_X = std::max({in.D7 + in.c7 * out.M_V, in.z0.norm(), 1.0});
  out.D_F = in.D_F >= 0.0 ? in.D_F : in.gradient_bound(4.0 * out.D_X);
  if (!(out.D_F > 0.0)) throw std::invalid_argument("ergodic_constants: D_F must be positive");

  out.eps0 = std::min(in.eps / (2.0 * out.D_F + 2.0 * std::sqrt(in.B2) + 1.0), out.D_F / out.D_X);
  out.n0 = first_index_below(StepSchedule(in.eta0, in.alpha), out.eps0);

  out.mu = 2.0 * out.D_X / (in.delta0 * std::sqrt(out.eps0));
  out.radius = out.eps0 / (in.delta0 * std::sqrt(2.0 * out.eps0));
  const BallProbability ball =
      gaussian_ball_probability(in.d, out.mu, out.radius, in.mc_samples, in.seed);
  out.hits = ball.hits;
  out.samples = ball.samples;
  out.c_alpha = 0.25 * ball.p;
  out.c_alpha_lo = 0.25 * ball.lo;
  out.c_alpha_hi = 0.25 * ball.hi;
  out.c_alpha_upper_bound_only = ball.hits == 0;
  // With no hits the certified upper bound stands in for c_alpha, so N is
  // only a lower bound.
  const double c = out.c_alpha_upper_bound_only ? out.c_alpha_hi : out.c_alpha;
  out.N_lower_bound_only = out.c_alpha_upper_bound_only;

  out.J = std::ceil(std::log(0.5 * in.p0) / std::log1p(-c));
  const double f_n0 = in.F_n0 > 0.0 ? in.F_n0 : out.M_V;
  out.K = std::max(0.0, std::ceil(2.0 * std::log(2.0 * f_n0 / out.M_V) / (in.c7 * out.eps0)));
  out.T = (out.K + out.J * (1.0 + 8.0 / (in.c7 * out.eps0))) / (2.0 * in.p0);
  out.N = out.n0 + std::pow(out.T / (2.0 * out.eps0 * in.eta0), 1.0 / (1.0 - in.alpha));
  return out;
}

// ---------------------------------------------------------------------------
// Continuous-time reference: OU process dX = -2 H X dt + delta0 dW from 0.

/// E x^T H x at time t, for the OU process driven by F(x) = x^T H x.
inline double ou_expected_loss(const Matrix& h, double delta0, double t) {
  linalg::require_symmetric(h, "ou_expected_loss");
  if (!(t >= 0.0)) throw std::invalid_argument("ou_expected_loss: t must be >= 0");
  const Vector lam = linalg::eigenvalues(h);
  double s = 0.0;
  for (Eigen::Index i = 0; i < lam.size(); ++i) s += -std::expm1(-4.0 * lam[i] * t);
  return 0.25 * delta0 * delta0 * s;
}

// ---------------------------------------------------------------------------
// Matrix-product estimates A_{j:k} = prod_{i=j+1}^{k} (I - eta_i H).

struct HboundsOptions {
  /// Defaults: ||H||, the positive-part trace of H, and delta0^2 = max eta
  /// over the window.
  std::optional<double> C3;
  std::optional<double> D4;
  std::optional<double> delta0;
  double rel_tol = 1e-9;
};

struct ClaimResult {
  bool applicable = true;
  bool pass = true;
  double lhs = 0.0;  // worst case over sub-checks
  double rhs = 0.0;
  double margin = 0.0;  // rhs - lhs for upper bounds, lhs - rhs for lower bounds
};

struct HboundsReport {
  double lambda_h = 0.0;
  double window = 0.0;  // eta_{o+1:n}
  double C3 = 0.0;
  double D4 = 0.0;
  double delta0 = 0.0;
  ClaimResult a, b, c_psd, c_lower, d, e;
  bool all_pass() const {
    for (const ClaimResult* r : {&a, &b, &c_psd, &c_lower, &d, &e})
      if (r->applicable && !r->pass) return false;
    return true;
  }
};

namespace detail {
/// phi(lambda) = (1 - prod(1 - eta_j lambda)) / lambda over the window, with
/// the polynomial form sum_j eta_j prod_{i>j} (1 - eta_i lambda) near 0.
inline double resolvent_factor(const std::vector<double>& etas, double lambda) {
  double window = 0.0;
  for (double e : etas) window += e;
  if (std::abs(lambda) * window > 1e-6) {
    double prod = 1.0;
    for (double e : etas) prod *= 1.0 - e * lambda;
    return (1.0 - prod) / lambda;
  }
  double acc = 0.0;
  for (double e : etas) acc = acc * (1.0 - e * lambda) + e;
  return acc;
}

inline void upper(ClaimResult& r, double lhs, double rhs, double tol) {
  const double margin = rhs - lhs;
  if (margin < r.margin || (r.lhs == 0.0 && r.rhs == 0.0)) {
    r.lhs = lhs;
    r.rhs = rhs;
    r.margin = margin;
  }
  if (margin < -tol * std::max({std::abs(lhs), std::abs(rhs), 1e-300})) r.pass = false;
}

inline void lower(ClaimResult& r, double lhs, double rhs, double tol) {
  r.lhs = lhs;
  r.rhs = rhs;
  r.margin = lhs - rhs;
  r.pass = r.margin >= -tol * std::max({std::abs(lhs), std::abs(rhs), 1e-300});
}
}  // namespace detail

/// Verifies the five matrix-product estimates on the window (o, n] of the
/// step list `etas` (etas[i - 1] = eta_i).
inline HboundsReport check_matrix_product_bounds(const Matrix& h, const std::vector<double>& etas,
                                                 std::size_t o, std::size_t n,
                                                 const HboundsOptions& opts = {}) {
  linalg::require_symmetric(h, "check_matrix_product_bounds");
  if (!(o < n && n <= etas.size())) throw std::invalid_argument("need 0 <= o < n <= etas.size()");
  const Eigen::Index d = h.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  const Vector lam = es.eigenvalues();
  const double h_norm = lam.cwiseAbs().maxCoeff();

  const std::vector<double> w(etas.begin() + static_cast<std::ptrdiff_t>(o),
                              etas.begin() + static_cast<std::ptrdiff_t>(n));
  for (double e : w) {
    if (!(e > 0.0)) throw std::invalid_argument("step sizes must be positive");
    if (e * h_norm >= 0.5) throw std::invalid_argument("hypothesis violated: eta_i ||H|| >= 1/2");
  }

  HboundsReport rep;
  rep.lambda_h = -lam.minCoeff();
  if (!(rep.lambda_h > 0.0)) throw std::invalid_argument("hypothesis violated: lambda_max(-H) <= 0");
  for (double e : w) rep.window += e;
  rep.C3 = opts.C3.value_or(h_norm);
  rep.D4 = opts.D4.value_or(lam.cwiseMax(0.0).sum());
  rep.delta0 = opts.delta0.value_or(std::sqrt(*std::max_element(w.begin(), w.end())));
  const double tol = opts.rel_tol;
  const std::size_t len = w.size();
  const Matrix I = Matrix::Identity(d, d);

  // Suffix products S[j] = A_{o+j:n}, j = 0..len.
  std::vector<Matrix> suffix(len + 1);
  suffix[len] = I;
  for (std::size_t j = len; j-- > 0;) suffix[j] = (I - w[j] * h) * suffix[j + 1];

  // (a) on suffixes A_{j:n} and prefixes A_{o:k}.
  {
    double tail = 0.0;
    for (std::size_t j = len + 1; j-- > 0;) {
      if (j < len) tail += w[j];
      detail::upper(rep.a, linalg::spectral_norm_sym(suffix[j]), std::exp(rep.lambda_h * tail), tol);
    }
    Matrix prefix = I;
    double head = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
      prefix = (I - w[k] * h) * prefix;
      head += w[k];
      detail::upper(rep.a, linalg::spectral_norm_sym(prefix), std::exp(rep.lambda_h * head), tol);
    }
  }

  // (b) (I - A_{o:n}) H^+ via the per-eigenvalue factor.
  Vector phi(d), a_full(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    phi[i] = detail::resolvent_factor(w, lam[i]);
    double prod = 1.0;
    for (double e : w) prod *= 1.0 - e * lam[i];
    a_full[i] = prod;
  }
  detail::upper(rep.b, phi.cwiseAbs().maxCoeff(), rep.window * std::exp(rep.lambda_h * rep.window), tol);

  // (c) P = (I - A) H^+ A shares eigenvectors with H; its eigenvalues are
  // phi_i a_i, evaluated per direction so the growing mode cannot swamp the
  // others through cancellation. The lower bound uses e^{-2 eta C3}.
  {
    const Vector p = phi.cwiseProduct(a_full);
    const double min_p = p.minCoeff();
    rep.c_psd.lhs = min_p;
    rep.c_psd.rhs = 0.0;
    rep.c_psd.margin = min_p;
    rep.c_psd.pass = min_p >= 0.0;
    const double floor = 1.0 / rep.C3 * std::exp(-2.0 * rep.window * rep.C3);
    rep.c_lower.applicable = rep.window >= floor;
    if (rep.c_lower.applicable) detail::lower(rep.c_lower, min_p, 0.5 * floor, tol);
  }

  // (d) and (e): v_i' A_{j:n} H A_{j:n} v_i = lambda_i a_{j,i}^2.
  {
    double sum_d = 0.0, sum_e = 0.0;
    const double d02 = rep.delta0 * rep.delta0;
    Vector a_tail = Vector::Ones(d);  // eigenvalues of A_{o+j+1:n}
    for (std::size_t j = len; j-- > 0;) {
      const Vector quad = lam.cwiseProduct(a_tail.cwiseAbs2());
      const double tr = quad.sum();
      sum_d += w[j] * tr;
      sum_e += d02 * w[j] * tr + w[j] * w[j] * quad.maxCoeff();
      a_tail = a_tail.cwiseProduct((1.0 - w[j] * lam.array()).matrix());
    }
    const double grow = std::expm1(rep.lambda_h * rep.window);
    detail::upper(rep.d, sum_d, -0.25 * grow + 2.0 * rep.window * rep.D4, tol);
    const EscapeWindow ew = escape_window(rep.lambda_h, rep.D4);
    rep.e.applicable = !ew.degenerate && rep.window >= ew.d5;
    if (rep.e.applicable) detail::upper(rep.e, sum_e, -4.0 * d02 * rep.window, tol);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Variance of the scalar SGLD / PGD chains on F(x) = x^2 / 2 from X_0 = 0.

/// Any step sequence eta(k), k >= 1; covers eta_k = 1/k, which lies outside
/// StepSchedule's alpha < 1.
template <class StepFn>
  requires std::is_invocable_r_v<double, StepFn, std::int64_t>
double variance_recursion(Method method, StepFn&& eta, std::int64_t n) {
  if (n < 0) throw std::invalid_argument("variance_recursion: n must be >= 0");
  if (method != Method::SGLD && method != Method::PGD)
    throw std::invalid_argument("variance_recursion: method must be SGLD or PGD");
  double v = 0.0;
  for (std::int64_t k = 1; k <= n; ++k) {
    const double e = eta(k);
    const double keep = (1.0 - e) * (1.0 - e);
    v = keep * v + (method == Method::SGLD ? e : e * e);
  }
  return v;
}

inline double variance_recursion(Method method, const StepSchedule& sched, std::int64_t n) {
  return variance_recursion(method, [&](std::int64_t k) { return sched.step_at(k); }, n);
}

}  // namespace langevin
