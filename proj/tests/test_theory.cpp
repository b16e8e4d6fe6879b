#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "langevin/dynamics.hpp"
#include "langevin/theory.hpp"
#include "oracles.hpp"

using namespace langevin;

namespace {

FospBoundInputs fosp_inputs(double F0, double eta0, double alpha, double eps, double rho) {
  FospBoundInputs in;
  in.F0 = F0;
  in.C2 = 1.0;
  in.B1 = 1.0;
  in.eta0 = eta0;
  in.alpha = alpha;
  in.eps = eps;
  in.rho = rho;
  in.d = 3;
  return in;
}

std::vector<double> schedule_steps(double eta0, double alpha, std::size_t n) {
  std::vector<double> out;
  for (std::size_t k = 1; k <= n; ++k) out.push_back(eta0 * std::pow(static_cast<double>(k), -alpha));
  return out;
}

}  // namespace

TEST(FospBound, ConstantStepExample) {
  auto in = fosp_inputs(1.0, 1.0 / 2400.0, 0.0, 0.1, 0.1);
  const auto b = fosp_bound(in);
  EXPECT_DOUBLE_EQ(b.eta0_max, 0.01 * 0.1 / 24.0);
  EXPECT_NEAR(b.N, 1.92e7, 1e-6 * 1.92e7);
  EXPECT_EQ(b.regime, FospRegime::constant_step);
  EXPECT_FALSE(b.eta0_admissible);
}

TEST(FospBound, DeltaCapExample) {
  FospBoundInputs in;
  in.d = 4;
  in.eps = 0.2;
  in.rho = 0.25;
  in.C2 = 3.0;
  EXPECT_NEAR(fosp_bound(in).delta0_max, 0.1 / 12.0, 1e-15);
}

TEST(FospBound, BranchesMeetAtHalf) {
  // eta0^2 = F0 / (B1 C2) makes the two expressions of the max coincide.
  auto in = fosp_inputs(0.04, 0.2, 0.5, 0.3, 0.2);
  const auto b = fosp_bound(in);
  EXPECT_NEAR(b.loss_term, b.noise_term, 1e-12 * b.loss_term);
}

TEST(FospBound, RegimeSelection) {
  EXPECT_EQ(fosp_bound(fosp_inputs(1, 0.01, 0.3, 0.1, 0.1)).regime, FospRegime::slow_decay);
  EXPECT_EQ(fosp_bound(fosp_inputs(1, 0.01, 0.7, 0.1, 0.1)).regime, FospRegime::fast_decay);
  const auto slow = fosp_bound(fosp_inputs(2.0, 0.01, 0.3, 0.1, 0.1));
  EXPECT_DOUBLE_EQ(slow.N, std::max(std::pow(2.0 / (0.1 * 0.01 * 0.01), 1.0 / 0.7),
                                    std::pow(0.01 / (0.1 * 0.01), 1.0 / 0.3)));
  const auto fast = fosp_bound(fosp_inputs(2.0, 0.01, 0.7, 0.1, 0.1));
  EXPECT_NEAR(fast.N, std::pow((2.0 + 1e-4) / (0.1 * 0.01 * 0.01), 1.0 / 0.3), 1e-9 * fast.N);
}

TEST(FospBound, Monotonicity) {
  std::mt19937_64 eng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    const double alpha = t % 3 == 0 ? 0.0 : 0.95 * u(eng);
    const double F0 = 0.1 + 10 * u(eng), eta0 = 1e-3 + 0.1 * u(eng);
    const double eps = 0.01 + u(eng), rho = 0.05 + 0.8 * u(eng);
    const double base = fosp_bound(fosp_inputs(F0, eta0, alpha, eps, rho)).N;
    EXPECT_LT(fosp_bound(fosp_inputs(F0, eta0, alpha, eps * 1.1, rho)).N, base);
    EXPECT_LT(fosp_bound(fosp_inputs(F0, eta0, alpha, eps, rho * 1.1)).N, base);
    // Above 1/2 the noise term can dominate, so only >= holds there.
    if (alpha == 0.0 || alpha >= 0.5)
      EXPECT_GT(fosp_bound(fosp_inputs(F0 * 1.1, eta0, alpha, eps, rho)).N, base);
    else
      EXPECT_GE(fosp_bound(fosp_inputs(F0 * 1.1, eta0, alpha, eps, rho)).N, base);
  }
}

TEST(FospBound, RejectsBadInputs) {
  EXPECT_THROW(fosp_bound(fosp_inputs(1, 0.1, 1.0, 0.1, 0.1)), std::invalid_argument);
  EXPECT_THROW(fosp_bound(fosp_inputs(1, 0.1, 0.0, 0.1, 1.0)), std::invalid_argument);
  EXPECT_THROW(fosp_bound(fosp_inputs(-1, 0.1, 0.0, 0.1, 0.5)), std::invalid_argument);
}

TEST(EscapeWindow, Examples) {
  EXPECT_NEAR(escape_window(1.0, 1.0).d5, 2.0 * std::log(56.0), 1e-12);
  EXPECT_NEAR(escape_window(1.0, 1.0).d5, 8.0507, 1e-4);
  EXPECT_NEAR(escape_window(0.5, 10.0).d5, 23.966, 1e-3);
  EXPECT_TRUE(escape_window(56.0, 1.0).degenerate);
  EXPECT_FALSE(escape_window(55.0, 1.0).degenerate);
  EXPECT_THROW(escape_window(0.0, 1.0), std::invalid_argument);
}

TEST(SospBound, ExampleChain) {
  SospBoundInputs in;
  in.d = 2;
  in.q = 1.0;
  in.C3 = 1.0;
  in.lambda_eps = 1.0;
  in.D4 = 1.0;
  in.C0 = 1.0;
  in.B2 = 1.0;
  in.eps = 0.1;
  in.rho = 0.1;
  const auto b = sosp_bound(in);

  // Independent long-double evaluation.
  const long double Q = 2.0L * std::log(56.0L);
  const long double delta0 = std::pow(2.0L, -1.5L) * std::pow(Q, -3.5L) * std::pow(56.0L, -27.0L);
  const long double eta0 = std::min(delta0 * delta0, std::log(56.0L));
  const long double eps0 = 0.5L * std::min(0.1L, delta0 * std::sqrt(1.0L / Q));
  const long double N = 2.0L / (0.1L * eta0 * eps0 * eps0) + Q / (eta0 * 0.1L);

  EXPECT_NEAR(b.Q, static_cast<double>(Q), 1e-12);
  EXPECT_NEAR(b.C6, static_cast<double>(Q), 1e-12);
  EXPECT_NEAR(b.log_delta0, static_cast<double>(std::log(delta0)), 1e-10);
  EXPECT_NEAR(b.log_eta0_max, static_cast<double>(std::log(eta0)), 1e-10);
  EXPECT_NEAR(b.log_eps0, static_cast<double>(std::log(eps0)), 1e-10);
  EXPECT_NEAR(b.log_N, static_cast<double>(std::log(N)), 1e-9);
}

TEST(SospBound, QDecreasesInLambda) {
  SospBoundInputs in;
  double prev = std::numeric_limits<double>::infinity();
  for (double lam : {0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 20.0}) {
    in.lambda_eps = lam;
    const double q = sosp_bound(in).Q;
    EXPECT_LT(q, prev);
    prev = q;
  }
}

TEST(SospBound, LargeEpsilonSaturates) {
  SospBoundInputs in;
  in.eps = 1e300;
  const auto b = sosp_bound(in);
  const double m = std::min({in.lambda_eps, 1.0, 1.0 / b.Q});
  EXPECT_NEAR(b.log_eps0, std::log(0.5) + b.log_delta0 + 0.5 * std::log(m), 1e-10);
  in.lambda_eps = 100.0;
  EXPECT_THROW(sosp_bound(in), std::invalid_argument);
}

TEST(ErgodicConstants, LyapunovRadiusExample) {
  ErgodicBoundInputs in;
  in.c7 = 1.0;
  in.D7 = 0.0;
  in.B1 = 0.0;
  in.d = 1;
  in.delta0 = 1.0;
  in.D_F = 1.0;
  in.mc_samples = 10000;
  EXPECT_DOUBLE_EQ(ergodic_constants(in).M_V, 48.0);
}

TEST(ErgodicConstants, ChainRecomputes) {
  ErgodicBoundInputs in;
  in.c7 = 2.0;
  in.D7 = 0.01;
  in.B1 = 0.005;
  in.B2 = 1.0;
  in.d = 2;
  in.delta0 = 0.05;
  in.eta0 = 0.5;
  in.alpha = 0.4;
  in.z0 = Vector::Constant(2, 0.3);
  in.eps = 100.0;
  in.p0 = 0.5;
  in.D_F = 10.0;
  in.mc_samples = 200000;
  const auto c = ergodic_constants(in);

  const double mv = 4.0 * (0.01 + 0.03 + 12.0 * 0.0025);
  EXPECT_NEAR(c.M_V, mv, 1e-14);
  const double dx = std::max(0.01 + 2.0 * mv, 1.0);
  EXPECT_NEAR(c.D_X, dx, 1e-14);
  const double eps0 = std::min(100.0 / (20.0 + 2.0 + 1.0), 10.0 / dx);
  EXPECT_NEAR(c.eps0, eps0, 1e-14);
  // First t with 0.5 t^-0.4 <= eps0.
  double n0 = 1;
  while (0.5 * std::pow(n0, -0.4) > eps0) ++n0;
  EXPECT_EQ(c.n0, n0);
  EXPECT_NEAR(c.mu, 2.0 * dx / (0.05 * std::sqrt(eps0)), 1e-12);
  EXPECT_NEAR(c.radius, eps0 / (0.05 * std::sqrt(2.0 * eps0)), 1e-12);
  ASSERT_GT(c.hits, 0);
  const double J = std::ceil(std::log(0.25) / std::log1p(-c.c_alpha));
  const double K = std::ceil(2.0 * std::log(2.0) / (2.0 * eps0));
  const double T = (K + J * (1.0 + 8.0 / (2.0 * eps0))) / 1.0;
  EXPECT_DOUBLE_EQ(c.J, J);
  EXPECT_DOUBLE_EQ(c.K, K);
  EXPECT_NEAR(c.T, T, 1e-12 * T);
  EXPECT_NEAR(c.N, n0 + std::pow(T / (2.0 * eps0 * 0.5), 1.0 / 0.6), 1e-9 * c.N);
  EXPECT_LE(c.c_alpha_lo, c.c_alpha);
  EXPECT_GE(c.c_alpha_hi, c.c_alpha);
}

TEST(ErgodicConstants, NDecreasesInP0) {
  ErgodicBoundInputs in;
  in.delta0 = 0.05;
  in.eps = 100.0;
  in.D_F = 10.0;
  in.mc_samples = 100000;
  double prev = std::numeric_limits<double>::infinity();
  for (double p0 : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    in.p0 = p0;
    const double n = ergodic_constants(in).N;
    EXPECT_LT(n, prev);
    prev = n;
  }
}

TEST(ErgodicConstants, UnreachableBallGivesUpperBoundOnly) {
  ErgodicBoundInputs in;
  in.delta0 = 1.0;
  in.D_F = 1.0;
  in.mc_samples = 10000;
  const auto c = ergodic_constants(in);
  EXPECT_EQ(c.hits, 0);
  EXPECT_TRUE(c.c_alpha_upper_bound_only);
  EXPECT_TRUE(c.N_lower_bound_only);
  EXPECT_GT(c.c_alpha_hi, 0.0);
}

TEST(ErgodicConstants, GradientBoundCallableSeesBallRadius) {
  ErgodicBoundInputs in;
  in.delta0 = 0.05;
  in.mc_samples = 1000;
  double seen = -1.0;
  in.gradient_bound = [&](double r) {
    seen = r;
    return 2.0 * r;
  };
  const auto c = ergodic_constants(in);
  EXPECT_DOUBLE_EQ(seen, 4.0 * c.D_X);
  EXPECT_DOUBLE_EQ(c.D_F, 8.0 * c.D_X);
}

TEST(GaussianBall, OneDimensionalClosedForm) {
  for (auto [mu, r] : {std::pair{0.0, 1.0}, {1.5, 0.7}, {2.0, 2.5}, {3.0, 0.5}}) {
    const std::int64_t n = 1000000;
    const auto b = gaussian_ball_probability(1, mu, r, n, 17);
    const double want = 0.5 * (std::erfc(-(mu + r) / std::sqrt(2.0)) - std::erfc(-(mu - r) / std::sqrt(2.0)));
    const double se = std::sqrt(want * (1.0 - want) / static_cast<double>(n));
    EXPECT_NEAR(b.p, want, 4.0 * se + 1e-12) << mu << " " << r;
    EXPECT_LE(b.lo, want);
    EXPECT_GE(b.hi, want);
  }
}

TEST(GaussianBall, ChiSquareCentredCase) {
  // mu = 0 in d = 2: ||Z||^2 is exponential with mean 2, so P = 1 - e^{-r^2/2}.
  const auto b = gaussian_ball_probability(2, 0.0, 1.2, 1000000, 5);
  const double want = 1.0 - std::exp(-0.72);
  EXPECT_NEAR(b.p, want, 4.0 * std::sqrt(want * (1 - want) / 1e6));
}

TEST(OuExpectedLoss, Examples) {
  Matrix h(2, 2);
  h << -0.5, 0.0, 0.0, 0.5;
  EXPECT_EQ(ou_expected_loss(h, 0.1, 0.0), 0.0);
  const Matrix half = 0.5 * Matrix::Identity(3, 3);
  EXPECT_NEAR(ou_expected_loss(half, 0.2, 200.0), 3.0 * 0.04 / 4.0, 1e-15);
  const double t = std::log(4.0) / 2.0;
  EXPECT_LE(ou_expected_loss(h, 0.1, t), -2.0 * 0.01 / 4.0);
  EXPECT_NEAR(ou_expected_loss(h, 0.1, t), 0.0025 * (1.0 - 4.0 + 1.0 - 0.25), 1e-15);
  EXPECT_THROW(ou_expected_loss(h, 0.1, -1.0), std::invalid_argument);
}

TEST(OuExpectedLoss, MatchesExactEndpointSampling) {
  std::mt19937_64 eng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    Vector ev(3);
    for (int i = 0; i < 3; ++i) ev[i] = u(eng);
    const Matrix h = oracle::rotated(ev, eng);
    const double t = 0.5 + 2.0 * (u(eng) + 1.0);
    const auto mc = oracle::ou_loss_monte_carlo(h, 0.3, t, 100000, 100 + k);
    EXPECT_NEAR(ou_expected_loss(h, 0.3, t), mc.mean, 3.0 * mc.se) << k;
  }
}

TEST(Hbounds, DiagonalExample) {
  Matrix h(2, 2);
  h << -1.0, 0.0, 0.0, 2.0;
  const std::vector<double> etas(5, 0.1);
  const auto rep = check_matrix_product_bounds(h, etas, 0, 5);
  Matrix a = Matrix::Identity(2, 2);
  for (int i = 0; i < 5; ++i) a = (Matrix::Identity(2, 2) - 0.1 * h) * a;
  EXPECT_NEAR(Eigen::JacobiSVD<Matrix>(a).singularValues()[0], std::pow(1.1, 5), 1e-12);
  EXPECT_LE(std::pow(1.1, 5), std::exp(0.5));
  EXPECT_TRUE(rep.a.pass);
  EXPECT_NEAR(rep.window, 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(rep.lambda_h, 1.0);
}

TEST(Hbounds, PureNegative) {
  const Matrix h = -Matrix::Identity(3, 3);
  const auto etas = schedule_steps(0.3, 0.2, 60);
  for (std::size_t o : {0u, 10u, 40u}) {
    const auto rep = check_matrix_product_bounds(h, etas, o, 60);
    EXPECT_LT(rep.d.lhs, 0.0);
    EXPECT_TRUE(rep.d.pass);
    EXPECT_TRUE(rep.all_pass());
  }
}

TEST(Hbounds, SingularHessian) {
  std::mt19937_64 eng(8);
  Vector ev(4);
  ev << -0.8, 0.0, 0.4, 1.2;
  const Matrix h = oracle::rotated(ev, eng);
  const auto etas = schedule_steps(0.3, 0.3, 120);
  const auto rep = check_matrix_product_bounds(h, etas, 5, 120);
  EXPECT_TRUE(rep.all_pass());
  EXPECT_TRUE(std::isfinite(rep.b.lhs));
}

TEST(Hbounds, RandomAdmissibleInstancesPass) {
  std::mt19937_64 eng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    const int d = 1 + static_cast<int>(eng() % 10);
    Vector ev(d);
    for (int i = 0; i < d; ++i) ev[i] = 4.0 * u(eng) - 2.0;
    ev[0] = -(0.05 + 2.0 * u(eng));
    const Matrix h = oracle::rotated(ev, eng);
    const double eta0 = (0.01 + 0.48 * u(eng)) / ev.cwiseAbs().maxCoeff();
    const std::size_t n = 1 + eng() % 300;
    const std::size_t o = eng() % n;
    const auto rep = check_matrix_product_bounds(h, schedule_steps(eta0, 0.9 * u(eng), n), o, n);
    for (const ClaimResult* c : {&rep.a, &rep.b, &rep.c_psd, &rep.c_lower, &rep.d, &rep.e})
      if (c->applicable) EXPECT_TRUE(c->pass) << "instance " << t << " margin " << c->margin;
  }
}

TEST(Hbounds, RejectsHypothesisViolations) {
  Matrix h(2, 2);
  h << -1.0, 0.0, 0.0, 2.0;
  EXPECT_THROW(check_matrix_product_bounds(h, std::vector<double>(4, 0.25), 0, 4), std::invalid_argument);
  EXPECT_THROW(check_matrix_product_bounds(Matrix::Identity(2, 2), std::vector<double>(4, 0.1), 0, 4),
               std::invalid_argument);
  EXPECT_THROW(check_matrix_product_bounds(h, std::vector<double>(4, 0.1), 3, 3), std::invalid_argument);
}

TEST(VarianceRecursion, HarmonicSchedule) {
  auto harmonic = [](std::int64_t k) { return 1.0 / static_cast<double>(k); };
  EXPECT_DOUBLE_EQ(variance_recursion(Method::SGLD, harmonic, 1), 1.0);
  EXPECT_DOUBLE_EQ(variance_recursion(Method::SGLD, harmonic, 2), 0.75);
  EXPECT_LT(std::abs(variance_recursion(Method::SGLD, harmonic, 1000000) - 0.5), 1e-2);
  EXPECT_LT(variance_recursion(Method::PGD, harmonic, 1000000), 1e-4);
}

TEST(VarianceRecursion, MatchesIndependentLoop) {
  for (auto [eta0, alpha] : {std::pair{1.0, 0.6}, {0.7, 0.3}, {0.05, 0.0}}) {
    const StepSchedule s(eta0, alpha);
    for (bool pgd : {false, true}) {
      const double got = variance_recursion(pgd ? Method::PGD : Method::SGLD, s, 10000);
      const double want = static_cast<double>(oracle::scalar_chain_variance(eta0, alpha, 10000, pgd));
      EXPECT_NEAR(got, want, 1e-12 * (1.0 + want));
    }
  }
  EXPECT_THROW(variance_recursion(Method::ULA, StepSchedule(0.1, 0.0), 5), std::invalid_argument);
}

TEST(VarianceRecursion, MatchesSimulatedScalarChain) {
  const ScalarQuadratic p;
  DynamicsConfig cfg;
  cfg.method = Method::SGLD;
  cfg.delta0 = 1.0;
  cfg.schedule = StepSchedule(1.0, 0.6);
  cfg.max_iters = 100;
  cfg.seed = 5;
  const int reps = 4000;
  double s = 0.0, s2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    auto streams = ReplicaStreams::for_replica(cfg.seed, static_cast<std::uint64_t>(r));
    const auto t = run(p, cfg, Vector::Zero(1), [](const Vector&, std::int64_t) { return false; }, streams);
    const double x = t.final_iterate[0];
    s += x;
    s2 += x * x;
  }
  const double mean = s / reps;
  const double var = (s2 - reps * mean * mean) / (reps - 1);
  const double want = variance_recursion(Method::SGLD, cfg.schedule, 100);
  EXPECT_NEAR(var, want, 5.0 * want * std::sqrt(2.0 / (reps - 1)));
}
