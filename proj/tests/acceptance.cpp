// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "langevin/constants.hpp"
#include "langevin/harness/runner.hpp"
#include "oracles.hpp"

using namespace langevin;
using namespace langevin::harness;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

json load(const std::string& name) {
  std::ifstream in(std::string(CONFIG_DIR) + "/" + name);
  return json::parse(in);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict ou_escape() {
  Matrix h(2, 2);
  h << -0.5, 0.0, 0.0, 0.5;
  EscapeOptions o;
  o.seed = 5;
  const auto r = run_escape_experiment(h, 0.1, StepSchedule(1e-3, 0.0), 500, o);
  return {r.ou_match && r.below_level,
          fmt("mean F %.5f +- %.5f, OU %.5f, level %.5f", r.loss.mean, r.loss.half_width, r.ou_prediction,
              r.stationary_level)};
}

// Criteria 2 and 3 share one simulation of the scalar chain.
struct ScalarChain {
  std::vector<std::int64_t> cps{100, 1000, 10000, 100000};
  ErgodicityResult res;
  ScalarChain() {
    ErgodicityOptions o;
    o.checkpoints = cps;
    o.seed = 20;
    // z0 far outside the reachable range, so no replica stops early.
    res = run_ergodicity_experiment(ScalarQuadratic{}, StepSchedule(1.0, 0.6), 1.0, Vector::Zero(1),
                                    Vector::Constant(1, 1e9), 1e-9, cps.back(), 10000, o);
  }
};

Verdict variance_limits(const ScalarChain& c) {
  const double vx = c.res.of(Method::SGLD).variance.back().variance;
  const double vy = c.res.of(Method::PGD).variance.back().variance;
  return {std::abs(vx - 0.5) < 0.02 && vy < 0.02, fmt("Var X = %.4f, Var Y = %.2e at n = 1e5", vx, vy)};
}

Verdict variance_recursion_exact(const ScalarChain& c) {
  bool ok = true;
  std::string d;
  const auto& sgld = c.res.of(Method::SGLD);
  for (std::size_t i = 0; i < 3; ++i) {
    const double want = static_cast<double>(oracle::scalar_chain_variance(1.0, 0.6, c.cps[i], false));
    const double lib = variance_recursion(Method::SGLD, StepSchedule(1.0, 0.6), c.cps[i]);
    const auto& v = sgld.variance[i];
    const double z = (v.variance - want) / v.se;
    ok = ok && std::abs(z) <= 5.0 && std::abs(lib - want) <= 1e-12 * want;
    d += fmt("n=%lld z=%.2f ", static_cast<long long>(c.cps[i]), z);
  }
  return {ok, d};
}

Verdict slope_test() {
  const auto rep = run_experiment(parse_config(load("hitting_fosp_eps_sweep.json")));
  const json& s = rep.summary;
  if (s["log_log_slope_median_tau"].is_null()) return {false, "median undefined at some epsilon"};
  // Median tau grows as epsilon shrinks; report the exponent of 1/epsilon.
  const double slope = -s["log_log_slope_median_tau"].get<double>();
  std::string d = fmt("slope %.3f;", slope);
  for (const auto& p : s["points"])
    d += fmt(" eps %.2f median %.0f", p["sweep_value"].get<double>(), p["median_tau"].get<double>());
  return {slope >= 3.0 && slope <= 5.0, d};
}

Verdict fosp_exceedance(const Verdict& slope) {
  const auto cfg = parse_config(load("hitting_fosp_theorem.json"));
  const HittingPlan plan = plan_hitting(cfg, std::nullopt, 0.0);
  if (plan.budget_capped)
    return {slope.pass, fmt("N = %.3g exceeds the 1e8 cap; falls back to the slope test: %s", plan.N,
                            slope.detail.c_str())};
  const auto rep = run_experiment(cfg);
  const json& pt = rep.summary["points"][0];
  return {pt["exceedance_ok"].get<bool>(),
          fmt("P(tau >= N) = %.3f, bound %.3f", pt["exceedance_at_N"].get<double>(),
              pt["exceedance_bound"].get<double>())};
}

Verdict dimension_independence() {
  const auto rep = run_experiment(parse_config(load("hitting_fosp_dim_sweep.json")));
  const json& s = rep.summary;
  if (s["median_tau_spread"].is_null()) return {false, "median undefined at some dimension"};
  const double spread = s["median_tau_spread"].get<double>();
  return {spread <= 2.0, fmt("max/min median tau %.3f over d = 5..40", spread)};
}

Verdict hbounds() {
  GaussianStream rng(2024);
  int failures = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    const HboundsInstance in = random_hbounds_instance(rng, 10);
    const auto rep = check_matrix_product_bounds(in.H, in.etas, in.o, in.n);
    for (const ClaimResult* c : {&rep.a, &rep.b, &rep.c_psd, &rep.c_lower, &rep.d, &rep.e}) {
      if (!c->applicable) continue;
      if (!c->pass) ++failures;
      worst = std::min(worst, c->margin);
    }
  }
  return {failures == 0, fmt("%d claim failures, smallest margin %.3e", failures, worst)};
}

template <class P>
bool derivatives_ok(const P& p, std::uint64_t seed, double& worst_g, double& worst_h) {
  std::mt19937_64 eng(seed);
  bool ok = true;
  for (int k = 0; k < 100; ++k) {
    const Vector x = oracle::random_point(p, eng);
    const double eg = oracle::rel_err(grad(p, x), oracle::fd_grad(p, x));
    const double eh = oracle::rel_err(hessian(p, x), oracle::fd_hessian(p, x));
    worst_g = std::max(worst_g, eg);
    worst_h = std::max(worst_h, eh);
    ok = ok && eg < 1e-4 && eh < 1e-3;
  }
  return ok;
}

template <class P>
bool unbiased(const P& p, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  return oracle::noise_mean(p, oracle::random_point(p, eng), 100000, seed + 1).ok();
}

Verdict oracles() {
  std::mt19937_64 eng(31);
  Vector hs(3);
  hs << -1.0, 0.5, 2.0;
  Vector as(4);
  as << 2.0, 1.0, 0.5, 0.1;
  Vector ms(4);
  ms << 1.5, 0.7, 0.0, 0.0;
  Vector cs(4);
  cs << 1.0, 0.6, 0.3, 0.1;
  const QuadraticSaddle saddle(oracle::rotated(hs, eng), 0.3 * Matrix::Identity(3, 3));
  const LinearRegression lr(oracle::rotated(as, eng), Vector::LinSpaced(4, -1.0, 1.0));
  const MatrixFactorization mf(oracle::rotated(ms, eng), 2);
  const OnlinePCA pca(oracle::rotated(cs, eng), 2);
  const ScalarQuadratic sq;
  double g = 0.0, h = 0.0;
  bool ok = derivatives_ok(saddle, 1, g, h) & derivatives_ok(lr, 2, g, h) & derivatives_ok(mf, 3, g, h) &
            derivatives_ok(pca, 4, g, h) & derivatives_ok(sq, 5, g, h);
  const bool noise = unbiased(saddle, 6) && unbiased(lr, 7) && unbiased(mf, 8) && unbiased(pca, 9);
  return {ok && noise, fmt("worst grad rel err %.2e, Hessian %.2e, unbiased %s", g, h, noise ? "yes" : "no")};
}

Verdict dominance_all() {
  const auto ref = reference_instances();
  const UniversalConstants u;
  EmpiricalOptions o;
  o.points = 200;
  GaussianStream rng(99);
  bool ok = true;
  std::string failed;
  auto check = [&](const auto& p, double gamma, double c, const char* tag) {
    const auto rows = dominance(empirical_constants(p, gamma, rng, o), analytic_constants(p, gamma, c));
    for (const auto& r : rows)
      if (!r.pass) {
        ok = false;
        failed += fmt(" %s.%s(%.3g > %.3g)", tag, r.name.c_str(), r.empirical, r.analytic);
      }
  };
  for (std::size_t i = 0; i < 2; ++i) {
    check(ref.lr[i], ref.lr_gamma[i], u.linear_regression, i ? "LR-large" : "LR-small");
    check(ref.mf[i], ref.mf_gamma[i], u.matrix_factorization, i ? "MF-large" : "MF-small");
    check(ref.pca[i], ref.pca_gamma[i], u.online_pca, i ? "PCA-large" : "PCA-small");
  }
  return {ok, ok ? std::string("all rows dominate") : "violations:" + failed};
}

Verdict escape_needs_noise() {
  Matrix h(2, 2);
  h << -0.5, 0.0, 0.0, 0.5;
  const StepSchedule s(1e-3, 0.0);
  EscapeOptions o;
  o.seed = 6;
  o.horizon = EscapeHorizon::lemma_window;
  const auto still = run_escape_experiment(h, 0.0, s, 100, o);
  const auto noisy = run_escape_experiment(h, 0.1, s, 500, o);
  const bool zero = still.max_displacement == 0.0;
  const auto& c = noisy.lemma;
  const bool ok = zero && noisy.loss.mean < 0.0 && noisy.lemma_contract && c.all_ok();
  return {ok, fmt("zero-noise displacement %.1e; mean F %.5f vs contract %.5f; conditions window %d delta0 %d "
                  "(cap %.2e) eta %d grad %d",
                  still.max_displacement, noisy.loss.mean, noisy.lemma_rhs, c.window_ok, c.delta0_ok,
                  c.delta0_cap, c.eta_ok, c.grad_ok)};
}

Verdict ergodicity() {
  const StepSchedule s(1.0, 0.6);
  const Vector x0 = Vector::Zero(1), z0 = Vector::Constant(1, 1.5);
  ErgodicityOptions a;
  a.seed = 7;
  a.methods = {Method::SGLD};
  ErgodicityOptions b = a;
  b.methods = {Method::PGD};
  b.count_after = 10000;
  const double sgld =
      run_ergodicity_experiment(ScalarQuadratic{}, s, 1.0, x0, z0, 0.2, 1000000, 200, a).of(Method::SGLD).hit_fraction;
  const double pgd =
      run_ergodicity_experiment(ScalarQuadratic{}, s, 1.0, x0, z0, 0.2, 1000000, 200, b).of(Method::PGD).hit_fraction;
  return {sgld >= 0.9 && pgd <= 0.1, fmt("SGLD hit fraction %.3f, PGD late-hit fraction %.3f", sgld, pgd)};
}

}  // namespace

int main() {
  int failed = 0;
  // limit: wall-clock budget in seconds, 0 for none.
  auto report = [&](int id, const char* name, double limit, const std::function<Verdict()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit > 0.0 && secs > limit) {
      v.pass = false;
      v.detail += fmt(" (over the %.0fs limit)", limit);
    }
    std::printf("%s %2d %-26s %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
  };

  report(1, "ou-escape", 60, ou_escape);
  std::optional<ScalarChain> chain;
  report(2, "variance-limits", 120, [&] {
    chain.emplace();
    return variance_limits(*chain);
  });
  report(3, "variance-recursion", 0, [&] {
    return chain ? variance_recursion_exact(*chain) : Verdict{false, "simulation did not run"};
  });
  Verdict slope;
  report(4, "fosp-exceedance", 600, [&] {
    slope = slope_test();
    return fosp_exceedance(slope);
  });
  report(5, "fosp-epsilon-scaling", 0, [&] { return slope; });
  report(6, "dimension-independence", 0, dimension_independence);
  report(7, "matrix-product-bounds", 60, hbounds);
  report(8, "gradient-hessian-oracles", 0, oracles);
  report(9, "constant-dominance", 0, dominance_all);
  report(10, "escape-needs-noise", 0, escape_needs_noise);
  report(11, "ergodicity-contrast", 300, ergodicity);
  std::printf("%d of 11 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
