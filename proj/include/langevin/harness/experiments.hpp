#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include "langevin/dynamics.hpp"
#include "langevin/harness/report.hpp"
#include "langevin/linalg.hpp"
#include "langevin/parallel.hpp"
#include "langevin/problems.hpp"
#include "langevin/schedule.hpp"
#include "langevin/stationarity.hpp"
#include "langevin/theory.hpp"

namespace langevin::harness {

inline constexpr std::int64_t kBudgetCap = 100'000'000;

// ---------------------------------------------------------------------------
// Saddle escape on F(x) = x^T H x from the saddle at 0.

enum class EscapeHorizon {
  /// Step mass t = log(2d) / (-4 lambda_min(H)) of the continuous-time analysis.
  ou,
  /// Step mass 2 D5 of the escape lemma, stopping at the exit time of the b-ball.
  lemma_window,
};

struct EscapeOptions {
  EscapeHorizon horizon = EscapeHorizon::ou;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double q = 1.0;
  /// Hessian-Lipschitz constant used by the lemma; defaults to ||2H||.
  std::optional<double> C3;
  /// Gradient-noise covariance of the saddle (zero when absent).
  std::optional<Matrix> noise_cov;
};

struct LemmaConditions {
  double lambda_h = 0.0;  // lambda_max(-hessian) = -2 lambda_min(H)
  double D4 = 0.0;
  double D5 = 0.0;
  double C3 = 0.0;
  double C6 = 0.0;
  double B2 = 1.0;
  double b = 0.0;  // exit radius q lambda_H / C3
  double window_lo = 0.0, window_hi = 0.0;
  bool window_ok = false;
  double delta0_cap = 0.0;
  bool delta0_ok = false;
  double eta_o = 0.0;  // eta_1, the first step of the window
  bool eta_ok = false;
  double grad_norm = 0.0;
  double grad_cap = 0.0;
  bool grad_ok = false;
  bool all_ok() const { return window_ok && delta0_ok && eta_ok && grad_ok; }
};

struct EscapeResult {
  std::int64_t d = 0;
  double delta0 = 0.0;
  double t_star = 0.0;       // log(2d) / (-4 lambda_min(H))
  double t_star_alt = 0.0;   // log(2d) / (4 lambda_max(-2H))
  double target_mass = 0.0;  // requested step mass
  double mass = 0.0;         // realized eta_{1:n}
  std::int64_t steps = 0;
  std::vector<double> final_loss;
  std::vector<double> displacement;
  std::vector<std::int64_t> stop_index;
  std::vector<bool> diverged;
  MeanCI loss;
  double ou_prediction = 0.0;
  double stationary_level = 0.0;  // -d delta0^2 / 4
  bool ou_match = false;
  bool below_level = false;
  double max_displacement = 0.0;
  LemmaConditions lemma;
  double lemma_rhs = 0.0;  // F(X_o) - eta_{o+1:n} delta0^2
  bool lemma_contract = false;
  std::int64_t diverged_count = 0;
};

inline LemmaConditions escape_lemma_conditions(const Matrix& h, double delta0, const StepSchedule& sched,
                                               double mass, const EscapeOptions& opts) {
  LemmaConditions c;
  const Matrix hess = 2.0 * h;
  const Vector ev = linalg::eigenvalues(hess);
  const double d = static_cast<double>(h.rows());
  c.lambda_h = -ev.minCoeff();
  c.D4 = ev.cwiseMax(0.0).sum();
  const EscapeWindow w = escape_window(c.lambda_h, c.D4);
  c.D5 = w.d5;
  c.C3 = opts.C3.value_or(ev.cwiseAbs().maxCoeff());
  c.C6 = std::max({c.C3 * std::pow(opts.q, -1.5), 1.0 / c.lambda_h, 1.0, c.D5});
  if (opts.noise_cov) {
    const double tr = opts.noise_cov->trace();
    c.B2 = std::max(1.0, std::sqrt(tr * tr + 2.0 * opts.noise_cov->squaredNorm()));
  }
  c.b = opts.q * c.lambda_h / c.C3;
  c.window_lo = 2.0 * c.D5;
  c.window_hi = 3.0 * c.D5;
  c.window_ok = !w.degenerate && mass >= c.window_lo && mass <= c.window_hi;
  c.delta0_cap = std::pow(d, -1.5) * std::pow(c.C6, -3.5) * std::exp(-(9.0 + 18.0 * opts.q) * c.D5 * c.lambda_h);
  c.delta0_ok = delta0 <= c.delta0_cap;
  c.eta_o = sched.step_at(1);
  c.eta_ok = c.eta_o <= delta0 * delta0 / c.B2;
  c.grad_norm = 0.0;  // the saddle itself
  c.grad_cap = delta0 * std::sqrt(d * std::min({c.lambda_h, 1.0, 1.0 / mass}));
  c.grad_ok = c.grad_norm <= c.grad_cap;
  return c;
}

/// SGLD started at the saddle of x^T H x. Reports the mean loss at the end of
/// the horizon against the OU prediction and the escape-lemma contract.
inline EscapeResult run_escape_experiment(const Matrix& h, double delta0, const StepSchedule& sched,
                                          std::int64_t replicas, const EscapeOptions& opts = {}) {
  linalg::require_symmetric(h, "run_escape_experiment");
  if (replicas < 1) throw std::invalid_argument("run_escape_experiment: replicas must be >= 1");
  if (!(delta0 >= 0.0)) throw std::invalid_argument("run_escape_experiment: delta0 must be >= 0");
  const double lmin = linalg::eigenvalues(h).minCoeff();
  if (!(lmin < 0.0)) throw std::invalid_argument("run_escape_experiment: H has no negative eigenvalue");

  EscapeResult res;
  res.d = h.rows();
  res.delta0 = delta0;
  const double log2d = std::log(2.0 * static_cast<double>(res.d));
  res.t_star = log2d / (-4.0 * lmin);
  res.t_star_alt = log2d / (4.0 * (-2.0 * lmin));

  const Matrix hess = 2.0 * h;
  const Vector hev = linalg::eigenvalues(hess);
  const EscapeWindow w = escape_window(-hev.minCoeff(), hev.cwiseMax(0.0).sum());
  if (opts.horizon == EscapeHorizon::lemma_window && w.degenerate)
    throw std::invalid_argument("run_escape_experiment: escape window is degenerate");
  res.target_mass = opts.horizon == EscapeHorizon::ou ? res.t_star : 2.0 * w.d5;
  res.steps = window_end(sched, 0, res.target_mass);
  res.mass = cumulative(sched, 1, res.steps).sum_eta;
  res.lemma = escape_lemma_conditions(h, delta0, sched, res.mass, opts);

  const QuadraticSaddle p = opts.noise_cov ? QuadraticSaddle(h, *opts.noise_cov) : QuadraticSaddle(h);
  DynamicsConfig cfg;
  cfg.method = Method::SGLD;
  cfg.delta0 = delta0;
  cfg.schedule = sched;
  cfg.max_iters = res.steps;
  cfg.seed = opts.seed;
  const Vector x0 = Vector::Zero(res.d);
  const double b = res.lemma.b;
  const bool stop_at_exit = opts.horizon == EscapeHorizon::lemma_window;

  const auto n = static_cast<std::size_t>(replicas);
  res.final_loss.assign(n, 0.0);
  res.displacement.assign(n, 0.0);
  res.stop_index.assign(n, 0);
  std::vector<char> div(n, 0);
  parallel_for(n, opts.threads, [&](std::size_t i) {
    ReplicaStreams streams = ReplicaStreams::for_replica(opts.seed, i);
    auto stop = [&](const Vector& x, std::int64_t) { return stop_at_exit && (x - x0).norm() >= b; };
    RunOptions ro;
    ro.thin = -1;
    ro.store_iterates = false;
    try {
      const Trajectory t = run(p, cfg, x0, stop, streams, ro);
      res.final_loss[i] = p.loss(t.final_iterate);
      res.displacement[i] = (t.final_iterate - x0).norm();
      res.stop_index[i] = t.final_index;
      div[i] = t.stop_reason == StopReason::radius_exceeded;
    } catch (const DivergenceError& e) {
      div[i] = 1;
      res.stop_index[i] = e.index();
      res.final_loss[i] = std::numeric_limits<double>::quiet_NaN();
    }
  });
  res.diverged.assign(div.begin(), div.end());
  std::vector<double> ok;
  for (std::size_t i = 0; i < n; ++i) {
    if (div[i]) ++res.diverged_count;
    else ok.push_back(res.final_loss[i]);
    res.max_displacement = std::max(res.max_displacement, res.displacement[i]);
  }
  res.loss = mean_ci(ok);
  res.ou_prediction = ou_expected_loss(h, delta0, res.mass);
  res.stationary_level = -static_cast<double>(res.d) * delta0 * delta0 / 4.0;
  res.ou_match = std::abs(res.loss.mean - res.ou_prediction) <= 3.0 * res.loss.half_width;
  res.below_level = res.loss.mean <= res.stationary_level + 3.0 * res.loss.half_width;
  res.lemma_rhs = p.loss(x0) - res.mass * delta0 * delta0;
  res.lemma_contract = res.loss.mean <= res.lemma_rhs;
  return res;
}

// ---------------------------------------------------------------------------
// Ergodicity: visits to the eps-ball around z0, SGLD against PGD.

struct ErgodicityOptions {
  /// Visits before this iteration are ignored.
  std::int64_t count_after = 0;
  /// Iterations at which the first coordinate of every replica is kept.
  std::vector<std::int64_t> checkpoints;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::vector<Method> methods{Method::SGLD, Method::PGD};
};

struct MethodVisits {
  Method method = Method::SGLD;
  std::vector<std::optional<std::int64_t>> first_visit;
  std::vector<std::vector<double>> checkpoint_values;  // [checkpoint][replica]
  std::vector<bool> diverged;
  std::int64_t hits = 0;
  double hit_fraction = 0.0;
  BallProbability hit_ci;
  std::vector<VarianceEstimate> variance;  // per checkpoint
  std::vector<double> predicted_variance;  // per checkpoint; ScalarQuadratic from 0 only
};

struct ErgodicityResult {
  std::int64_t budget = 0;
  std::vector<MethodVisits> methods;
  const MethodVisits& of(Method m) const {
    for (const auto& v : methods)
      if (v.method == m) return v;
    throw std::out_of_range("method not run");
  }
};

template <Objective P>
ErgodicityResult run_ergodicity_experiment(const P& p, const StepSchedule& sched, double delta0,
                                           const Vector& x0, const Vector& z0, double eps,
                                           std::int64_t budget, std::int64_t replicas,
                                           const ErgodicityOptions& opts = {}) {
  langevin::detail::check_dim(p.dim(), x0, "run_ergodicity_experiment");
  langevin::detail::check_dim(p.dim(), z0, "run_ergodicity_experiment");
  if (!(eps > 0.0)) throw std::invalid_argument("run_ergodicity_experiment: eps must be positive");
  if (budget < 0 || budget > kBudgetCap)
    throw std::invalid_argument("run_ergodicity_experiment: budget must lie in [0, 1e8]");
  if (replicas < 1) throw std::invalid_argument("run_ergodicity_experiment: replicas must be >= 1");
  std::vector<std::int64_t> cps = opts.checkpoints;
  std::sort(cps.begin(), cps.end());
  for (auto c : cps)
    if (c < 0 || c > budget) throw std::invalid_argument("checkpoint outside [0, budget]");
  const std::int64_t last_cp = cps.empty() ? -1 : cps.back();

  ErgodicityResult res;
  res.budget = budget;
  const auto n = static_cast<std::size_t>(replicas);
  const double radius = 1e6 * (1.0 + x0.norm());
  // Replicas share one table of steps; the pow per step dominates otherwise.
  constexpr std::int64_t kTableLimit = 4'000'000;
  const StepTable table(sched, std::min(budget, kTableLimit));
  for (Method m : opts.methods) {
    MethodVisits mv;
    mv.method = m;
    mv.first_visit.assign(n, std::nullopt);
    mv.checkpoint_values.assign(cps.size(), std::vector<double>(n, 0.0));
    std::vector<char> div(n, 0);
    DynamicsConfig cfg;
    cfg.method = m;
    cfg.delta0 = delta0;
    cfg.schedule = sched;
    cfg.max_iters = budget;
    cfg.seed = opts.seed;
    parallel_for(n, opts.threads, [&](std::size_t i) {
      // Same seed for every method, so the injected noise is shared.
      ReplicaStreams streams = ReplicaStreams::for_replica(opts.seed, i);
      Stepper<P> stepper(p, cfg);
      stepper.use_table(&table);
      Vector x = x0;
      std::size_t next_cp = 0;
      const bool scalar = p.dim() == 1;
      auto distance = [&] { return scalar ? std::abs(x[0] - z0[0]) : (x - z0).norm(); };
      std::optional<std::int64_t>& visit = mv.first_visit[i];
      std::int64_t cp_at = cps.empty() ? -1 : cps.front();
      for (std::int64_t k = 0;; ++k) {
        if (!visit && k >= opts.count_after && distance() <= eps) visit = k;
        while (k == cp_at) {
          mv.checkpoint_values[next_cp++][i] = x[0];
          cp_at = next_cp < cps.size() ? cps[next_cp] : -1;
        }
        if (k >= budget || (visit && k >= last_cp)) break;
        stepper.advance(x, k, streams);
        const bool bad = scalar ? !(std::abs(x[0]) <= radius) : !(x.allFinite() && x.norm() <= radius);
        if (bad) {
          div[i] = 1;
          break;
        }
      }
    });
    mv.diverged.assign(div.begin(), div.end());
    for (const auto& v : mv.first_visit) mv.hits += v.has_value();
    mv.hit_fraction = static_cast<double>(mv.hits) / static_cast<double>(n);
    mv.hit_ci = binomial_interval(mv.hits, replicas);
    for (std::size_t c = 0; c < cps.size(); ++c) {
      mv.variance.push_back(variance_estimate(mv.checkpoint_values[c]));
      if constexpr (std::is_same_v<P, ScalarQuadratic>) {
        if (x0.isZero() && (m == Method::SGLD || m == Method::PGD))
          mv.predicted_variance.push_back(delta0 * delta0 * variance_recursion(m, sched, cps[c]));
      }
    }
    res.methods.push_back(std::move(mv));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Hitting-time summaries.

struct HittingSummary {
  std::optional<double> median, q10, q90;
  std::int64_t censored = 0;
  std::int64_t diverged = 0;
  std::int64_t replicas = 0;
};

inline HittingSummary summarize_hitting(const std::vector<HittingRecord>& recs) {
  HittingSummary s;
  s.replicas = static_cast<std::int64_t>(recs.size());
  s.median = tau_quantile(recs, 0.5);
  s.q10 = tau_quantile(recs, 0.1);
  s.q90 = tau_quantile(recs, 0.9);
  for (const auto& r : recs) {
    s.censored += r.censored();
    s.diverged += r.diverged;
  }
  return s;
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

/// measure_hitting on a type-erased problem.
inline std::vector<HittingRecord> measure_hitting_any(const AnyProblem& p, const DynamicsConfig& cfg,
                                                      const RegionSpec& spec, const Vector& x0,
                                                      std::int64_t replicas, const HittingOptions& opts) {
  return std::visit([&](const auto& q) { return measure_hitting(q, cfg, spec, x0, replicas, opts); }, p);
}

}  // namespace langevin::harness
