#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "langevin/constants.hpp"
#include "langevin/harness/config.hpp"
#include "langevin/harness/experiments.hpp"
#include "langevin/harness/report.hpp"
#include "langevin/theory.hpp"

namespace langevin::harness {

// ---------------------------------------------------------------------------
// Shared pieces.

inline StepSchedule schedule_from(const Node& n, double eta0) {
  const double alpha = n.number("alpha", 0.0);
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError(n.at("alpha"), "must lie in [0, 1)");
  if (!(eta0 > 0.0) || !std::isfinite(eta0)) throw ConfigError(n.at("eta0"), "must be positive");
  return StepSchedule(eta0, alpha);
}

inline json to_json(const ConstantBundle& b) {
  json j = {{"C2", b.C2}, {"C3", b.C3}, {"C0", b.C0}, {"B1", b.B1}, {"B2", b.B2},
            {"D4", b.D4}, {"gamma", b.gamma}, {"provenance", to_string(b.provenance)}};
  if (b.has_coercivity) {
    j["c7"] = b.c7;
    j["D7"] = b.D7;
  }
  if (b.provenance == Provenance::empirical) {
    j["B1_se"] = b.B1_se;
    j["B2_se"] = b.B2_se;
  }
  return j;
}

inline UniversalConstants universal_from(const Node& theory) {
  UniversalConstants c;
  if (!theory.has("c")) return c;
  const Node n = theory.child("c");
  n.allow_only({"linear_regression", "matrix_factorization", "online_pca"});
  c.linear_regression = n.number("linear_regression", c.linear_regression);
  c.matrix_factorization = n.number("matrix_factorization", c.matrix_factorization);
  c.online_pca = n.number("online_pca", c.online_pca);
  return c;
}

/// Iterate-norm bound used by the analytic constants at the starting point.
inline double default_gamma(const AnyProblem& p, const Vector& x0) {
  return std::visit(
      [&](const auto& q) -> double {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, LinearRegression>) {
          return std::max(1.0, (x0 - q.x_star()).norm());
        } else if constexpr (std::is_same_v<T, MatrixFactorization> || std::is_same_v<T, OnlinePCA>) {
          const auto xm = langevin::detail::as_matrix(x0, q.rows(), q.rank());
          const Matrix& m = [&]() -> const Matrix& {
            if constexpr (std::is_same_v<T, OnlinePCA>) return q.covariance();
            else return q.target();
          }();
          return std::max({1.0, m.norm(), Matrix(xm * xm.transpose()).norm()});
        } else {
          return std::max(1.0, x0.norm());
        }
      },
      p);
}

/// Analytic constants where the problem family has them, empirical ones
/// otherwise; explicit values under theory/constants override either.
inline ConstantBundle resolve_constants(const AnyProblem& p, const Vector& x0, const Node& theory,
                                        std::uint64_t seed) {
  const double gamma = theory.has("gamma") ? theory.number("gamma") : default_gamma(p, x0);
  ConstantBundle b;
  const bool analytic = std::holds_alternative<LinearRegression>(p) ||
                        std::holds_alternative<MatrixFactorization>(p) ||
                        std::holds_alternative<OnlinePCA>(p);
  try {
    if (analytic) {
      b = analytic_constants(p, gamma, universal_from(theory));
    } else {
      GaussianStream rng(derive_seed(seed, 0, StreamKind::aux));
      EmpiricalOptions eo;
      eo.points = 10;
      eo.samples = 10000;
      eo.pairs = 200;
      b = empirical_constants(p, gamma, rng, eo);
      b.B2 = std::max(1.0, b.B2);
      b.C3 = std::max(b.C3, b.C2);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(theory.path().empty() ? "/theory" : theory.path(), e.what());
  }
  if (theory.has("constants")) {
    const Node c = theory.child("constants");
    c.allow_only({"C2", "C3", "C0", "B1", "B2", "D4", "c7", "D7"});
    b.C2 = c.number("C2", b.C2);
    b.C3 = c.number("C3", b.C3);
    b.C0 = c.number("C0", b.C0);
    b.B1 = c.number("B1", b.B1);
    b.B2 = c.number("B2", b.B2);
    b.D4 = c.number("D4", b.D4);
    b.c7 = c.number("c7", b.c7);
    b.D7 = c.number("D7", b.D7);
  }
  return b;
}

inline const json& empty_object() {
  static const json j = json::object();
  return j;
}

inline Node optional_child(const Node& root, const std::string& key) {
  return root.has(key) ? root.child(key) : Node(empty_object(), root.at(key));
}

// ---------------------------------------------------------------------------
// Hitting experiments.

struct HittingPlan {
  double sweep_value = 0.0;
  BuiltProblem built;
  DynamicsConfig dyn;
  RegionSpec region;
  HittingOptions opts;
  double N = 0.0;  // theorem iteration bound (0 when not computed)
  bool budget_capped = false;
  json theorem = json::object();
};

inline HittingPlan plan_hitting(const ExperimentConfig& cfg, std::optional<std::string> sweep_param,
                                double sweep_value) {
  const Node root(cfg.document, "");
  HittingPlan plan;
  plan.sweep_value = sweep_value;
  std::optional<Eigen::Index> dim;
  if (sweep_param && *sweep_param == "dim") dim = static_cast<Eigen::Index>(sweep_value);
  plan.built = build_problem(root.child("problem"), dim);
  const AnyProblem& p = plan.built.problem;
  const Eigen::Index d = problem_dim(p);

  const Node reg = root.child("region");
  reg.allow_only({"kind", "epsilon", "lambda_eps", "check_every"});
  const std::string kind = reg.string("kind", cfg.experiment == Experiment::hitting_sosp ? "SOSP" : "FOSP");
  if (kind != "FOSP" && kind != "SOSP") throw ConfigError(reg.at("kind"), "expected FOSP or SOSP");
  plan.region.kind = kind == "SOSP" ? RegionKind::SOSP : RegionKind::FOSP;
  plan.region.epsilon = (sweep_param && *sweep_param == "epsilon") ? sweep_value : reg.number("epsilon");
  reg.positive("epsilon", plan.region.epsilon);
  if (plan.region.kind == RegionKind::SOSP) {
    plan.region.lambda_eps = reg.number("lambda_eps");
    reg.positive("lambda_eps", plan.region.lambda_eps);
  }
  plan.opts.check_every = reg.integer("check_every", default_check_every(d));
  if (plan.opts.check_every < 1) throw ConfigError(reg.at("check_every"), "must be >= 1");
  plan.opts.threads = cfg.run.threads;
  plan.opts.keep_witness = false;

  const Node dn = root.child("dynamics");
  dn.allow_only({"method", "delta0", "eta0", "alpha", "max_iters", "eta0_reference_eps"});
  try {
    plan.dyn.method = parse_method(dn.string("method", "SGLD"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(dn.at("method"), e.what());
  }
  plan.dyn.seed = cfg.run.master_seed;
  const Node theory = optional_child(root, "theory");
  theory.allow_only({"rho", "C_alpha", "gamma", "c", "constants", "q", "C6_factor"});
  const double rho = theory.number("rho", 0.1);
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError(theory.at("rho"), "must lie in (0, 1)");
  const double c_alpha = theory.number("C_alpha", 1.0);
  const double alpha = dn.number("alpha", 0.0);
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError(dn.at("alpha"), "must lie in [0, 1)");

  auto is_theorem = [&](const std::string& key) {
    return dn.has(key) && dn.raw(key).is_string() && dn.string(key) == "theorem";
  };
  const bool any_theorem = is_theorem("delta0") || is_theorem("eta0") || is_theorem("max_iters");
  auto eta_scale = [&]() {
    if (!dn.has("eta0_reference_eps")) return 1.0;
    const double ref = dn.number("eta0_reference_eps");
    dn.positive("eta0_reference_eps", ref);
    return (plan.region.epsilon / ref) * (plan.region.epsilon / ref);
  };

  double delta0 = 0.0, eta0 = 0.0;
  if (!is_theorem("delta0")) {
    delta0 = (sweep_param && *sweep_param == "delta0") ? sweep_value : dn.number("delta0", 0.0);
    if (!(delta0 >= 0.0)) throw ConfigError(dn.at("delta0"), "must be >= 0");
  }
  if (!is_theorem("eta0")) {
    eta0 = ((sweep_param && *sweep_param == "eta0") ? sweep_value : dn.number("eta0")) * eta_scale();
    dn.positive("eta0", eta0);
  }

  if (any_theorem) {
    const ConstantBundle cb = resolve_constants(p, plan.built.x0, theory, cfg.run.master_seed);
    plan.theorem["constants"] = to_json(cb);
    const double F0 = std::visit([&](const auto& q) { return q.loss(plan.built.x0); }, p);
    if (plan.region.kind == RegionKind::FOSP) {
      FospBoundInputs in;
      in.F0 = F0;
      in.C2 = cb.C2;
      in.B1 = cb.B1;
      in.alpha = alpha;
      in.eps = plan.region.epsilon;
      in.rho = rho;
      in.d = d;
      in.C_alpha = c_alpha;
      in.eta0 = 1.0;
      FospBound fb;
      try {
        fb = fosp_bound(in);
        if (is_theorem("eta0")) eta0 = fb.eta0_max * eta_scale();
        in.eta0 = eta0;
        fb = fosp_bound(in);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("/theory", e.what());
      }
      if (is_theorem("delta0")) delta0 = fb.delta0_max;
      plan.N = fb.N;
      plan.theorem["fosp"] = {{"F0", F0},
                              {"delta0_max", fb.delta0_max},
                              {"eta0_max", fb.eta0_max},
                              {"N", fb.N},
                              {"regime", to_string(fb.regime)},
                              {"eta0_admissible", fb.eta0_admissible},
                              {"delta0_admissible", delta0 <= fb.delta0_max * (1.0 + 1e-12)}};
    } else {
      SospBoundInputs in;
      in.C0 = cb.C0;
      in.C3 = cb.C3;
      in.D4 = cb.D4;
      in.B2 = cb.B2;
      in.lambda_eps = plan.region.lambda_eps;
      in.q = theory.number("q", 1.0);
      in.eps = plan.region.epsilon;
      in.rho = rho;
      in.d = d;
      in.eta0 = is_theorem("eta0") ? 0.0 : eta0;
      in.alpha = alpha;
      in.C_alpha = c_alpha;
      in.C6_factor = theory.number("C6_factor", 1.0);
      SospBound sb;
      try {
        sb = sosp_bound(in);
      } catch (const std::invalid_argument& e) {
        throw ConfigError("/theory", e.what());
      }
      if (is_theorem("eta0")) eta0 = sb.eta0_used * eta_scale();
      if (is_theorem("delta0")) delta0 = sb.delta0;
      plan.N = sb.N;
      plan.theorem["sosp"] = {{"Q", sb.Q},           {"C6", sb.C6},
                              {"delta0", sb.delta0}, {"log_delta0", sb.log_delta0},
                              {"eta0_max", sb.eta0_max}, {"log_eta0_max", sb.log_eta0_max},
                              {"eps0", sb.eps0},     {"log_eps0", sb.log_eps0},
                              {"N", finite_or_null(sb.N)}, {"log10_N", sb.log_N / std::log(10.0)}};
    }
    if (!(eta0 > 0.0)) {
      throw ConfigError(dn.at("eta0"), "theorem step size underflows to zero");
    }
  }

  std::int64_t max_iters = 0;
  if (is_theorem("max_iters")) {
    if (!(plan.N > 0.0)) throw ConfigError(dn.at("max_iters"), "no theorem bound available");
    const double want = std::ceil(plan.N);
    plan.budget_capped = !(want <= static_cast<double>(kBudgetCap));
    max_iters = plan.budget_capped ? kBudgetCap : static_cast<std::int64_t>(want);
  } else {
    max_iters = dn.integer("max_iters");
    if (max_iters < 1) throw ConfigError(dn.at("max_iters"), "must be >= 1");
    if (max_iters > kBudgetCap) {
      plan.budget_capped = true;
      max_iters = kBudgetCap;
    }
  }
  plan.dyn.delta0 = delta0;
  plan.dyn.schedule = StepSchedule(eta0, alpha);
  plan.dyn.max_iters = max_iters;
  return plan;
}

inline ExperimentReport run_hitting(const ExperimentConfig& cfg) {
  const Node root(cfg.document, "");
  std::optional<std::string> param;
  std::vector<double> values{0.0};
  if (root.has("sweep")) {
    const Node s = root.child("sweep");
    s.allow_only({"parameter", "values"});
    param = s.string("parameter");
    if (*param != "epsilon" && *param != "dim" && *param != "eta0" && *param != "delta0")
      throw ConfigError(s.at("parameter"), "expected epsilon, dim, eta0 or delta0");
    values = s.numbers("values");
    if (values.empty()) throw ConfigError(s.at("values"), "expected at least one value");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!(values[i] > 0.0)) throw ConfigError(s.at("values") + "/" + std::to_string(i), "must be positive");
      if (*param == "dim" && values[i] != std::floor(values[i]))
        throw ConfigError(s.at("values") + "/" + std::to_string(i), "dimension must be an integer");
    }
  }

  ExperimentReport rep;
  rep.columns = {"sweep_value", "replica", "tau", "budget", "censored", "diverged"};
  rep.resolved = cfg.document;
  json points = json::array();
  json resolved_points = json::array();
  std::vector<double> xs, medians;
  for (double v : values) {
    // Validation of every sweep point happens before any simulation.
    (void)plan_hitting(cfg, param, v);
  }
  for (double v : values) {
    HittingPlan plan = plan_hitting(cfg, param, v);
    const auto recs = measure_hitting_any(plan.built.problem, plan.dyn, plan.region, plan.built.x0,
                                          cfg.run.replicas, plan.opts);
    const HittingSummary s = summarize_hitting(recs);
    for (const auto& r : recs) {
      rep.rows.push_back({v, r.replica, r.tau ? *r.tau : -1, r.budget, r.censored(), r.diverged});
      ++rep.replicas_total;
      rep.replicas_diverged += r.diverged;
    }
    json pt = {{"sweep_value", v},
               {"replicas", s.replicas},
               {"censored", s.censored},
               {"diverged", s.diverged},
               {"median_tau", opt_json(s.median)},
               {"q10_tau", opt_json(s.q10)},
               {"q90_tau", opt_json(s.q90)},
               {"budget", plan.dyn.max_iters},
               {"delta0", plan.dyn.delta0},
               {"eta0", plan.dyn.schedule.eta0()},
               {"alpha", plan.dyn.schedule.alpha()},
               {"epsilon", plan.region.epsilon}};
    if (plan.N > 0.0) {
      pt["N"] = finite_or_null(plan.N);
      if (plan.N <= static_cast<double>(plan.dyn.max_iters)) {
        const auto n_int = static_cast<std::int64_t>(std::ceil(plan.N));
        const double rho = optional_child(root, "theory").number("rho", 0.1);
        const double bound = rho + 3.0 * std::sqrt(rho * (1.0 - rho) / static_cast<double>(cfg.run.replicas));
        const double p_hat = exceedance(recs, n_int);
        pt["exceedance_at_N"] = p_hat;
        pt["exceedance_bound"] = bound;
        pt["exceedance_ok"] = p_hat <= bound;
      }
    }
    if (plan.budget_capped)
      pt["notice"] = "bound not testable at desk scale: the prescribed budget exceeds the 1e8 iteration cap";
    points.push_back(pt);
    json rp = {{"sweep_value", v}, {"problem", plan.built.resolved}, {"theorem", plan.theorem},
               {"dynamics",
                {{"method", to_string(plan.dyn.method)},
                 {"delta0", plan.dyn.delta0},
                 {"eta0", plan.dyn.schedule.eta0()},
                 {"alpha", plan.dyn.schedule.alpha()},
                 {"max_iters", plan.dyn.max_iters},
                 {"seed", plan.dyn.seed}}},
               {"region",
                {{"kind", plan.region.kind == RegionKind::SOSP ? "SOSP" : "FOSP"},
                 {"epsilon", plan.region.epsilon},
                 {"lambda_eps", plan.region.lambda_eps},
                 {"check_every", plan.opts.check_every}}}};
    resolved_points.push_back(rp);
    xs.push_back(v);
    medians.push_back(s.median ? *s.median : std::numeric_limits<double>::quiet_NaN());
  }
  rep.summary["experiment"] = to_string(cfg.experiment);
  rep.summary["points"] = points;
  if (param) {
    rep.summary["sweep_parameter"] = *param;
    const double slope = log_log_slope(xs, medians);
    rep.summary["log_log_slope_median_tau"] = finite_or_null(slope);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (double m : medians)
      if (std::isfinite(m)) {
        lo = std::min(lo, m);
        hi = std::max(hi, m);
      }
    rep.summary["median_tau_spread"] = (hi > 0.0 && lo > 0.0) ? json(hi / lo) : json(nullptr);
  }
  rep.summary["divergence_fraction"] = rep.divergence_fraction();
  rep.resolved["resolved"] = resolved_points;
  return rep;
}

// ---------------------------------------------------------------------------
// Escape.

inline ExperimentReport run_escape(const ExperimentConfig& cfg) {
  const Node root(cfg.document, "");
  const Node pn = root.child("problem");
  const BuiltProblem built = build_problem(pn);
  const auto* saddle = std::get_if<QuadraticSaddle>(&built.problem);
  if (!saddle) throw ConfigError(pn.at("type"), "escape experiments need a quadratic_saddle problem");
  const Node en = optional_child(root, "escape");
  en.allow_only({"horizon", "q", "C3"});
  const Node dn = root.child("dynamics");
  dn.allow_only({"method", "delta0", "eta0", "alpha"});
  if (dn.string("method", "SGLD") != "SGLD") throw ConfigError(dn.at("method"), "escape runs SGLD");
  const double delta0 = dn.number("delta0");
  if (!(delta0 >= 0.0)) throw ConfigError(dn.at("delta0"), "must be >= 0");
  const StepSchedule sched = schedule_from(dn, dn.number("eta0"));
  EscapeOptions opts;
  const std::string horizon = en.string("horizon", "ou");
  if (horizon == "ou") opts.horizon = EscapeHorizon::ou;
  else if (horizon == "lemma_window") opts.horizon = EscapeHorizon::lemma_window;
  else throw ConfigError(en.at("horizon"), "expected ou or lemma_window");
  opts.q = en.number("q", 1.0);
  en.positive("q", opts.q);
  if (en.has("C3")) opts.C3 = en.number("C3");
  opts.seed = cfg.run.master_seed;
  opts.threads = cfg.run.threads;
  if (saddle->noisy()) opts.noise_cov = Node(built.resolved, "/problem").matrix("noise_cov");
  if (!built.x0.isZero()) throw ConfigError(pn.at("x0"), "escape experiments start at the saddle (x0 = 0)");

  EscapeResult r;
  try {
    r = run_escape_experiment(saddle->h(), delta0, sched, cfg.run.replicas, opts);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(pn.path(), e.what());
  }
  ExperimentReport rep;
  rep.columns = {"replica", "final_loss", "displacement", "stop_index", "diverged"};
  for (std::size_t i = 0; i < r.final_loss.size(); ++i)
    rep.rows.push_back({static_cast<std::int64_t>(i), finite_or_null(r.final_loss[i]), r.displacement[i],
                        r.stop_index[i], static_cast<bool>(r.diverged[i])});
  rep.replicas_total = cfg.run.replicas;
  rep.replicas_diverged = r.diverged_count;
  const LemmaConditions& c = r.lemma;
  rep.summary = {
      {"experiment", "escape"},
      {"horizon", horizon},
      {"t_star", r.t_star},
      {"t_star_alternative", r.t_star_alt},
      {"target_mass", r.target_mass},
      {"mass", r.mass},
      {"steps", r.steps},
      {"final_loss", to_json(r.loss)},
      {"ou_prediction", r.ou_prediction},
      {"ou_match", r.ou_match},
      {"stationary_level", r.stationary_level},
      {"below_stationary_level", r.below_level},
      {"max_displacement", r.max_displacement},
      {"lemma",
       {{"lambda_H", c.lambda_h},      {"D4", c.D4},
        {"D5", c.D5},                  {"C3", c.C3},
        {"C6", c.C6},                  {"B2", c.B2},
        {"b", c.b},                    {"window", {c.window_lo, c.window_hi}},
        {"window_ok", c.window_ok},    {"delta0_cap", c.delta0_cap},
        {"delta0_ok", c.delta0_ok},    {"eta_o", c.eta_o},
        {"eta_ok", c.eta_ok},          {"grad_ok", c.grad_ok},
        {"conditions_met", c.all_ok()}, {"contract_rhs", r.lemma_rhs},
        {"contract_holds", r.lemma_contract}}},
      {"divergence_fraction", rep.divergence_fraction()}};
  rep.resolved = cfg.document;
  rep.resolved["resolved"] = {{"problem", built.resolved}};
  return rep;
}

// ---------------------------------------------------------------------------
// Ergodicity.

inline ExperimentReport run_ergodicity(const ExperimentConfig& cfg) {
  const Node root(cfg.document, "");
  const BuiltProblem built = build_problem(root.child("problem"));
  const Node dn = root.child("dynamics");
  dn.allow_only({"delta0", "eta0", "alpha", "methods"});
  const double delta0 = dn.number("delta0");
  if (!(delta0 >= 0.0)) throw ConfigError(dn.at("delta0"), "must be >= 0");
  const StepSchedule sched = schedule_from(dn, dn.number("eta0"));
  const Node en = root.child("ergodicity");
  en.allow_only({"z0", "epsilon", "budget", "count_after", "checkpoints"});
  const Eigen::Index d = problem_dim(built.problem);
  const Vector z0 = detail::vector_field(en, "z0", d);
  const double eps = en.number("epsilon");
  en.positive("epsilon", eps);
  const std::int64_t budget = en.integer("budget");
  if (budget < 0 || budget > kBudgetCap) throw ConfigError(en.at("budget"), "must lie in [0, 1e8]");
  ErgodicityOptions opts;
  opts.count_after = en.integer("count_after", 0);
  if (en.has("checkpoints")) {
    for (double c : en.numbers("checkpoints")) {
      if (c < 0 || c > static_cast<double>(budget) || c != std::floor(c))
        throw ConfigError(en.at("checkpoints"), "checkpoints must be integers in [0, budget]");
      opts.checkpoints.push_back(static_cast<std::int64_t>(c));
    }
  }
  if (dn.has("methods")) {
    opts.methods.clear();
    const json& ms = dn.raw("methods");
    if (!ms.is_array() || ms.empty()) throw ConfigError(dn.at("methods"), "expected a list of methods");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      try {
        opts.methods.push_back(parse_method(ms[i].is_string() ? ms[i].get<std::string>() : ""));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(dn.at("methods") + "/" + std::to_string(i), e.what());
      }
    }
  }
  opts.seed = cfg.run.master_seed;
  opts.threads = cfg.run.threads;

  const ErgodicityResult r = std::visit(
      [&](const auto& q) {
        return run_ergodicity_experiment(q, sched, delta0, built.x0, z0, eps, budget, cfg.run.replicas, opts);
      },
      built.problem);

  ExperimentReport rep;
  rep.columns = {"method", "replica", "first_visit", "diverged"};
  std::vector<std::int64_t> cps = opts.checkpoints;
  std::sort(cps.begin(), cps.end());
  for (auto c : cps) rep.columns.push_back("x_at_" + std::to_string(c));
  json methods = json::array();
  for (const auto& mv : r.methods) {
    for (std::size_t i = 0; i < mv.first_visit.size(); ++i) {
      std::vector<json> row{std::string(to_string(mv.method)), static_cast<std::int64_t>(i),
                            mv.first_visit[i] ? *mv.first_visit[i] : -1, static_cast<bool>(mv.diverged[i])};
      for (std::size_t c = 0; c < cps.size(); ++c) row.push_back(mv.checkpoint_values[c][i]);
      rep.rows.push_back(std::move(row));
      ++rep.replicas_total;
      rep.replicas_diverged += mv.diverged[i];
    }
    json m = {{"method", to_string(mv.method)},
              {"hits", mv.hits},
              {"hit_fraction", mv.hit_fraction},
              {"hit_fraction_ci95", {mv.hit_ci.lo, mv.hit_ci.hi}}};
    json var = json::array();
    for (std::size_t c = 0; c < cps.size(); ++c) {
      json v = {{"n", cps[c]}, {"variance", mv.variance[c].variance}, {"se", mv.variance[c].se}};
      if (c < mv.predicted_variance.size()) {
        v["predicted"] = mv.predicted_variance[c];
        v["z_score"] = mv.variance[c].se > 0.0
                           ? json((mv.variance[c].variance - mv.predicted_variance[c]) / mv.variance[c].se)
                           : json(nullptr);
      }
      var.push_back(v);
    }
    m["variance"] = var;
    methods.push_back(m);
  }
  rep.summary = {{"experiment", "ergodicity"},
                 {"budget", budget},
                 {"count_after", opts.count_after},
                 {"z0", to_json(z0)},
                 {"epsilon", eps},
                 {"methods", methods},
                 {"divergence_fraction", rep.divergence_fraction()}};
  rep.resolved = cfg.document;
  rep.resolved["resolved"] = {{"problem", built.resolved}};
  return rep;
}

// ---------------------------------------------------------------------------
// Bound calculators and the matrix-product validator.

inline json claim_json(const ClaimResult& c) {
  return {{"applicable", c.applicable}, {"pass", c.pass}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"margin", c.margin}};
}

/// Random admissible instance: symmetric H with a negative eigenvalue and a
/// power-law step list with eta_i ||H|| < 1/2.
struct HboundsInstance {
  Matrix H;
  std::vector<double> etas;
  std::size_t o = 0, n = 0;
};

inline HboundsInstance random_hbounds_instance(GaussianStream& rng, Eigen::Index max_dim) {
  HboundsInstance in;
  const auto d = static_cast<Eigen::Index>(1 + std::floor(rng.uniform() * static_cast<double>(max_dim)));
  Vector lam(d);
  for (Eigen::Index i = 0; i < d; ++i) lam[i] = 4.0 * rng.uniform() - 2.0;
  lam[0] = -(0.05 + 2.0 * rng.uniform());
  const Matrix q = linalg::random_orthonormal(d, d, rng);
  in.H = q * lam.asDiagonal() * q.transpose();
  in.H = 0.5 * (in.H + in.H.transpose());
  const double hn = lam.cwiseAbs().maxCoeff();
  const double eta0 = (0.01 + 0.48 * rng.uniform()) / hn;
  const double alpha = 0.9 * rng.uniform();
  in.n = static_cast<std::size_t>(1 + std::floor(rng.uniform() * 300.0));
  in.o = static_cast<std::size_t>(std::floor(rng.uniform() * static_cast<double>(in.n)));
  const StepSchedule s(eta0, alpha);
  for (std::size_t i = 1; i <= in.n; ++i) in.etas.push_back(s.step_at(static_cast<Index1>(i)));
  return in;
}

inline ExperimentReport run_check_bounds(const ExperimentConfig& cfg) {
  const Node root(cfg.document, "");
  const Node bn = root.child("bounds");
  bn.allow_only({"fosp", "sosp", "escape_window", "ergodic", "hbounds", "variance"});
  ExperimentReport rep;
  rep.columns = {"instance", "dim", "window", "claim", "applicable", "lhs", "rhs", "margin", "pass"};
  json out = {{"experiment", "check_bounds"}};
  auto wrap = [](const Node& n, auto&& fn) {
    try {
      return fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(n.path(), e.what());
    }
  };

  if (bn.has("fosp")) {
    const Node n = bn.child("fosp");
    n.allow_only({"F0", "C2", "B1", "eta0", "alpha", "eps", "rho", "d", "C_alpha"});
    FospBoundInputs in;
    in.F0 = n.number("F0");
    in.C2 = n.number("C2");
    in.B1 = n.number("B1");
    in.eta0 = n.number("eta0");
    in.alpha = n.number("alpha", 0.0);
    in.eps = n.number("eps");
    in.rho = n.number("rho");
    in.d = n.integer("d");
    in.C_alpha = n.number("C_alpha", 1.0);
    const FospBound b = wrap(n, [&] { return fosp_bound(in); });
    out["fosp"] = {{"delta0_max", b.delta0_max}, {"eta0_max", b.eta0_max}, {"N", b.N},
                   {"regime", to_string(b.regime)}, {"loss_term", b.loss_term},
                   {"noise_term", b.noise_term}, {"eta0_admissible", b.eta0_admissible}};
  }
  if (bn.has("sosp")) {
    const Node n = bn.child("sosp");
    n.allow_only({"C0", "C3", "D4", "B2", "lambda_eps", "q", "eps", "rho", "d", "eta0", "alpha", "C_alpha",
                  "C6_factor"});
    SospBoundInputs in;
    in.C0 = n.number("C0");
    in.C3 = n.number("C3");
    in.D4 = n.number("D4");
    in.B2 = n.number("B2");
    in.lambda_eps = n.number("lambda_eps");
    in.q = n.number("q", 1.0);
    in.eps = n.number("eps");
    in.rho = n.number("rho");
    in.d = n.integer("d");
    in.eta0 = n.number("eta0", 0.0);
    in.alpha = n.number("alpha", 0.0);
    in.C_alpha = n.number("C_alpha", 1.0);
    in.C6_factor = n.number("C6_factor", 1.0);
    const SospBound b = wrap(n, [&] { return sosp_bound(in); });
    out["sosp"] = {{"Q", b.Q}, {"C6", b.C6}, {"delta0", b.delta0}, {"log_delta0", b.log_delta0},
                   {"eta0_max", b.eta0_max}, {"log_eta0_max", b.log_eta0_max}, {"eps0", b.eps0},
                   {"log_eps0", b.log_eps0}, {"N", finite_or_null(b.N)}, {"log_N", b.log_N}};
  }
  if (bn.has("escape_window")) {
    const Node n = bn.child("escape_window");
    n.allow_only({"lambda_H", "D4"});
    const EscapeWindow w = wrap(n, [&] { return escape_window(n.number("lambda_H"), n.number("D4")); });
    out["escape_window"] = {{"D5", w.d5}, {"degenerate", w.degenerate},
                            {"step_mass_range", {2.0 * w.d5, 3.0 * w.d5}}};
  }
  if (bn.has("ergodic")) {
    const Node n = bn.child("ergodic");
    n.allow_only({"c7", "D7", "B1", "B2", "d", "delta0", "eta0", "alpha", "z0", "eps", "p0", "D_F", "F_n0",
                  "mc_samples", "seed"});
    ErgodicBoundInputs in;
    in.c7 = n.number("c7");
    in.D7 = n.number("D7");
    in.B1 = n.number("B1");
    in.B2 = n.number("B2");
    in.d = n.integer("d");
    in.delta0 = n.number("delta0");
    in.eta0 = n.number("eta0");
    in.alpha = n.number("alpha", 0.0);
    in.z0 = detail::vector_field(n, "z0", static_cast<Eigen::Index>(in.d));
    in.eps = n.number("eps");
    in.p0 = n.number("p0");
    in.F_n0 = n.number("F_n0", -1.0);
    in.mc_samples = n.integer("mc_samples", in.mc_samples);
    in.seed = n.seed("seed", cfg.run.master_seed);
    if (n.has("D_F")) {
      in.D_F = n.number("D_F");
    } else if (root.has("problem")) {
      const BuiltProblem built = build_problem(root.child("problem"));
      if (problem_dim(built.problem) != in.d) throw ConfigError(n.at("d"), "does not match the problem");
      in.gradient_bound = [p = built.problem](double r) { return gradient_bound_on_ball(p, r); };
    } else {
      throw ConfigError(n.at("D_F"), "give D_F or a problem to bound the gradient");
    }
    const ErgodicConstants e = wrap(n, [&] { return ergodic_constants(in); });
    out["ergodic"] = {{"M_V", e.M_V}, {"D_X", e.D_X}, {"D_F", e.D_F}, {"eps0", e.eps0},
                      {"n0", finite_or_null(e.n0)}, {"mu", e.mu}, {"radius", e.radius},
                      {"c_alpha", e.c_alpha}, {"c_alpha_ci95", {e.c_alpha_lo, e.c_alpha_hi}},
                      {"c_alpha_upper_bound_only", e.c_alpha_upper_bound_only},
                      {"hits", e.hits}, {"samples", e.samples}, {"K", e.K},
                      {"J", finite_or_null(e.J)}, {"T", finite_or_null(e.T)},
                      {"N", finite_or_null(e.N)}, {"N_lower_bound_only", e.N_lower_bound_only}};
  }
  if (bn.has("hbounds")) {
    const Node n = bn.child("hbounds");
    n.allow_only({"H", "etas", "eta0", "alpha", "steps", "o", "n", "random_instances", "max_dim", "seed",
                  "C3", "D4", "delta0"});
    std::vector<HboundsInstance> instances;
    if (n.has("random_instances")) {
      const std::int64_t k = n.integer("random_instances");
      if (k < 1) throw ConfigError(n.at("random_instances"), "must be >= 1");
      const std::int64_t md = n.integer("max_dim", 10);
      if (md < 1) throw ConfigError(n.at("max_dim"), "must be >= 1");
      GaussianStream rng(n.seed("seed", cfg.run.master_seed));
      for (std::int64_t i = 0; i < k; ++i) instances.push_back(random_hbounds_instance(rng, md));
    } else {
      HboundsInstance in;
      in.H = n.matrix("H");
      if (n.has("etas")) {
        in.etas = n.numbers("etas");
      } else {
        const StepSchedule s = schedule_from(n, n.number("eta0"));
        const std::int64_t steps = n.integer("steps");
        if (steps < 1) throw ConfigError(n.at("steps"), "must be >= 1");
        for (std::int64_t i = 1; i <= steps; ++i) in.etas.push_back(s.step_at(i));
      }
      in.o = static_cast<std::size_t>(n.integer("o", 0));
      in.n = static_cast<std::size_t>(n.integer("n", static_cast<std::int64_t>(in.etas.size())));
      instances.push_back(std::move(in));
    }
    HboundsOptions ho;
    if (n.has("C3")) ho.C3 = n.number("C3");
    if (n.has("D4")) ho.D4 = n.number("D4");
    if (n.has("delta0")) ho.delta0 = n.number("delta0");
    std::int64_t passed = 0;
    json first = nullptr;
    json worst = json::object();
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto& in = instances[i];
      const HboundsReport hr =
          wrap(n, [&] { return check_matrix_product_bounds(in.H, in.etas, in.o, in.n, ho); });
      passed += hr.all_pass();
      const std::pair<const char*, const ClaimResult*> claims[] = {
          {"a", &hr.a}, {"b", &hr.b}, {"c_psd", &hr.c_psd}, {"c_lower", &hr.c_lower}, {"d", &hr.d}, {"e", &hr.e}};
      for (const auto& [name, c] : claims) {
        rep.rows.push_back({static_cast<std::int64_t>(i), static_cast<std::int64_t>(in.H.rows()), hr.window,
                            name, c->applicable, c->lhs, c->rhs, c->margin, c->pass});
        if (c->applicable && (!worst.contains(name) || c->margin < worst[name].get<double>()))
          worst[name] = c->margin;
      }
      if (i == 0)
        first = {{"lambda_H", hr.lambda_h}, {"window", hr.window}, {"C3", hr.C3}, {"D4", hr.D4},
                 {"delta0", hr.delta0}, {"a", claim_json(hr.a)}, {"b", claim_json(hr.b)},
                 {"c_psd", claim_json(hr.c_psd)}, {"c_lower", claim_json(hr.c_lower)},
                 {"d", claim_json(hr.d)}, {"e", claim_json(hr.e)}, {"all_pass", hr.all_pass()}};
    }
    out["hbounds"] = {{"instances", instances.size()}, {"all_pass_count", passed},
                      {"worst_margin", worst}, {"first_instance", first}};
  }
  if (bn.has("variance")) {
    const Node n = bn.child("variance");
    n.allow_only({"method", "eta0", "alpha", "n"});
    Method m;
    try {
      m = parse_method(n.string("method", "SGLD"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(n.at("method"), e.what());
    }
    const StepSchedule s = schedule_from(n, n.number("eta0", 1.0));
    const std::int64_t k = n.integer("n");
    out["variance"] = {{"method", to_string(m)}, {"n", k},
                       {"V_n", wrap(n, [&] { return variance_recursion(m, s, k); })}};
  }
  rep.summary = out;
  rep.resolved = cfg.document;
  return rep;
}

// ---------------------------------------------------------------------------
// Constant estimation.

inline ExperimentReport run_estimate_constants(const ExperimentConfig& cfg) {
  const Node root(cfg.document, "");
  const BuiltProblem built = build_problem(root.child("problem"));
  const Node cn = optional_child(root, "constants");
  cn.allow_only({"gamma", "samples", "points", "pairs", "c", "coercivity_points", "coercivity_radius"});
  const double gamma = cn.number("gamma", default_gamma(built.problem, built.x0));
  EmpiricalOptions eo;
  eo.samples = cn.integer("samples", 10000);
  eo.points = cn.integer("points", 10);
  eo.pairs = cn.integer("pairs", 1000);
  if (eo.samples < 2) throw ConfigError(cn.at("samples"), "must be >= 2");
  if (eo.points < 1) throw ConfigError(cn.at("points"), "must be >= 1");
  if (eo.pairs < 0) throw ConfigError(cn.at("pairs"), "must be >= 0");
  ConstantBundle ana;
  try {
    ana = analytic_constants(built.problem, gamma, universal_from(cn));
  } catch (const std::invalid_argument& e) {
    throw ConfigError("/problem", e.what());
  }
  GaussianStream rng(derive_seed(cfg.run.master_seed, 0, StreamKind::aux));
  const ConstantBundle emp = empirical_constants(built.problem, gamma, rng, eo);
  const auto rows = dominance(emp, ana);

  ExperimentReport rep;
  rep.columns = {"constant", "empirical", "se", "analytic", "pass"};
  json verdict = json::object();
  for (const auto& r : rows) {
    rep.rows.push_back({r.name, r.empirical, r.se, r.analytic, r.pass});
    verdict[r.name] = r.pass;
  }
  const Eigen::Index d = problem_dim(built.problem);
  const double radius = cn.number("coercivity_radius", 10.0 * std::max(1.0, gamma));
  const std::int64_t cpts = cn.integer("coercivity_points", 1000);
  const CoercivityReport co = std::visit(
      [&](const auto& q) { return coercivity_check(q, ana.c7, ana.D7, radius, cpts, rng); }, built.problem);
  json violations = json::array();
  for (const auto& v : ana.invariant_violations(d)) violations.push_back(v);
  rep.summary = {{"experiment", "estimate_constants"},
                 {"analytic", to_json(ana)},
                 {"empirical", to_json(emp)},
                 {"dominance", verdict},
                 {"all_dominated", all_pass(rows)},
                 {"coercivity",
                  {{"min_radius", co.min_radius},
                   {"points", co.points},
                   {"required_D7", co.required_D7},
                   {"analytic_D7", ana.D7},
                   {"pass", co.pass}}},
                 {"analytic_invariant_violations", violations}};
  rep.resolved = cfg.document;
  rep.resolved["resolved"] = {{"problem", built.resolved}, {"gamma", gamma}};
  return rep;
}

// ---------------------------------------------------------------------------

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.experiment) {
    case Experiment::hitting_fosp:
    case Experiment::hitting_sosp: return run_hitting(cfg);
    case Experiment::escape: return run_escape(cfg);
    case Experiment::ergodicity: return run_ergodicity(cfg);
    case Experiment::check_bounds: return run_check_bounds(cfg);
    case Experiment::estimate_constants: return run_estimate_constants(cfg);
  }
  throw std::logic_error("unknown experiment");
}

/// The experiments a CLI subcommand accepts.
inline bool subcommand_accepts(const std::string& sub, Experiment e) {
  if (sub == "run-hitting") return e == Experiment::hitting_fosp || e == Experiment::hitting_sosp;
  if (sub == "run-escape") return e == Experiment::escape;
  if (sub == "run-ergodicity") return e == Experiment::ergodicity;
  if (sub == "check-bounds") return e == Experiment::check_bounds;
  if (sub == "estimate-constants") return e == Experiment::estimate_constants;
  return false;
}

}  // namespace langevin::harness
