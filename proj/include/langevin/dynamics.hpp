#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "langevin/problems.hpp"
#include "langevin/rng.hpp"
#include "langevin/schedule.hpp"

namespace langevin {

/// SGLD: stochastic gradient, noise delta0 * sqrt(eta).
/// SGD:  SGLD with delta0 = 0.
/// ULA:  population gradient, noise delta0 * sqrt(eta).
/// PGD:  population gradient, noise delta0 * eta.
enum class Method { SGLD, SGD, ULA, PGD };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::SGLD: return "SGLD";
    case Method::SGD: return "SGD";
    case Method::ULA: return "ULA";
    case Method::PGD: return "PGD";
  }
  throw std::invalid_argument("unknown method");
}

inline Method parse_method(std::string_view s) {
  if (s == "SGLD" || s == "sgld") return Method::SGLD;
  if (s == "SGD" || s == "sgd") return Method::SGD;
  if (s == "ULA" || s == "ula") return Method::ULA;
  if (s == "PGD" || s == "pgd") return Method::PGD;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

struct DynamicsConfig {
  Method method = Method::SGLD;
  double delta0 = 0.0;
  StepSchedule schedule{0.01, 0.0};
  std::int64_t max_iters = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(delta0 >= 0.0) || !std::isfinite(delta0))
      throw std::invalid_argument("DynamicsConfig: delta0 must be >= 0");
    if (max_iters < 0) throw std::invalid_argument("DynamicsConfig: max_iters must be >= 0");
  }
};

/// Thrown when an iterate stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::int64_t index, const std::string& what)
      : std::runtime_error(what), index_(index) {}
  std::int64_t index() const { return index_; }

 private:
  std::int64_t index_;
};

/// One-step update X_n -> X_{n+1} with reusable scratch storage.
template <Objective P>
class Stepper {
 public:
  Stepper(const P& problem, const DynamicsConfig& cfg)
      : problem_(problem), cfg_(cfg), grad_(problem.dim()) {
    cfg_.validate();
  }

  /// Reads steps from `table` where it covers the index. The table must
  /// outlive the stepper and come from the same schedule.
  void use_table(const StepTable* table) { table_ = table; }

  /// In-place update using eta_{n+1}.
  void advance(Vector& x, std::int64_t n, ReplicaStreams& streams) {
    const bool cached = table_ && n + 1 <= table_->size();
    const double eta = cached ? table_->eta(n + 1) : cfg_.schedule.step_at(n + 1);
    switch (cfg_.method) {
      case Method::SGLD:
      case Method::SGD: problem_.sample_grad_into(x, streams.data, grad_); break;
      case Method::ULA:
      case Method::PGD: problem_.grad_into(x, grad_); break;
    }
    double scale = 0.0;
    switch (cfg_.method) {
      case Method::SGLD:
      case Method::ULA: scale = cfg_.delta0 * (cached ? table_->root(n + 1) : std::sqrt(eta)); break;
      case Method::PGD: scale = cfg_.delta0 * eta; break;
      case Method::SGD: scale = 0.0; break;
    }
    // One fused pass; draws stay in coordinate order.
    double* xi = x.data();
    const double* gi = grad_.data();
    if (scale != 0.0) {
      for (Eigen::Index i = 0; i < x.size(); ++i) xi[i] = (xi[i] - eta * gi[i]) + scale * streams.injection.next();
    } else {
      for (Eigen::Index i = 0; i < x.size(); ++i) xi[i] -= eta * gi[i];
    }
  }

  const DynamicsConfig& config() const { return cfg_; }

 private:
  const P& problem_;
  DynamicsConfig cfg_;
  Vector grad_;
  const StepTable* table_ = nullptr;
};

/// X_{n+1} from X_n under cfg.method (the method argument overrides cfg).
template <Objective P>
Vector step(Method method, const P& p, const Vector& x, std::int64_t n, const DynamicsConfig& cfg,
            ReplicaStreams& streams) {
  detail::check_dim(p.dim(), x, "step");
  if (n < 0) throw std::invalid_argument("step: n must be >= 0");
  DynamicsConfig c = cfg;
  c.method = method;
  Stepper<P> stepper(p, c);
  Vector out = x;
  stepper.advance(out, n, streams);
  return out;
}

enum class StopReason { budget, region_hit, radius_exceeded };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::budget: return "budget";
    case StopReason::region_hit: return "region_hit";
    case StopReason::radius_exceeded: return "radius_exceeded";
  }
  return "unknown";
}

struct Trajectory {
  std::vector<std::int64_t> indices;  // iteration index of each stored record
  std::vector<Vector> iterates;       // empty unless store_iterates
  std::vector<double> losses;
  std::vector<double> grad_norms;
  StopReason stop_reason = StopReason::budget;
  std::int64_t final_index = 0;
  Vector final_iterate;
};

struct RunOptions {
  /// Record diagnostics every `thin` iterations; 0 picks max(1, max_iters / 10^4),
  /// negative disables recording.
  std::int64_t thin = 0;
  bool store_iterates = true;
  /// Abort with radius_exceeded once ||x|| > factor * (1 + ||x0||).
  double divergence_factor = 1e6;
};

/// Runs the dynamics from x0 until stop(x, n) fires or cfg.max_iters is
/// reached. The predicate is evaluated at n = 0 before any step.
template <Objective P, class Stop>
Trajectory run(const P& p, const DynamicsConfig& cfg, const Vector& x0, Stop&& stop,
               ReplicaStreams& streams, const RunOptions& opts = {}) {
  detail::check_dim(p.dim(), x0, "run");
  cfg.validate();
  Stepper<P> stepper(p, cfg);
  Trajectory traj;

  std::int64_t thin = opts.thin;
  if (thin == 0) thin = std::max<std::int64_t>(1, cfg.max_iters / 10000);
  const bool record = thin > 0;
  const double radius = opts.divergence_factor * (1.0 + x0.norm());

  Vector x = x0;
  Vector g(p.dim());
  auto record_at = [&](std::int64_t n) {
    if (!record || n % thin != 0) return;
    p.grad_into(x, g);
    traj.indices.push_back(n);
    traj.losses.push_back(p.loss(x));
    traj.grad_norms.push_back(g.norm());
    if (opts.store_iterates) traj.iterates.push_back(x);
  };

  std::int64_t n = 0;
  record_at(0);
  traj.stop_reason = StopReason::budget;
  while (true) {
    if (stop(static_cast<const Vector&>(x), n)) {
      traj.stop_reason = StopReason::region_hit;
      break;
    }
    if (n >= cfg.max_iters) break;
    stepper.advance(x, n, streams);
    ++n;
    if (!x.allFinite())
      throw DivergenceError(n, "non-finite iterate at iteration " + std::to_string(n));
    record_at(n);
    if (x.norm() > radius) {
      traj.stop_reason = StopReason::radius_exceeded;
      break;
    }
  }
  traj.final_index = n;
  traj.final_iterate = x;
  return traj;
}

}  // namespace langevin
