#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "langevin/dynamics.hpp"
#include "langevin/linalg.hpp"
#include "langevin/parallel.hpp"
#include "langevin/problems.hpp"

namespace langevin {

enum class RegionKind { FOSP, SOSP };

/// FOSP: ||grad F|| <= epsilon.  SOSP: additionally lambda_min(hess F) >= -lambda_eps.
struct RegionSpec {
  RegionKind kind = RegionKind::FOSP;
  double epsilon = 0.0;
  double lambda_eps = 0.0;

  void validate() const {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("RegionSpec: epsilon must be >= 0");
    if (kind == RegionKind::SOSP && !(lambda_eps > 0.0))
      throw std::invalid_argument("RegionSpec: SOSP requires lambda_eps > 0");
  }
};

inline constexpr Eigen::Index kDenseEigenLimit = 512;

struct PowerOptions {
  double tolerance = 1e-8;
  int max_iterations = 10000;
  std::uint64_t seed = 0x5eed;
};

/// Smallest eigenvalue by power iteration on c I - H, where c is the
/// Gershgorin upper bound of the spectrum.
inline double min_eig_power(const Matrix& h, const PowerOptions& opts = {}) {
  const Eigen::Index n = h.rows();
  double c = -std::numeric_limits<double>::infinity();
  double spread = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double radius = h.row(i).cwiseAbs().sum() - std::abs(h(i, i));
    c = std::max(c, h(i, i) + radius);
    spread = std::max(spread, std::abs(h(i, i)) + radius);
  }
  const Matrix shifted = c * Matrix::Identity(n, n) - h;
  GaussianStream rng(opts.seed);
  Vector v = rng.vector(n).normalized();
  Vector w(n);
  double mu = 0.0;
  const double scale = std::max(spread, 1e-300);
  for (int it = 0; it < opts.max_iterations; ++it) {
    w.noalias() = shifted * v;
    mu = v.dot(w);
    const double residual = (w - mu * v).norm();
    const double wn = w.norm();
    if (wn == 0.0) break;  // H = c I
    v = w / wn;
    if (residual <= opts.tolerance * scale) break;
  }
  return c - mu;
}

/// Smallest eigenvalue of a symmetric matrix; asymmetry beyond
/// 1e-10 * max|H_ij| is rejected.
inline double min_eig(const Matrix& h) {
  linalg::require_square(h, "min_eig");
  const double scale = h.cwiseAbs().maxCoeff();
  if (linalg::asymmetry(h) > 1e-10 * std::max(scale, 1e-300) && scale > 0.0)
    throw std::invalid_argument("min_eig: matrix is not symmetric");
  if (h.rows() <= kDenseEigenLimit) return linalg::eigenvalues(h).minCoeff();
  return min_eig_power(0.5 * (h + h.transpose()));
}

template <Objective P>
bool is_fosp(const P& p, const Vector& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("is_fosp: eps must be positive");
  return grad(p, x).norm() <= eps;
}

template <Objective P>
bool is_sosp(const P& p, const Vector& x, const RegionSpec& spec) {
  if (spec.kind != RegionKind::SOSP) throw std::invalid_argument("is_sosp: spec must be SOSP");
  spec.validate();
  if (grad(p, x).norm() > spec.epsilon) return false;
  return min_eig(hessian(p, x)) >= -spec.lambda_eps;
}

/// Region membership on population quantities; epsilon = 0 is allowed here
/// (it only matches exact stationary points).
template <Objective P>
class RegionTest {
 public:
  RegionTest(const P& p, const RegionSpec& spec) : p_(p), spec_(spec), g_(p.dim()) {
    spec_.validate();
  }
  bool operator()(const Vector& x) {
    p_.grad_into(x, g_);
    if (g_.norm() > spec_.epsilon) return false;
    if (spec_.kind == RegionKind::FOSP) return true;
    return min_eig(p_.hessian(x)) >= -spec_.lambda_eps;
  }

 private:
  const P& p_;
  RegionSpec spec_;
  Vector g_;
};

struct HittingRecord {
  std::int64_t replica = 0;
  std::optional<std::int64_t> tau;  // nullopt = censored
  std::int64_t budget = 0;
  std::optional<Vector> witness;
  bool diverged = false;
  std::string error;

  bool censored() const { return !tau.has_value(); }
};

struct HittingOptions {
  std::int64_t check_every = 1;
  unsigned threads = 1;
  /// Hits before this index are ignored (the region test still runs).
  std::int64_t count_after = 0;
  bool keep_witness = true;
};

/// Default grid spacing for region checks.
inline std::int64_t default_check_every(Eigen::Index dim) { return dim <= 64 ? 1 : 10; }

/// First checked iteration in the region for each replica. Replica i uses
/// the streams derived from (cfg.seed, i); results are keyed by replica.
template <Objective P>
std::vector<HittingRecord> measure_hitting(const P& p, const DynamicsConfig& cfg,
                                           const RegionSpec& spec, const Vector& x0,
                                           std::int64_t replicas, const HittingOptions& opts = {}) {
  if (replicas < 1) throw std::invalid_argument("measure_hitting: replicas must be >= 1");
  if (opts.check_every < 1) throw std::invalid_argument("measure_hitting: check_every must be >= 1");
  spec.validate();
  detail::check_dim(p.dim(), x0, "measure_hitting");
  std::vector<HittingRecord> out(static_cast<std::size_t>(replicas));
  parallel_for(out.size(), opts.threads, [&](std::size_t i) {
    HittingRecord rec;
    rec.replica = static_cast<std::int64_t>(i);
    rec.budget = cfg.max_iters;
    ReplicaStreams streams = ReplicaStreams::for_replica(cfg.seed, i);
    RegionTest<P> in_region(p, spec);
    auto stop = [&](const Vector& x, std::int64_t n) {
      if (n % opts.check_every != 0 || n < opts.count_after) return false;
      return in_region(x);
    };
    RunOptions ro;
    ro.thin = -1;
    ro.store_iterates = false;
    try {
      Trajectory t = run(p, cfg, x0, stop, streams, ro);
      if (t.stop_reason == StopReason::region_hit) {
        rec.tau = t.final_index;
        if (opts.keep_witness) rec.witness = t.final_iterate;
      } else if (t.stop_reason == StopReason::radius_exceeded) {
        rec.diverged = true;
        rec.error = "iterate norm exceeded the divergence radius at iteration " +
                    std::to_string(t.final_index);
      }
    } catch (const DivergenceError& e) {
      rec.diverged = true;
      rec.error = e.what();
    }
    out[i] = std::move(rec);
  });
  return out;
}

/// Empirical P(tau >= n): censored and diverged replicas count as late.
inline double exceedance(const std::vector<HittingRecord>& records, std::int64_t n) {
  if (records.empty()) return 0.0;
  std::size_t late = 0;
  for (const auto& r : records)
    if (!r.tau || *r.tau >= n) ++late;
  return static_cast<double>(late) / static_cast<double>(records.size());
}

/// Quantile of tau with censored replicas treated as +infinity; nullopt
/// when the quantile falls among censored replicas.
inline std::optional<double> tau_quantile(const std::vector<HittingRecord>& records, double q) {
  if (records.empty()) return std::nullopt;
  std::vector<double> taus;
  taus.reserve(records.size());
  for (const auto& r : records)
    taus.push_back(r.tau ? static_cast<double>(*r.tau) : std::numeric_limits<double>::infinity());
  std::sort(taus.begin(), taus.end());
  // Type-7 interpolation.
  const double h = q * static_cast<double>(taus.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, taus.size() - 1);
  const double a = taus[lo], b = taus[hi];
  if (!std::isfinite(a) || !std::isfinite(b)) {
    if (std::isfinite(a) && h == static_cast<double>(lo)) return a;
    return std::nullopt;
  }
  return a + (h - static_cast<double>(lo)) * (b - a);
}

}  // namespace langevin
