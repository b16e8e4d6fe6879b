#pragma once

#include <cmath>
#include <limits>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace langevin {

using Index1 = std::int64_t;  // 1-based iteration index

/// Power-law step sizes eta_n = eta0 * n^(-alpha), n >= 1.
class StepSchedule {
 public:
  StepSchedule(double eta0, double alpha) : eta0_(eta0), alpha_(alpha) {
    if (!(eta0 > 0.0) || !std::isfinite(eta0))
      throw std::invalid_argument("StepSchedule: eta0 must be positive and finite");
    if (!(alpha >= 0.0 && alpha < 1.0))
      throw std::invalid_argument("StepSchedule: alpha must lie in [0, 1)");
  }

  double eta0() const { return eta0_; }
  double alpha() const { return alpha_; }

  double step_at(Index1 n) const {
    if (n < 1) throw std::invalid_argument("step_at: iteration index must be >= 1");
    if (alpha_ == 0.0) return eta0_;
    return eta0_ * std::pow(static_cast<double>(n), -alpha_);
  }

 private:
  double eta0_;
  double alpha_;
};

/// eta_n and sqrt(eta_n) for 1 <= n <= size, evaluated once and shared by
/// replicas. Values are bit-identical to StepSchedule::step_at.
class StepTable {
 public:
  StepTable(const StepSchedule& sched, Index1 size) {
    if (size < 0) throw std::invalid_argument("StepTable: size must be >= 0");
    eta_.resize(static_cast<std::size_t>(size));
    root_.resize(eta_.size());
    for (Index1 n = 1; n <= size; ++n) {
      eta_[static_cast<std::size_t>(n - 1)] = sched.step_at(n);
      root_[static_cast<std::size_t>(n - 1)] = std::sqrt(eta_[static_cast<std::size_t>(n - 1)]);
    }
  }

  Index1 size() const { return static_cast<Index1>(eta_.size()); }
  double eta(Index1 n) const { return eta_[static_cast<std::size_t>(n - 1)]; }
  double root(Index1 n) const { return root_[static_cast<std::size_t>(n - 1)]; }

 private:
  std::vector<double> eta_, root_;
};

struct PartialSums {
  Index1 lo = 1;
  Index1 hi = 1;
  double sum_eta = 0.0;
  double sum_eta_sq = 0.0;
};

/// Sums of eta_i and eta_i^2 over lo <= i <= hi, by direct summation in
/// increasing index order.
inline PartialSums cumulative(const StepSchedule& sched, Index1 lo, Index1 hi) {
  if (lo < 1) throw std::invalid_argument("cumulative: lo must be >= 1");
  if (lo > hi) throw std::invalid_argument("cumulative: lo > hi");
  PartialSums out{lo, hi, 0.0, 0.0};
  for (Index1 i = lo; i <= hi; ++i) {
    const double e = sched.step_at(i);
    out.sum_eta += e;
    out.sum_eta_sq += e * e;
  }
  return out;
}

/// Smallest n > o with eta_{o+1:n} >= target, where sums within a few ulps
/// of the target count as reaching it (ten steps of 0.1 reach 1). The
/// overshoot is at most one step, so eta_{o+1:n} <= target + step_at(o+1).
inline Index1 window_end(const StepSchedule& sched, Index1 o, double target) {
  if (o < 0) throw std::invalid_argument("window_end: o must be >= 0");
  if (!(target > 0.0)) throw std::invalid_argument("window_end: target must be positive");
  if (sched.step_at(o + 1) > target)
    throw std::invalid_argument("window_end: first step already exceeds target");
  const double reach = target * (1.0 - 64.0 * std::numeric_limits<double>::epsilon());
  double acc = 0.0;
  Index1 n = o;
  while (acc < reach) {
    ++n;
    acc += sched.step_at(n);
  }
  return n;
}

/// Prefix arrays of eta and eta^2 up to a fixed budget; entry k holds the
/// direct sum over 1..k, so repeated window queries are O(1).
class PrefixSums {
 public:
  PrefixSums(const StepSchedule& sched, Index1 budget)
      : sum_(static_cast<std::size_t>(budget) + 1, 0.0),
        sum_sq_(static_cast<std::size_t>(budget) + 1, 0.0) {
    if (budget < 0) throw std::invalid_argument("PrefixSums: negative budget");
    for (Index1 i = 1; i <= budget; ++i) {
      const double e = sched.step_at(i);
      sum_[i] = sum_[i - 1] + e;
      sum_sq_[i] = sum_sq_[i - 1] + e * e;
    }
  }

  Index1 budget() const { return static_cast<Index1>(sum_.size()) - 1; }

  /// eta_{1:n}; n = 0 gives 0.
  double head(Index1 n) const { return sum_.at(static_cast<std::size_t>(n)); }
  double head_sq(Index1 n) const { return sum_sq_.at(static_cast<std::size_t>(n)); }

  /// eta_{lo:hi} as a difference of prefixes.
  double range(Index1 lo, Index1 hi) const {
    if (lo < 1 || lo > hi) throw std::invalid_argument("PrefixSums::range: bad window");
    return head(hi) - head(lo - 1);
  }

 private:
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
};

}  // namespace langevin
