#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>
#include <boost/random/normal_distribution.hpp>

namespace langevin {

/// SplitMix64 finalizer. Used only to derive independent engine seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Which random stream of a replica is being seeded. Injection noise and
/// data sampling never share an engine, so methods that do and do not
/// sample data still see the same injection sequence.
enum class StreamKind : std::uint64_t { injection = 1, data = 2, init = 3, aux = 4 };

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t replica,
                                 StreamKind kind) {
  std::uint64_t s = splitmix64(master);
  s = splitmix64(s ^ (replica + 0x632be59bd9b4e019ULL));
  return splitmix64(s ^ static_cast<std::uint64_t>(kind));
}

/// A seeded source of standard normal (and uniform) draws.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : engine_(seed) {}

  double next() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  /// Fills any dense Eigen expression column by column.
  template <class Derived>
  void fill(Eigen::DenseBase<Derived>& out) {
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal_(engine_);
  }

  Eigen::VectorXd vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    fill(v);
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  // Ziggurat sampler; about twice as fast as the polar method in std.
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// The two streams owned by one replica of a dynamics run.
struct ReplicaStreams {
  GaussianStream injection;
  GaussianStream data;

  static ReplicaStreams for_replica(std::uint64_t seed, std::uint64_t replica) {
    return ReplicaStreams{GaussianStream(derive_seed(seed, replica, StreamKind::injection)),
                          GaussianStream(derive_seed(seed, replica, StreamKind::data))};
  }
};

}  // namespace langevin
