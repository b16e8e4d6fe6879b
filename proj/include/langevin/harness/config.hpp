#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "langevin/constants.hpp"
#include "langevin/dynamics.hpp"
#include "langevin/linalg.hpp"
#include "langevin/problems.hpp"
#include "langevin/stationarity.hpp"

namespace langevin::harness {

using json = nlohmann::json;

/// A configuration problem, located by a JSON-pointer-like field path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& msg)
      : std::runtime_error(path + ": " + msg), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Read-only view of a JSON object with its path, rejecting unknown keys.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return path_ + "/" + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& raw(const std::string& key) const {
    if (!has(key)) throw ConfigError(at(key), "required field is missing");
    return j_.at(key);
  }
  Node child(const std::string& key) const { return Node(raw(key), at(key)); }

  void allow_only(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) throw ConfigError(at(it.key()), "unknown field");
    }
  }

  double number(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }
  std::int64_t integer(const std::string& key) const {
    const json& v = raw(key);
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d == std::floor(d) && std::abs(d) < 9.0e18) return static_cast<std::int64_t>(d);
    }
    throw ConfigError(at(key), "expected an integer");
  }
  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    return has(key) ? integer(key) : fallback;
  }
  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
    throw ConfigError(at(key), "expected a non-negative 64-bit integer");
  }
  std::string string(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
  }
  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::vector<double> numbers(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(at(key) + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }
  Vector vector(const std::string& key) const {
    const auto v = numbers(key);
    if (v.empty()) throw ConfigError(at(key), "expected a non-empty array");
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  Matrix matrix(const std::string& key) const {
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) throw ConfigError(at(key), "expected a non-empty array of rows");
    const std::size_t n = v.size();
    Matrix m(static_cast<Eigen::Index>(n), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string p = at(key) + "/" + std::to_string(i);
      if (!v[i].is_array()) throw ConfigError(p, "expected a row array");
      if (i == 0) m.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(v[0].size()));
      if (v[i].size() != static_cast<std::size_t>(m.cols())) throw ConfigError(p, "ragged matrix row");
      for (std::size_t j = 0; j < v[i].size(); ++j) {
        if (!v[i][j].is_number()) throw ConfigError(p + "/" + std::to_string(j), "expected a number");
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j].get<double>();
      }
    }
    return m;
  }

  void positive(const std::string& key, double v) const {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(at(key), "must be positive");
  }

 private:
  const json& j_;
  std::string path_;
};

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Problems.

/// A problem together with the starting point of the dynamics.
struct BuiltProblem {
  AnyProblem problem{ScalarQuadratic{}};
  Vector x0;
  json resolved;  // fully explicit description for the report
};

namespace detail {

inline Vector spectrum_field(const Node& n, const std::string& key, Eigen::Index size,
                             const std::string& fallback) {
  try {
    if (!n.has(key)) return make_spectrum(fallback, size);
    const json& v = n.raw(key);
    if (v.is_string()) return make_spectrum(v.get<std::string>(), size);
    const Vector s = make_spectrum(n.numbers(key));
    if (s.size() != size)
      throw ConfigError(n.at(key), "expected " + std::to_string(size) + " eigenvalues");
    return s;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(n.at(key), e.what());
  }
}

/// Explicit list, or {"scale": s, "seed": k} (i.i.d. N(0, s^2) entries drawn
/// in index order, so shorter draws are prefixes of longer ones), or
/// {"norm": r, "seed": k} (a random direction of length r).
inline Vector vector_field(const Node& n, const std::string& key, Eigen::Index size) {
  const json& v = n.raw(key);
  Vector out;
  if (v.is_array()) {
    out = n.vector(key);
  } else if (v.is_string()) {
    if (v.get<std::string>() != "zero") throw ConfigError(n.at(key), "expected \"zero\", a list or an object");
    out = Vector::Zero(size);
  } else {
    const Node c = n.child(key);
    c.allow_only({"scale", "norm", "seed"});
    GaussianStream rng(c.seed("seed", 0));
    out = rng.vector(size);
    if (c.has("norm")) {
      if (c.has("scale")) throw ConfigError(c.path(), "give either scale or norm");
      out = out.normalized() * c.number("norm");
    } else {
      out *= c.number("scale", 1.0);
    }
  }
  if (out.size() != size)
    throw ConfigError(n.at(key), "expected length " + std::to_string(size) + ", got " +
                                     std::to_string(out.size()));
  return out;
}

inline Eigen::Index positive_size(const Node& n, const std::string& key) {
  const std::int64_t v = n.integer(key);
  if (v < 1) throw ConfigError(n.at(key), "must be >= 1");
  return static_cast<Eigen::Index>(v);
}

}  // namespace detail

/// Builds a problem from its config object. `dim_override` replaces the
/// dimension field (used by dimension sweeps).
inline BuiltProblem build_problem(const Node& n, std::optional<Eigen::Index> dim_override = {}) {
  const std::string type = n.string("type");
  BuiltProblem out;
  json r;
  r["type"] = type;
  try {
    if (type == "scalar_quadratic") {
      n.allow_only({"type", "x0"});
      out.problem = ScalarQuadratic{};
    } else if (type == "quadratic_saddle") {
      n.allow_only({"type", "H", "eigenvalues", "noise_cov", "noise_std", "x0"});
      Matrix h;
      if (n.has("H") == n.has("eigenvalues")) throw ConfigError(n.path(), "give exactly one of H or eigenvalues");
      if (n.has("H")) h = n.matrix("H");
      else h = n.vector("eigenvalues").asDiagonal();
      if (h.rows() != h.cols()) throw ConfigError(n.at("H"), "must be square");
      r["H"] = to_json(h);
      if (n.has("noise_cov") && n.has("noise_std"))
        throw ConfigError(n.path(), "give at most one of noise_cov or noise_std");
      if (n.has("noise_cov") || n.has("noise_std")) {
        Matrix cov;
        if (n.has("noise_cov")) {
          cov = n.matrix("noise_cov");
        } else {
          const double s = n.number("noise_std");
          if (!(s >= 0.0)) throw ConfigError(n.at("noise_std"), "must be >= 0");
          cov = s * s * Matrix::Identity(h.rows(), h.rows());
        }
        r["noise_cov"] = to_json(cov);
        out.problem = QuadraticSaddle(h, cov);
      } else {
        out.problem = QuadraticSaddle(h);
      }
    } else if (type == "linear_regression") {
      n.allow_only({"type", "dim", "spectrum", "rotation_seed", "x_star", "x0"});
      const Eigen::Index d = dim_override.value_or(detail::positive_size(n, "dim"));
      const Vector s = detail::spectrum_field(n, "spectrum", d, "flat");
      Matrix a = s.asDiagonal();
      if (n.has("rotation_seed")) {
        GaussianStream rng(n.seed("rotation_seed", 0));
        const Matrix q = linalg::random_orthonormal(d, d, rng);
        a = q * s.asDiagonal() * q.transpose();
        a = 0.5 * (a + a.transpose());
      }
      const Vector xs = n.has("x_star") ? detail::vector_field(n, "x_star", d) : Vector::Zero(d);
      r["dim"] = d;
      r["spectrum"] = to_json(s);
      r["A"] = to_json(a);
      r["x_star"] = to_json(xs);
      out.problem = LinearRegression(a, xs);
    } else if (type == "matrix_factorization" || type == "online_pca") {
      n.allow_only({"type", "m", "rank", "spectrum", "seed", "x0"});
      const Eigen::Index m = dim_override.value_or(detail::positive_size(n, "m"));
      const Eigen::Index rank = detail::positive_size(n, "rank");
      if (rank > m) throw ConfigError(n.at("rank"), "must be <= m");
      GaussianStream rng(n.seed("seed", 0));
      Matrix target;
      if (type == "matrix_factorization") {
        const Vector s = detail::spectrum_field(n, "spectrum", rank, "flat");
        const Matrix u = linalg::random_orthonormal(m, rank, rng);
        target = u * s.asDiagonal() * u.transpose();
        r["spectrum"] = to_json(s);
      } else {
        const Vector s = detail::spectrum_field(n, "spectrum", m, "flat");
        const Matrix q = linalg::random_orthonormal(m, m, rng);
        target = q * s.asDiagonal() * q.transpose();
        r["spectrum"] = to_json(s);
      }
      target = 0.5 * (target + target.transpose());
      r["m"] = m;
      r["rank"] = rank;
      r["M"] = to_json(target);
      if (type == "matrix_factorization") out.problem = MatrixFactorization(target, rank);
      else out.problem = OnlinePCA(target, rank);
    } else {
      throw ConfigError(n.at("type"), "unknown problem type '" + type + "'");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(n.path(), e.what());
  }
  const Eigen::Index d = problem_dim(out.problem);
  out.x0 = n.has("x0") ? detail::vector_field(n, "x0", d) : Vector::Zero(d);
  r["x0"] = to_json(out.x0);
  out.resolved = std::move(r);
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration.

enum class Experiment { hitting_fosp, hitting_sosp, escape, ergodicity, check_bounds, estimate_constants };

inline Experiment parse_experiment(const std::string& s, const std::string& path) {
  if (s == "hitting_fosp") return Experiment::hitting_fosp;
  if (s == "hitting_sosp") return Experiment::hitting_sosp;
  if (s == "escape") return Experiment::escape;
  if (s == "ergodicity") return Experiment::ergodicity;
  if (s == "check_bounds") return Experiment::check_bounds;
  if (s == "estimate_constants") return Experiment::estimate_constants;
  throw ConfigError(path, "unknown experiment '" + s + "'");
}

inline std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::hitting_fosp: return "hitting_fosp";
    case Experiment::hitting_sosp: return "hitting_sosp";
    case Experiment::escape: return "escape";
    case Experiment::ergodicity: return "ergodicity";
    case Experiment::check_bounds: return "check_bounds";
    case Experiment::estimate_constants: return "estimate_constants";
  }
  return "unknown";
}

/// Run-wide settings that command-line flags may override.
struct RunSettings {
  std::int64_t replicas = 100;
  std::uint64_t master_seed = 0;
  unsigned threads = 1;
};

struct ExperimentConfig {
  json document;  // the parsed file, after command-line overrides
  Experiment experiment = Experiment::hitting_fosp;
  RunSettings run;
};

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path, std::string("invalid JSON: ") + e.what());
  }
}

inline ExperimentConfig parse_config(const json& doc, std::optional<std::uint64_t> seed = {},
                                     std::optional<std::int64_t> replicas = {},
                                     std::optional<unsigned> threads = {}) {
  const Node root(doc, "");
  root.allow_only({"experiment", "problem", "dynamics", "region", "theory", "sweep", "replicas",
                   "master_seed", "threads", "escape", "ergodicity", "bounds", "constants"});
  ExperimentConfig cfg;
  cfg.experiment = parse_experiment(root.string("experiment"), root.at("experiment"));
  cfg.run.replicas = replicas.value_or(root.integer("replicas", 100));
  if (cfg.run.replicas < 1) throw ConfigError(root.at("replicas"), "must be >= 1");
  cfg.run.master_seed = seed.value_or(root.seed("master_seed", 0));
  const std::int64_t t = threads ? static_cast<std::int64_t>(*threads) : root.integer("threads", 1);
  if (t < 0) throw ConfigError(root.at("threads"), "must be >= 0");
  cfg.run.threads = static_cast<unsigned>(t);
  cfg.document = doc;
  cfg.document["replicas"] = cfg.run.replicas;
  cfg.document["master_seed"] = cfg.run.master_seed;
  cfg.document["threads"] = cfg.run.threads;
  return cfg;
}

}  // namespace langevin::harness
