#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace langevin::harness {

using json = nlohmann::json;

/// Per-replica table plus summary and the resolved configuration.
struct ExperimentReport {
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;
  json summary = json::object();
  json resolved = json::object();
  std::int64_t replicas_total = 0;
  std::int64_t replicas_diverged = 0;

  double divergence_fraction() const {
    return replicas_total > 0
               ? static_cast<double>(replicas_diverged) / static_cast<double>(replicas_total)
               : 0.0;
  }
};

inline std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_float()) {
    std::ostringstream os;
    os.precision(17);
    os << v.get<double>();
    return os.str();
  }
  return v.dump();
}

inline std::string to_csv(const ExperimentReport& r) {
  std::string out;
  for (std::size_t i = 0; i < r.columns.size(); ++i) out += (i ? "," : "") + r.columns[i];
  out += "\n";
  for (const auto& row : r.rows) {
    if (row.size() != r.columns.size()) throw std::logic_error("report row width mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_cell(row[i]);
    out += "\n";
  }
  return out;
}

inline void write_report(const ExperimentReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto put = [&](const char* name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    f << text;
  };
  put("records.csv", to_csv(r));
  put("summary.json", r.summary.dump(2) + "\n");
  put("resolved_config.json", r.resolved.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Summary statistics.

struct MeanCI {
  double mean = 0.0;
  double sd = 0.0;
  double half_width = 0.0;  // 95% normal interval
  std::int64_t n = 0;
};

inline MeanCI mean_ci(const std::vector<double>& v) {
  MeanCI m;
  m.n = static_cast<std::int64_t>(v.size());
  if (v.empty()) return m;
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  m.half_width = 1.959963984540054 * m.sd / std::sqrt(static_cast<double>(v.size()));
  return m;
}

inline json to_json(const MeanCI& m) {
  return {{"mean", m.mean}, {"sd", m.sd}, {"ci95_half_width", m.half_width}, {"n", m.n}};
}

/// Sample variance and its standard error sqrt((m4 - s^4) / n).
struct VarianceEstimate {
  double variance = 0.0;
  double se = 0.0;
  std::int64_t n = 0;
};

inline VarianceEstimate variance_estimate(const std::vector<double>& v) {
  VarianceEstimate e;
  e.n = static_cast<std::int64_t>(v.size());
  if (v.size() < 2) return e;
  const double nn = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= nn;
  double m2 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double d2 = (x - mean) * (x - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  e.variance = m2 / (nn - 1.0);
  const double pop2 = m2 / nn;
  e.se = std::sqrt(std::max(0.0, m4 / nn - pop2 * pop2) / nn);
  return e;
}

/// Least-squares slope of log(y) against log(x), over pairs with y > 0.
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int k = 0;
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0) || !std::isfinite(y[i])) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++k;
  }
  if (k < 2) return std::numeric_limits<double>::quiet_NaN();
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

/// JSON number, or null when not finite.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace langevin::harness
