#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "langevin/harness/runner.hpp"

using namespace langevin;
using namespace langevin::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("langevin_harness_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Runs the CLI and returns its exit status.
int lab(const std::string& args) {
  const std::string cmd = std::string(LANGEVIN_LAB_EXE) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
};

Csv read_csv(const fs::path& p) {
  Csv out;
  std::ifstream in(p);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  std::getline(in, line);
  out.header = split(line);
  while (std::getline(in, line)) {
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < out.header.size(); ++i) row[out.header[i]] = i < cells.size() ? cells[i] : "";
    out.rows.push_back(std::move(row));
  }
  return out;
}

double type7(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

json small_escape(double delta0) {
  return {{"experiment", "escape"},
          {"replicas", 16},
          {"master_seed", 3},
          {"problem", {{"type", "quadratic_saddle"}, {"eigenvalues", {-0.5, 0.5}}}},
          {"dynamics", {{"method", "SGLD"}, {"delta0", delta0}, {"eta0", 0.01}, {"alpha", 0}}},
          {"escape", {{"horizon", "ou"}}}};
}

json small_hitting() {
  return {{"experiment", "hitting_fosp"},
          {"replicas", 30},
          {"master_seed", 9},
          {"problem", {{"type", "linear_regression"}, {"dim", 3}, {"spectrum", "flat"}, {"x_star", {1.0, -1.0, 0.5}}}},
          {"dynamics", {{"method", "SGLD"}, {"delta0", 0.1}, {"eta0", 0.05}, {"alpha", 0}, {"max_iters", 400}}},
          {"region", {{"kind", "FOSP"}, {"epsilon", 0.3}}}};
}

ExperimentConfig parsed(const json& doc) { return parse_config(doc); }

std::string config_error_path(const json& doc) {
  try {
    run_experiment(parse_config(doc));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, RejectsMalformedDocumentsWithFieldPaths) {
  json doc = small_hitting();
  doc["experiment"] = "hitting_third_order";
  EXPECT_NE(config_error_path(doc).find("/experiment"), std::string::npos);

  doc = small_hitting();
  doc["bogus"] = 1;
  EXPECT_NE(config_error_path(doc).find("bogus"), std::string::npos);

  doc = small_hitting();
  doc["problem"]["x_star"] = {1.0, 2.0};
  EXPECT_NE(config_error_path(doc).find("/problem/x_star"), std::string::npos);

  doc = small_hitting();
  doc["region"]["epsilon"] = -0.1;
  EXPECT_NE(config_error_path(doc).find("/region/epsilon"), std::string::npos);

  doc = small_hitting();
  doc["replicas"] = 0;
  EXPECT_NE(config_error_path(doc).find("/replicas"), std::string::npos);

  doc = small_escape(0.1);
  doc["problem"]["eigenvalues"] = {0.5, 0.5};
  EXPECT_FALSE(config_error_path(doc).empty());
}

TEST(Config, CommandLineOverridesAreEchoed) {
  const auto cfg = parse_config(small_hitting(), 77u, 5, 2u);
  EXPECT_EQ(cfg.run.master_seed, 77u);
  EXPECT_EQ(cfg.run.replicas, 5);
  EXPECT_EQ(cfg.run.threads, 2u);
  EXPECT_EQ(cfg.document["master_seed"], 77u);
  EXPECT_EQ(cfg.document["replicas"], 5);
}

TEST(Config, SubcommandMatching) {
  EXPECT_TRUE(subcommand_accepts("run-hitting", Experiment::hitting_fosp));
  EXPECT_TRUE(subcommand_accepts("run-hitting", Experiment::hitting_sosp));
  EXPECT_TRUE(subcommand_accepts("run-escape", Experiment::escape));
  EXPECT_FALSE(subcommand_accepts("run-escape", Experiment::ergodicity));
  EXPECT_FALSE(subcommand_accepts("check-bounds", Experiment::estimate_constants));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit");
  EXPECT_EQ(lab("run-hitting --config " + (dir / "missing.json").string()), 2);

  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(lab("run-hitting --config " + (dir / "broken.json").string()), 2);

  const fs::path esc = write_config(dir, small_escape(0.1));
  EXPECT_EQ(lab("run-hitting --config " + esc.string()), 2);
  EXPECT_EQ(lab("run-escape --config " + esc.string() + " --replicas 0"), 2);
  EXPECT_EQ(lab("run-escape"), 2);

  EXPECT_EQ(lab("run-escape --config " + esc.string() + " --out " + (dir / "ok").string()), 0);
  for (const char* f : {"records.csv", "summary.json", "resolved_config.json"})
    EXPECT_TRUE(fs::exists(dir / "ok" / f)) << f;
}

TEST(Cli, DivergenceExitCode) {
  const fs::path dir = scratch("diverge");
  json doc = {{"experiment", "hitting_fosp"},
              {"replicas", 10},
              {"problem", {{"type", "scalar_quadratic"}, {"x0", {1.0}}}},
              {"dynamics", {{"method", "SGD"}, {"delta0", 0.0}, {"eta0", 3.0}, {"alpha", 0}, {"max_iters", 1000}}},
              {"region", {{"kind", "FOSP"}, {"epsilon", 1e-6}}}};
  const fs::path cfg = write_config(dir, doc);
  EXPECT_EQ(lab("run-hitting --config " + cfg.string() + " --out " + (dir / "out").string()), 3);
  const json s = json::parse(slurp(dir / "out" / "summary.json"));
  EXPECT_DOUBLE_EQ(s["divergence_fraction"].get<double>(), 1.0);
}

TEST(Cli, SeededOutputIsBitIdentical) {
  const fs::path dir = scratch("bits");
  const fs::path cfg = write_config(dir, small_escape(0.1));
  ASSERT_EQ(lab("run-escape --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(lab("run-escape --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
  ASSERT_EQ(lab("run-escape --config " + cfg.string() + " --threads 3 --out " + (dir / "c").string()), 0);
  ASSERT_EQ(lab("run-escape --config " + cfg.string() + " --seed 4 --out " + (dir / "d").string()), 0);
  for (const char* f : {"records.csv", "summary.json", "resolved_config.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  for (const char* f : {"records.csv", "summary.json"}) EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "c" / f)) << f;
  EXPECT_NE(slurp(dir / "a" / "records.csv"), slurp(dir / "d" / "records.csv"));
}

TEST(Report, HittingSummaryRecomputesFromRecords) {
  const fs::path dir = scratch("hitting");
  json doc = small_hitting();
  doc["sweep"] = {{"parameter", "epsilon"}, {"values", {0.3, 0.6}}};
  const auto rep = run_experiment(parsed(doc));
  write_report(rep, dir);
  const Csv csv = read_csv(dir / "records.csv");
  const json s = json::parse(slurp(dir / "summary.json"));
  ASSERT_EQ(csv.rows.size(), 60u);
  for (const json& pt : s["points"]) {
    const double v = pt["sweep_value"].get<double>();
    std::vector<double> taus;
    std::int64_t censored = 0;
    for (const auto& r : csv.rows) {
      if (std::stod(r.at("sweep_value")) != v) continue;
      const double tau = std::stod(r.at("tau"));
      const bool c = r.at("censored") == "1";
      censored += c;
      EXPECT_EQ(c, tau < 0);
      taus.push_back(c ? std::numeric_limits<double>::infinity() : tau);
    }
    ASSERT_EQ(taus.size(), 30u);
    EXPECT_EQ(pt["censored"].get<std::int64_t>(), censored);
    for (auto [key, q] : {std::pair{"median_tau", 0.5}, {"q10_tau", 0.1}, {"q90_tau", 0.9}}) {
      const double want = type7(taus, q);
      if (std::isfinite(want)) EXPECT_DOUBLE_EQ(pt[key].get<double>(), want) << key;
      else EXPECT_TRUE(pt[key].is_null()) << key;
    }
  }
}

TEST(Report, EscapeSummaryRecomputesFromRecords) {
  const fs::path dir = scratch("escape");
  write_report(run_experiment(parsed(small_escape(0.2))), dir);
  const Csv csv = read_csv(dir / "records.csv");
  const json s = json::parse(slurp(dir / "summary.json"));
  double sum = 0.0, maxd = 0.0;
  for (const auto& r : csv.rows) {
    sum += std::stod(r.at("final_loss"));
    maxd = std::max(maxd, std::stod(r.at("displacement")));
  }
  EXPECT_NEAR(s["final_loss"]["mean"].get<double>(), sum / csv.rows.size(), 1e-15);
  EXPECT_DOUBLE_EQ(s["max_displacement"].get<double>(), maxd);
  EXPECT_EQ(s["final_loss"]["n"].get<std::size_t>(), csv.rows.size());
}

TEST(Report, ErgodicitySummaryRecomputesFromRecords) {
  const fs::path dir = scratch("ergodic");
  json doc = {{"experiment", "ergodicity"},
              {"replicas", 40},
              {"master_seed", 2},
              {"problem", {{"type", "scalar_quadratic"}, {"x0", "zero"}}},
              {"dynamics", {{"delta0", 1.0}, {"eta0", 0.5}, {"alpha", 0.6}, {"methods", {"SGLD", "PGD"}}}},
              {"ergodicity", {{"z0", {1.0}}, {"epsilon", 0.2}, {"budget", 2000}, {"checkpoints", {50, 500}}}}};
  write_report(run_experiment(parsed(doc)), dir);
  const Csv csv = read_csv(dir / "records.csv");
  const json s = json::parse(slurp(dir / "summary.json"));
  for (const json& m : s["methods"]) {
    const std::string name = m["method"];
    std::int64_t hits = 0, n = 0;
    std::vector<double> x500;
    for (const auto& r : csv.rows) {
      if (r.at("method") != name) continue;
      ++n;
      hits += std::stoll(r.at("first_visit")) >= 0;
      x500.push_back(std::stod(r.at("x_at_500")));
    }
    EXPECT_EQ(n, 40);
    EXPECT_EQ(m["hits"].get<std::int64_t>(), hits);
    EXPECT_DOUBLE_EQ(m["hit_fraction"].get<double>(), static_cast<double>(hits) / 40.0);
    double mean = 0.0, ss = 0.0;
    for (double x : x500) mean += x / 40.0;
    for (double x : x500) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(m["variance"][1]["variance"].get<double>(), ss / 39.0, 1e-12);
  }
}

TEST(Escape, ZeroVolatilityNeverLeavesSaddle) {
  const auto rep = run_experiment(parsed(small_escape(0.0)));
  EXPECT_EQ(rep.summary["max_displacement"].get<double>(), 0.0);
  for (const auto& row : rep.rows) EXPECT_EQ(row[2].get<double>(), 0.0);

  Matrix h(3, 3);
  h << -1.0, 0.2, 0.0, 0.2, 0.3, 0.0, 0.0, 0.0, 0.5;
  const auto r = run_escape_experiment(h, 0.0, StepSchedule(0.01, 0.3), 10);
  for (double d : r.displacement) EXPECT_EQ(d, 0.0);
}

TEST(Escape, ReportsHorizonAndPrediction) {
  const auto rep = run_experiment(parsed(small_escape(0.1)));
  const json& s = rep.summary;
  EXPECT_NEAR(s["t_star"].get<double>(), std::log(4.0) / 2.0, 1e-15);
  EXPECT_GE(s["mass"].get<double>(), s["target_mass"].get<double>() * (1 - 1e-12));
  EXPECT_LE(s["mass"].get<double>(), s["target_mass"].get<double>() + 0.01);
  Matrix h(2, 2);
  h << -0.5, 0.0, 0.0, 0.5;
  EXPECT_DOUBLE_EQ(s["ou_prediction"].get<double>(), ou_expected_loss(h, 0.1, s["mass"].get<double>()));
}

TEST(Hitting, TheoremParametersAreEchoed) {
  json doc = {{"experiment", "hitting_fosp"},
              {"replicas", 4},
              {"problem", {{"type", "linear_regression"}, {"dim", 2}, {"spectrum", "flat"}, {"x_star", {1.0, 0.0}}}},
              {"dynamics", {{"method", "SGLD"}, {"delta0", "theorem"}, {"eta0", "theorem"}, {"alpha", 0},
                            {"max_iters", "theorem"}}},
              {"region", {{"kind", "FOSP"}, {"epsilon", 0.5}}},
              {"theory", {{"rho", 0.3}}}};
  const auto rep = run_experiment(parsed(doc));
  const json& pt = rep.summary["points"][0];
  const AnyProblem lr = LinearRegression(Matrix::Identity(2, 2), Vector::Unit(2, 0));
  const ConstantBundle c = analytic_constants(lr, 1.0);
  FospBoundInputs in;
  in.F0 = 1.0;
  in.C2 = c.C2;
  in.B1 = c.B1;
  in.eps = 0.5;
  in.rho = 0.3;
  in.d = 2;
  in.eta0 = 1.0;
  const auto b0 = fosp_bound(in);
  EXPECT_DOUBLE_EQ(pt["delta0"].get<double>(), b0.delta0_max);
  EXPECT_DOUBLE_EQ(pt["eta0"].get<double>(), b0.eta0_max);
  in.eta0 = b0.eta0_max;
  EXPECT_NEAR(pt["N"].get<double>(), fosp_bound(in).N, 1e-9 * fosp_bound(in).N);
  EXPECT_TRUE(pt.contains("exceedance_at_N"));
}

TEST(CheckBounds, ShippedConfigRunsClean) {
  const fs::path dir = scratch("bounds");
  ASSERT_EQ(lab("check-bounds --config " + std::string(CONFIG_DIR) + "/check_bounds.json --out " + dir.string()), 0);
  const json s = json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(s["hbounds"]["all_pass_count"], s["hbounds"]["instances"]);
}
