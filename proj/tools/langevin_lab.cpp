// langevin-lab: runs hitting, escape and ergodicity experiments, checks bound
// calculators and estimates assumption constants from a JSON config.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "langevin/harness/runner.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kDiverged = 3;

struct Args {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> replicas;
  std::optional<unsigned> threads;
};

int run(const std::string& sub, const Args& a) {
  using namespace langevin::harness;
  ExperimentConfig cfg;
  try {
    cfg = parse_config(load_json_file(a.config), a.seed, a.replicas, a.threads);
    if (!subcommand_accepts(sub, cfg.experiment))
      throw ConfigError("/experiment", "'" + std::string(to_string(cfg.experiment)) +
                                           "' cannot be run with " + sub);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  ExperimentReport rep;
  try {
    rep = run_experiment(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  write_report(rep, a.out);
  std::cout << rep.summary.dump(2) << "\n";
  if (rep.divergence_fraction() > 0.1) {
    std::cerr << "diverged: " << rep.replicas_diverged << " of " << rep.replicas_total << " replicas\n";
    return kDiverged;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Langevin dynamics lab"};
  app.require_subcommand(1);
  Args a;
  const char* subs[][2] = {{"run-hitting", "hitting times of first/second-order stationary regions"},
                           {"run-escape", "saddle escape of SGLD on a quadratic"},
                           {"run-ergodicity", "visits to a target ball, SGLD against PGD"},
                           {"check-bounds", "evaluate bound calculators and validators"},
                           {"estimate-constants", "analytic against empirical assumption constants"}};
  for (const auto& [name, help] : subs) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", a.config, "JSON config path")->required();
    s->add_option("--out", a.out, "output directory")->capture_default_str();
    s->add_option("--seed", a.seed, "master seed (overrides the config)");
    s->add_option("--replicas", a.replicas, "number of replicas")->check(CLI::PositiveNumber);
    s->add_option("--threads", a.threads, "worker threads")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }
  try {
    return run(app.get_subcommands().front()->get_name(), a);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
