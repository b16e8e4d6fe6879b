// Recomputes the universal constant c of each problem family on the fixed
// reference instances and prints it next to the compiled-in default.
//
//   calibrate-constants [--seed <u64>] [--points <n>] [--samples <n>]

#include <iostream>

#include <CLI11.hpp>
#include "langevin/constants.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Calibrate the universal constants of the analytic bounds"};
  std::uint64_t seed = 1;
  langevin::EmpiricalOptions opts;
  opts.points = 200;
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--points", opts.points, "evaluation points per instance")->check(CLI::PositiveNumber);
  app.add_option("--samples", opts.samples, "noise draws per point")->check(CLI::Range(2, 1 << 30));
  CLI11_PARSE(app, argc, argv);

  const auto ref = langevin::reference_instances();
  const langevin::UniversalConstants defaults;
  langevin::GaussianStream rng(seed);
  auto show = [](const char* name, double c, double current) {
    std::cout << name << ": calibrated " << c << ", default " << current
              << (c <= current ? "" : "  (default too small)") << '\n';
  };
  show("linear_regression", langevin::calibrate_c(ref.lr, ref.lr_gamma, rng, opts), defaults.linear_regression);
  show("matrix_factorization", langevin::calibrate_c(ref.mf, ref.mf_gamma, rng, opts),
       defaults.matrix_factorization);
  show("online_pca", langevin::calibrate_c(ref.pca, ref.pca_gamma, rng, opts), defaults.online_pca);
}
