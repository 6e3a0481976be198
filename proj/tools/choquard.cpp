// choquard: batch driver for the two-branch Nehari solver.
//
//   choquard run <config>    execute the commands listed in the config
//   choquard sweep <config>  only the lambda sweep
//
// Exit status: 0 all converged, 2 something did not converge, 1 config or runtime error.

#include <omp.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <string>

#include "choquard/cli.hpp"

namespace {

void apply_thread_cap() {
  const char* env = std::getenv("CHOQUARD_THREADS");
  if (!env || !*env) return;
  const std::string s(env);
  int cap = 0;
  try {
    std::size_t used = 0;
    cap = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw choquard::ConfigError("CHOQUARD_THREADS: expected a positive integer, got '" + s + "'");
  }
  if (cap < 1) throw choquard::ConfigError("CHOQUARD_THREADS: expected a positive integer, got '" + s + "'");
  omp_set_num_threads(std::min(cap, omp_get_max_threads()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two positive solutions of a singular critical Choquard problem on a grid"};
  app.require_subcommand(1);
  std::string config_path, convolution, grid_override;
  for (const char* name : {"run", "sweep"}) {
    auto* sub = app.add_subcommand(name, std::string(name) == "run" ? "run the configured commands" : "sweep lambda only");
    sub->add_option("config", config_path, "config file")->required();
    sub->add_option("--convolution", convolution, "Riesz convolution path")->check(CLI::IsMember({"direct", "fast", "both"}));
    sub->add_option("--grid-override", grid_override, "override the grid point count, m=NN");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    apply_thread_cap();
    choquard::RunConfig cfg = choquard::load_config(config_path);
    if (!convolution.empty()) {
      cfg.convolution = choquard::parse_convolution(convolution);
      cfg.echo["convolution"] = convolution;
    }
    if (!grid_override.empty()) choquard::apply_grid_override(cfg, grid_override);
    const bool sweep_only = app.got_subcommand("sweep");
    const auto out = sweep_only ? choquard::run_sweep(cfg, std::cerr) : choquard::run(cfg, std::cerr);
    std::cerr << (out.exit_code == 0 ? "all converged" : "not converged") << "; report in " << (cfg.output_dir / "report.json").string()
              << "\n";
    return out.exit_code;
  } catch (const choquard::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
