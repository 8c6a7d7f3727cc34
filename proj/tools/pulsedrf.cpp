#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pulsedrf/config.hpp"
#include "pulsedrf/integrator.hpp"
#include "pulsedrf/parallel.hpp"
#include "pulsedrf/scenario.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_schema = 2;
constexpr int exit_guard = 3;

// Flag, then environment, then config, then hardware.
unsigned resolve_threads(unsigned flag, const pulsedrf::Scenario& s) {
  if (flag > 0) return flag;
  if (std::getenv("PULSEDRF_THREADS")) return pulsedrf::default_thread_count();
  if (s.threads > 0) return s.threads;
  return pulsedrf::default_thread_count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pulsed resonance fluorescence simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  unsigned threads = 0;
  std::optional<std::uint64_t> seed;
  bool validate_only = false;

  auto* run = app.add_subcommand("run", "Run a scenario described by an INI file");
  run->add_option("config", config_path, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory (default: [output] dir or out/<name>)");
  run->add_option("--threads", threads, "Worker threads; overrides PULSEDRF_THREADS and the config")
      ->check(CLI::PositiveNumber);
  run->add_option("--seed", seed, "Random seed; overrides the config");
  run->add_flag("--validate-only", validate_only, "Check the config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_schema;
  }

  try {
    pulsedrf::Scenario scenario = pulsedrf::load_scenario(config_path);
    if (seed) scenario.seed = *seed;
    if (validate_only) {
      std::cout << config_path << ": ok (" << pulsedrf::to_string(scenario.kind) << ")\n";
      return exit_ok;
    }
    pulsedrf::RunOptions options;
    if (!out_dir.empty()) options.out_dir = out_dir;
    else if (!scenario.output_dir.empty()) options.out_dir = scenario.output_dir;
    else options.out_dir = std::filesystem::path("out") / scenario.name;
    options.threads = resolve_threads(threads, scenario);

    const auto report = pulsedrf::run_scenario(scenario, options);
    for (const auto& [k, v] : report.summary) std::cout << k << ": " << v << '\n';
    std::cout << "wrote " << report.files.size() << " files to " << options.out_dir.string() << '\n';
    return exit_ok;
  } catch (const pulsedrf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_schema;
  } catch (const pulsedrf::NumericalGuardError& e) {
    std::cerr << "numerical guard: " << e.what() << '\n';
    return exit_guard;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_failure;
  }
}
