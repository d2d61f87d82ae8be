#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "qpr/error.hpp"

namespace {

int fail(const char* category, const std::string& message, int code) {
  std::cerr << qpr::cli::json{{"error", category}, {"message", message}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace qpr::cli;

  CLI::App app{"Pathway-resolved robustness analysis and optimisation of driven quantum systems"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "qpr-out", precision, seed_front;
  std::uint64_t seed = 0;
  int threads = 0;
  auto* opt_seed = app.add_option("--seed", seed, "Run seed (overrides the config)");
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();
  app.add_option("--threads", threads, "Worker cap (default: QPR_THREADS, else all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--precision", precision, "Grid and truncation preset")->check(CLI::IsMember({"fast", "strict"}));

  auto* simulate = app.add_subcommand("simulate", "Propagate the configured field and report the objective");
  auto* landscape = app.add_subcommand("landscape", "Two-gene landscape scan");
  auto* pathways = app.add_subcommand("pathways", "Decode pathway amplitudes and rank significant parameters");
  auto* moments = app.add_subcommand("moments", "Asymptotic moments, interference and Monte Carlo cross-check");
  auto* optimize = app.add_subcommand("optimize", "Run an optimiser");
  std::string algorithm;
  optimize->add_option("algorithm", algorithm, "tga, acromuse or nsga2")
      ->required()
      ->check(CLI::IsMember({"tga", "acromuse", "nsga2"}));
  optimize->add_option("--seed-front", seed_front, "Pareto front JSON used to seed the population");
  auto* verify = app.add_subcommand("verify", "Optimality checks");
  std::string verify_what;
  verify->add_option("what", verify_what, "pmp")->required()->check(CLI::IsMember({"pmp"}));
  auto* repro = app.add_subcommand("repro", "Paper table reproduction");
  std::string repro_what;
  repro->add_option("what", repro_what, "table3")->required()->check(CLI::IsMember({"table3"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("validation", e.what(), static_cast<int>(qpr::ErrorCategory::validation));
  }

  try {
    ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (config_path.empty()) config = config_from_json(json::object());
    if (*opt_seed) config.seed = seed;
    if (!precision.empty()) config.precision = parse_precision(precision);
    if (!seed_front.empty()) config.seed_front = seed_front;

    std::string name;
    std::function<json(RunContext&)> body;
    if (*simulate) name = "simulate", body = cmd_simulate;
    else if (*landscape) name = "landscape", body = cmd_landscape;
    else if (*pathways) name = "pathways", body = cmd_pathways;
    else if (*moments) name = "moments", body = cmd_moments;
    else if (*optimize) name = "optimize " + algorithm, body = [&](RunContext& c) { return cmd_optimize(c, algorithm); };
    else if (*verify) name = "verify pmp", body = cmd_verify_pmp;
    else name = "repro table3", body = cmd_repro_table3;

    const json summary = run_command(name, config, out_dir, threads, body);
    std::cout << summary.dump(2) << std::endl;
    return 0;
  } catch (const qpr::Error& e) {
    return fail(qpr::category_name(e.category()), e.what(), static_cast<int>(e.category()));
  } catch (const nlohmann::json::exception& e) {
    return fail("validation", e.what(), static_cast<int>(qpr::ErrorCategory::validation));
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}
