#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"

namespace qpr::cli {

struct RunContext {
  ExperimentConfig config;  // resolved
  std::filesystem::path out;
  int threads = 0;
  std::vector<std::string> outputs;  // files written, relative to out

  /// Opens out/name for writing and records it; IoError on failure.
  std::filesystem::path output(const std::string& name);
  void write_json(const std::string& name, const json& doc);
};

/// Each command writes its tables and reports under ctx.out and returns the
/// summary printed on stdout.
json cmd_simulate(RunContext& ctx);
json cmd_landscape(RunContext& ctx);
json cmd_pathways(RunContext& ctx);
json cmd_moments(RunContext& ctx);
json cmd_optimize(RunContext& ctx, const std::string& algorithm);
json cmd_verify_pmp(RunContext& ctx);
json cmd_repro_table3(RunContext& ctx);

/// Resolves the config, creates the output directory, writes
/// resolved-config.json, runs the command and writes manifest.json.
json run_command(const std::string& name, ExperimentConfig config, const std::filesystem::path& out, int threads,
                 const std::function<json(RunContext&)>& body);

json chromosome_to_json(const Chromosome& c);
Chromosome chromosome_from_json(const json& j, double amplitude);
/// Front JSON written by the nsga2 command.
ParetoFront load_front(const std::string& path, double amplitude);

}  // namespace qpr::cli
