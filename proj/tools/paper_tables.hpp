#pragma once

#include <string>
#include <vector>

#include "qpr/propagator.hpp"
#include "qpr/system.hpp"

namespace qpr::cli {

/// Rows of a CSV table: '#' lines are comments, the first non-comment line is
/// the header, the first column is a row label.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::string> labels;
  RMatrix values;
};

CsvTable read_csv_table(const std::string& path);

struct PaperTables {
  std::vector<Chromosome> solutions;             // retained solutions, frequencies then phases
  std::vector<std::vector<double>> amplitudes;   // per instance, one amplitude per mode
  RMatrix reported;                              // reported P(0->3), rows x instances
};

PaperTables load_paper_tables(const std::string& data_dir, double shared_amplitude = 0.15);

struct MappingResult {
  std::string name;
  std::string description;
  RMatrix computed;               // arranged like the reported table
  double max_abs_error = 0.0;
  std::vector<int> winners;       // best row per instance column
  bool diagonal_winners = false;  // row k wins column k for every k
};

struct Table3Report {
  std::vector<MappingResult> mappings;
  std::size_t best = 0;   // smallest max_abs_error
  bool matched = false;   // best max_abs_error <= tolerance
  bool structure = false; // some mapping reproduces the diagonal winners
  double tolerance = 0.05;
};

/// computed(s, k) = P(solution s with instance-k amplitudes) under "solution-rows",
/// and P(solution k with instance-s amplitudes) under "instance-rows".
Table3Report reproduce_table3(const QuantumSystem& system, const PaperTables& tables, const TimeGrid& grid,
                              const TransitionProbability& objective, double tolerance = 0.05, int threads = 0);

/// Column winners of a rows x columns matrix (first maximum on ties).
std::vector<int> column_winners(const RMatrix& m);

}  // namespace qpr::cli
