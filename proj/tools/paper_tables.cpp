#include "paper_tables.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "qpr/error.hpp"

namespace qpr::cli {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto a = cell.find_first_not_of(" \t\r");
    const auto b = cell.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1));
  }
  return out;
}

}  // namespace

CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open table '" + path + "'");
  CsvTable t;
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = cells;
      continue;
    }
    if (cells.size() != t.header.size())
      throw ValidationError(fmt::format("{}: row '{}' has {} cells, header has {}", path, line, cells.size(),
                                        t.header.size()));
    t.labels.push_back(cells[0]);
    std::vector<double> row;
    for (std::size_t c = 1; c < cells.size(); ++c) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cells[c], &used));
        if (used != cells[c].size()) throw std::invalid_argument(cells[c]);
      } catch (const std::exception&) {
        throw ValidationError(fmt::format("{}: '{}' is not a number", path, cells[c]));
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(path + ": no data rows");
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.header.size() - 1));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      t.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return t;
}

PaperTables load_paper_tables(const std::string& data_dir, double shared_amplitude) {
  namespace fs = std::filesystem;
  const fs::path dir(data_dir);
  const CsvTable sol = read_csv_table((dir / "table2_solutions.csv").string());
  const CsvTable amp = read_csv_table((dir / "table4_amplitudes.csv").string());
  const CsvTable rep = read_csv_table((dir / "table3_probabilities.csv").string());

  const Eigen::Index genes = sol.values.rows();
  if (genes % 2 != 0) throw ValidationError("table2_solutions.csv: gene count must be even");
  const Eigen::Index modes = genes / 2;
  if (amp.values.rows() != modes) throw ValidationError("table4_amplitudes.csv: one row per mode expected");
  if (rep.values.rows() != sol.values.cols() || rep.values.cols() != amp.values.cols())
    throw ValidationError("table3_probabilities.csv: shape must be solutions x instances");

  PaperTables t;
  for (Eigen::Index s = 0; s < sol.values.cols(); ++s) {
    std::vector<double> g(static_cast<std::size_t>(genes));
    for (Eigen::Index q = 0; q < genes; ++q) g[static_cast<std::size_t>(q)] = sol.values(q, s);
    t.solutions.push_back(Chromosome::from_genes(g, shared_amplitude));
  }
  for (Eigen::Index k = 0; k < amp.values.cols(); ++k) {
    std::vector<double> a(static_cast<std::size_t>(modes));
    for (Eigen::Index m = 0; m < modes; ++m) a[static_cast<std::size_t>(m)] = amp.values(m, k);
    t.amplitudes.push_back(std::move(a));
  }
  t.reported = rep.values;
  return t;
}

std::vector<int> column_winners(const RMatrix& m) {
  std::vector<int> w(static_cast<std::size_t>(m.cols()), 0);
  for (Eigen::Index k = 0; k < m.cols(); ++k) {
    Eigen::Index best = 0;
    for (Eigen::Index s = 1; s < m.rows(); ++s)
      if (m(s, k) > m(best, k)) best = s;
    w[static_cast<std::size_t>(k)] = static_cast<int>(best);
  }
  return w;
}

Table3Report reproduce_table3(const QuantumSystem& system, const PaperTables& tables, const TimeGrid& grid,
                              const TransitionProbability& objective, double tolerance, int threads) {
  const auto ns = static_cast<Eigen::Index>(tables.solutions.size());
  const auto ni = static_cast<Eigen::Index>(tables.amplitudes.size());
  if (ns != ni) throw ValidationError("table reproduction needs as many solutions as instances");

  // P(solution s, instance k) for every pair.
  std::vector<ControlField> fields;
  for (Eigen::Index s = 0; s < ns; ++s)
    for (Eigen::Index k = 0; k < ni; ++k)
      fields.push_back(tables.solutions[static_cast<std::size_t>(s)]
                           .to_field(grid.duration)
                           .with_amplitudes(tables.amplitudes[static_cast<std::size_t>(k)]));
  const auto p = objective_values(system, fields, grid, objective, threads);
  RMatrix pair(ns, ni);
  for (Eigen::Index s = 0; s < ns; ++s)
    for (Eigen::Index k = 0; k < ni; ++k) pair(s, k) = p[static_cast<std::size_t>(s * ni + k)];

  Table3Report report;
  report.tolerance = tolerance;
  const std::pair<const char*, const char*> names[] = {
      {"solution-rows", "row s = solution x_s, column k = amplitude set k"},
      {"instance-rows", "row s = amplitude set s, column k = solution x_k"}};
  for (int h = 0; h < 2; ++h) {
    MappingResult m;
    m.name = names[h].first;
    m.description = names[h].second;
    m.computed = h == 0 ? pair : RMatrix(pair.transpose());
    m.max_abs_error = (m.computed - tables.reported).cwiseAbs().maxCoeff();
    m.winners = column_winners(m.computed);
    m.diagonal_winners = true;
    for (std::size_t k = 0; k < m.winners.size(); ++k)
      if (m.winners[k] != static_cast<int>(k)) m.diagonal_winners = false;
    report.structure = report.structure || m.diagonal_winners;
    report.mappings.push_back(std::move(m));
  }
  report.best = report.mappings[0].max_abs_error <= report.mappings[1].max_abs_error ? 0 : 1;
  report.matched = report.mappings[report.best].max_abs_error <= tolerance;
  return report;
}

}  // namespace qpr::cli
