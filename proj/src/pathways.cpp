#include "qpr/pathways.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <numeric>
#include <unordered_map>
#include <unsupported/Eigen/FFT>

#include "qpr/error.hpp"
#include "qpr/parallel.hpp"

namespace qpr {

namespace {

void enumerate(int n, int max_order, Polytope& current, int pos, int remaining, std::vector<Polytope>& out) {
  if (pos == n) {
    out.push_back(current);
    return;
  }
  for (int a = 0; a <= remaining; ++a) {
    current[pos] = a;
    enumerate(n, max_order, current, pos + 1, remaining - a, out);
  }
  current[pos] = 0;
}

int order_of(const Polytope& alpha) { return std::accumulate(alpha.begin(), alpha.end(), 0); }

}  // namespace

EncodingScheme EncodingScheme::standard(std::vector<ParameterTarget> encoded, int max_total_order) {
  if (encoded.empty()) throw ValidationError("encoding needs at least one parameter");
  if (max_total_order < 1) throw ValidationError("max_total_order must be >= 1");
  std::vector<std::int64_t> gammas;
  std::int64_t g = 1;
  for (std::size_t k = 0; k < encoded.size(); ++k) {
    gammas.push_back(g);
    g *= max_total_order + 1;
  }
  const std::int64_t span = 2 * static_cast<std::int64_t>(max_total_order) * gammas.back();
  std::int64_t ns = 1;
  while (ns <= span) ns *= 2;
  if (ns > (std::int64_t{1} << 24)) throw ValidationError("encoding needs more than 2^24 s-points");
  return custom(std::move(encoded), std::move(gammas), static_cast<int>(ns), max_total_order);
}

EncodingScheme EncodingScheme::custom(std::vector<ParameterTarget> encoded, std::vector<std::int64_t> gammas,
                                      int s_points, int max_total_order) {
  EncodingScheme s;
  s.encoded_ = std::move(encoded);
  s.gammas_ = std::move(gammas);
  s.s_points_ = s_points;
  s.max_total_order_ = max_total_order;
  s.build();
  return s;
}

void EncodingScheme::build() {
  const int n = size();
  if (n == 0) throw ValidationError("encoding needs at least one parameter");
  if (static_cast<int>(gammas_.size()) != n) throw ValidationError("one gamma per encoded parameter");
  if (max_total_order_ < 1) throw ValidationError("max_total_order must be >= 1");
  if (s_points_ < 2) throw ValidationError("encoding needs >= 2 s-points");
  for (std::size_t a = 0; a < encoded_.size(); ++a) {
    if (gammas_[a] <= 0) throw ValidationError("gammas must be positive");
    for (std::size_t b = 0; b < a; ++b) {
      if (gammas_[a] == gammas_[b]) throw ValidationError("gammas must be distinct");
      if (encoded_[a] == encoded_[b]) throw ValidationError("parameter encoded twice");
    }
  }
  admissible_.clear();
  Polytope current(static_cast<std::size_t>(n), 0);
  enumerate(n, max_total_order_, current, 0, max_total_order_, admissible_);
  std::stable_sort(admissible_.begin(), admissible_.end(),
                   [](const Polytope& x, const Polytope& y) { return order_of(x) < order_of(y); });

  std::int64_t max_freq = 0;
  std::unordered_map<int, std::size_t> owner;
  bins_.clear();
  for (std::size_t p = 0; p < admissible_.size(); ++p) {
    const std::int64_t f = frequency(admissible_[p]);
    max_freq = std::max(max_freq, f);
    const int b = static_cast<int>(f % s_points_);
    if (auto [it, inserted] = owner.emplace(b, p); !inserted) {
      throw ValidationError(fmt::format("encoding collision: {} and {} share DFT bin {}",
                                        Pathway{admissible_[it->second], {}, 0}.label(),
                                        Pathway{admissible_[p], {}, 0}.label(), b));
    }
    bins_.push_back(b);
  }
  if (static_cast<std::int64_t>(s_points_) <= 2 * max_freq) {
    throw ValidationError(
        fmt::format("N_s = {} violates the Nyquist margin (need > {})", s_points_, 2 * max_freq));
  }
}

std::int64_t EncodingScheme::frequency(const Polytope& alpha) const {
  if (alpha.size() != gammas_.size()) throw ValidationError("polytope length != encoded count");
  std::int64_t f = 0;
  for (std::size_t k = 0; k < alpha.size(); ++k) f += alpha[k] * gammas_[k];
  return f;
}

double EncodingScheme::s_value(int q) const { return kTwoPi * q / s_points_; }

std::vector<double> EncodingScheme::nominal_theta(const QuantumSystem& system, const ControlField& field) const {
  std::vector<double> theta;
  for (const auto& t : encoded_) {
    const double v = nominal_value(t, system, field);
    if (v == 0.0) {
      throw ValidationError(fmt::format("encoded parameter {} has zero nominal value", t.label()));
    }
    theta.push_back(v);
  }
  return theta;
}

int Pathway::order() const { return order_of(polytope); }

std::string Pathway::label() const { return fmt::format("[{}]", fmt::join(polytope, ",")); }

EncodedDynamics::EncodedDynamics(const QuantumSystem& sys, const ControlField& f, const TimeGrid& g,
                                 const EncodingScheme& sch)
    : system(sys), grid(g), scheme(sch) {
  grid.validate();
  (void)scheme.nominal_theta(system, f);
  mode_table = f.mode_table_midpoints(grid.n_steps);
  base_field.assign(static_cast<std::size_t>(grid.n_steps), 0.0);
  std::vector<bool> encoded_mode(f.modes().size(), false);
  for (const auto& t : scheme.encoded()) {
    if (t.kind == ParameterTarget::Kind::amplitude) encoded_mode[static_cast<std::size_t>(t.i)] = true;
  }
  // Amplitudes are folded into the table so fill() only applies phases.
  for (std::size_t k = 0; k < f.modes().size(); ++k) {
    const double a = f.modes()[k].amplitude;
    double* row = mode_table.data() + k * static_cast<std::size_t>(grid.n_steps);
    for (int q = 0; q < grid.n_steps; ++q) {
      row[q] *= a;
      if (!encoded_mode[k]) base_field[static_cast<std::size_t>(q)] += row[q];
    }
  }
}

void EncodedDynamics::fill(double s, int initial, LaneRequest& lane) const {
  lane.coupling = system.dipole().cast<cplx>();
  lane.field.assign(base_field.begin(), base_field.end());
  lane.initial = initial;
  for (int k = 0; k < scheme.size(); ++k) {
    const auto& t = scheme.encoded()[static_cast<std::size_t>(k)];
    const cplx phase = std::polar(1.0, static_cast<double>(scheme.gammas()[static_cast<std::size_t>(k)]) * s);
    if (t.kind == ParameterTarget::Kind::dipole) {
      lane.coupling(t.i, t.j) *= phase;
      lane.coupling(t.j, t.i) *= phase;
    } else {
      const double* row = mode_table.data() + static_cast<std::size_t>(t.i) * grid.n_steps;
      for (int q = 0; q < grid.n_steps; ++q) lane.field[static_cast<std::size_t>(q)] += phase * row[q];
    }
  }
}

CMatrix encoded_propagate(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                          const EncodingScheme& scheme, double s) {
  if (!(s >= 0.0 && s < kTwoPi)) throw DomainError("encoding variable s must lie in [0, 2pi)");
  const EncodedDynamics dyn(system, field, grid, scheme);
  const int n = system.dimension();
  CMatrix u(n, n);
  propagate_columns(
      system, grid, static_cast<std::size_t>(n),
      [&](std::size_t c, LaneRequest& lane) { dyn.fill(s, static_cast<int>(c), lane); },
      [&](std::size_t c, const CVector& col) { u.col(static_cast<Eigen::Index>(c)) = col; });
  return u;
}

DecodeResult decode_pathways_detailed(const QuantumSystem& system, const ControlField& field,
                                      const TimeGrid& grid, const EncodingScheme& scheme, int i, int j,
                                      const DecodeOptions& options) {
  const int n = system.dimension();
  if (i < 0 || i >= n || j < 0 || j >= n) throw ValidationError("pathway state index outside system");
  if (!(options.retention_tol >= 0.0)) throw ValidationError("retention_tol must be >= 0");
  const double alias_tol = options.alias_tol < 0.0 ? options.retention_tol : options.alias_tol;

  DecodeResult r;
  r.theta = scheme.nominal_theta(system, field);
  const EncodedDynamics dyn(system, field, grid, scheme);
  const int ns = scheme.s_points();
  r.samples.resize(static_cast<std::size_t>(ns));
  propagate_columns(
      system, grid, static_cast<std::size_t>(ns),
      [&](std::size_t q, LaneRequest& lane) { dyn.fill(scheme.s_value(static_cast<int>(q)), i, lane); },
      [&](std::size_t q, const CVector& col) { r.samples[q] = col[j]; });

  Eigen::FFT<double> fft;
  fft.fwd(r.bins, r.samples);
  for (auto& b : r.bins) b /= static_cast<double>(ns);

  std::vector<bool> admissible_bin(static_cast<std::size_t>(ns), false);
  for (std::size_t p = 0; p < scheme.admissible().size(); ++p) admissible_bin[scheme.bin(p)] = true;
  double alias = 0.0;
  for (int b = 0; b < ns; ++b) {
    const double m = std::abs(r.bins[static_cast<std::size_t>(b)]);
    r.max_bin = std::max(r.max_bin, m);
    if (!admissible_bin[static_cast<std::size_t>(b)]) alias = std::max(alias, m);
  }
  r.alias_ratio = r.max_bin > 0.0 ? alias / r.max_bin : 0.0;
  if (r.alias_ratio > alias_tol) {
    throw DecodingError(fmt::format(
        "aliasing: non-admissible DFT bins reach {:.3e} of the largest bin (tolerance {:.1e}); "
        "raise max_total_order or the number of s-points",
        r.alias_ratio, alias_tol));
  }

  for (std::size_t p = 0; p < scheme.admissible().size(); ++p) {
    const cplx b = r.bins[static_cast<std::size_t>(scheme.bin(p))];
    const double m = std::abs(b);
    if (m == 0.0 || m < options.retention_tol * r.max_bin) continue;
    const Polytope& alpha = scheme.admissible()[p];
    double mono = 1.0;
    for (std::size_t k = 0; k < alpha.size(); ++k) mono *= std::pow(r.theta[k], alpha[k]);
    r.pathways.push_back({alpha, b / mono, m});
  }
  std::stable_sort(r.pathways.begin(), r.pathways.end(),
                   [](const Pathway& a, const Pathway& b) { return a.weighted_magnitude > b.weighted_magnitude; });
  return r;
}

std::vector<Pathway> decode_pathways(const QuantumSystem& system, const ControlField& field,
                                     const TimeGrid& grid, const EncodingScheme& scheme, int i, int j,
                                     double retention_tol) {
  return decode_pathways_detailed(system, field, grid, scheme, i, j, {retention_tol, -1.0}).pathways;
}

cplx reconstruct_amplitude(std::span<const Pathway> pathways, std::span<const double> theta) {
  cplx sum{};
  for (const auto& p : pathways) {
    if (p.polytope.size() != theta.size()) throw ValidationError("theta length != polytope length");
    double mono = 1.0;
    for (std::size_t k = 0; k < theta.size(); ++k) mono *= std::pow(theta[k], p.polytope[k]);
    sum += p.coefficient * mono;
  }
  return sum;
}

SignificanceReport significant_parameters(const QuantumSystem& system, const ControlField& field,
                                          const TimeGrid& grid, const ObjectiveSpec& objective, double threshold,
                                          const SensitivityOptions& options) {
  if (!(threshold > 0.0)) throw ValidationError("significance threshold must be > 0");
  validate_objective(objective, system.dimension());
  SignificanceReport report;
  std::vector<ParameterTarget> targets;
  for (int a = 0; a < system.dimension(); ++a) {
    for (int b = a + 1; b < system.dimension(); ++b) {
      if (system.dipole()(a, b) != 0.0) targets.push_back(ParameterTarget::dipole(a, b));
    }
  }
  for (int k = 0; k < field.mode_count(); ++k) {
    if (field.modes()[static_cast<std::size_t>(k)].amplitude != 0.0) targets.push_back(ParameterTarget::amplitude(k));
  }
  if (targets.empty()) return report;

  // Per target: theta - h1, theta + h1, theta - h2, theta + h2; plus the nominal.
  std::vector<ParameterSensitivity> sens(targets.size());
  std::vector<double> values(targets.size() * 4 + 1);
  parallel_for(values.size(), [&](std::size_t idx) {
    if (idx == values.size() - 1) {
      values[idx] = objective_value(propagate(system, field, grid), objective);
      return;
    }
    const auto& t = targets[idx / 4];
    const double nominal = nominal_value(t, system, field);
    const double h1 = options.relative_step * std::abs(nominal);
    const double h2 = options.curvature_step * std::abs(nominal);
    const double offsets[4] = {-h1, h1, -h2, h2};
    const double v = nominal + offsets[idx % 4];
    const auto [sys, f] = apply_parameters(system, field, std::span(&t, 1), std::span(&v, 1));
    values[idx] = objective_value(propagate(sys, f, grid), objective);
  });
  const double j0 = values.back();
  for (std::size_t p = 0; p < targets.size(); ++p) {
    const double nominal = nominal_value(targets[p], system, field);
    const double h1 = options.relative_step * std::abs(nominal);
    const double h2 = options.curvature_step * std::abs(nominal);
    const double* v = values.data() + 4 * p;
    sens[p] = {targets[p], nominal, (v[1] - v[0]) / (2.0 * h1), (v[3] - 2.0 * j0 + v[2]) / (h2 * h2), 0.0};
    report.gradient_max_norm = std::max(report.gradient_max_norm, std::abs(sens[p].derivative));
  }
  report.critical = report.gradient_max_norm < options.criticality_tol;
  double best = 0.0;
  for (auto& s : sens) {
    s.score = report.critical ? std::abs(s.curvature) : std::abs(s.derivative);
    best = std::max(best, s.score);
  }
  report.candidates = sens;
  for (const auto& s : sens) {
    if (best > 0.0 && s.score >= threshold * best) report.significant.push_back(s);
  }
  std::stable_sort(report.significant.begin(), report.significant.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  return report;
}

HessianRankReport hessian_rank_check(const QuantumSystem& system, const Chromosome& chromosome,
                                     const TimeGrid& grid, const ObjectiveSpec& objective,
                                     const HessianRankOptions& options) {
  validate_objective(objective, system.dimension());
  const auto genes = chromosome.genes();
  const int g = static_cast<int>(genes.size());
  const int k = chromosome.mode_count();
  std::vector<double> step(static_cast<std::size_t>(g));
  for (int a = 0; a < g; ++a) step[a] = a < k ? options.frequency_step : options.phase_step;

  // Evaluation plan: nominal, +-e_a, +-e_a+-e_b (a < b).
  std::vector<std::vector<double>> points;
  auto shifted = [&](int a, double sa, int b, double sb) {
    auto x = genes;
    if (a >= 0) x[static_cast<std::size_t>(a)] += sa * step[a];
    if (b >= 0) x[static_cast<std::size_t>(b)] += sb * step[b];
    points.push_back(std::move(x));
  };
  shifted(-1, 0, -1, 0);
  for (int a = 0; a < g; ++a) {
    shifted(a, 1, -1, 0);
    shifted(a, -1, -1, 0);
  }
  for (int a = 0; a < g; ++a) {
    for (int b = a + 1; b < g; ++b) {
      shifted(a, 1, b, 1);
      shifted(a, 1, b, -1);
      shifted(a, -1, b, 1);
      shifted(a, -1, b, -1);
    }
  }
  std::vector<ControlField> fields;
  fields.reserve(points.size());
  for (const auto& x : points) {
    fields.push_back(Chromosome::from_genes(x, chromosome.fixed_amplitude).to_field(grid.duration));
  }
  const auto j = objective_values(system, fields, grid, objective);

  HessianRankReport r;
  r.rank_bound = 2 * system.dimension() - 2;
  r.objective = j[0];
  r.gradient.resize(static_cast<std::size_t>(g));
  r.hessian = RMatrix::Zero(g, g);
  for (int a = 0; a < g; ++a) {
    const double jp = j[1 + 2 * a];
    const double jm = j[2 + 2 * a];
    r.gradient[a] = (jp - jm) / (2.0 * step[a]);
    r.hessian(a, a) = (jp - 2.0 * j[0] + jm) / (step[a] * step[a]);
    r.gradient_max_norm = std::max(r.gradient_max_norm, std::abs(r.gradient[a]));
  }
  std::size_t idx = 1 + 2 * static_cast<std::size_t>(g);
  for (int a = 0; a < g; ++a) {
    for (int b = a + 1; b < g; ++b) {
      const double v = (j[idx] - j[idx + 1] - j[idx + 2] + j[idx + 3]) / (4.0 * step[a] * step[b]);
      r.hessian(a, b) = r.hessian(b, a) = v;
      idx += 4;
    }
  }
  Eigen::SelfAdjointEigenSolver<RMatrix> solver(r.hessian);
  r.eigenvalues.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + g);
  std::sort(r.eigenvalues.begin(), r.eigenvalues.end(),
            [](double x, double y) { return std::abs(x) > std::abs(y); });
  const double top = r.eigenvalues.empty() ? 0.0 : std::abs(r.eigenvalues.front());
  for (double e : r.eigenvalues) r.numerical_rank += (top > 0.0 && std::abs(e) > options.rank_tol * top) ? 1 : 0;

  if (r.gradient_max_norm >= options.criticality_tol) {
    r.checked = false;
    r.status = fmt::format("skipped: gene-gradient max-norm {:.3e} is not below the criticality gate {:.1e}; "
                           "the rank bound only applies at a landscape top",
                           r.gradient_max_norm, options.criticality_tol);
  } else {
    r.checked = true;
    r.status = fmt::format("numerical rank {} (bound 2N-2 = {}): {}", r.numerical_rank, r.rank_bound,
                           r.numerical_rank <= r.rank_bound ? "within bound" : "exceeds bound");
  }
  return r;
}

}  // namespace qpr
