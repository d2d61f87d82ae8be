#include "qpr/propagator.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "qpr/error.hpp"
#include "qpr/kernels/batch_propagate.hpp"
#include "qpr/parallel.hpp"

namespace qpr {

void TimeGrid::validate() const {
  if (n_steps < 1) throw ValidationError("time grid needs n_steps >= 1");
  if (!(duration > 0.0) || !std::isfinite(duration)) throw ValidationError("time grid needs T > 0");
}

TimeGrid TimeGrid::for_duration(double duration, double dt) {
  TimeGrid g;
  g.duration = duration;
  g.n_steps = std::max(1, static_cast<int>(std::lround(duration / dt)));
  return g;
}

CMatrix interaction_frame(const QuantumSystem& system, double t) {
  const int n = system.dimension();
  CMatrix d = CMatrix::Zero(n, n);
  for (int a = 0; a < n; ++a) d(a, a) = std::polar(1.0, system.energies()[a] * t);
  return d;
}

double unitarity_residual(const CMatrix& u) {
  const CMatrix r = u.adjoint() * u - CMatrix::Identity(u.rows(), u.cols());
  return r.cwiseAbs().maxCoeff();
}

StepExponential step_exponential(const QuantumSystem& system, double eps, double dt) {
  RMatrix h = -eps * system.dipole();
  h.diagonal() += system.energies();
  Eigen::SelfAdjointEigenSolver<RMatrix> solver(h);
  StepExponential out;
  out.eigenvectors = solver.eigenvectors();
  out.eigenvalues = solver.eigenvalues();
  const int n = system.dimension();
  CVector phases(n);
  for (int a = 0; a < n; ++a) phases[a] = std::polar(1.0, -dt * out.eigenvalues[a]);
  const CMatrix v = out.eigenvectors.cast<cplx>();
  out.step = v * phases.asDiagonal() * v.transpose();
  return out;
}

PropagationResult propagate_samples(const QuantumSystem& system, std::span<const double> midpoint_field,
                                    const TimeGrid& grid, const PropagationOptions& options) {
  grid.validate();
  if (static_cast<int>(midpoint_field.size()) != grid.n_steps) {
    throw ValidationError("midpoint field sample count must equal n_steps");
  }
  const int n = system.dimension();
  const double dt = grid.dt();
  PropagationResult result;
  CMatrix u = CMatrix::Identity(n, n);
  if (options.store_trajectory) {
    result.trajectory.reserve(static_cast<std::size_t>(grid.n_steps) + 1);
    result.trajectory.push_back(u);
  }
  CMatrix next(n, n);
  for (int q = 0; q < grid.n_steps; ++q) {
    const StepExponential s = step_exponential(system, midpoint_field[q], dt);
    next.noalias() = s.step * u;
    u = next;
    if (options.store_trajectory) result.trajectory.push_back(u);
  }
  result.final_unitary = u;
  result.interaction_final = interaction_frame(system, grid.duration) * u;
  result.unitarity_residual = unitarity_residual(u);
  if (result.unitarity_residual > options.unitarity_tolerance) {
    throw IntegrationError(fmt::format("unitarity residual {:.3e} exceeds {:.1e}; use a smaller dt",
                                       result.unitarity_residual, options.unitarity_tolerance));
  }
  return result;
}

PropagationResult propagate(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                            const PropagationOptions& options) {
  grid.validate();
  if (std::abs(grid.duration - field.duration()) > 1e-12 * field.duration()) {
    throw ValidationError("grid duration must equal field duration");
  }
  const auto eps = field.sample_midpoints(grid.n_steps);
  return propagate_samples(system, eps, grid, options);
}

namespace {

bool is_hermitian(const CMatrix& m, double tol = 1e-12) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

}  // namespace

void validate_objective(const ObjectiveSpec& objective, int dim) {
  std::visit(
      [dim](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, TransitionProbability>) {
          if (o.initial < 0 || o.initial >= dim || o.target < 0 || o.target >= dim) {
            throw ValidationError("transition indices outside system");
          }
        } else if constexpr (std::is_same_v<T, ObservableExpectation>) {
          if (o.rho.rows() != dim || o.rho.cols() != dim || o.observable.rows() != dim ||
              o.observable.cols() != dim) {
            throw ValidationError("observable/density dimension mismatch");
          }
          if (!is_hermitian(o.rho)) throw ValidationError("rho0 must be Hermitian");
          if (!is_hermitian(o.observable)) throw ValidationError("observable must be Hermitian");
        } else {
          if (o.gate.rows() != dim || o.gate.cols() != dim) throw ValidationError("gate dimension mismatch");
          if (unitarity_residual(o.gate) > 1e-10) throw ValidationError("target gate must be unitary");
        }
      },
      objective);
}

std::string objective_name(const ObjectiveSpec& objective) {
  return std::visit(
      [](const auto& o) -> std::string {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, TransitionProbability>) {
          return fmt::format("P{}{}", o.target + 1, o.initial + 1);
        } else if constexpr (std::is_same_v<T, ObservableExpectation>) {
          return "observable";
        } else {
          return "gate_distance";
        }
      },
      objective);
}

double objective_value(const CMatrix& u, const ObjectiveSpec& objective) {
  validate_objective(objective, static_cast<int>(u.rows()));
  return std::visit(
      [&u](const auto& o) -> double {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, TransitionProbability>) {
          return std::norm(u(o.target, o.initial));
        } else if constexpr (std::is_same_v<T, ObservableExpectation>) {
          return (u * o.rho * u.adjoint() * o.observable).trace().real();
        } else {
          return (u - o.gate).squaredNorm();
        }
      },
      objective);
}

double objective_value(const PropagationResult& result, const ObjectiveSpec& objective) {
  return objective_value(result.interaction_final, objective);
}

CMatrix DysonDecomposition::partial_sum(int max_order) const {
  if (orders.empty()) throw ValidationError("empty Dyson decomposition");
  const int m = std::min(max_order, truncation_order());
  CMatrix sum = CMatrix::Zero(orders[0].rows(), orders[0].cols());
  for (int k = 0; k <= m; ++k) sum += orders[static_cast<std::size_t>(k)];
  return sum;
}

double DysonDecomposition::tail_norm() const {
  if (orders.empty()) return 0.0;
  return orders.back().cwiseAbs().maxCoeff();
}

namespace {

// Interaction picture coupling (without the field factor) at node q:
// K_ab(t) = mu_ab exp(i (E_a - E_b) t); H_I(t) = -eps(t) K(t).
struct DysonWorkspace {
  const QuantumSystem& system;
  TimeGrid grid;
  std::vector<double> eps;                 // nodes
  std::vector<CMatrix> trajectory;         // U^{m}(t_q) for the current order

  DysonWorkspace(const QuantumSystem& s, const ControlField& f, const TimeGrid& g)
      : system(s), grid(g), eps(f.sample_nodes(g.n_steps)) {
    const int n = s.dimension();
    trajectory.assign(static_cast<std::size_t>(g.n_steps) + 1, CMatrix::Identity(n, n));
  }

  CMatrix next_order() {
    const int n = system.dimension();
    const double dt = grid.dt();
    const auto& e = system.energies();
    const RMatrix& mu = system.dipole();
    std::vector<CMatrix> next(trajectory.size(), CMatrix::Zero(n, n));
    CMatrix prev_integrand = CMatrix::Zero(n, n);
    CMatrix integrand(n, n);
    CVector phase(n);
    for (std::size_t q = 0; q < trajectory.size(); ++q) {
      const double t = grid.node(static_cast<int>(q));
      for (int a = 0; a < n; ++a) phase[a] = std::polar(1.0, e[a] * t);
      // -i H_I U = i eps K U
      const CMatrix rotated = phase.conjugate().asDiagonal() * trajectory[q];
      integrand.noalias() = phase.asDiagonal() * (mu.cast<cplx>() * rotated);
      integrand *= cplx(0.0, eps[q]);
      if (q > 0) next[q] = next[q - 1] + (0.5 * dt) * (prev_integrand + integrand);
      prev_integrand = integrand;
    }
    trajectory = std::move(next);
    return trajectory.back();
  }
};

}  // namespace

DysonDecomposition dyson_terms(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                               int max_order) {
  if (max_order < 1) throw ValidationError("Dyson truncation order must be >= 1");
  grid.validate();
  DysonWorkspace ws(system, field, grid);
  DysonDecomposition d;
  d.orders.push_back(CMatrix::Identity(system.dimension(), system.dimension()));
  for (int m = 1; m <= max_order; ++m) d.orders.push_back(ws.next_order());
  return d;
}

DysonDecomposition dyson_terms_adaptive(const QuantumSystem& system, const ControlField& field,
                                        const TimeGrid& grid, int initial_order, double tail_tolerance,
                                        int max_order) {
  grid.validate();
  DysonWorkspace ws(system, field, grid);
  DysonDecomposition d;
  d.orders.push_back(CMatrix::Identity(system.dimension(), system.dimension()));
  for (int m = 1; m <= max_order; ++m) {
    d.orders.push_back(ws.next_order());
    if (m >= initial_order && d.tail_norm() < tail_tolerance) break;
  }
  return d;
}

InterferenceTable order_interference(const DysonDecomposition& d, int initial, int target) {
  const int m = d.truncation_order() + 1;
  InterferenceTable table;
  table.direct_terms.resize(static_cast<std::size_t>(m));
  table.cross_terms = RMatrix::Zero(m, m);
  std::vector<cplx> amp(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    amp[k] = d.orders[static_cast<std::size_t>(k)](target, initial);
    table.amplitude += amp[k];
    table.direct_terms[k] = std::norm(amp[k]);
    table.direct_sum += table.direct_terms[k];
  }
  for (int k = 0; k < m; ++k) {
    for (int kp = 0; kp < k; ++kp) {
      const double c = 2.0 * (amp[k] * std::conj(amp[kp])).real();
      table.cross_terms(k, kp) = c;
      table.cross_sum += c;
    }
  }
  table.total = table.direct_sum + table.cross_sum;
  return table;
}

double ScanAxis::value(int index) const {
  if (points <= 1) return lower;
  return lower + (upper - lower) * index / (points - 1);
}

Landscape landscape_scan(const QuantumSystem& system, const Chromosome& chromosome_template,
                         const TimeGrid& grid, const ScanAxis& axis1, const ScanAxis& axis2,
                         const ObjectiveSpec& objective) {
  const int genes = chromosome_template.gene_count();
  for (const auto* ax : {&axis1, &axis2}) {
    if (ax->gene < 0 || ax->gene >= genes) throw ValidationError("scan gene index out of range");
    if (ax->points < 1) throw ValidationError("scan axis needs >= 1 point");
  }
  validate_objective(objective, system.dimension());
  Landscape land{axis1, axis2, RMatrix::Zero(axis1.points, axis2.points)};
  const auto base = chromosome_template.genes();
  const auto total = static_cast<std::size_t>(axis1.points) * axis2.points;
  auto field_at = [&](std::size_t idx) {
    auto g = base;
    g[static_cast<std::size_t>(axis1.gene)] = axis1.value(static_cast<int>(idx / axis2.points));
    g[static_cast<std::size_t>(axis2.gene)] = axis2.value(static_cast<int>(idx % axis2.points));
    return Chromosome::from_genes(g, chromosome_template.fixed_amplitude).to_field(grid.duration);
  };

  if (const auto* tp = std::get_if<TransitionProbability>(&objective)) {
    const CMatrix mu = system.dipole().cast<cplx>();
    propagate_columns(
        system, grid, total,
        [&](std::size_t idx, LaneRequest& lane) {
          lane.coupling = mu;
          lane.field = to_complex(field_at(idx).sample_midpoints(grid.n_steps));
          lane.initial = tp->initial;
        },
        [&](std::size_t idx, const CVector& col) {
          land.values(static_cast<Eigen::Index>(idx / axis2.points),
                      static_cast<Eigen::Index>(idx % axis2.points)) = std::norm(col[tp->target]);
        });
  } else {
    parallel_for(total, [&](std::size_t idx) {
      const auto r = propagate(system, field_at(idx), grid);
      land.values(static_cast<Eigen::Index>(idx / axis2.points),
                  static_cast<Eigen::Index>(idx % axis2.points)) = objective_value(r, objective);
    });
  }
  return land;
}

int count_local_maxima(const RMatrix& v) {
  int count = 0;
  for (Eigen::Index a = 1; a + 1 < v.rows(); ++a) {
    for (Eigen::Index b = 1; b + 1 < v.cols(); ++b) {
      bool peak = true;
      for (int da = -1; da <= 1 && peak; ++da) {
        for (int db = -1; db <= 1; ++db) {
          if ((da || db) && v(a + da, b + db) >= v(a, b)) {
            peak = false;
            break;
          }
        }
      }
      count += peak ? 1 : 0;
    }
  }
  return count;
}

std::vector<cplx> to_complex(std::span<const double> values) {
  return std::vector<cplx>(values.begin(), values.end());
}

void propagate_columns(const QuantumSystem& system, const TimeGrid& grid, std::size_t count,
                       const std::function<void(std::size_t, LaneRequest&)>& make,
                       const std::function<void(std::size_t, const CVector&)>& consume, int threads) {
  grid.validate();
  if (count == 0) return;
  constexpr std::size_t kChunk = 32;
  const int n = system.dimension();
  const std::vector<double> energies(system.energies().data(), system.energies().data() + n);
  const CVector frame = interaction_frame(system, grid.duration).diagonal();
  const std::size_t chunks = (count + kChunk - 1) / kChunk;

  parallel_for(
      chunks,
      [&](std::size_t c) {
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(count, begin + kChunk);
        const std::size_t m = end - begin;
        std::vector<LaneRequest> requests(m);
        std::vector<std::vector<cplx>> row_major(m);
        std::vector<kernels::Lane> lanes(m);
        for (std::size_t l = 0; l < m; ++l) {
          make(begin + l, requests[l]);
          const auto& r = requests[l];
          if (r.coupling.rows() != n || r.coupling.cols() != n) throw ValidationError("lane coupling size");
          if (static_cast<int>(r.field.size()) != grid.n_steps) throw ValidationError("lane field size");
          row_major[l].resize(static_cast<std::size_t>(n) * n);
          for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) row_major[l][static_cast<std::size_t>(a) * n + b] = r.coupling(a, b);
          }
          lanes[l] = {row_major[l].data(), r.field.data(), r.initial};
        }
        kernels::BatchProblem problem{n, grid.n_steps, grid.dt(), energies, lanes};
        std::vector<cplx> out(m * static_cast<std::size_t>(n));
        kernels::propagate_batch(problem, out);
        CVector col(n);
        for (std::size_t l = 0; l < m; ++l) {
          for (int a = 0; a < n; ++a) col[a] = frame[a] * out[l * n + a];
          consume(begin + l, col);
        }
      },
      threads);
}

std::vector<double> transition_probabilities(const QuantumSystem& system, std::span<const ControlField> fields,
                                             const TimeGrid& grid, int initial, int target, int threads) {
  std::vector<double> out(fields.size());
  const CMatrix mu = system.dipole().cast<cplx>();
  propagate_columns(
      system, grid, fields.size(),
      [&](std::size_t idx, LaneRequest& lane) {
        lane.coupling = mu;
        lane.field = to_complex(fields[idx].sample_midpoints(grid.n_steps));
        lane.initial = initial;
      },
      [&](std::size_t idx, const CVector& col) { out[idx] = std::norm(col[target]); }, threads);
  return out;
}

std::vector<double> objective_values(const QuantumSystem& system, std::span<const ControlField> fields,
                                     const TimeGrid& grid, const ObjectiveSpec& objective, int threads) {
  validate_objective(objective, system.dimension());
  if (const auto* tp = std::get_if<TransitionProbability>(&objective)) {
    return transition_probabilities(system, fields, grid, tp->initial, tp->target, threads);
  }
  std::vector<double> out(fields.size());
  parallel_for(
      fields.size(), [&](std::size_t i) { out[i] = objective_value(propagate(system, fields[i], grid), objective); },
      threads);
  return out;
}

}  // namespace qpr
