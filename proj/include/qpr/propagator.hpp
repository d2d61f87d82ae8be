#pragma once

#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qpr/system.hpp"

namespace qpr {

/// Uniform grid t_q = q * dt on [0, T].
struct TimeGrid {
  int n_steps = 4000;
  double duration = 40.0;

  double dt() const { return duration / n_steps; }
  double node(int q) const { return q * dt(); }
  double midpoint(int q) const { return (q + 0.5) * dt(); }
  void validate() const;

  /// dt = 0.01 by default (4000 steps for T = 40).
  static TimeGrid for_duration(double duration, double dt = 0.01);
};

struct PropagationOptions {
  bool store_trajectory = false;
  double unitarity_tolerance = 1e-9;
};

struct PropagationResult {
  CMatrix final_unitary;      // U(T), Schrodinger picture
  CMatrix interaction_final;  // diag(exp(i E T)) U(T)
  double unitarity_residual = 0.0;
  std::vector<CMatrix> trajectory;  // U(t_q), q = 0..n_steps, when requested
};

/// Piecewise-constant midpoint exponential integrator:
///   U <- exp(-i dt (H0 - mu eps(t_mid))) U,
/// each step exponentiated through the eigendecomposition of the real
/// symmetric step Hamiltonian. Throws IntegrationError if U^dag U drifts from
/// identity beyond options.unitarity_tolerance.
PropagationResult propagate(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                            const PropagationOptions& options = {});

/// Same integrator driven by explicit midpoint field samples (one per step).
PropagationResult propagate_samples(const QuantumSystem& system, std::span<const double> midpoint_field,
                                    const TimeGrid& grid, const PropagationOptions& options = {});

/// exp(-i dt (H0 - eps mu)) with the eigenbasis it was built from.
struct StepExponential {
  RMatrix eigenvectors;
  RVector eigenvalues;
  CMatrix step;
};
StepExponential step_exponential(const QuantumSystem& system, double eps, double dt);

CMatrix interaction_frame(const QuantumSystem& system, double t);  // diag(exp(i E t))
double unitarity_residual(const CMatrix& u);

// Objectives on the interaction-picture propagator U_I(T).

struct TransitionProbability {
  int initial = 0;
  int target = 0;
};
struct ObservableExpectation {
  CMatrix rho;
  CMatrix observable;
};
struct GateDistance {
  CMatrix gate;
};
using ObjectiveSpec = std::variant<TransitionProbability, ObservableExpectation, GateDistance>;

void validate_objective(const ObjectiveSpec& objective, int dim);
std::string objective_name(const ObjectiveSpec& objective);

/// |U_ji|^2, Tr[U rho U^dag Theta], or ||U - W||_F^2.
double objective_value(const CMatrix& u_interaction, const ObjectiveSpec& objective);
double objective_value(const PropagationResult& result, const ObjectiveSpec& objective);

// Dyson series.

struct DysonDecomposition {
  std::vector<CMatrix> orders;  // U^0(T) ... U^M(T), interaction picture

  int truncation_order() const { return static_cast<int>(orders.size()) - 1; }
  CMatrix partial_sum(int max_order) const;
  double tail_norm() const;  // max-abs entry of the highest order
};

/// U^m(t) = -i int_0^t H_I(tau) U^{m-1}(tau) dtau with U^0 = I, cumulative
/// trapezoidal quadrature on the grid nodes.
DysonDecomposition dyson_terms(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                               int max_order);

/// Starts at initial_order and raises the truncation until the last term's
/// max-abs entry drops below tail_tolerance (or max_order is hit).
DysonDecomposition dyson_terms_adaptive(const QuantumSystem& system, const ControlField& field,
                                        const TimeGrid& grid, int initial_order = 12,
                                        double tail_tolerance = 1e-8, int max_order = 200);

struct InterferenceTable {
  std::vector<double> direct_terms;  // |U^m_ji|^2
  RMatrix cross_terms;               // (m, m') = 2 Re(U^m U^{m'*}) for m' < m, zero elsewhere
  double direct_sum = 0.0;
  double cross_sum = 0.0;
  double total = 0.0;  // direct_sum + cross_sum
  cplx amplitude;      // sum_m U^m_ji
};

InterferenceTable order_interference(const DysonDecomposition& decomposition, int initial, int target);

// Landscape scans.

struct ScanAxis {
  int gene = 0;
  double lower = 0.0;
  double upper = 1.0;
  int points = 1;

  double value(int index) const;
};

struct Landscape {
  ScanAxis axis1;
  ScanAxis axis2;
  RMatrix values;  // axis1.points x axis2.points
};

/// Varies two genes of the template chromosome over a dense grid; the other
/// genes stay fixed.
Landscape landscape_scan(const QuantumSystem& system, const Chromosome& chromosome_template,
                         const TimeGrid& grid, const ScanAxis& axis1, const ScanAxis& axis2,
                         const ObjectiveSpec& objective);

/// Count of strict interior local maxima (8-neighbourhood) of a landscape.
int count_local_maxima(const RMatrix& values);

// Batched column propagation through the lane kernels.

struct LaneRequest {
  CMatrix coupling;        // dim x dim (may be complex when encoded)
  std::vector<cplx> field; // grid.n_steps midpoint samples
  int initial = 0;
};

/// Interaction-picture columns U_I(T)|initial> for many independent variants.
/// make(index, lane) fills a request; consume(index, column) receives the
/// result. Requests are materialised in bounded chunks and chunks run in
/// parallel; consume may be called from worker threads with distinct indices.
void propagate_columns(const QuantumSystem& system, const TimeGrid& grid, std::size_t count,
                       const std::function<void(std::size_t, LaneRequest&)>& make,
                       const std::function<void(std::size_t, const CVector&)>& consume, int threads = 0);

/// Convenience wrapper: |<target| U_I(T) |initial>|^2 for a list of fields on one system.
std::vector<double> transition_probabilities(const QuantumSystem& system, std::span<const ControlField> fields,
                                             const TimeGrid& grid, int initial, int target, int threads = 0);

/// Objective for each field on one system: lane kernels for transition
/// probabilities, the reference integrator otherwise.
std::vector<double> objective_values(const QuantumSystem& system, std::span<const ControlField> fields,
                                     const TimeGrid& grid, const ObjectiveSpec& objective, int threads = 0);

std::vector<cplx> to_complex(std::span<const double> values);

}  // namespace qpr
