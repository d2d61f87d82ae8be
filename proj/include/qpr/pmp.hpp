#pragma once

#include <string>
#include <vector>

#include "qpr/moments.hpp"
#include "qpr/pathways.hpp"
#include "qpr/propagator.hpp"

namespace qpr {

/// dJ/d eps(t) on the step midpoints (one value per step).
struct GradientTrace {
  std::vector<double> times;
  std::vector<double> values;
  double dt = 0.0;
  double sup_norm = 0.0;
  std::string objective;
  double objective_value = 0.0;  // J (nominal) or E[J] (expected)

  /// dJ/d eps_q for a bump of unit height on step q: values[q] * dt.
  double bump_derivative(int q) const { return values[static_cast<std::size_t>(q)] * dt; }
};

/// Gradient G on the unitary group such that dF = Re Tr(G^dag dU) for every
/// tangent variation dU of the interaction-picture propagator:
///   gate ||U - W||^2        -> U W^dag U - W
///   observable Tr[U rho U^dag Theta] -> [Theta, U rho U^dag] U
///   transition |U_ji|^2     -> the observable case with rho = |i><i|, Theta = |j><j|
/// Throws ValidationError if u_T is not unitary to 1e-8.
CMatrix terminal_gradient(const ObjectiveSpec& objective, const CMatrix& u_T);

struct PmpTrajectories {
  std::vector<CMatrix> propagator;  // U(t_q), Schrodinger picture, q = 0..n
  std::vector<CMatrix> costate;     // Phi(t_q), q = 0..n
  CMatrix terminal;                 // Phi(T) = exp(-i H0 T) G(U_I(T))
  GradientTrace gradient;
};

/// Forward propagation, terminal costate, backward costate sweep and the
/// exact gradient of the discretised objective:
///   dJ/d eps_q = Re Tr(Phi(t_{q+1})^dag dS_q U(t_q)),  g_q = (dJ/d eps_q) / dt,
/// where dS_q is the Frechet derivative of the step exponential.
PmpTrajectories pmp_trajectories(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                                 const ObjectiveSpec& objective);

GradientTrace nominal_gradient(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                               const ObjectiveSpec& objective);

struct ExpectedGradientOptions {
  int threads = 0;
  /// DecodingError when non-admissible bins of the encoded P exceed this
  /// fraction of the largest bin; negative disables the check.
  double alias_tol = 1e-3;
};

/// d E[J] / d eps(t) for a transition objective under the parameter spec,
/// using the encoded s-grid: F(s) = U_ji(s) conj(U_ji(-s)) extends
/// P(theta) holomorphically, its derivative traces are projected on the
/// admissible frequencies and reweighted by E[theta^beta] / theta^beta. The
/// scheme's max_total_order bounds the order of P (twice the amplitude order).
/// Also returns E[P] from the same projection in objective_value.
GradientTrace expected_gradient(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                                const EncodingScheme& scheme, const MomentSpec& spec,
                                const TransitionProbability& objective, const ExpectedGradientOptions& options = {});

/// sup_q |g_q|
double pmp_residual(const GradientTrace& trace);

/// Chain rule from the time trace to the chromosome genes (frequencies then
/// phases) for a field built with chromosome.to_field().
std::vector<double> gene_gradient(const Chromosome& chromosome, const GradientTrace& trace);

}  // namespace qpr
