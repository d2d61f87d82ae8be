#pragma once

// Batched column propagation for many independent small systems that share a
// drift Hamiltonian and a time grid. Each lane carries its own (possibly
// complex) coupling matrix and field samples; every step applies
//   v <- exp(-i dt (diag(E) - eps_q * C)) v
// with eps_q the field at the step midpoint. The exponential is a truncated
// Taylor series accurate to round-off, so it reproduces the eigen-based
// reference integrator and remains valid for the non-Hermitian couplings that
// pathway encoding produces.
//
// Implementations: a portable scalar reference plus AVX2/FMA (four lanes per
// register) and AVX-512F (eight lanes) variants built from one templated
// kernel. propagate_batch() picks the widest supported one at runtime; the
// equivalence tests pin them to the scalar reference.

#include <complex>
#include <span>
#include <string_view>

namespace qpr::kernels {

using cplx = std::complex<double>;

struct Lane {
  const cplx* coupling = nullptr;  // dim x dim, row-major
  const cplx* field = nullptr;     // n_steps midpoint samples
  int initial_state = 0;
};

struct BatchProblem {
  int dim = 0;
  int n_steps = 0;
  double dt = 0.0;
  std::span<const double> energies;
  std::span<const Lane> lanes;
};

/// Step plan shared by all implementations so they perform identical work.
struct StepPlan {
  double energy_shift = 0.0;  // removed from the drift, restored as a global phase
  int substeps = 1;
  int taylor_order = 1;
};

StepPlan plan_steps(const BatchProblem& problem);

enum class Isa { scalar, avx2, avx512 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
/// Best supported ISA, unless overridden by force_isa() or QPR_FORCE_SCALAR.
Isa active_isa();
void force_isa(Isa isa);
void clear_forced_isa();

/// Writes lanes.size() * dim Schrodinger-picture amplitudes (lane-major).
void propagate_batch(const BatchProblem& problem, std::span<cplx> out);
void propagate_batch(const BatchProblem& problem, std::span<cplx> out, Isa isa);

namespace detail {
void propagate_scalar(const BatchProblem& problem, const StepPlan& plan, std::span<const double> shifted,
                      std::span<cplx> out);
void propagate_avx2(const BatchProblem& problem, const StepPlan& plan, std::span<const double> shifted,
                    std::span<cplx> out);
void propagate_avx512(const BatchProblem& problem, const StepPlan& plan, std::span<const double> shifted,
                      std::span<cplx> out);
bool avx2_compiled();
bool avx512_compiled();
}  // namespace detail

}  // namespace qpr::kernels
