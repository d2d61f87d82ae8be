#include "qpr/kernels/batch_propagate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "qpr/error.hpp"

namespace qpr::kernels {

namespace {

constexpr double kMaxSubstepNorm = 0.5;
constexpr int kMaxTaylorOrder = 40;

std::atomic<int> g_forced{-1};

void validate(const BatchProblem& p, std::span<cplx> out) {
  if (p.dim < 1 || p.n_steps < 1 || !(p.dt > 0.0)) throw ValidationError("invalid batch geometry");
  if (static_cast<int>(p.energies.size()) != p.dim) throw ValidationError("energy count != dim");
  if (out.size() != p.lanes.size() * static_cast<std::size_t>(p.dim)) {
    throw ValidationError("output buffer size mismatch");
  }
  for (const auto& lane : p.lanes) {
    if (!lane.coupling || !lane.field) throw ValidationError("lane without coupling/field");
    if (lane.initial_state < 0 || lane.initial_state >= p.dim) throw ValidationError("initial state out of range");
  }
}

}  // namespace

StepPlan plan_steps(const BatchProblem& p) {
  StepPlan plan;
  const auto [lo, hi] = std::minmax_element(p.energies.begin(), p.energies.end());
  plan.energy_shift = 0.5 * (*lo + *hi);
  const double drift = 0.5 * (*hi - *lo);

  double coupling_norm = 0.0;
  double field_max = 0.0;
  const auto n = static_cast<std::size_t>(p.dim);
  for (const auto& lane : p.lanes) {
    for (std::size_t a = 0; a < n; ++a) {
      double row = 0.0;
      for (std::size_t b = 0; b < n; ++b) row += std::abs(lane.coupling[a * n + b]);
      coupling_norm = std::max(coupling_norm, row);
    }
    for (int q = 0; q < p.n_steps; ++q) field_max = std::max(field_max, std::abs(lane.field[q]));
  }
  const double bound = p.dt * (drift + field_max * coupling_norm);
  plan.substeps = std::max(1, static_cast<int>(std::ceil(bound / kMaxSubstepNorm)));
  const double x = bound / plan.substeps;

  // smallest K with x^{K+1}/(K+1)! below double round-off
  double term = 1.0;
  int k = 0;
  while (k < kMaxTaylorOrder) {
    ++k;
    term *= x / k;
    if (term * x / (k + 1) < 1e-17) break;
  }
  plan.taylor_order = std::max(k, 1);
  return plan;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::avx2: return "avx2";
    case Isa::avx512: return "avx512";
    default: return "scalar";
  }
}

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(__x86_64__) || defined(__i386__)
  if (isa == Isa::avx2) {
    return detail::avx2_compiled() && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }
  return detail::avx512_compiled() && __builtin_cpu_supports("avx512f");
#else
  return false;
#endif
}

Isa active_isa() {
  const int forced = g_forced.load();
  if (forced >= 0) return static_cast<Isa>(forced);
  static const bool env_scalar = [] {
    const char* v = std::getenv("QPR_FORCE_SCALAR");
    return v != nullptr && v[0] != '\0' && v[0] != '0';
  }();
  if (env_scalar) return Isa::scalar;
  if (isa_supported(Isa::avx512)) return Isa::avx512;
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

void force_isa(Isa isa) {
  if (!isa_supported(isa)) throw ValidationError("requested ISA not supported on this CPU");
  g_forced.store(static_cast<int>(isa));
}

void clear_forced_isa() { g_forced.store(-1); }

void propagate_batch(const BatchProblem& problem, std::span<cplx> out) {
  propagate_batch(problem, out, active_isa());
}

void propagate_batch(const BatchProblem& problem, std::span<cplx> out, Isa isa) {
  validate(problem, out);
  if (problem.lanes.empty()) return;
  const StepPlan plan = plan_steps(problem);
  std::vector<double> shifted(problem.energies.begin(), problem.energies.end());
  for (double& e : shifted) e -= plan.energy_shift;

  if (isa == Isa::avx512 && isa_supported(Isa::avx512)) {
    detail::propagate_avx512(problem, plan, shifted, out);
  } else if (isa == Isa::avx2 && isa_supported(Isa::avx2)) {
    detail::propagate_avx2(problem, plan, shifted, out);
  } else {
    detail::propagate_scalar(problem, plan, shifted, out);
  }

  const double total_time = problem.dt * problem.n_steps;
  const cplx phase = std::polar(1.0, -plan.energy_shift * total_time);
  for (auto& z : out) z *= phase;
}

namespace detail {

void propagate_scalar(const BatchProblem& p, const StepPlan& plan, std::span<const double> shifted,
                      std::span<cplx> out) {
  const auto n = static_cast<std::size_t>(p.dim);
  const double h = p.dt / plan.substeps;
  std::vector<cplx> v(n), term(n), next(n);
  for (std::size_t l = 0; l < p.lanes.size(); ++l) {
    const Lane& lane = p.lanes[l];
    std::fill(v.begin(), v.end(), cplx{});
    v[static_cast<std::size_t>(lane.initial_state)] = 1.0;
    for (int q = 0; q < p.n_steps; ++q) {
      const cplx eps = lane.field[q];
      for (int r = 0; r < plan.substeps; ++r) {
        term = v;
        for (int k = 1; k <= plan.taylor_order; ++k) {
          const double c = h / k;
          for (std::size_t a = 0; a < n; ++a) {
            cplx w{};
            const cplx* row = lane.coupling + a * n;
            for (std::size_t b = 0; b < n; ++b) w += row[b] * term[b];
            const cplx hv = shifted[a] * term[a] - eps * w;
            next[a] = cplx(c * hv.imag(), -c * hv.real());  // (-i c) * hv
          }
          for (std::size_t a = 0; a < n; ++a) {
            term[a] = next[a];
            v[a] += term[a];
          }
        }
      }
    }
    std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(l * n));
  }
}

}  // namespace detail

}  // namespace qpr::kernels
