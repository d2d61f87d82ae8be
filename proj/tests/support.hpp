#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include "qpr/optimizers.hpp"
#include "qpr/propagator.hpp"
#include "qpr/rng.hpp"
#include "qpr/system.hpp"

namespace qpr::test {

// Hand-rolled generators for property tests. Every case is keyed by
// (seed, case index) so a failure names a reproducible input.

inline Engine case_rng(std::uint64_t suite, std::uint64_t index) { return make_engine(suite, {index}); }

inline double uniform(Engine& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline Chromosome random_genome(Engine& rng, int modes = 7, double amplitude = 0.15, const FieldBounds& b = {}) {
  return random_chromosome(modes, amplitude, b, rng);
}

/// Field with a random amplitude per mode in [amp_lo, amp_hi].
inline ControlField random_field(Engine& rng, int modes, double amp_lo, double amp_hi, double duration = 40.0) {
  std::vector<FieldMode> m;
  for (int k = 0; k < modes; ++k)
    m.push_back({uniform(rng, amp_lo, amp_hi), uniform(rng, 0.05, 4.0), uniform(rng, 0.0, kTwoPi)});
  return ControlField(m, duration);
}

inline QuantumSystem two_level(double gap = 1.0, double coupling = 1.0) {
  RVector e(2);
  e << 0.0, gap;
  RMatrix mu = RMatrix::Zero(2, 2);
  mu(0, 1) = mu(1, 0) = coupling;
  return QuantumSystem(e, mu);
}

/// Random real symmetric Hamiltonian-like system with zero-diagonal dipoles.
inline QuantumSystem random_system(Engine& rng, int dim) {
  RVector e(dim);
  double level = 0.0;
  for (int i = 0; i < dim; ++i) {
    e(i) = level;
    level += uniform(rng, 0.2, 1.0);
  }
  RMatrix mu = RMatrix::Zero(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = i + 1; j < dim; ++j) mu(i, j) = mu(j, i) = uniform(rng, -1.5, 1.5);
  return QuantumSystem(e, mu);
}

inline CMatrix random_unitary(Engine& rng, int dim) {
  CMatrix h(dim, dim);
  std::normal_distribution<double> n;
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) h(i, j) = {n(rng), n(rng)};
  const CMatrix herm = (h + h.adjoint()) / 2.0;
  Eigen::SelfAdjointEigenSolver<CMatrix> es(herm);
  CVector phases(dim);
  for (int i = 0; i < dim; ++i) phases(i) = std::exp(cplx(0.0, es.eigenvalues()(i)));
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }
inline double rel_err(cplx a, cplx b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Closed form of  int_0^T exp(i w t) A cos(v t + p) dt.
inline cplx exp_cos_integral(double w, double a, double v, double p, double T) {
  auto part = [&](double freq, double phase) {
    // int_0^T exp(i (freq t + phase)) dt
    if (std::abs(freq) < 1e-14) return std::exp(cplx(0.0, phase)) * T;
    return std::exp(cplx(0.0, phase)) * (std::exp(cplx(0.0, freq * T)) - 1.0) / cplx(0.0, freq);
  };
  return 0.5 * a * (part(w + v, p) + part(w - v, -p));
}

/// First-order amplitude oracle: i mu_ji int_0^T exp(i w_ji t) eps(t) dt.
inline cplx first_order_oracle(const QuantumSystem& s, const ControlField& f, int i, int j) {
  const double w = s.energies()(j) - s.energies()(i);
  cplx sum{};
  for (const auto& m : f.modes()) sum += exp_cos_integral(w, m.amplitude, m.frequency, m.phase, f.duration());
  return cplx(0.0, 1.0) * s.dipole()(j, i) * sum;
}

}  // namespace qpr::test
