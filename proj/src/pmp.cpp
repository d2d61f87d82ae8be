#include "qpr/pmp.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <unsupported/Eigen/FFT>

#include "qpr/error.hpp"
#include "qpr/parallel.hpp"

namespace qpr {

namespace {

ObservableExpectation as_observable(const TransitionProbability& tp, int n) {
  ObservableExpectation o;
  o.rho = CMatrix::Zero(n, n);
  o.observable = CMatrix::Zero(n, n);
  o.rho(tp.initial, tp.initial) = 1.0;
  o.observable(tp.target, tp.target) = 1.0;
  return o;
}

// d/d eps exp(-i dt (H0 - eps mu)) in the eigenbasis of the step Hamiltonian:
// V (Gamma o (V^T (i dt mu) V)) V^T with the divided differences of exp.
CMatrix step_derivative(const StepExponential& s, const RMatrix& mu, double dt) {
  const int n = static_cast<int>(s.eigenvalues.size());
  const RMatrix m = s.eigenvectors.transpose() * mu * s.eigenvectors;
  CMatrix inner(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const double la = s.eigenvalues[a];
      const double lb = s.eigenvalues[b];
      const double u = 0.5 * dt * (la - lb);
      const double sinc = std::abs(u) < 1e-8 ? 1.0 - u * u / 6.0 : std::sin(u) / u;
      const cplx gamma = std::polar(1.0, -0.5 * dt * (la + lb)) * sinc;
      inner(a, b) = gamma * cplx(0.0, dt * m(a, b));
    }
  }
  const CMatrix v = s.eigenvectors.cast<cplx>();
  return v * inner * v.transpose();
}

}  // namespace

CMatrix terminal_gradient(const ObjectiveSpec& objective, const CMatrix& u) {
  const int n = static_cast<int>(u.rows());
  validate_objective(objective, n);
  if (unitarity_residual(u) > 1e-8) throw ValidationError("terminal gradient needs a unitary U(T)");
  return std::visit(
      [&](const auto& o) -> CMatrix {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, GateDistance>) {
          return u * o.gate.adjoint() * u - o.gate;
        } else {
          ObservableExpectation obs;
          if constexpr (std::is_same_v<T, TransitionProbability>) {
            obs = as_observable(o, n);
          } else {
            obs = o;
          }
          const CMatrix rho_t = u * obs.rho * u.adjoint();
          return (obs.observable * rho_t - rho_t * obs.observable) * u;
        }
      },
      objective);
}

PmpTrajectories pmp_trajectories(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                                 const ObjectiveSpec& objective) {
  validate_objective(objective, system.dimension());
  grid.validate();
  const int n = system.dimension();
  const int steps = grid.n_steps;
  const double dt = grid.dt();
  const auto eps = field.sample_midpoints(steps);

  PmpTrajectories r;
  std::vector<StepExponential> step(static_cast<std::size_t>(steps));
  r.propagator.reserve(static_cast<std::size_t>(steps) + 1);
  r.propagator.push_back(CMatrix::Identity(n, n));
  for (int q = 0; q < steps; ++q) {
    step[q] = step_exponential(system, eps[q], dt);
    r.propagator.push_back(step[q].step * r.propagator.back());
  }
  const CMatrix& u_t = r.propagator.back();
  if (const double res = unitarity_residual(u_t); res > 1e-9) {
    throw IntegrationError(fmt::format("unitarity residual {:.3e} exceeds 1e-9; use a smaller dt", res));
  }
  const CMatrix frame = interaction_frame(system, grid.duration);
  const CMatrix u_i = frame * u_t;
  r.terminal = frame.adjoint() * terminal_gradient(objective, u_i);

  r.costate.assign(static_cast<std::size_t>(steps) + 1, CMatrix());
  r.costate[steps] = r.terminal;
  for (int q = steps - 1; q >= 0; --q) r.costate[q] = step[q].step.adjoint() * r.costate[q + 1];

  auto& g = r.gradient;
  g.dt = dt;
  g.objective = objective_name(objective);
  g.objective_value = objective_value(u_i, objective);
  g.times.resize(static_cast<std::size_t>(steps));
  g.values.resize(static_cast<std::size_t>(steps));
  for (int q = 0; q < steps; ++q) {
    const CMatrix ds = step_derivative(step[q], system.dipole(), dt);
    const cplx tr = (r.costate[q + 1].adjoint() * ds * r.propagator[q]).trace();
    g.times[q] = grid.midpoint(q);
    g.values[q] = tr.real() / dt;
    g.sup_norm = std::max(g.sup_norm, std::abs(g.values[q]));
  }
  return r;
}

GradientTrace nominal_gradient(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                               const ObjectiveSpec& objective) {
  return pmp_trajectories(system, field, grid, objective).gradient;
}

namespace {

// Taylor action of exp(X) and of its Frechet derivative along E on a vector,
// for complex (non-Hermitian) step generators X = -i dt (H0 - eps C),
// E = dX/d eps = i dt C. Block form: exp([[X, E], [0, X]]) [0; v].
struct EncodedStepper {
  int n;
  double dt;
  std::vector<double> energies;  // shifted by the midrange
  double shift;
  CMatrix coupling;
  int order;

  EncodedStepper(const QuantumSystem& system, const CMatrix& c, double dt_, double field_max) : dt(dt_), coupling(c) {
    n = system.dimension();
    const auto& e = system.energies();
    const double lo = e.minCoeff();
    const double hi = e.maxCoeff();
    shift = 0.5 * (lo + hi);
    for (int a = 0; a < n; ++a) energies.push_back(e[a] - shift);
    double row_max = 0.0;
    for (int a = 0; a < n; ++a) row_max = std::max(row_max, c.row(a).cwiseAbs().sum());
    const double x = dt * (0.5 * (hi - lo) + field_max * row_max) + dt * row_max;
    if (x > 0.5) throw ValidationError("expected-gradient step too large; use a smaller dt");
    double term = 1.0;
    order = 0;
    while (order < 60) {
      ++order;
      term *= x / order;
      if (term * x / (order + 1) < 1e-17) break;
    }
    order += 2;
  }

  // y = X v with X = -i dt (diag(energies) - eps C)
  void apply(double eps, const cplx* v, cplx* y) const {
    for (int a = 0; a < n; ++a) {
      cplx w{};
      for (int b = 0; b < n; ++b) w += coupling(a, b) * v[b];
      const cplx hv = energies[static_cast<std::size_t>(a)] * v[a] - eps * w;
      y[a] = cplx(dt * hv.imag(), -dt * hv.real());
    }
  }

  // y = E v = i dt C v
  void apply_direction(const cplx* v, cplx* y) const {
    for (int a = 0; a < n; ++a) {
      cplx w{};
      for (int b = 0; b < n; ++b) w += coupling(a, b) * v[b];
      y[a] = cplx(-dt * w.imag(), dt * w.real());
    }
  }

  void step(double eps, std::vector<cplx>& v) const {
    std::vector<cplx> term(v), next(static_cast<std::size_t>(n));
    for (int k = 1; k <= order; ++k) {
      apply(eps, term.data(), next.data());
      for (int a = 0; a < n; ++a) {
        term[a] = next[a] / static_cast<double>(k);
        v[a] += term[a];
      }
    }
  }

  // returns L(X, E) v
  std::vector<cplx> derivative(double eps, const std::vector<cplx>& v) const {
    std::vector<cplx> top(static_cast<std::size_t>(n), cplx{}), bottom(v), sum(static_cast<std::size_t>(n), cplx{});
    std::vector<cplx> t1(static_cast<std::size_t>(n)), t2(static_cast<std::size_t>(n)), b1(static_cast<std::size_t>(n));
    for (int k = 1; k <= order; ++k) {
      apply(eps, top.data(), t1.data());
      apply_direction(bottom.data(), t2.data());
      apply(eps, bottom.data(), b1.data());
      for (int a = 0; a < n; ++a) {
        top[a] = (t1[a] + t2[a]) / static_cast<double>(k);
        bottom[a] = b1[a] / static_cast<double>(k);
        sum[a] += top[a];
      }
    }
    return sum;
  }
};

struct EncodedGradient {
  cplx amplitude;               // U_ji(s), Schrodinger picture
  std::vector<cplx> derivative; // dU_ji(s)/d eps_q
};

EncodedGradient encoded_transition_gradient(const EncodedDynamics& dyn, double s, int i, int j) {
  LaneRequest lane;
  dyn.fill(s, i, lane);
  const int n = dyn.system.dimension();
  const int steps = dyn.grid.n_steps;
  double field_max = 0.0;
  for (const auto& f : lane.field) field_max = std::max(field_max, std::abs(f));
  const bool real_field = std::all_of(lane.field.begin(), lane.field.end(), [](const cplx& z) { return z.imag() == 0.0; });
  if (!real_field) throw ValidationError("expected gradient supports dipole encodings only");
  const EncodedStepper stepper(dyn.system, lane.coupling, dyn.grid.dt(), field_max);

  std::vector<std::vector<cplx>> forward(static_cast<std::size_t>(steps) + 1);
  std::vector<cplx> v(static_cast<std::size_t>(n), cplx{});
  v[static_cast<std::size_t>(i)] = 1.0;
  forward[0] = v;
  for (int q = 0; q < steps; ++q) {
    stepper.step(lane.field[q].real(), v);
    forward[q + 1] = v;
  }
  // r_q^T = e_j^T S_{n-1} ... S_q; S_q^T = S_q because the encoded coupling
  // stays symmetric.
  std::vector<cplx> r(static_cast<std::size_t>(n), cplx{});
  r[static_cast<std::size_t>(j)] = 1.0;
  EncodedGradient out;
  out.derivative.resize(static_cast<std::size_t>(steps));
  const cplx phase = std::polar(1.0, -stepper.shift * dyn.grid.duration);
  for (int q = steps - 1; q >= 0; --q) {
    const auto lv = stepper.derivative(lane.field[q].real(), forward[q]);
    cplx d{};
    for (int a = 0; a < n; ++a) d += r[a] * lv[a];
    out.derivative[q] = phase * d;
    stepper.step(lane.field[q].real(), r);
  }
  out.amplitude = phase * forward[steps][static_cast<std::size_t>(j)];
  return out;
}

}  // namespace

GradientTrace expected_gradient(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                                const EncodingScheme& scheme, const MomentSpec& spec,
                                const TransitionProbability& objective, const ExpectedGradientOptions& options) {
  validate_objective(objective, system.dimension());
  spec.check_alignment(scheme);
  for (const auto& t : scheme.encoded()) {
    if (t.kind != ParameterTarget::Kind::dipole) {
      throw ValidationError("expected gradient supports dipole encodings only (field-noise PMP is out of scope)");
    }
  }
  const auto theta = scheme.nominal_theta(system, field);
  const int max_order = scheme.max_total_order();
  const auto table = theta_moment_table(spec, theta, max_order);

  // weights w(s_q) = (1/N) sum_{beta admissible} ratio_beta exp(-i gamma_beta s_q)
  const int ns = scheme.s_points();
  std::vector<cplx> ratio_bin(static_cast<std::size_t>(ns), cplx{});
  for (std::size_t p = 0; p < scheme.admissible().size(); ++p) {
    const auto& beta = scheme.admissible()[p];
    double ratio = 1.0;
    for (std::size_t k = 0; k < beta.size(); ++k) ratio *= table[k][beta[k]] / std::pow(theta[k], beta[k]);
    ratio_bin[static_cast<std::size_t>(scheme.bin(p))] = ratio;
  }
  std::vector<cplx> weight;
  Eigen::FFT<double> fft;
  fft.fwd(weight, ratio_bin);
  for (auto& w : weight) w /= static_cast<double>(ns);

  const EncodedDynamics dyn(system, field, grid, scheme);
  const int steps = grid.n_steps;
  GradientTrace g;
  g.dt = grid.dt();
  g.objective = "E[" + objective_name(objective) + "]";
  g.times.resize(static_cast<std::size_t>(steps));
  g.values.assign(static_cast<std::size_t>(steps), 0.0);
  std::vector<cplx> acc(static_cast<std::size_t>(steps), cplx{});
  std::vector<cplx> extension(static_cast<std::size_t>(ns), cplx{});  // F(s_q)
  cplx expected{};

  // s_q pairs with s_{N-q} = -s_q. Pairs are processed in fixed blocks and
  // reduced in index order, bounding memory and keeping thread invariance.
  const int half = ns / 2;
  constexpr int kBlock = 128;
  auto add = [&](int q, const EncodedGradient& plus, const EncodedGradient& minus) {
    const cplx w = weight[static_cast<std::size_t>(q)];
    extension[static_cast<std::size_t>(q)] = plus.amplitude * std::conj(minus.amplitude);
    expected += w * extension[static_cast<std::size_t>(q)];
    for (int t = 0; t < steps; ++t) {
      const cplx d = plus.derivative[t] * std::conj(minus.amplitude) + plus.amplitude * std::conj(minus.derivative[t]);
      acc[t] += w * d;
    }
  };
  for (int first = 0; first <= half; first += kBlock) {
    const int count = std::min(kBlock, half + 1 - first);
    std::vector<EncodedGradient> pos(static_cast<std::size_t>(count)), neg(static_cast<std::size_t>(count));
    parallel_for(
        static_cast<std::size_t>(2 * count),
        [&](std::size_t idx) {
          const int j = static_cast<int>(idx / 2);
          const int q = first + j;
          const int partner = (ns - q) % ns;
          auto& slot = (idx % 2 == 0) ? pos[static_cast<std::size_t>(j)] : neg[static_cast<std::size_t>(j)];
          if (idx % 2 == 1 && partner == q) return;
          slot = encoded_transition_gradient(dyn, scheme.s_value(idx % 2 == 0 ? q : partner), objective.initial,
                                             objective.target);
        },
        options.threads);
    for (int j = 0; j < count; ++j) {
      const int q = first + j;
      const int partner = (ns - q) % ns;
      const auto& a = pos[static_cast<std::size_t>(j)];
      if (partner == q) {
        add(q, a, a);
        continue;
      }
      const auto& b = neg[static_cast<std::size_t>(j)];
      add(q, a, b);
      add(partner, b, a);
    }
  }
  if (options.alias_tol >= 0.0) {
    // Energy in frequencies no admissible polytope maps to means the
    // truncation order is too low for this field.
    std::vector<cplx> bins;
    fft.fwd(bins, extension);
    std::vector<char> admitted(static_cast<std::size_t>(ns), 0);
    for (std::size_t p = 0; p < scheme.admissible().size(); ++p) admitted[static_cast<std::size_t>(scheme.bin(p))] = 1;
    double peak = 0.0, stray = 0.0;
    for (int b = 0; b < ns; ++b) {
      const double m = std::abs(bins[static_cast<std::size_t>(b)]);
      peak = std::max(peak, m);
      if (!admitted[static_cast<std::size_t>(b)]) stray = std::max(stray, m);
    }
    if (peak > 0.0 && stray > options.alias_tol * peak) {
      throw DecodingError(fmt::format(
          "expected gradient: non-admissible bins reach {:.3e} of the largest bin (tolerance {:.1e}); raise the "
          "expansion order",
          stray / peak, options.alias_tol));
    }
  }
  g.objective_value = expected.real();
  for (int t = 0; t < steps; ++t) {
    g.times[t] = grid.midpoint(t);
    g.values[t] = acc[t].real() / g.dt;
    g.sup_norm = std::max(g.sup_norm, std::abs(g.values[t]));
  }
  return g;
}

double pmp_residual(const GradientTrace& trace) {
  double m = 0.0;
  for (double v : trace.values) m = std::max(m, std::abs(v));
  return m;
}

std::vector<double> gene_gradient(const Chromosome& chromosome, const GradientTrace& trace) {
  const int k = chromosome.mode_count();
  std::vector<double> out(static_cast<std::size_t>(2 * k), 0.0);
  const double a = chromosome.fixed_amplitude;
  for (int m = 0; m < k; ++m) {
    double dw = 0.0, dp = 0.0;
    for (std::size_t q = 0; q < trace.values.size(); ++q) {
      const double t = trace.times[q];
      const double s = std::sin(chromosome.frequencies[m] * t + chromosome.phases[m]);
      const double dj = trace.values[q] * trace.dt;  // dJ/d eps_q
      dw += dj * (-a * t * s);
      dp += dj * (-a * s);
    }
    out[m] = dw;
    out[k + m] = dp;
  }
  return out;
}

}  // namespace qpr
