#include "doctest.h"
#include "qpr/error.hpp"
#include "qpr/pmp.hpp"
#include "support.hpp"

using namespace qpr;
using namespace qpr::test;

namespace {

CMatrix random_hermitian(Engine& rng, int dim) {
  CMatrix h(dim, dim);
  std::normal_distribution<double> n;
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) h(i, j) = {n(rng), n(rng)};
  return (h + h.adjoint()) / 2.0;
}

CMatrix expi(const CMatrix& h, double s) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
  CVector d(h.rows());
  for (int k = 0; k < h.rows(); ++k) d(k) = std::exp(cplx(0.0, s * es.eigenvalues()(k)));
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().adjoint();
}

// Central difference of F along U -> exp(i h H) U against Re Tr(G^dag i H U).
double terminal_fd_error(const ObjectiveSpec& obj, const CMatrix& u, const CMatrix& h) {
  const double step = 1e-5;
  const double fd =
      (objective_value(expi(h, step) * u, obj) - objective_value(expi(h, -step) * u, obj)) / (2.0 * step);
  const CMatrix g = terminal_gradient(obj, u);
  const double an = (g.adjoint() * (cplx(0.0, 1.0) * h * u)).trace().real();
  return std::abs(fd - an);
}

std::vector<ParameterTarget> paper_targets() {
  return {ParameterTarget::dipole(0, 3), ParameterTarget::dipole(1, 3), ParameterTarget::dipole(3, 4)};
}

MomentSpec paper_spec(double sigma) {
  MomentSpec s;
  for (const auto& t : paper_targets())
    s.parameters.push_back({t, sigma > 0 ? ParameterDistribution::gaussian(1.0, sigma)
                                         : ParameterDistribution::point_mass(1.0),
                            true});
  return s;
}

double bump_fd(const QuantumSystem& s, const ControlField& f, const TimeGrid& grid, const ObjectiveSpec& obj, int q,
               double h = 1e-5) {
  auto plus = f.sample_midpoints(grid.n_steps), minus = plus;
  plus[static_cast<std::size_t>(q)] += h;
  minus[static_cast<std::size_t>(q)] -= h;
  return (objective_value(propagate_samples(s, plus, grid), obj) -
          objective_value(propagate_samples(s, minus, grid), obj)) /
         (2.0 * h);
}

}  // namespace

TEST_SUITE("pmp") {
  TEST_CASE("property: terminal gradients match finite differences on the unitary group") {
    for (std::uint64_t n = 0; n < 30; ++n) {
      auto rng = case_rng(0x91, n);
      const int dim = 2 + static_cast<int>(n % 3);
      const CMatrix u = random_unitary(rng, dim);
      const CMatrix h = random_hermitian(rng, dim);
      CHECK(terminal_fd_error(TransitionProbability{0, dim - 1}, u, h) <= 1e-6);
      CMatrix rho = CMatrix::Zero(dim, dim);
      rho(0, 0) = 1.0;
      CHECK(terminal_fd_error(ObservableExpectation{rho, random_hermitian(rng, dim)}, u, h) <= 1e-6);
      CHECK(terminal_fd_error(GateDistance{random_unitary(rng, dim)}, u, h) <= 1e-6);
    }
  }

  TEST_CASE("commuting observable has zero terminal gradient") {
    auto rng = case_rng(0x92, 0);
    const CMatrix u = random_unitary(rng, 3);
    CMatrix rho = CMatrix::Zero(3, 3);
    rho(1, 1) = 1.0;
    const CMatrix evolved = u * rho * u.adjoint();
    CHECK(terminal_gradient(ObservableExpectation{rho, evolved}, u).norm() <= 1e-12);
    CHECK(terminal_gradient(GateDistance{u}, u).norm() <= 1e-12);
  }

  TEST_CASE("non-unitary terminal propagator is rejected") {
    CHECK_THROWS_AS(terminal_gradient(TransitionProbability{0, 1}, 1.1 * CMatrix::Identity(2, 2)), ValidationError);
  }

  TEST_CASE("identity observable has a vanishing gradient trace") {
    const auto s = example_system();
    auto rng = case_rng(0x93, 0);
    const ControlField f = random_genome(rng).to_field(40.0);
    CMatrix rho = CMatrix::Zero(5, 5);
    rho(0, 0) = 1.0;
    const auto g = nominal_gradient(s, f, TimeGrid::for_duration(40.0, 0.05),
                                    ObservableExpectation{rho, CMatrix::Identity(5, 5)});
    CHECK(g.sup_norm <= 1e-12);
    CHECK(std::abs(g.objective_value - 1.0) <= 1e-12);
  }

  TEST_CASE("property: gradient trace matches single-step bump differences") {
    for (std::uint64_t n = 0; n < 12; ++n) {
      auto rng = case_rng(0x94, n);
      const auto s = n % 2 ? example_system() : random_system(rng, 3);
      const ControlField f = random_genome(rng, 7, uniform(rng, 0.02, 0.2)).to_field(40.0);
      const TimeGrid grid = TimeGrid::for_duration(40.0, 0.05);
      const ObjectiveSpec obj = TransitionProbability{0, s.dimension() - 1};
      const auto g = nominal_gradient(s, f, grid, obj);
      for (int k = 1; k <= 3; ++k) {
        const int q = k * grid.n_steps / 4 + static_cast<int>(n);
        const double fd = bump_fd(s, f, grid, obj, q);
        CHECK(std::abs(fd - g.bump_derivative(q)) <= 1e-8 + 1e-5 * std::abs(fd));
      }
    }
  }

  TEST_CASE("costate and propagator keep a constant overlap") {
    const auto s = example_system();
    auto rng = case_rng(0x95, 0);
    const auto t = pmp_trajectories(s, random_genome(rng).to_field(40.0), TimeGrid::for_duration(40.0, 0.05),
                                    TransitionProbability{0, 3});
    const CMatrix end = t.costate.back().adjoint() * t.propagator.back();
    double worst = 0.0;
    for (std::size_t q = 0; q < t.costate.size(); q += 37)
      worst = std::max(worst, (t.costate[q].adjoint() * t.propagator[q] - end).norm());
    CHECK(worst <= 1e-10);
    CHECK((t.costate.back() - t.terminal).norm() <= 1e-14);
  }

  TEST_CASE("gene gradient follows the chain rule") {
    const auto s = example_system();
    auto rng = case_rng(0x96, 0);
    const Chromosome c = random_genome(rng);
    const TimeGrid grid = TimeGrid::for_duration(40.0, 0.01);
    const ObjectiveSpec obj = TransitionProbability{0, 3};
    const auto genes = gene_gradient(c, nominal_gradient(s, c.to_field(40.0), grid, obj));
    for (std::size_t k : {std::size_t{0}, std::size_t{4}, std::size_t{9}}) {
      auto plus = c.genes(), minus = c.genes();
      const double h = 1e-6;
      plus[k] += h;
      minus[k] -= h;
      auto value = [&](const std::vector<double>& gvec) {
        return objective_value(propagate(s, Chromosome::from_genes(gvec, c.fixed_amplitude).to_field(40.0), grid), obj);
      };
      const double fd = (value(plus) - value(minus)) / (2.0 * h);
      // The trace is exact for the discretised field; the chain rule adds O(dt^2) from sampling.
      CHECK(std::abs(fd - genes[k]) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }

  TEST_CASE("expected gradient with point masses is the nominal gradient") {
    const auto s = example_system();
    auto rng = case_rng(0x97, 0);
    const ControlField f = random_genome(rng, 7, 0.02).to_field(40.0);
    const TimeGrid grid = TimeGrid::for_duration(40.0, 0.05);
    const auto spec = paper_spec(0.0);
    const auto e = expected_gradient(s, f, grid, EncodingScheme::standard(spec.targets(), 16), spec,
                                     TransitionProbability{0, 3});
    const auto g = nominal_gradient(s, f, grid, TransitionProbability{0, 3});
    double worst = 0.0;
    for (std::size_t q = 0; q < g.values.size(); ++q) worst = std::max(worst, std::abs(e.values[q] - g.values[q]));
    CHECK(worst <= 1e-6 * g.sup_norm);
    CHECK(std::abs(e.objective_value - g.objective_value) <= 1e-6 * g.objective_value);
  }

  TEST_CASE("single quadratic parameter scales the gradient by the second moment") {
    const auto s = two_level();
    const ControlField f({{1e-3, 1.1, 0.4}, {1e-3, 0.8, 1.9}}, 10.0);
    const TimeGrid grid = TimeGrid::for_duration(10.0, 0.01);
    MomentSpec spec;
    spec.parameters.push_back({ParameterTarget::dipole(0, 1), ParameterDistribution::gaussian(1.0, 0.1), true});
    const auto e = expected_gradient(s, f, grid, EncodingScheme::standard(spec.targets(), 8), spec,
                                     TransitionProbability{0, 1});
    const auto g = nominal_gradient(s, f, grid, TransitionProbability{0, 1});
    double worst = 0.0;
    for (std::size_t q = 0; q < g.values.size(); ++q)
      worst = std::max(worst, std::abs(e.values[q] - 1.01 * g.values[q]));
    CHECK(worst <= 1e-4 * g.sup_norm);
  }

  TEST_CASE("expected gradient matches a common-random-number derivative of the Monte Carlo mean") {
    const auto s = example_system();
    auto rng = case_rng(0x98, 0);
    const Chromosome c = random_genome(rng, 7, 0.02);
    const ControlField f = c.to_field(40.0);
    const TimeGrid grid = TimeGrid::for_duration(40.0, 0.05);
    const auto spec = paper_spec(0.1);
    const auto e = expected_gradient(s, f, grid, EncodingScheme::standard(spec.targets(), 16), spec,
                                     TransitionProbability{0, 3});
    // Direction: scale of mode 0, i.e. d eps / dA_0 = cos(w_0 t + p_0).
    const auto& m = f.modes()[0];
    double directional = 0.0;
    for (std::size_t q = 0; q < e.values.size(); ++q)
      directional += e.values[q] * std::cos(m.frequency * e.times[q] + m.phase) * e.dt;
    const double h = 1e-4;
    const std::size_t n = 4000;
    const auto plus = mc_estimate(s, f.with_amplitude(0, m.amplitude + h), grid, spec, TransitionProbability{0, 3}, n, 21);
    const auto minus = mc_estimate(s, f.with_amplitude(0, m.amplitude - h), grid, spec, TransitionProbability{0, 3}, n, 21);
    const double fd = (plus.mean - minus.mean) / (2.0 * h);
    MESSAGE("expected-gradient direction " << directional << " crn " << fd);
    CHECK(std::abs(directional - fd) <= 0.03 * std::abs(fd));
  }

  TEST_CASE("strong fields with too low an order are flagged") {
    const auto s = example_system();
    auto rng = case_rng(0x99, 0);
    const auto spec = paper_spec(0.05);
    CHECK_THROWS_AS(expected_gradient(s, random_genome(rng, 7, 0.15).to_field(40.0), TimeGrid::for_duration(40.0, 0.05),
                                      EncodingScheme::standard(spec.targets(), 6), spec, TransitionProbability{0, 3}),
                    DecodingError);
  }

  TEST_CASE("residual is the sup norm of the trace") {
    GradientTrace t;
    t.values.assign(100, 0.0);
    CHECK(pmp_residual(t) == 0.0);
    t.values[37] = -5.0;
    CHECK(pmp_residual(t) == 5.0);
  }
}
