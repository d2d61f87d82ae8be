#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <numbers>

#include "doctest.h"
#include "qpr/error.hpp"
#include "support.hpp"

using namespace qpr;
using namespace qpr::test;

namespace {

// E[X^k] by adaptive quadrature over the density.
double quadrature_moment(const ParameterDistribution& d, int k) {
  using boost::math::quadrature::gauss_kronrod;
  if (d.kind() == ParameterDistribution::Kind::gaussian) {
    const double m = d.a(), s = d.b();
    auto f = [&](double x) {
      return std::pow(x, k) * std::exp(-0.5 * (x - m) * (x - m) / (s * s)) / (s * std::sqrt(2.0 * std::numbers::pi));
    };
    return gauss_kronrod<double, 61>::integrate(f, m - 14.0 * s, m + 14.0 * s, 20, 1e-15);
  }
  const double lo = d.a(), hi = d.b();
  auto f = [&](double x) { return std::pow(x, k) / (hi - lo); };
  return gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-15);
}

}  // namespace

TEST_SUITE("system") {
  TEST_CASE("constant single mode evaluates to its amplitude") {
    const ControlField f({{1.0, 0.0, 0.0}}, 10.0);
    for (double t : {0.0, 0.3, 7.7}) CHECK(f.evaluate(t) == 1.0);
  }

  TEST_CASE("quadrature-phase mode vanishes at t = 0") {
    const ControlField f({{0.15, 1.0, std::numbers::pi / 2}}, 10.0);
    CHECK(std::abs(f.evaluate(0.0)) <= 1e-15);
  }

  TEST_CASE("seven-mode field matches a 50-digit direct summation") {
    using F = boost::multiprecision::cpp_dec_float_50;
    const std::vector<double> w{1.7384, 1.0448, 1.3715, 1.3669, 1.5256, 0.7038, 3.2220};
    const std::vector<double> p{2.4826, 1.9833, 0.2558, 6.1403, 5.5389, 1.6142, 4.9542};
    F oracle = 0;
    for (std::size_t k = 0; k < w.size(); ++k) oracle += F(0.15) * cos(F(w[k]) + F(p[k]));
    const double frozen = -0.22024375217839891656;
    Chromosome c{w, p, 0.15};
    const double value = c.to_field(40.0).evaluate(1.0);
    CHECK(std::abs(value - oracle.convert_to<double>()) <= 1e-14);
    CHECK(std::abs(value - frozen) <= 1e-14);
  }

  TEST_CASE("gaussian raw moments") {
    CHECK(ParameterDistribution::gaussian(0.7, 0.2).raw_moment(1) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(ParameterDistribution::gaussian(0.0, 1.0).raw_moment(4) == doctest::Approx(3.0).epsilon(1e-15));
    const auto g = ParameterDistribution::gaussian(1.0, 0.1);
    const double oracle = quadrature_moment(g, 6);
    const double frozen = 1.154515;  // 1 + 15 s^2 + 45 s^4 + 15 s^6
    CHECK(rel_err(g.raw_moment(6), oracle) <= 1e-10);
    CHECK(rel_err(g.raw_moment(6), frozen) <= 1e-12);
  }

  TEST_CASE("benchmark system matrices") {
    const auto s = example_system();
    REQUIRE(s.dimension() == 5);
    for (int i = 0; i < 5; ++i) CHECK(s.energies()(i) == 0.5 * i);
    CHECK(s.dipole()(0, 3) == 1.0);
    CHECK(s.dipole()(0, 1) == 2.0);
    CHECK(s.dipole()(0, 2) == 2.0);
    CHECK((s.dipole() - s.dipole().transpose()).norm() == 0.0);
    for (int i = 0; i < 5; ++i) CHECK(s.dipole()(i, i) == 0.0);
  }

  TEST_CASE("invalid inputs are rejected") {
    CHECK_THROWS_AS(ControlField({{0.1, 1.0, 0.0}}, -1.0), ValidationError);
    CHECK_THROWS_AS(ParameterDistribution::gaussian(1.0, -0.1), ValidationError);
    CHECK_THROWS_AS(ParameterDistribution::uniform(2.0, 1.0), ValidationError);
    RVector e(2);
    e << 0.0, 1.0;
    CHECK_THROWS_AS(QuantumSystem(e, RMatrix::Ones(3, 3)), ValidationError);
  }

  TEST_CASE("property: chromosome -> field -> chromosome round trip is exact") {
    for (std::uint64_t n = 0; n < 200; ++n) {
      auto rng = case_rng(0x51, n);
      const int modes = 1 + static_cast<int>(n % 9);
      const Chromosome c = random_genome(rng, modes, uniform(rng, 0.0, 1.0));
      const Chromosome back = Chromosome::from_field(c.to_field(40.0));
      CHECK(back.frequencies == c.frequencies);
      CHECK(back.phases == c.phases);
      CHECK(back.fixed_amplitude == c.fixed_amplitude);
      CHECK(Chromosome::from_genes(c.genes(), c.fixed_amplitude).genes() == c.genes());
    }
  }

  TEST_CASE("property: gaussian variance is sigma squared") {
    for (std::uint64_t n = 0; n < 200; ++n) {
      auto rng = case_rng(0x52, n);
      const double m = uniform(rng, -3.0, 3.0), s = uniform(rng, 1e-3, 2.0);
      const auto g = ParameterDistribution::gaussian(m, s);
      const double var = g.raw_moment(2) - g.raw_moment(1) * g.raw_moment(1);
      CHECK(std::abs(var - s * s) <= 1e-14 * std::max(1.0, m * m));
    }
  }

  TEST_CASE("property: raw moments match quadrature up to order 10") {
    for (std::uint64_t n = 0; n < 40; ++n) {
      auto rng = case_rng(0x53, n);
      const auto d = n % 2 == 0 ? ParameterDistribution::gaussian(uniform(rng, 0.5, 1.5), uniform(rng, 0.01, 0.3))
                                : ParameterDistribution::uniform(uniform(rng, 0.5, 0.9), uniform(rng, 1.0, 1.5));
      for (int k = 0; k <= 10; ++k) CHECK(rel_err(d.raw_moment(k), quadrature_moment(d, k)) <= 1e-10);
    }
  }

  TEST_CASE("property: field is linear in each amplitude") {
    for (std::uint64_t n = 0; n < 50; ++n) {
      auto rng = case_rng(0x54, n);
      const ControlField f = random_field(rng, 7, 0.0, 0.5);
      const int k = static_cast<int>(n % 7);
      const auto& m = f.modes()[static_cast<std::size_t>(k)];
      const ControlField doubled = f.with_amplitude(k, 2.0 * m.amplitude);
      for (int q = 0; q < 20; ++q) {
        const double t = uniform(rng, 0.0, 40.0);
        CHECK(std::abs(doubled.evaluate(t) - (f.evaluate(t) + m.amplitude * std::cos(m.frequency * t + m.phase))) <=
              1e-14);
      }
    }
  }

  TEST_CASE("property: midpoint sampling agrees with direct evaluation") {
    for (std::uint64_t n = 0; n < 20; ++n) {
      auto rng = case_rng(0x55, n);
      const ControlField f = random_field(rng, 7, 0.0, 0.3);
      const int steps = 4000;
      const auto s = f.sample_midpoints(steps);
      double worst = 0.0;
      for (int q = 0; q < steps; ++q) worst = std::max(worst, std::abs(s[q] - f.evaluate((q + 0.5) * 40.0 / steps)));
      CHECK(worst <= 1e-13);
    }
  }

  TEST_CASE("phases wrap into [0, 2 pi)") {
    for (double p : {-7.0, -1e-17, 0.0, 3.0, kTwoPi, 100.0}) {
      const double w = wrap_phase(p);
      CHECK(w >= 0.0);
      CHECK(w < kTwoPi);
      CHECK(std::abs(std::remainder(w - p, kTwoPi)) <= 1e-12);
    }
  }
}
