#include <numbers>

#include "doctest.h"
#include "qpr/error.hpp"
#include "qpr/moments.hpp"
#include "support.hpp"

using namespace qpr;
using namespace qpr::test;

namespace {

std::vector<ParameterTarget> paper_targets() {
  return {ParameterTarget::dipole(0, 3), ParameterTarget::dipole(1, 3), ParameterTarget::dipole(3, 4)};
}

MomentSpec gaussian_spec(double sigma) {
  MomentSpec s;
  for (const auto& t : paper_targets()) s.parameters.push_back({t, ParameterDistribution::gaussian(1.0, sigma), true});
  return s;
}

MomentSpec point_spec() {
  MomentSpec s;
  for (const auto& t : paper_targets()) s.parameters.push_back({t, ParameterDistribution::point_mass(1.0), true});
  return s;
}

Pathway make_path(Polytope p, cplx c) { return {std::move(p), c, std::abs(c)}; }

// Random pathway set over two parameters with orders up to 4.
std::vector<Pathway> random_paths(Engine& rng, int count) {
  std::vector<Pathway> out;
  for (int a = 0; a <= 4 && static_cast<int>(out.size()) < count; ++a)
    for (int b = 0; a + b <= 4 && static_cast<int>(out.size()) < count; ++b)
      out.push_back(make_path({a, b}, std::polar(uniform(rng, 0.01, 0.5), uniform(rng, -3.1, 3.1))));
  return out;
}

MomentSpec two_param_spec(Engine& rng) {
  MomentSpec s;
  s.parameters.push_back({ParameterTarget::dipole(0, 1), ParameterDistribution::gaussian(1.0, uniform(rng, 0.01, 0.3)),
                          true});
  s.parameters.push_back({ParameterTarget::dipole(1, 2),
                          ParameterDistribution::uniform(uniform(rng, 0.7, 0.95), uniform(rng, 1.05, 1.3)), true});
  return s;
}

ControlField moderate_field(std::uint64_t n, double amplitude = 0.05) {
  auto rng = case_rng(0x81, n);
  return random_genome(rng, 7, amplitude).to_field(40.0);
}

}  // namespace

TEST_SUITE("moments") {
  TEST_CASE("degenerate uncertainty gives the nominal probability") {
    auto rng = case_rng(0x82, 0);
    const auto paths = random_paths(rng, 10);
    MomentSpec spec;
    spec.parameters.push_back({ParameterTarget::dipole(0, 1), ParameterDistribution::point_mass(1.0), true});
    spec.parameters.push_back({ParameterTarget::dipole(1, 2), ParameterDistribution::point_mass(1.0), true});
    const std::vector<double> theta{0.8, 1.3};
    const auto r = asymptotic_moments(paths, theta, spec);
    CHECK(std::abs(r.expected_probability - r.nominal_probability) <= 1e-14);
    CHECK(std::abs(r.nominal_probability - std::norm(reconstruct_amplitude(paths, theta))) <= 1e-14);
    CHECK(r.variance_re <= 1e-15);
    CHECK(r.variance_im <= 1e-15);
  }

  TEST_CASE("single pathway expectation is the even moment") {
    const std::vector<Pathway> paths{make_path({2}, cplx(0.3, 0.4))};
    MomentSpec spec;
    spec.parameters.push_back({ParameterTarget::dipole(0, 1), ParameterDistribution::gaussian(1.0, 0.2), true});
    const std::vector<double> theta{1.0};
    const auto r = asymptotic_moments(paths, theta, spec);
    // E[theta^4] for N(1, 0.04) = 1 + 6 s^2 + 3 s^4
    const double oracle = 0.25 * (1.0 + 6.0 * 0.04 + 3.0 * 0.0016);
    CHECK(std::abs(r.expected_probability - oracle) <= 1e-14);
    CHECK(r.expected_probability >= std::norm(r.expected_amplitude));
    CHECK(r.expected_probability > r.nominal_probability);
  }

  TEST_CASE("aligned and antiphase pathway pairs") {
    MomentSpec spec;
    spec.parameters.push_back({ParameterTarget::dipole(0, 1), ParameterDistribution::point_mass(1.0), true});
    const std::vector<double> theta{1.0};
    const auto aligned = interference_breakdown(
        std::vector{make_path({1}, std::polar(0.3, 0.7)), make_path({3}, std::polar(0.2, 0.7))}, theta, spec);
    CHECK(std::abs(aligned.pairwise_nominal - 2.0 * 0.3 * 0.2) <= 1e-14);
    CHECK(aligned.destructive_nominal == 0.0);
    const auto anti = interference_breakdown(
        std::vector{make_path({1}, std::polar(0.3, 0.7)), make_path({3}, std::polar(0.2, 0.7 + std::numbers::pi))},
        theta, spec);
    CHECK(std::abs(anti.pairwise_nominal + 2.0 * 0.3 * 0.2) <= 1e-14);
    CHECK(anti.constructive_nominal == 0.0);
    REQUIRE(anti.terms.size() == 1);
    CHECK(std::abs(std::abs(anti.terms[0].angle) - std::numbers::pi) <= 1e-12);
  }

  TEST_CASE("property: direct plus pairwise terms recover nominal and expected probability") {
    for (std::uint64_t n = 0; n < 60; ++n) {
      auto rng = case_rng(0x83, n);
      const auto paths = random_paths(rng, 3 + static_cast<int>(n % 12));
      const auto spec = two_param_spec(rng);
      const std::vector<double> theta{uniform(rng, 0.5, 1.5), uniform(rng, 0.5, 1.5)};
      const auto r = asymptotic_moments(paths, theta, spec);
      const auto ib = interference_breakdown(paths, theta, spec, 2 + static_cast<int>(n % 16));
      CHECK(std::abs(ib.direct_nominal + ib.pairwise_nominal - r.nominal_probability) <= 1e-12);
      CHECK(std::abs(ib.direct_expected + ib.pairwise_expected - r.expected_probability) <= 1e-12);
      double bins_n = 0.0, bins_e = 0.0;
      for (const auto& b : ib.bins) {
        bins_n += b.nominal;
        bins_e += b.expected;
      }
      CHECK(std::abs(bins_n - ib.pairwise_nominal) <= 1e-12);
      CHECK(std::abs(bins_e - ib.pairwise_expected) <= 1e-12);
      CHECK(std::abs(ib.constructive_nominal + ib.destructive_nominal - ib.pairwise_nominal) <= 1e-12);
    }
  }

  TEST_CASE("property: expected probability dominates the squared expected amplitude") {
    for (std::uint64_t n = 0; n < 100; ++n) {
      auto rng = case_rng(0x84, n);
      const auto paths = random_paths(rng, 2 + static_cast<int>(n % 14));
      const auto spec = two_param_spec(rng);
      const std::vector<double> theta{uniform(rng, 0.5, 1.5), uniform(rng, 0.5, 1.5)};
      const auto r = asymptotic_moments(paths, theta, spec);
      CHECK(r.expected_probability >= std::norm(r.expected_amplitude) - 1e-14);
      CHECK(std::abs(r.expected_probability - std::norm(r.expected_amplitude) - r.variance_re - r.variance_im) <=
            1e-12);
    }
  }

  TEST_CASE("asymptotic moments agree with Monte Carlo") {
    const auto s = example_system();
    const ControlField f = moderate_field(0);
    const TimeGrid grid = TimeGrid::for_duration(40.0, 0.02);
    const auto spec = gaussian_spec(0.05);
    const auto scheme = EncodingScheme::standard(paper_targets(), 24);
    const auto d = decode_pathways_detailed(s, f, grid, scheme, 0, 3, {0.0, 1e-6});
    const auto r = asymptotic_moments(d.pathways, d.theta, spec);
    const auto mc = mc_estimate(s, f, grid, spec, TransitionProbability{0, 3}, 4000, 7);
    const double budget = truncation_budget(d.pathways, d.theta, spec);
    MESSAGE("asymptotic " << r.expected_probability << " mc " << mc.mean << " +- " << mc.se_mean);
    CHECK(std::abs(r.expected_probability - mc.mean) <= 4.0 * mc.se_mean + budget + 1e-6);
  }

  TEST_CASE("Monte Carlo with point masses returns the nominal value") {
    const auto s = example_system();
    const ControlField f = moderate_field(1, 0.15);
    const TimeGrid grid = TimeGrid::for_duration(40.0, 0.05);
    const auto mc = mc_estimate(s, f, grid, point_spec(), TransitionProbability{0, 3}, 20, 3);
    const double nominal = objective_value(propagate(s, f, grid), TransitionProbability{0, 3});
    CHECK(std::abs(mc.mean - nominal) <= 1e-12);  // batched lanes differ from the scalar path by rounding
    CHECK(mc.variance <= 1e-28);
  }

  TEST_CASE("Monte Carlo is deterministic in the seed and independent of threads") {
    const auto s = example_system();
    const ControlField f = moderate_field(2, 0.15);
    const TimeGrid grid = TimeGrid::for_duration(40.0, 0.05);
    McOptions one, two;
    one.threads = 1;
    two.threads = 2;
    const auto a = mc_estimate(s, f, grid, gaussian_spec(0.1), TransitionProbability{0, 3}, 64, 11, one);
    const auto b = mc_estimate(s, f, grid, gaussian_spec(0.1), TransitionProbability{0, 3}, 64, 11, two);
    const auto c = mc_estimate(s, f, grid, gaussian_spec(0.1), TransitionProbability{0, 3}, 64, 12, one);
    CHECK(a.mean == b.mean);
    CHECK(a.variance == b.variance);
    CHECK(a.mean != c.mean);
  }

  TEST_CASE("small-noise variance follows the delta method") {
    const auto s = example_system();
    const ControlField f = moderate_field(3, 0.15);
    const TimeGrid grid = TimeGrid::for_duration(40.0, 0.05);
    const auto spec = gaussian_spec(0.01);
    const auto lo = leading_order_moments(s, f, grid, spec, TransitionProbability{0, 3});
    const auto mc = mc_estimate(s, f, grid, spec, TransitionProbability{0, 3}, 2000, 5);
    MESSAGE("delta " << lo.first_order_variance << " mc " << mc.variance);
    CHECK(rel_err(mc.variance, lo.first_order_variance) <= 0.2);
  }

  TEST_CASE("sample calibration") {
    CHECK(calibrate_samples(0.1, 1e-8) == 16);
    CHECK(calibrate_samples(0.05, 0.25) == 385);
    const auto n1 = calibrate_samples(0.02, 0.1), n2 = calibrate_samples(0.01, 0.1);
    CHECK(std::abs(static_cast<double>(n2) / static_cast<double>(n1) - 4.0) <= 0.01);
    CHECK(calibrate_samples(0.05, 0.25, 0.99) > 385);
    CHECK_THROWS_AS(calibrate_samples(0.0, 0.1), ValidationError);
  }

  TEST_CASE("calibrated sample size meets its half-width") {
    const double var = 0.09, half = 0.02;
    const std::size_t n = calibrate_samples(half, var);
    int hit = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      auto rng = case_rng(0x85, trial);
      std::normal_distribution<double> g(0.5, std::sqrt(var));
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) sum += g(rng);
      hit += std::abs(sum / static_cast<double>(n) - 0.5) <= half;
    }
    CHECK(hit >= 90);
  }

  TEST_CASE("leading-order moments of a quadratic") {
    MomentSpec spec;
    spec.parameters.push_back({ParameterTarget::amplitude(0), ParameterDistribution::gaussian(1.0, 0.1), true});
    const std::vector<double> theta{1.0};
    const auto lo = leading_order_moments([](std::span<const double> t) { return t[0] * t[0]; }, theta, spec);
    CHECK(std::abs(lo.first_order_E_shift) <= 1e-12);
    CHECK(std::abs(lo.second_order_E_shift - 0.01) <= 1e-8);
    CHECK(std::abs(lo.first_order_variance - 0.04) <= 1e-8);
  }

  TEST_CASE("zero-mean gaussian noise has no first-order shift") {
    const auto s = example_system();
    const auto lo = leading_order_moments(s, moderate_field(4, 0.15), TimeGrid::for_duration(40.0, 0.05),
                                          gaussian_spec(0.05), TransitionProbability{0, 3});
    CHECK(lo.first_order_E_shift == 0.0);
    CHECK(lo.first_order_variance > 0.0);
  }

  TEST_CASE("truncation budget shrinks with expansion order") {
    const auto s = example_system();
    const ControlField f = moderate_field(5);
    const TimeGrid grid = TimeGrid::for_duration(40.0, 0.05);
    const auto spec = gaussian_spec(0.05);
    double previous = 1.0;
    for (int m : {8, 16, 24}) {
      const auto d =
          decode_pathways_detailed(s, f, grid, EncodingScheme::standard(paper_targets(), m), 0, 3, {0.0, 1.0});
      const double budget = truncation_budget(d.pathways, d.theta, spec);
      MESSAGE("M " << m << " budget " << budget);
      CHECK(budget < previous);
      previous = budget;
    }
  }

  TEST_CASE("misaligned specs are rejected") {
    const auto scheme = EncodingScheme::standard({ParameterTarget::dipole(1, 3), ParameterTarget::dipole(0, 3)}, 4);
    CHECK_THROWS_AS(gaussian_spec(0.05).check_alignment(scheme), ValidationError);
    CHECK(point_spec().degenerate());
    CHECK_FALSE(gaussian_spec(0.05).degenerate());
  }
}
