#include "qpr/moments.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <fmt/format.h>

#include "qpr/error.hpp"
#include "qpr/parallel.hpp"
#include "qpr/rng.hpp"

namespace qpr {

std::vector<ParameterTarget> MomentSpec::targets() const {
  std::vector<ParameterTarget> t;
  for (const auto& p : parameters) t.push_back(p.target);
  return t;
}

void MomentSpec::check_alignment(const EncodingScheme& scheme) const {
  if (static_cast<int>(parameters.size()) != scheme.size()) {
    throw ValidationError(fmt::format("moment spec has {} parameters but the encoding has {}", parameters.size(),
                                      scheme.size()));
  }
  for (std::size_t k = 0; k < parameters.size(); ++k) {
    if (!(parameters[k].target == scheme.encoded()[k])) {
      throw ValidationError(fmt::format("moment spec parameter {} ({}) does not match encoded parameter {}", k,
                                        parameters[k].target.label(), scheme.encoded()[k].label()));
    }
  }
}

bool MomentSpec::degenerate() const {
  return std::all_of(parameters.begin(), parameters.end(), [](const UncertainParameter& p) {
    return p.distribution.kind() == ParameterDistribution::Kind::point_mass;
  });
}

std::vector<std::vector<double>> theta_moment_table(const MomentSpec& spec, std::span<const double> nominal,
                                                    int max_power) {
  if (nominal.size() != spec.parameters.size()) throw ValidationError("nominal theta / spec length mismatch");
  std::vector<std::vector<double>> table(spec.parameters.size());
  for (std::size_t k = 0; k < spec.parameters.size(); ++k) {
    table[k].resize(static_cast<std::size_t>(max_power) + 1);
    for (int p = 0; p <= max_power; ++p) table[k][p] = spec.parameters[k].theta_moment(p, nominal[k]);
  }
  return table;
}

namespace {

int max_power(std::span<const Pathway> pathways) {
  int m = 0;
  for (const auto& p : pathways) {
    for (int a : p.polytope) m = std::max(m, a);
  }
  return m;
}

void check_lengths(std::span<const Pathway> pathways, std::span<const double> theta, const MomentSpec& spec) {
  if (theta.size() != spec.parameters.size()) throw ValidationError("nominal theta / spec length mismatch");
  for (const auto& p : pathways) {
    if (p.polytope.size() != spec.parameters.size()) {
      throw ValidationError("pathway polytopes are not aligned with the moment spec");
    }
  }
}

double pair_moment(const std::vector<std::vector<double>>& table, const Polytope& a, const Polytope& b) {
  double m = 1.0;
  for (std::size_t k = 0; k < a.size(); ++k) m *= table[k][static_cast<std::size_t>(a[k] + b[k])];
  return m;
}

double wrap_angle(double x) {
  double y = std::remainder(x, kTwoPi);  // [-pi, pi]
  if (y >= kTwoPi / 2) y -= kTwoPi;
  return y;
}

}  // namespace

RobustnessReport asymptotic_moments(std::span<const Pathway> pathways, std::span<const double> nominal_theta,
                                    const MomentSpec& spec) {
  check_lengths(pathways, nominal_theta, spec);
  const int mp = max_power(pathways);
  const auto table = theta_moment_table(spec, nominal_theta, 2 * mp);

  RobustnessReport r;
  const std::size_t n = pathways.size();
  long double eu_re = 0, eu_im = 0, e_re2 = 0, e_im2 = 0;
  const Polytope zero(spec.parameters.size(), 0);
  for (std::size_t a = 0; a < n; ++a) {
    const auto& pa = pathways[a];
    const double m1 = pair_moment(table, pa.polytope, zero);
    eu_re += static_cast<long double>(pa.coefficient.real()) * m1;
    eu_im += static_cast<long double>(pa.coefficient.imag()) * m1;
    long double row_re = 0, row_im = 0;
    for (std::size_t b = 0; b < a; ++b) {
      const auto& pb = pathways[b];
      const double m = pair_moment(table, pa.polytope, pb.polytope);
      row_re += static_cast<long double>(pb.coefficient.real()) * m;
      row_im += static_cast<long double>(pb.coefficient.imag()) * m;
    }
    const double m2 = pair_moment(table, pa.polytope, pa.polytope);
    e_re2 += pa.coefficient.real() * (2.0L * row_re + static_cast<long double>(pa.coefficient.real()) * m2);
    e_im2 += pa.coefficient.imag() * (2.0L * row_im + static_cast<long double>(pa.coefficient.imag()) * m2);
  }
  r.expected_amplitude = cplx(static_cast<double>(eu_re), static_cast<double>(eu_im));
  r.variance_re = std::max(0.0, static_cast<double>(e_re2 - eu_re * eu_re));
  r.variance_im = std::max(0.0, static_cast<double>(e_im2 - eu_im * eu_im));
  r.expected_probability = static_cast<double>(e_re2 + e_im2);
  r.nominal_probability = std::norm(reconstruct_amplitude(pathways, nominal_theta));
  r.truncation_flag = r.expected_probability > 1.0 + 1e-3;
  return r;
}

double truncation_budget(std::span<const Pathway> pathways, std::span<const double> nominal_theta,
                         const MomentSpec& spec, int tail_orders) {
  if (tail_orders < 1) throw ValidationError("tail_orders must be >= 1");
  int top = 0;
  for (const auto& p : pathways) top = std::max(top, p.order());
  std::vector<Pathway> kept;
  for (const auto& p : pathways) {
    if (p.order() <= top - tail_orders) kept.push_back(p);
  }
  const double full = asymptotic_moments(pathways, nominal_theta, spec).expected_probability;
  const double reduced = kept.empty() ? 0.0 : asymptotic_moments(kept, nominal_theta, spec).expected_probability;
  return std::abs(full - reduced);
}

InterferenceBreakdown interference_breakdown(std::span<const Pathway> pathways,
                                             std::span<const double> nominal_theta, const MomentSpec& spec,
                                             int n_bins, std::size_t max_terms) {
  if (n_bins < 2) throw ValidationError("interference histogram needs n_bins >= 2");
  check_lengths(pathways, nominal_theta, spec);
  const int mp = max_power(pathways);
  const auto table = theta_moment_table(spec, nominal_theta, 2 * mp);

  InterferenceBreakdown out;
  const double width = kTwoPi / n_bins;
  for (int b = 0; b < n_bins; ++b) {
    InterferenceBin bin;
    bin.lower = -kTwoPi / 2 + b * width;
    bin.upper = bin.lower + width;
    bin.center = bin.lower + 0.5 * width;
    out.bins.push_back(bin);
  }
  const std::size_t n = pathways.size();
  out.terms_stored = n * (n - (n > 0 ? 1 : 0)) / 2 <= max_terms;

  // nominal monomial prod theta^(alpha+alpha') = mono(alpha) * mono(alpha')
  std::vector<double> mono(n);
  for (std::size_t a = 0; a < n; ++a) {
    double m = 1.0;
    for (std::size_t k = 0; k < nominal_theta.size(); ++k) m *= std::pow(nominal_theta[k], pathways[a].polytope[k]);
    mono[a] = m;
  }
  for (std::size_t a = 0; a < n; ++a) {
    const auto& pa = pathways[a];
    const double amp_a = pa.magnitude();
    out.direct_nominal += amp_a * amp_a * mono[a] * mono[a];
    out.direct_expected += amp_a * amp_a * pair_moment(table, pa.polytope, pa.polytope);
    for (std::size_t b = 0; b < a; ++b) {
      const auto& pb = pathways[b];
      InterferenceTerm t;
      t.first = b;
      t.second = a;
      t.angle = wrap_angle(pa.phase() - pb.phase());
      const double base = 2.0 * amp_a * pb.magnitude() * std::cos(t.angle);
      t.nominal = base * mono[a] * mono[b];
      t.expected = base * pair_moment(table, pa.polytope, pb.polytope);
      auto idx = static_cast<int>(std::floor((t.angle + kTwoPi / 2) / width));
      idx = std::clamp(idx, 0, n_bins - 1);
      auto& bin = out.bins[static_cast<std::size_t>(idx)];
      bin.nominal += t.nominal;
      bin.expected += t.expected;
      ++bin.count;
      out.pairwise_nominal += t.nominal;
      out.pairwise_expected += t.expected;
      if (std::cos(t.angle) > 0.0) {
        out.constructive_nominal += t.nominal;
        out.constructive_expected += t.expected;
      } else if (std::cos(t.angle) < 0.0) {
        out.destructive_nominal += t.nominal;
        out.destructive_expected += t.expected;
      }
      if (out.terms_stored) out.terms.push_back(t);
    }
  }
  return out;
}

McEstimate summarize_samples(std::vector<double> values, bool keep_values) {
  McEstimate e;
  e.samples = values.size();
  if (e.samples < 2) throw ValidationError("Monte Carlo needs at least 2 samples");
  // fixed-order pairwise reduction
  std::function<double(std::size_t, std::size_t, const std::function<double(double)>&)> pairwise =
      [&](std::size_t lo, std::size_t hi, const std::function<double(double)>& f) -> double {
    if (hi - lo <= 64) {
      double s = 0.0;
      for (std::size_t i = lo; i < hi; ++i) s += f(values[i]);
      return s;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    return pairwise(lo, mid, f) + pairwise(mid, hi, f);
  };
  const auto n = static_cast<double>(e.samples);
  e.mean = pairwise(0, values.size(), [](double x) { return x; }) / n;
  const double m = e.mean;
  const double m2 = pairwise(0, values.size(), [m](double x) { return (x - m) * (x - m); }) / n;
  const double m4 = pairwise(0, values.size(), [m](double x) {
                      const double d = (x - m) * (x - m);
                      return d * d;
                    }) / n;
  e.variance = m2 * n / (n - 1.0);
  e.se_mean = std::sqrt(e.variance / n);
  e.se_variance = std::sqrt(std::max(0.0, (m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n));
  if (keep_values) e.values = std::move(values);
  return e;
}

McEstimate mc_estimate(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                       const MomentSpec& spec, const TransitionProbability& objective, std::size_t n_samples,
                       std::uint64_t seed, const McOptions& options) {
  if (n_samples < 2) throw ValidationError("Monte Carlo needs n_samples >= 2");
  validate_objective(objective, system.dimension());
  const auto targets = spec.targets();
  std::vector<double> nominal;
  for (const auto& t : targets) nominal.push_back(nominal_value(t, system, field));
  const std::size_t np = targets.size();

  std::optional<RMatrix> chol;
  if (options.covariance) {
    if (options.covariance->rows() != static_cast<Eigen::Index>(np) ||
        options.covariance->cols() != static_cast<Eigen::Index>(np)) {
      throw ValidationError("covariance size must match the parameter count");
    }
    Eigen::LLT<RMatrix> llt(*options.covariance);
    if (llt.info() != Eigen::Success) throw ValidationError("covariance must be symmetric positive definite");
    chol = llt.matrixL();
  }

  bool amplitude_uncertain = false;
  for (const auto& t : targets) amplitude_uncertain |= t.kind == ParameterTarget::Kind::amplitude;
  const auto mode_table = field.mode_table_midpoints(grid.n_steps);
  const auto base_field = to_complex(field.sample_midpoints(grid.n_steps));
  const CMatrix base_mu = system.dipole().cast<cplx>();

  std::vector<double> values(n_samples);
  propagate_columns(
      system, grid, n_samples,
      [&](std::size_t d, LaneRequest& lane) {
        auto rng = make_engine(seed, {static_cast<std::uint64_t>(d)});
        std::vector<double> theta(np);
        if (chol) {
          RVector z(static_cast<Eigen::Index>(np));
          std::normal_distribution<double> normal;
          for (std::size_t k = 0; k < np; ++k) z[static_cast<Eigen::Index>(k)] = normal(rng);
          const RVector x = *chol * z;
          for (std::size_t k = 0; k < np; ++k) {
            const auto& p = spec.parameters[k];
            const double xi = p.distribution.mean() + x[static_cast<Eigen::Index>(k)];
            theta[k] = p.relative ? nominal[k] * xi : xi;
          }
        } else {
          for (std::size_t k = 0; k < np; ++k) theta[k] = spec.parameters[k].sample(rng, nominal[k]);
        }
        lane.coupling = base_mu;
        lane.initial = objective.initial;
        std::vector<double> amplitudes;
        if (amplitude_uncertain) {
          for (const auto& m : field.modes()) amplitudes.push_back(m.amplitude);
        }
        for (std::size_t k = 0; k < np; ++k) {
          const auto& t = targets[k];
          if (t.kind == ParameterTarget::Kind::dipole) {
            lane.coupling(t.i, t.j) = theta[k];
            lane.coupling(t.j, t.i) = theta[k];
          } else {
            amplitudes[static_cast<std::size_t>(t.i)] = theta[k];
          }
        }
        if (amplitude_uncertain) {
          lane.field.assign(static_cast<std::size_t>(grid.n_steps), cplx{});
          for (std::size_t m = 0; m < amplitudes.size(); ++m) {
            const double* row = mode_table.data() + m * static_cast<std::size_t>(grid.n_steps);
            for (int q = 0; q < grid.n_steps; ++q) lane.field[static_cast<std::size_t>(q)] += amplitudes[m] * row[q];
          }
        } else {
          lane.field = base_field;
        }
      },
      [&](std::size_t d, const CVector& col) { values[d] = std::norm(col[objective.target]); }, options.threads);
  return summarize_samples(std::move(values), options.keep_values);
}

std::size_t calibrate_samples(double target_halfwidth, double variance_estimate, double confidence) {
  if (!(target_halfwidth > 0.0)) throw ValidationError("target halfwidth must be > 0");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ValidationError("confidence must lie in (0, 1)");
  if (!(variance_estimate >= 0.0)) throw ValidationError("variance estimate must be >= 0");
  const boost::math::normal_distribution<double> normal;
  const double z = boost::math::quantile(normal, 0.5 + 0.5 * confidence);
  const double n = std::ceil(std::pow(z * std::sqrt(variance_estimate) / target_halfwidth, 2));
  return std::max<std::size_t>(16, static_cast<std::size_t>(n));
}

LeadingOrderMoments leading_order_moments(const std::function<double(std::span<const double>)>& objective,
                                          std::span<const double> nominal_theta, const MomentSpec& spec,
                                          const LeadingOrderOptions& options) {
  const std::size_t n = nominal_theta.size();
  if (spec.parameters.size() != n) throw ValidationError("nominal theta / spec length mismatch");
  auto step = [&](std::size_t k, double rel) {
    return nominal_theta[k] != 0.0 ? rel * std::abs(nominal_theta[k]) : rel;
  };
  std::vector<double> x(nominal_theta.begin(), nominal_theta.end());
  auto eval_at = [&](std::initializer_list<std::pair<std::size_t, double>> shifts) {
    auto y = x;
    for (auto [k, d] : shifts) y[k] += d;
    return objective(y);
  };

  LeadingOrderMoments r;
  r.gradient.resize(n);
  r.hessian = RMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const double j0 = objective(x);
  for (std::size_t k = 0; k < n; ++k) {
    const double h = step(k, options.relative_step);
    r.gradient[k] = (eval_at({{k, h}}) - eval_at({{k, -h}})) / (2.0 * h);
    const double hs = step(k, options.hessian_step);
    r.hessian(k, k) = (eval_at({{k, hs}}) - 2.0 * j0 + eval_at({{k, -hs}})) / (hs * hs);
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double ha = step(a, options.hessian_step);
      const double hb = step(b, options.hessian_step);
      const double v = (eval_at({{a, ha}, {b, hb}}) - eval_at({{a, ha}, {b, -hb}}) - eval_at({{a, -ha}, {b, hb}}) +
                        eval_at({{a, -ha}, {b, -hb}})) /
                       (4.0 * ha * hb);
      r.hessian(a, b) = r.hessian(b, a) = v;
    }
  }
  // Independent parameters: E[d_k] = mean shift, E[d_a d_b] = var_a delta_ab + mu_a mu_b.
  std::vector<double> shift(n), var(n);
  for (std::size_t k = 0; k < n; ++k) {
    shift[k] = spec.parameters[k].theta_mean(nominal_theta[k]) - nominal_theta[k];
    var[k] = spec.parameters[k].theta_variance(nominal_theta[k]);
  }
  for (std::size_t a = 0; a < n; ++a) {
    r.first_order_E_shift += r.gradient[a] * shift[a];
    r.first_order_variance += r.gradient[a] * r.gradient[a] * var[a];
    for (std::size_t b = 0; b < n; ++b) {
      const double second = (a == b ? var[a] : 0.0) + shift[a] * shift[b];
      r.second_order_E_shift += 0.5 * r.hessian(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * second;
    }
  }
  return r;
}

LeadingOrderMoments leading_order_moments(const QuantumSystem& system, const ControlField& field,
                                          const TimeGrid& grid, const MomentSpec& spec,
                                          const TransitionProbability& objective,
                                          const LeadingOrderOptions& options) {
  const auto targets = spec.targets();
  std::vector<double> nominal;
  for (const auto& t : targets) nominal.push_back(nominal_value(t, system, field));
  auto j = [&](std::span<const double> theta) {
    const auto [sys, f] = apply_parameters(system, field, targets, theta);
    return objective_value(propagate(sys, f, grid), ObjectiveSpec{objective});
  };
  return leading_order_moments(j, nominal, spec, options);
}

}  // namespace qpr
