#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "qpr/pathways.hpp"
#include "qpr/system.hpp"

namespace qpr {

/// One distribution per encoded parameter, aligned by index; independent.
struct MomentSpec {
  std::vector<UncertainParameter> parameters;

  std::vector<ParameterTarget> targets() const;
  /// Throws ValidationError unless parameters[k].target == scheme.encoded()[k].
  void check_alignment(const EncodingScheme& scheme) const;
  /// Every parameter a point mass at its nominal value.
  bool degenerate() const;
};

/// E[theta_k^p] for p = 0..max_power, per parameter.
std::vector<std::vector<double>> theta_moment_table(const MomentSpec& spec, std::span<const double> nominal,
                                                    int max_power);

struct InterferenceTerm {
  std::size_t first = 0;   // index of alpha' in the pathway list
  std::size_t second = 0;  // index of alpha
  double angle = 0.0;      // phi_alpha - phi_alpha', wrapped to [-pi, pi)
  double nominal = 0.0;    // 2 A A' cos(angle) prod theta^(alpha+alpha')
  double expected = 0.0;   // 2 A A' cos(angle) prod E[theta^(alpha_k+alpha'_k)]
};

struct InterferenceBin {
  double lower = 0.0;
  double upper = 0.0;
  double center = 0.0;
  double nominal = 0.0;   // signed sum of the terms in the bin
  double expected = 0.0;
  std::size_t count = 0;
  bool constructive() const { return std::cos(center) > 0.0; }
};

struct InterferenceBreakdown {
  std::vector<InterferenceTerm> terms;  // empty when terms_stored == false
  bool terms_stored = true;
  std::vector<InterferenceBin> bins;
  double direct_nominal = 0.0;   // sum |c|^2 prod theta^(2 alpha)
  double direct_expected = 0.0;  // sum |c|^2 prod E[theta^(2 alpha)]
  double pairwise_nominal = 0.0;
  double pairwise_expected = 0.0;
  double constructive_nominal = 0.0;
  double destructive_nominal = 0.0;
  double constructive_expected = 0.0;
  double destructive_expected = 0.0;
};

struct McEstimate {
  std::size_t samples = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double se_mean = 0.0;
  double se_variance = 0.0;
  std::vector<double> values;  // per-draw objective, when kept
};

struct RobustnessReport {
  cplx expected_amplitude;
  double variance_re = 0.0;
  double variance_im = 0.0;
  double expected_probability = 0.0;
  double nominal_probability = 0.0;
  bool truncation_flag = false;  // E[P] > 1 + 1e-3
  std::optional<McEstimate> monte_carlo;
  std::optional<InterferenceBreakdown> interference;
};

/// E[U], var(Re U), var(Im U), E[P] and nominal P from pathway coefficients.
RobustnessReport asymptotic_moments(std::span<const Pathway> pathways, std::span<const double> nominal_theta,
                                    const MomentSpec& spec);

/// Change in E[P] when the `tail_orders` highest retained orders are dropped.
/// Sizes the contributions at the truncation edge and serves as the error
/// budget for the omitted higher orders.
double truncation_budget(std::span<const Pathway> pathways, std::span<const double> nominal_theta,
                         const MomentSpec& spec, int tail_orders = 2);

/// Pairwise nominal/expected interference terms and an angle histogram over
/// [-pi, pi). Terms are kept only while the pair count stays below max_terms.
InterferenceBreakdown interference_breakdown(std::span<const Pathway> pathways,
                                             std::span<const double> nominal_theta, const MomentSpec& spec,
                                             int n_bins = 12, std::size_t max_terms = 2'000'000);

struct McOptions {
  bool keep_values = false;
  int threads = 0;
  /// Joint Gaussian on the multipliers xi (relative parameters) or values
  /// (absolute): mean from the per-parameter distributions, this covariance.
  std::optional<RMatrix> covariance;
};

/// Independent draws per spec, exact re-propagation, unbiased mean/variance
/// of the objective with standard errors. Draw d uses the stream (seed, d), so
/// results do not depend on the thread count.
McEstimate mc_estimate(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                       const MomentSpec& spec, const TransitionProbability& objective, std::size_t n_samples,
                       std::uint64_t seed, const McOptions& options = {});

/// Mean/variance summary of stored values (fixed-order pairwise sums).
McEstimate summarize_samples(std::vector<double> values, bool keep_values);

/// n = ceil((z * sqrt(variance) / halfwidth)^2), at least 16.
std::size_t calibrate_samples(double target_halfwidth, double variance_estimate, double confidence = 0.95);

struct LeadingOrderMoments {
  double first_order_E_shift = 0.0;
  double second_order_E_shift = 0.0;
  double first_order_variance = 0.0;
  std::vector<double> gradient;  // dJ/dtheta_k
  RMatrix hessian;
};

struct LeadingOrderOptions {
  double relative_step = 1e-4;  // gradient step, relative to |theta| (absolute when theta = 0)
  double hessian_step = 1e-3;
};

/// Taylor approximations around the nominal theta for any J(theta).
LeadingOrderMoments leading_order_moments(const std::function<double(std::span<const double>)>& objective,
                                          std::span<const double> nominal_theta, const MomentSpec& spec,
                                          const LeadingOrderOptions& options = {});

/// Same for the transition probability of (system, field) over spec's targets.
LeadingOrderMoments leading_order_moments(const QuantumSystem& system, const ControlField& field,
                                          const TimeGrid& grid, const MomentSpec& spec,
                                          const TransitionProbability& objective,
                                          const LeadingOrderOptions& options = {});

}  // namespace qpr
