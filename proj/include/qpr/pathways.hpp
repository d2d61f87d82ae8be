#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qpr/propagator.hpp"
#include "qpr/system.hpp"

namespace qpr {

using Polytope = std::vector<int>;

/// theta_k -> theta_k exp(i gamma_k s) for each encoded parameter.
class EncodingScheme {
 public:
  /// gamma_k = (M+1)^(k-1), N_s = smallest power of two >= 2 * M * gamma_n.
  static EncodingScheme standard(std::vector<ParameterTarget> encoded, int max_total_order = 10);
  /// Explicit gammas and sample count; throws ValidationError when two
  /// admissible polytopes share a frequency modulo N_s or Nyquist fails.
  static EncodingScheme custom(std::vector<ParameterTarget> encoded, std::vector<std::int64_t> gammas,
                               int s_points, int max_total_order);

  const std::vector<ParameterTarget>& encoded() const { return encoded_; }
  const std::vector<std::int64_t>& gammas() const { return gammas_; }
  int s_points() const { return s_points_; }
  int max_total_order() const { return max_total_order_; }
  int size() const { return static_cast<int>(encoded_.size()); }

  /// All polytopes with sum(alpha) <= max_total_order, graded by order.
  const std::vector<Polytope>& admissible() const { return admissible_; }
  std::int64_t frequency(const Polytope& alpha) const;
  /// DFT bin (frequency mod N_s) of an admissible polytope, by index.
  int bin(std::size_t admissible_index) const { return bins_[admissible_index]; }
  double s_value(int q) const;

  /// Nominal theta of every encoded parameter; zero nominal -> ValidationError.
  std::vector<double> nominal_theta(const QuantumSystem& system, const ControlField& field) const;

 private:
  EncodingScheme() = default;
  void build();

  std::vector<ParameterTarget> encoded_;
  std::vector<std::int64_t> gammas_;
  int s_points_ = 0;
  int max_total_order_ = 0;
  std::vector<Polytope> admissible_;
  std::vector<int> bins_;
};

struct Pathway {
  Polytope polytope;
  cplx coefficient;                // c_alpha = bin / prod theta^alpha
  double weighted_magnitude = 0.0; // |bin| = |c_alpha| prod |theta|^alpha

  double magnitude() const { return std::abs(coefficient); }
  double phase() const { return std::arg(coefficient); }
  int order() const;
  std::string label() const;  // "[0,4,1]"
};

/// Lane description of the encoded dynamics at one s value: complex coupling
/// (dipole entries scaled) and complex midpoint field (amplitudes scaled).
struct EncodedDynamics {
  EncodedDynamics(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                  const EncodingScheme& scheme);

  void fill(double s, int initial, LaneRequest& lane) const;

  const QuantumSystem& system;
  TimeGrid grid;
  const EncodingScheme& scheme;
  std::vector<double> mode_table;  // K x n_steps, mode-major
  std::vector<double> base_field;  // midpoint field of the non-encoded modes
};

/// U_I(T, s) with every encoded parameter multiplied by exp(i gamma_k s).
/// Not unitary for s != 0.
CMatrix encoded_propagate(const QuantumSystem& system, const ControlField& field, const TimeGrid& grid,
                          const EncodingScheme& scheme, double s);

struct DecodeOptions {
  double retention_tol = 1e-4;
  double alias_tol = -1.0;  // < 0: same as retention_tol
};

struct DecodeResult {
  std::vector<Pathway> pathways;   // retained, sorted by weighted magnitude
  std::vector<cplx> samples;       // U_ji(T, s_q)
  std::vector<cplx> bins;          // b_gamma = (1/N_s) sum_q U(s_q) exp(-i gamma s_q)
  std::vector<double> theta;       // nominal theta used for normalisation
  double max_bin = 0.0;
  double alias_ratio = 0.0;        // largest non-admissible bin / max_bin
};

/// Samples U_ji(T, s) on the s-grid, transforms, and assigns bins to
/// polytopes. i = initial state, j = final state (0-based). Throws
/// DecodingError when non-admissible bins carry more than alias_tol * max.
DecodeResult decode_pathways_detailed(const QuantumSystem& system, const ControlField& field,
                                      const TimeGrid& grid, const EncodingScheme& scheme, int i, int j,
                                      const DecodeOptions& options = {});

std::vector<Pathway> decode_pathways(const QuantumSystem& system, const ControlField& field,
                                     const TimeGrid& grid, const EncodingScheme& scheme, int i, int j,
                                     double retention_tol = 1e-4);

/// sum_alpha c_alpha prod theta_k^alpha_k
cplx reconstruct_amplitude(std::span<const Pathway> pathways, std::span<const double> theta);

// Sensitivity screening.

struct ParameterSensitivity {
  ParameterTarget target;
  double nominal = 0.0;
  double derivative = 0.0;   // dJ/dtheta (central difference)
  double curvature = 0.0;    // d2J/dtheta2 (central difference)
  double score = 0.0;        // |derivative|, or |curvature| at critical fields
};

struct SensitivityOptions {
  double relative_step = 1e-4;
  double curvature_step = 1e-3;
  double criticality_tol = 1e-4;  // gradient max-norm below this -> curvature ranking
};

struct SignificanceReport {
  std::vector<ParameterSensitivity> candidates;  // every nonzero dipole and amplitude
  std::vector<ParameterSensitivity> significant; // score >= threshold * max score, descending
  bool critical = false;
  double gradient_max_norm = 0.0;
};

/// Candidates: dipole elements (i < j) with nonzero value and modes with
/// nonzero amplitude.
SignificanceReport significant_parameters(const QuantumSystem& system, const ControlField& field,
                                          const TimeGrid& grid, const ObjectiveSpec& objective, double threshold,
                                          const SensitivityOptions& options = {});

struct HessianRankOptions {
  double frequency_step = 1e-4;
  double phase_step = 1e-3;
  double criticality_tol = 1e-2;  // gene-gradient max-norm gate
  double rank_tol = 1e-6;         // eigenvalues above rank_tol * max|lambda| count
};

struct HessianRankReport {
  bool checked = false;
  std::string status;
  double objective = 0.0;
  std::vector<double> gradient;     // dJ/dgene
  double gradient_max_norm = 0.0;
  RMatrix hessian;                  // 2K x 2K
  std::vector<double> eigenvalues;  // descending by magnitude
  int numerical_rank = 0;
  int rank_bound = 0;               // 2N - 2
};

/// Finite-difference Hessian of J over the 2K genes (frequencies, phases).
HessianRankReport hessian_rank_check(const QuantumSystem& system, const Chromosome& chromosome,
                                     const TimeGrid& grid, const ObjectiveSpec& objective,
                                     const HessianRankOptions& options = {});

}  // namespace qpr
