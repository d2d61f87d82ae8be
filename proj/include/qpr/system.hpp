#pragma once

#include <complex>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qpr {

using cplx = std::complex<double>;
using RVector = Eigen::VectorXd;
using RMatrix = Eigen::MatrixXd;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Drift-free part H0 = diag(energies) plus a real symmetric dipole operator.
/// H(t) = H0 - dipole * field(t), hbar = 1.
class QuantumSystem {
 public:
  QuantumSystem(RVector energies, RMatrix dipole);

  int dimension() const { return static_cast<int>(energies_.size()); }
  const RVector& energies() const { return energies_; }
  const RMatrix& dipole() const { return dipole_; }

  /// Copy with mu(i,j) = mu(j,i) = value.
  QuantumSystem with_dipole_element(int i, int j, double value) const;

 private:
  RVector energies_;
  RMatrix dipole_;
};

/// The five-level benchmark system: H0 = diag(0, 0.5, 1, 1.5, 2) with the
/// fixed 5x5 coupling pattern in which the target level 4 couples to 1, 2 and 5.
QuantumSystem example_system();

struct FieldMode {
  double amplitude = 0.0;
  double frequency = 0.0;
  double phase = 0.0;
};

struct FieldBounds {
  double amplitude_min = 0.0;
  double amplitude_max = 1.0;
  double frequency_min = 0.05;
  double frequency_max = 4.0;
  // phases live in [0, 2*pi) and are wrapped, never clipped.

  void validate() const;
  double frequency_range() const { return frequency_max - frequency_min; }
};

/// Multimode cosine field  eps(t) = sum_k A_k cos(w_k t + phi_k)  on [0, T].
class ControlField {
 public:
  ControlField(std::vector<FieldMode> modes, double duration);

  double evaluate(double t) const;
  double duration() const { return duration_; }
  int mode_count() const { return static_cast<int>(modes_.size()); }
  const std::vector<FieldMode>& modes() const { return modes_; }

  /// Field at the n_steps step midpoints (q + 1/2) T / n_steps. Uses a
  /// resynchronised rotation recurrence; agrees with evaluate() to ~1e-15.
  std::vector<double> sample_midpoints(int n_steps) const;
  /// Field at the n_steps + 1 grid nodes q T / n_steps.
  std::vector<double> sample_nodes(int n_steps) const;

  /// Per-mode cos(w_k t_q + phi_k) at midpoints, mode-major (K x n_steps).
  std::vector<double> mode_table_midpoints(int n_steps) const;

  ControlField with_amplitudes(std::span<const double> amplitudes) const;
  ControlField with_amplitude(int mode, double amplitude) const;

 private:
  std::vector<FieldMode> modes_;
  double duration_;
};

inline double field_evaluate(const ControlField& field, double t) { return field.evaluate(t); }

/// GA genome: frequencies then phases, one amplitude shared by all modes.
struct Chromosome {
  std::vector<double> frequencies;
  std::vector<double> phases;
  double fixed_amplitude = 0.15;

  int mode_count() const { return static_cast<int>(frequencies.size()); }
  int gene_count() const { return 2 * mode_count(); }

  ControlField to_field(double duration) const;
  static Chromosome from_field(const ControlField& field);

  std::vector<double> genes() const;
  static Chromosome from_genes(std::span<const double> genes, double amplitude);

  bool within(const FieldBounds& bounds) const;
};

/// Wraps an angle into [0, 2*pi).
double wrap_phase(double phi);

class ParameterDistribution {
 public:
  enum class Kind { gaussian, uniform, point_mass };

  static ParameterDistribution gaussian(double mean, double sigma);
  static ParameterDistribution uniform(double lower, double upper);
  static ParameterDistribution point_mass(double value);

  Kind kind() const { return kind_; }
  double a() const { return a_; }
  double b() const { return b_; }

  /// E[xi^k] in closed form.
  double raw_moment(int k) const;
  double mean() const;
  double variance() const;

  template <class Rng>
  double sample(Rng& rng) const {
    switch (kind_) {
      case Kind::gaussian: return std::normal_distribution<double>(a_, b_)(rng);
      case Kind::uniform: return std::uniform_real_distribution<double>(a_, b_)(rng);
      case Kind::point_mass: return a_;
    }
    return a_;
  }

  std::string describe() const;

 private:
  ParameterDistribution(Kind kind, double a, double b) : kind_(kind), a_(a), b_(b) {}
  Kind kind_;
  double a_;  // mean | lower | value
  double b_;  // sigma | upper | unused
};

inline double raw_moment(const ParameterDistribution& dist, int k) { return dist.raw_moment(k); }

/// Which physical number an uncertain parameter perturbs.
struct ParameterTarget {
  enum class Kind { dipole, amplitude };
  Kind kind = Kind::dipole;
  int i = 0;  // dipole row (i < j) or mode index
  int j = 0;

  static ParameterTarget dipole(int a, int b);
  static ParameterTarget amplitude(int mode);

  std::string label() const;
  bool operator==(const ParameterTarget&) const = default;
};

double nominal_value(const ParameterTarget& target, const QuantumSystem& system,
                     const ControlField& field);

/// theta = nominal * xi (relative) or theta = xi (absolute).
struct UncertainParameter {
  ParameterTarget target;
  ParameterDistribution distribution = ParameterDistribution::point_mass(1.0);
  bool relative = true;

  /// E[theta^k] given the nominal value of the target.
  double theta_moment(int k, double nominal) const;
  double theta_mean(double nominal) const { return theta_moment(1, nominal); }
  double theta_variance(double nominal) const;

  template <class Rng>
  double sample(Rng& rng, double nominal) const {
    const double xi = distribution.sample(rng);
    return relative ? nominal * xi : xi;
  }
};

/// Returns (system, field) with each target set to the matching value.
std::pair<QuantumSystem, ControlField> apply_parameters(const QuantumSystem& system,
                                                        const ControlField& field,
                                                        std::span<const ParameterTarget> targets,
                                                        std::span<const double> values);

}  // namespace qpr
