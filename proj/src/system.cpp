#include "qpr/system.hpp"

#include <cmath>
#include <fmt/format.h>
#include <sstream>

#include "qpr/error.hpp"

namespace qpr {

const char* category_name(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::domain: return "domain";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::integration: return "integration";
    case ErrorCategory::decoding: return "decoding";
    case ErrorCategory::io: return "io";
    case ErrorCategory::invariant: return "invariant";
  }
  return "unknown";
}

QuantumSystem::QuantumSystem(RVector energies, RMatrix dipole)
    : energies_(std::move(energies)), dipole_(std::move(dipole)) {
  const auto n = energies_.size();
  if (n < 1) throw ValidationError("quantum system needs at least one level");
  if (dipole_.rows() != n || dipole_.cols() != n) {
    throw ValidationError(fmt::format("dipole is {}x{} but system has {} levels", dipole_.rows(),
                                      dipole_.cols(), n));
  }
  for (Eigen::Index a = 0; a < n; ++a) {
    if (!std::isfinite(energies_[a])) throw ValidationError("energies must be finite");
    if (a > 0 && energies_[a] < energies_[a - 1]) {
      throw ValidationError("energies must be sorted non-decreasing");
    }
    for (Eigen::Index b = 0; b < n; ++b) {
      if (!std::isfinite(dipole_(a, b))) throw ValidationError("dipole entries must be finite");
      if (dipole_(a, b) != dipole_(b, a)) {
        throw ValidationError(fmt::format("dipole not symmetric at ({}, {})", a, b));
      }
    }
  }
}

QuantumSystem QuantumSystem::with_dipole_element(int i, int j, double value) const {
  RMatrix mu = dipole_;
  mu(i, j) = value;
  mu(j, i) = value;
  return QuantumSystem(energies_, std::move(mu));
}

QuantumSystem example_system() {
  RVector e(5);
  e << 0.0, 0.5, 1.0, 1.5, 2.0;
  RMatrix mu(5, 5);
  // clang-format off
  mu << 0, 2, 2, 1, 0,
        2, 0, 0, 2, 0,
        2, 0, 0, 0, 2,
        1, 2, 0, 0, 2,
        0, 0, 2, 2, 0;
  // clang-format on
  return QuantumSystem(std::move(e), std::move(mu));
}

void FieldBounds::validate() const {
  if (!(amplitude_min <= amplitude_max)) throw ValidationError("amplitude bounds inverted");
  if (!(frequency_min < frequency_max)) throw ValidationError("frequency bounds must have positive range");
  if (frequency_min < 0.0 || amplitude_min < 0.0) throw ValidationError("bounds must be non-negative");
}

double wrap_phase(double phi) {
  double w = std::fmod(phi, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w = 0.0;  // fmod of a value just below a multiple can round up
  return w;
}

ControlField::ControlField(std::vector<FieldMode> modes, double duration)
    : modes_(std::move(modes)), duration_(duration) {
  if (!(duration_ > 0.0) || !std::isfinite(duration_)) throw ValidationError("field duration must be > 0");
  for (const auto& m : modes_) {
    if (!std::isfinite(m.amplitude) || !std::isfinite(m.frequency) || !std::isfinite(m.phase)) {
      throw ValidationError("field mode parameters must be finite");
    }
  }
}

double ControlField::evaluate(double t) const {
  if (!(t >= 0.0 && t <= duration_)) {
    throw DomainError(fmt::format("t = {} outside [0, {}]", t, duration_));
  }
  double sum = 0.0;
  for (const auto& m : modes_) sum += m.amplitude * std::cos(m.frequency * t + m.phase);
  return sum;
}

namespace {

// cos(w * (q + offset) * dt + phi) for q = 0..count-1, accumulated into out with weight.
void accumulate_mode(const FieldMode& m, double dt, double offset, int count, double weight,
                     double* out, std::ptrdiff_t stride) {
  constexpr int kResync = 64;
  const cplx rot(std::cos(m.frequency * dt), std::sin(m.frequency * dt));
  cplx z;
  for (int q = 0; q < count; ++q) {
    if (q % kResync == 0) {
      const double arg = m.frequency * (q + offset) * dt + m.phase;
      z = cplx(std::cos(arg), std::sin(arg));
    }
    out[q * stride] += weight * z.real();
    z *= rot;
  }
}

}  // namespace

std::vector<double> ControlField::sample_midpoints(int n_steps) const {
  if (n_steps < 1) throw ValidationError("n_steps must be >= 1");
  std::vector<double> eps(static_cast<std::size_t>(n_steps), 0.0);
  const double dt = duration_ / n_steps;
  for (const auto& m : modes_) accumulate_mode(m, dt, 0.5, n_steps, m.amplitude, eps.data(), 1);
  return eps;
}

std::vector<double> ControlField::sample_nodes(int n_steps) const {
  if (n_steps < 1) throw ValidationError("n_steps must be >= 1");
  std::vector<double> eps(static_cast<std::size_t>(n_steps) + 1, 0.0);
  const double dt = duration_ / n_steps;
  for (const auto& m : modes_) accumulate_mode(m, dt, 0.0, n_steps + 1, m.amplitude, eps.data(), 1);
  return eps;
}

std::vector<double> ControlField::mode_table_midpoints(int n_steps) const {
  const auto k = modes_.size();
  std::vector<double> table(k * static_cast<std::size_t>(n_steps), 0.0);
  const double dt = duration_ / n_steps;
  for (std::size_t m = 0; m < k; ++m) {
    accumulate_mode(modes_[m], dt, 0.5, n_steps, 1.0, table.data() + m * n_steps, 1);
  }
  return table;
}

ControlField ControlField::with_amplitudes(std::span<const double> amplitudes) const {
  if (amplitudes.size() != modes_.size()) throw ValidationError("amplitude count mismatch");
  auto modes = modes_;
  for (std::size_t k = 0; k < modes.size(); ++k) modes[k].amplitude = amplitudes[k];
  return ControlField(std::move(modes), duration_);
}

ControlField ControlField::with_amplitude(int mode, double amplitude) const {
  auto modes = modes_;
  modes.at(static_cast<std::size_t>(mode)).amplitude = amplitude;
  return ControlField(std::move(modes), duration_);
}

ControlField Chromosome::to_field(double duration) const {
  if (frequencies.size() != phases.size()) throw ValidationError("chromosome frequency/phase length mismatch");
  std::vector<FieldMode> modes(frequencies.size());
  for (std::size_t k = 0; k < modes.size(); ++k) modes[k] = {fixed_amplitude, frequencies[k], phases[k]};
  return ControlField(std::move(modes), duration);
}

Chromosome Chromosome::from_field(const ControlField& field) {
  Chromosome c;
  const auto& modes = field.modes();
  if (modes.empty()) throw ValidationError("field has no modes");
  c.fixed_amplitude = modes.front().amplitude;
  for (const auto& m : modes) {
    if (m.amplitude != c.fixed_amplitude) throw ValidationError("chromosome needs a shared amplitude");
    c.frequencies.push_back(m.frequency);
    c.phases.push_back(m.phase);
  }
  return c;
}

std::vector<double> Chromosome::genes() const {
  std::vector<double> g(frequencies);
  g.insert(g.end(), phases.begin(), phases.end());
  return g;
}

Chromosome Chromosome::from_genes(std::span<const double> genes, double amplitude) {
  if (genes.size() % 2 != 0) throw ValidationError("gene vector length must be even");
  const auto k = genes.size() / 2;
  Chromosome c;
  c.frequencies.assign(genes.begin(), genes.begin() + static_cast<std::ptrdiff_t>(k));
  c.phases.assign(genes.begin() + static_cast<std::ptrdiff_t>(k), genes.end());
  c.fixed_amplitude = amplitude;
  return c;
}

bool Chromosome::within(const FieldBounds& b) const {
  if (fixed_amplitude < b.amplitude_min || fixed_amplitude > b.amplitude_max) return false;
  for (double w : frequencies) {
    if (w < b.frequency_min || w > b.frequency_max) return false;
  }
  for (double p : phases) {
    if (p < 0.0 || p >= kTwoPi) return false;
  }
  return true;
}

ParameterDistribution ParameterDistribution::gaussian(double mean, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(mean) || !std::isfinite(sigma)) {
    throw ValidationError("gaussian needs finite mean and sigma > 0");
  }
  return {Kind::gaussian, mean, sigma};
}

ParameterDistribution ParameterDistribution::uniform(double lower, double upper) {
  if (!(lower < upper) || !std::isfinite(lower) || !std::isfinite(upper)) {
    throw ValidationError("uniform needs finite lower < upper");
  }
  return {Kind::uniform, lower, upper};
}

ParameterDistribution ParameterDistribution::point_mass(double value) {
  if (!std::isfinite(value)) throw ValidationError("point mass must be finite");
  return {Kind::point_mass, value, 0.0};
}

double ParameterDistribution::raw_moment(int k) const {
  if (k < 0) throw DomainError("moment order must be >= 0");
  if (k == 0) return 1.0;
  switch (kind_) {
    case Kind::gaussian: {
      // m_k = mean m_{k-1} + (k-1) sigma^2 m_{k-2}
      double prev = 1.0, cur = a_;
      const double s2 = b_ * b_;
      for (int n = 2; n <= k; ++n) {
        const double next = a_ * cur + (n - 1) * s2 * prev;
        prev = cur;
        cur = next;
      }
      return cur;
    }
    case Kind::uniform: {
      // (b^{k+1} - a^{k+1}) / ((k+1)(b-a)) = sum_{i=0}^{k} a^i b^{k-i} / (k+1)
      double sum = 0.0;
      for (int i = 0; i <= k; ++i) sum += std::pow(a_, i) * std::pow(b_, k - i);
      return sum / (k + 1);
    }
    case Kind::point_mass: return std::pow(a_, k);
  }
  return 0.0;
}

double ParameterDistribution::mean() const { return raw_moment(1); }

double ParameterDistribution::variance() const {
  switch (kind_) {
    case Kind::gaussian: return b_ * b_;
    case Kind::uniform: return (b_ - a_) * (b_ - a_) / 12.0;
    case Kind::point_mass: return 0.0;
  }
  return 0.0;
}

std::string ParameterDistribution::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::gaussian: os << "gaussian(mean=" << a_ << ", sigma=" << b_ << ")"; break;
    case Kind::uniform: os << "uniform(" << a_ << ", " << b_ << ")"; break;
    case Kind::point_mass: os << "point_mass(" << a_ << ")"; break;
  }
  return os.str();
}

ParameterTarget ParameterTarget::dipole(int a, int b) {
  if (a == b) throw ValidationError("dipole target needs two distinct levels");
  if (a < 0 || b < 0) throw ValidationError("negative level index");
  return {Kind::dipole, std::min(a, b), std::max(a, b)};
}

ParameterTarget ParameterTarget::amplitude(int mode) {
  if (mode < 0) throw ValidationError("negative mode index");
  return {Kind::amplitude, mode, 0};
}

std::string ParameterTarget::label() const {
  if (kind == Kind::dipole) return fmt::format("mu{}{}", i + 1, j + 1);
  return fmt::format("A{}", i + 1);
}

double nominal_value(const ParameterTarget& target, const QuantumSystem& system,
                     const ControlField& field) {
  if (target.kind == ParameterTarget::Kind::dipole) {
    if (target.j >= system.dimension()) throw ValidationError("dipole target outside system");
    return system.dipole()(target.i, target.j);
  }
  if (target.i >= field.mode_count()) throw ValidationError("amplitude target outside field");
  return field.modes()[static_cast<std::size_t>(target.i)].amplitude;
}

double UncertainParameter::theta_moment(int k, double nominal) const {
  const double m = distribution.raw_moment(k);
  return relative ? std::pow(nominal, k) * m : m;
}

double UncertainParameter::theta_variance(double nominal) const {
  const double v = distribution.variance();
  return relative ? nominal * nominal * v : v;
}

std::pair<QuantumSystem, ControlField> apply_parameters(const QuantumSystem& system,
                                                        const ControlField& field,
                                                        std::span<const ParameterTarget> targets,
                                                        std::span<const double> values) {
  if (targets.size() != values.size()) throw ValidationError("parameter/value count mismatch");
  RMatrix mu = system.dipole();
  auto modes = field.modes();
  for (std::size_t p = 0; p < targets.size(); ++p) {
    const auto& t = targets[p];
    if (t.kind == ParameterTarget::Kind::dipole) {
      mu(t.i, t.j) = values[p];
      mu(t.j, t.i) = values[p];
    } else {
      modes.at(static_cast<std::size_t>(t.i)).amplitude = values[p];
    }
  }
  return {QuantumSystem(system.energies(), std::move(mu)), ControlField(std::move(modes), field.duration())};
}

}  // namespace qpr
