#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qpr/moments.hpp"
#include "qpr/optimizers.hpp"
#include "qpr/propagator.hpp"
#include "qpr/system.hpp"

namespace qpr::cli {

using json = nlohmann::ordered_json;

/// Grid and truncation presets selected by --precision.
enum class Precision { fast, strict };

Precision parse_precision(const std::string& name);
std::string precision_name(Precision p);

struct FieldConfig {
  int modes = 7;
  double amplitude = 0.15;
  double duration = 40.0;
  std::vector<double> frequencies;  // empty: drawn from the run seed
  std::vector<double> phases;
  std::vector<double> amplitudes;   // optional per-mode override of the shared amplitude
};

struct EncodingConfig {
  std::vector<ParameterTarget> targets;  // empty: the uncertainty targets
  int max_total_order = 0;               // 0: preset
  double retention_tol = 0.0;
  double alias_tol = 1e-3;
};

struct SimulateConfig {
  bool dyson = false;
  int dyson_initial_order = 12;
  double dyson_tail = 1e-8;
};

struct LandscapeConfig {
  ScanAxis axis1{0, 0.05, 4.0, 41};
  ScanAxis axis2{7, 0.0, kTwoPi, 41};
};

struct MomentsConfig {
  std::size_t mc_samples = 0;  // 0: preset
  int interference_bins = 12;
  bool leading_order = true;
};

struct TgaSettings {
  std::string mode = "nominal";  // nominal | expected | noisy
  int draws = 16;                // expected mode
  GAConfig ga;
};

struct PmpConfig {
  bool expected = false;  // the encoded gradient costs one adjoint sweep per s-point
  int expected_order = 8;
  bool polish = false;
};

struct ExperimentConfig {
  std::string system = "paper5";
  std::optional<RVector> energies;
  std::optional<RMatrix> dipole;
  TransitionProbability objective{0, 3};
  FieldConfig field;
  FieldBounds bounds;
  double dt = 0.0;  // 0: preset
  std::vector<UncertainParameter> uncertainty;
  EncodingConfig encoding;
  SimulateConfig simulate;
  LandscapeConfig landscape;
  double significance_threshold = 0.1;
  MomentsConfig moments;
  double amplitude_noise = 0.1;
  TgaSettings tga;
  AcromuseConfig acromuse;
  Nsga2Config nsga2;
  PmpConfig pmp;
  std::uint64_t seed = 1;
  Precision precision = Precision::fast;
  std::string data_dir;
  std::string seed_front;  // optional Pareto front JSON that seeds the optimizers

  /// Fills every preset-dependent value and the random field (from the seed),
  /// then validates. After this the config is fully explicit.
  void resolve();

  QuantumSystem make_system() const;
  Chromosome chromosome() const;  // shared-amplitude genome of the field
  ControlField make_field() const;
  TimeGrid grid() const;
  MomentSpec moment_spec() const;
  EncodingScheme encoding_scheme(int max_total_order) const;
};

/// Parses a config document; unknown keys and wrong types are validation errors.
ExperimentConfig config_from_json(const json& doc);
ExperimentConfig load_config(const std::string& path);
/// Complete echo with every default spelled out.
json config_to_json(const ExperimentConfig& config);

json target_to_json(const ParameterTarget& t);
ParameterTarget target_from_json(const json& j);

}  // namespace qpr::cli
