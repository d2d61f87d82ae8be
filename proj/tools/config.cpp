#include "config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "qpr/error.hpp"
#include "qpr/rng.hpp"

#ifndef QPR_DATA_DIR
#define QPR_DATA_DIR "data/paper-tables"
#endif

namespace qpr::cli {

namespace {

// Reads one JSON object; every key must be consumed or finish() throws.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(fmt::format("{}: expected an object", where()));
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(fmt::format("{}.{}: wrong type ({})", where(), key, j_.at(key).type_name()));
    }
  }

  Reader child(const char* key) {
    used_.insert(key);
    return Reader(j_.at(key), fmt::format("{}.{}", path_, key));
  }

  std::string path(const char* key) const { return fmt::format("{}.{}", path_, key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ValidationError(fmt::format("{}: unknown key '{}'", where(), it.key()));
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json distribution_to_json(const ParameterDistribution& d) {
  switch (d.kind()) {
    case ParameterDistribution::Kind::gaussian: return {{"kind", "gaussian"}, {"mean", d.a()}, {"sigma", d.b()}};
    case ParameterDistribution::Kind::uniform: return {{"kind", "uniform"}, {"lower", d.a()}, {"upper", d.b()}};
    case ParameterDistribution::Kind::point_mass: return {{"kind", "point_mass"}, {"value", d.a()}};
  }
  return {};
}

ParameterDistribution distribution_from_json(const json& j, const std::string& path) {
  Reader r(j, path);
  std::string kind;
  r.get("kind", kind);
  ParameterDistribution d = ParameterDistribution::point_mass(1.0);
  if (kind == "gaussian") {
    double mean = 1.0, sigma = 0.0;
    r.get("mean", mean);
    r.get("sigma", sigma);
    d = ParameterDistribution::gaussian(mean, sigma);
  } else if (kind == "uniform") {
    double lower = 0.0, upper = 1.0;
    r.get("lower", lower);
    r.get("upper", upper);
    d = ParameterDistribution::uniform(lower, upper);
  } else if (kind == "point_mass") {
    double value = 1.0;
    r.get("value", value);
    d = ParameterDistribution::point_mass(value);
  } else {
    throw ValidationError(fmt::format("{}.kind: unknown distribution '{}'", path, kind));
  }
  r.finish();
  return d;
}

json ga_to_json(const GAConfig& g) {
  return {{"population_size", g.population_size}, {"generations", g.generations},
          {"crossover_prob", g.crossover_prob},   {"mutation_prob", g.mutation_prob},
          {"tournament_size", g.tournament_size}, {"elitism_count", g.elitism_count},
          {"sbx_eta", g.sbx_eta},                 {"poly_eta", g.poly_eta},
          {"noisy_fitness", g.noisy_fitness}};
}

void ga_from(Reader r, GAConfig& g) {
  r.get("population_size", g.population_size);
  r.get("generations", g.generations);
  r.get("crossover_prob", g.crossover_prob);
  r.get("mutation_prob", g.mutation_prob);
  r.get("tournament_size", g.tournament_size);
  r.get("elitism_count", g.elitism_count);
  r.get("sbx_eta", g.sbx_eta);
  r.get("poly_eta", g.poly_eta);
  r.get("noisy_fitness", g.noisy_fitness);
  r.finish();
}

json axis_to_json(const ScanAxis& a) {
  return {{"gene", a.gene}, {"lower", a.lower}, {"upper", a.upper}, {"points", a.points}};
}

void axis_from(Reader r, ScanAxis& a) {
  r.get("gene", a.gene);
  r.get("lower", a.lower);
  r.get("upper", a.upper);
  r.get("points", a.points);
  r.finish();
}

RMatrix matrix_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ValidationError(path + ": expected a non-empty array of rows");
  const auto n = j.size();
  RMatrix m(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    if (!j[r].is_array() || j[r].size() != n) throw ValidationError(path + ": matrix must be square");
    for (std::size_t c = 0; c < n; ++c) {
      if (!j[r][c].is_number()) throw ValidationError(path + ": entries must be numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

std::vector<UncertainParameter> default_uncertainty() {
  std::vector<UncertainParameter> out;
  for (auto [i, j] : {std::pair{0, 3}, {1, 3}, {3, 4}})
    out.push_back({ParameterTarget::dipole(i, j), ParameterDistribution::gaussian(1.0, 0.05), true});
  return out;
}

}  // namespace

Precision parse_precision(const std::string& name) {
  if (name == "fast") return Precision::fast;
  if (name == "strict") return Precision::strict;
  throw ValidationError(fmt::format("precision: expected fast or strict, got '{}'", name));
}

std::string precision_name(Precision p) { return p == Precision::fast ? "fast" : "strict"; }

json target_to_json(const ParameterTarget& t) {
  if (t.kind == ParameterTarget::Kind::dipole) return {{"kind", "dipole"}, {"i", t.i}, {"j", t.j}};
  return {{"kind", "amplitude"}, {"mode", t.i}};
}

ParameterTarget target_from_json(const json& j) {
  Reader r(j, "target");
  std::string kind;
  r.get("kind", kind);
  ParameterTarget t;
  if (kind == "dipole") {
    int a = 0, b = 0;
    r.get("i", a);
    r.get("j", b);
    t = ParameterTarget::dipole(a, b);
  } else if (kind == "amplitude") {
    int mode = 0;
    r.get("mode", mode);
    t = ParameterTarget::amplitude(mode);
  } else {
    throw ValidationError(fmt::format("target.kind: unknown target kind '{}'", kind));
  }
  r.finish();
  return t;
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  Reader r(doc, "");

  if (r.has("system")) {
    const json& s = r.raw("system");
    if (s.is_string()) {
      c.system = s.get<std::string>();
      if (c.system != "paper5") throw ValidationError("system: unknown built-in system '" + c.system + "'");
    } else {
      Reader rs(s, "system");
      std::vector<double> e;
      rs.get("energies", e);
      if (e.empty()) throw ValidationError("system.energies: required for an inline system");
      c.system = "inline";
      c.energies = Eigen::Map<const RVector>(e.data(), static_cast<Eigen::Index>(e.size()));
      if (!rs.has("dipole")) throw ValidationError("system.dipole: required for an inline system");
      c.dipole = matrix_from_json(rs.raw("dipole"), "system.dipole");
      rs.finish();
    }
  }
  if (r.has("objective")) {
    Reader ro = r.child("objective");
    ro.get("initial", c.objective.initial);
    ro.get("target", c.objective.target);
    ro.finish();
  }
  if (r.has("field")) {
    Reader rf = r.child("field");
    rf.get("modes", c.field.modes);
    rf.get("amplitude", c.field.amplitude);
    rf.get("duration", c.field.duration);
    rf.get("frequencies", c.field.frequencies);
    rf.get("phases", c.field.phases);
    rf.get("amplitudes", c.field.amplitudes);
    rf.finish();
  }
  if (r.has("bounds")) {
    Reader rb = r.child("bounds");
    rb.get("amplitude_min", c.bounds.amplitude_min);
    rb.get("amplitude_max", c.bounds.amplitude_max);
    rb.get("frequency_min", c.bounds.frequency_min);
    rb.get("frequency_max", c.bounds.frequency_max);
    rb.finish();
  }
  if (r.has("grid")) {
    Reader rg = r.child("grid");
    rg.get("dt", c.dt);
    rg.finish();
  }
  if (r.has("uncertainty")) {
    const json& u = r.raw("uncertainty");
    if (!u.is_array()) throw ValidationError("uncertainty: expected an array");
    c.uncertainty.clear();
    for (std::size_t k = 0; k < u.size(); ++k) {
      const std::string path = fmt::format("uncertainty[{}]", k);
      Reader ru(u[k], path);
      UncertainParameter p;
      if (!ru.has("target") || !ru.has("distribution"))
        throw ValidationError(path + ": target and distribution are required");
      p.target = target_from_json(ru.raw("target"));
      p.distribution = distribution_from_json(ru.raw("distribution"), path + ".distribution");
      ru.get("relative", p.relative);
      ru.finish();
      c.uncertainty.push_back(p);
    }
  } else {
    c.uncertainty = default_uncertainty();
  }
  if (r.has("encoding")) {
    Reader re = r.child("encoding");
    if (re.has("targets")) {
      const json& t = re.raw("targets");
      if (!t.is_array()) throw ValidationError("encoding.targets: expected an array");
      for (const auto& item : t) c.encoding.targets.push_back(target_from_json(item));
    }
    re.get("max_total_order", c.encoding.max_total_order);
    re.get("retention_tol", c.encoding.retention_tol);
    re.get("alias_tol", c.encoding.alias_tol);
    re.finish();
  }
  if (r.has("simulate")) {
    Reader rs = r.child("simulate");
    rs.get("dyson", c.simulate.dyson);
    rs.get("dyson_initial_order", c.simulate.dyson_initial_order);
    rs.get("dyson_tail", c.simulate.dyson_tail);
    rs.finish();
  }
  if (r.has("landscape")) {
    Reader rl = r.child("landscape");
    if (rl.has("axis1")) axis_from(rl.child("axis1"), c.landscape.axis1);
    if (rl.has("axis2")) axis_from(rl.child("axis2"), c.landscape.axis2);
    rl.finish();
  }
  if (r.has("pathways")) {
    Reader rp = r.child("pathways");
    rp.get("significance_threshold", c.significance_threshold);
    rp.finish();
  }
  if (r.has("moments")) {
    Reader rm = r.child("moments");
    rm.get("mc_samples", c.moments.mc_samples);
    rm.get("interference_bins", c.moments.interference_bins);
    rm.get("leading_order", c.moments.leading_order);
    rm.finish();
  }
  r.get("amplitude_noise", c.amplitude_noise);
  if (r.has("tga")) {
    Reader rt = r.child("tga");
    rt.get("mode", c.tga.mode);
    rt.get("draws", c.tga.draws);
    if (rt.has("ga")) ga_from(rt.child("ga"), c.tga.ga);
    rt.finish();
  }
  if (r.has("acromuse")) {
    Reader ra = r.child("acromuse");
    auto& a = c.acromuse;
    if (ra.has("ga")) ga_from(ra.child("ga"), a.ga);
    ra.get("crossover_min", a.crossover_min);
    ra.get("crossover_max", a.crossover_max);
    ra.get("mutation_min", a.mutation_min);
    ra.get("mutation_max", a.mutation_max);
    ra.get("tournament_min", a.tournament_min);
    ra.get("tournament_max", a.tournament_max);
    ra.get("mutation_eta", a.mutation_eta);
    ra.get("spd_reference", a.spd_reference);
    ra.get("hpd_reference", a.hpd_reference);
    ra.get("retained_solutions", a.retained_solutions);
    ra.get("noise_instances", a.noise_instances);
    ra.finish();
  }
  if (r.has("nsga2")) {
    Reader rn = r.child("nsga2");
    auto& n = c.nsga2;
    if (rn.has("ga")) ga_from(rn.child("ga"), n.ga);
    rn.get("mc_halfwidth", n.mc_halfwidth);
    rn.get("mc_confidence", n.mc_confidence);
    rn.get("pilot_samples", n.pilot_samples);
    rn.get("max_samples", n.max_samples);
    rn.get("recalibrate_every", n.recalibrate_every);
    rn.get("final_precision_factor", n.final_precision_factor);
    rn.finish();
  }
  if (r.has("pmp")) {
    Reader rp = r.child("pmp");
    rp.get("expected", c.pmp.expected);
    rp.get("expected_order", c.pmp.expected_order);
    rp.get("polish", c.pmp.polish);
    rp.finish();
  }
  r.get("seed", c.seed);
  if (r.has("precision")) {
    std::string p;
    r.get("precision", p);
    c.precision = parse_precision(p);
  }
  r.get("data_dir", c.data_dir);
  r.get("seed_front", c.seed_front);
  r.finish();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(fmt::format("config '{}' is not valid JSON: {}", path, e.what()));
  }
  return config_from_json(doc);
}

void ExperimentConfig::resolve() {
  const bool fast = precision == Precision::fast;
  if (dt <= 0.0) dt = fast ? 0.02 : 0.005;
  if (encoding.max_total_order <= 0) encoding.max_total_order = fast ? 48 : 64;
  if (moments.mc_samples == 0) moments.mc_samples = fast ? 10000 : 100000;
  if (data_dir.empty()) data_dir = QPR_DATA_DIR;
  if (encoding.targets.empty())
    for (const auto& p : uncertainty) encoding.targets.push_back(p.target);

  bounds.validate();
  if (field.modes <= 0) throw ValidationError("field.modes must be positive");
  if (!(field.duration > 0.0)) throw ValidationError("field.duration must be positive");
  if (!(field.amplitude >= bounds.amplitude_min && field.amplitude <= bounds.amplitude_max))
    throw ValidationError("field.amplitude outside bounds");
  if (field.frequencies.empty() != field.phases.empty())
    throw ValidationError("field.frequencies and field.phases must be given together");
  if (field.frequencies.empty()) {
    Engine rng = make_engine(seed, {0xf1e1d});
    const Chromosome c = random_chromosome(field.modes, field.amplitude, bounds, rng);
    field.frequencies = c.frequencies;
    field.phases = c.phases;
  }
  const auto k = static_cast<std::size_t>(field.modes);
  if (field.frequencies.size() != k || field.phases.size() != k)
    throw ValidationError(fmt::format("field: expected {} frequencies and phases", k));
  if (!field.amplitudes.empty() && field.amplitudes.size() != k)
    throw ValidationError(fmt::format("field.amplitudes: expected {} values", k));
  if (uncertainty.empty()) throw ValidationError("uncertainty: at least one parameter is required");
  if (!(significance_threshold > 0.0 && significance_threshold <= 1.0))
    throw ValidationError("pathways.significance_threshold must lie in (0, 1]");
  if (moments.interference_bins <= 0) throw ValidationError("moments.interference_bins must be positive");
  if (!(amplitude_noise >= 0.0)) throw ValidationError("amplitude_noise must be non-negative");
  if (tga.mode != "nominal" && tga.mode != "expected" && tga.mode != "noisy")
    throw ValidationError("tga.mode: expected nominal, expected or noisy");
  if (tga.draws <= 0) throw ValidationError("tga.draws must be positive");
  if (pmp.expected_order <= 0) throw ValidationError("pmp.expected_order must be positive");
  if (simulate.dyson_initial_order <= 0 || !(simulate.dyson_tail > 0.0))
    throw ValidationError("simulate: dyson_initial_order and dyson_tail must be positive");

  for (GAConfig* g : {&tga.ga, &acromuse.ga, &nsga2.ga}) {
    g->modes = field.modes;
    g->amplitude = field.amplitude;
    g->bounds = bounds;
    g->seed = seed;
  }
  if (tga.mode == "noisy") tga.ga.noisy_fitness = true;
  acromuse.ga.noisy_fitness = true;
  tga.ga.validate();
  acromuse.validate();
  nsga2.validate();

  const QuantumSystem sys = make_system();
  validate_objective(objective, sys.dimension());
  grid().validate();
  for (const auto& t : encoding.targets) (void)nominal_value(t, sys, make_field());
  for (const auto& p : uncertainty) (void)nominal_value(p.target, sys, make_field());
  for (const auto* a : {&landscape.axis1, &landscape.axis2})
    if (a->gene < 0 || a->gene >= 2 * field.modes || a->points < 1)
      throw ValidationError("landscape: axis gene out of range or no points");
}

QuantumSystem ExperimentConfig::make_system() const {
  if (system == "paper5") return example_system();
  return QuantumSystem(*energies, *dipole);
}

Chromosome ExperimentConfig::chromosome() const {
  Chromosome c;
  c.frequencies = field.frequencies;
  c.phases = field.phases;
  c.fixed_amplitude = field.amplitude;
  return c;
}

ControlField ExperimentConfig::make_field() const {
  ControlField f = chromosome().to_field(field.duration);
  if (!field.amplitudes.empty()) f = f.with_amplitudes(field.amplitudes);
  return f;
}

TimeGrid ExperimentConfig::grid() const { return TimeGrid::for_duration(field.duration, dt); }

MomentSpec ExperimentConfig::moment_spec() const { return MomentSpec{uncertainty}; }

EncodingScheme ExperimentConfig::encoding_scheme(int max_total_order) const {
  return EncodingScheme::standard(encoding.targets, max_total_order);
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  if (c.system == "paper5") {
    j["system"] = "paper5";
  } else {
    json rows = json::array();
    for (Eigen::Index r = 0; r < c.dipole->rows(); ++r) {
      json row = json::array();
      for (Eigen::Index k = 0; k < c.dipole->cols(); ++k) row.push_back((*c.dipole)(r, k));
      rows.push_back(row);
    }
    j["system"] = {{"energies", std::vector<double>(c.energies->data(), c.energies->data() + c.energies->size())},
                   {"dipole", rows}};
  }
  j["objective"] = {{"initial", c.objective.initial}, {"target", c.objective.target}};
  j["field"] = {{"modes", c.field.modes},         {"amplitude", c.field.amplitude},
                {"duration", c.field.duration},   {"frequencies", c.field.frequencies},
                {"phases", c.field.phases},       {"amplitudes", c.field.amplitudes}};
  j["bounds"] = {{"amplitude_min", c.bounds.amplitude_min}, {"amplitude_max", c.bounds.amplitude_max},
                 {"frequency_min", c.bounds.frequency_min}, {"frequency_max", c.bounds.frequency_max}};
  j["grid"] = {{"dt", c.dt}};
  json u = json::array();
  for (const auto& p : c.uncertainty)
    u.push_back({{"target", target_to_json(p.target)},
                 {"distribution", distribution_to_json(p.distribution)},
                 {"relative", p.relative}});
  j["uncertainty"] = u;
  json targets = json::array();
  for (const auto& t : c.encoding.targets) targets.push_back(target_to_json(t));
  j["encoding"] = {{"targets", targets},
                   {"max_total_order", c.encoding.max_total_order},
                   {"retention_tol", c.encoding.retention_tol},
                   {"alias_tol", c.encoding.alias_tol}};
  j["simulate"] = {{"dyson", c.simulate.dyson},
                   {"dyson_initial_order", c.simulate.dyson_initial_order},
                   {"dyson_tail", c.simulate.dyson_tail}};
  j["landscape"] = {{"axis1", axis_to_json(c.landscape.axis1)}, {"axis2", axis_to_json(c.landscape.axis2)}};
  j["pathways"] = {{"significance_threshold", c.significance_threshold}};
  j["moments"] = {{"mc_samples", c.moments.mc_samples},
                  {"interference_bins", c.moments.interference_bins},
                  {"leading_order", c.moments.leading_order}};
  j["amplitude_noise"] = c.amplitude_noise;
  j["tga"] = {{"mode", c.tga.mode}, {"draws", c.tga.draws}, {"ga", ga_to_json(c.tga.ga)}};
  const auto& a = c.acromuse;
  j["acromuse"] = {{"ga", ga_to_json(a.ga)},
                   {"crossover_min", a.crossover_min},
                   {"crossover_max", a.crossover_max},
                   {"mutation_min", a.mutation_min},
                   {"mutation_max", a.mutation_max},
                   {"tournament_min", a.tournament_min},
                   {"tournament_max", a.tournament_max},
                   {"mutation_eta", a.mutation_eta},
                   {"spd_reference", a.spd_reference},
                   {"hpd_reference", a.hpd_reference},
                   {"retained_solutions", a.retained_solutions},
                   {"noise_instances", a.noise_instances}};
  const auto& n = c.nsga2;
  j["nsga2"] = {{"ga", ga_to_json(n.ga)},
                {"mc_halfwidth", n.mc_halfwidth},
                {"mc_confidence", n.mc_confidence},
                {"pilot_samples", n.pilot_samples},
                {"max_samples", n.max_samples},
                {"recalibrate_every", n.recalibrate_every},
                {"final_precision_factor", n.final_precision_factor}};
  j["pmp"] = {{"expected", c.pmp.expected}, {"expected_order", c.pmp.expected_order}, {"polish", c.pmp.polish}};
  j["seed"] = c.seed;
  j["precision"] = precision_name(c.precision);
  j["data_dir"] = c.data_dir;
  j["seed_front"] = c.seed_front;
  return j;
}

}  // namespace qpr::cli
