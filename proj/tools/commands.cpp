#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>

#include <Eigen/Core>
#include <fmt/format.h>

#include "paper_tables.hpp"
#include "qpr/error.hpp"
#include "qpr/kernels/batch_propagate.hpp"
#include "qpr/moments.hpp"
#include "qpr/parallel.hpp"
#include "qpr/pathways.hpp"
#include "qpr/pmp.hpp"
#include "qpr/rng.hpp"

namespace qpr::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

// Full round-trip precision so re-runs can be diffed bit for bit.
std::string num(double x) { return fmt::format("{:.17g}", x); }

class Csv {
 public:
  Csv(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw IoError("cannot write '" + path.string() + "'");
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    if (!out_) throw IoError("write failed");
  }

 private:
  std::ofstream out_;
};

std::string polytope_label(const Polytope& p) {
  std::string s = "[";
  for (std::size_t i = 0; i < p.size(); ++i) s += (i ? ";" : "") + std::to_string(p[i]);
  return s + "]";
}

json string_list(const std::vector<ParameterTarget>& targets) {
  json j = json::array();
  for (const auto& t : targets) j.push_back(t.label());
  return j;
}

void write_trace(RunContext& ctx, const std::string& name, const DiversityTrace& t) {
  Csv csv(ctx.output(name), {"generation", "best", "mean", "spd", "hpd", "crossover_prob", "mutation_prob",
                             "tournament_size"});
  for (std::size_t g = 0; g < t.best.size(); ++g)
    csv.row({std::to_string(g), num(t.best[g]), num(t.mean[g]), num(t.spd[g]), num(t.hpd[g]),
             num(t.crossover_prob[g]), num(t.mutation_prob[g]), std::to_string(t.tournament_size[g])});
}

void write_population(RunContext& ctx, const std::string& name, const std::vector<Individual>& pop) {
  std::vector<std::string> header{"index", "fitness"};
  const int k = pop.empty() ? 0 : pop.front().chromosome.mode_count();
  for (int m = 0; m < k; ++m) header.push_back(fmt::format("frequency{}", m));
  for (int m = 0; m < k; ++m) header.push_back(fmt::format("phase{}", m));
  Csv csv(ctx.output(name), header);
  for (std::size_t i = 0; i < pop.size(); ++i) {
    std::vector<std::string> row{std::to_string(i), num(pop[i].fitness)};
    for (double g : pop[i].chromosome.genes()) row.push_back(num(g));
    csv.row(row);
  }
}

std::vector<Chromosome> seeded_population(const ExperimentConfig& c, const GAConfig& ga) {
  if (c.seed_front.empty()) return {};
  return seed_from_front(load_front(c.seed_front, c.field.amplitude), ga);
}

double nominal_p(const ExperimentConfig& c, const Chromosome& ch, int threads) {
  const std::vector<ControlField> f{ch.to_field(c.field.duration)};
  return transition_probabilities(c.make_system(), f, c.grid(), c.objective.initial, c.objective.target,
                                  threads)[0];
}

}  // namespace

fs::path RunContext::output(const std::string& name) {
  outputs.push_back(name);
  return out / name;
}

void RunContext::write_json(const std::string& name, const json& doc) {
  std::ofstream f(output(name));
  if (!f) throw IoError("cannot write '" + (out / name).string() + "'");
  f << doc.dump(2) << '\n';
}

json chromosome_to_json(const Chromosome& c) {
  return {{"frequencies", c.frequencies}, {"phases", c.phases}, {"amplitude", c.fixed_amplitude}};
}

Chromosome chromosome_from_json(const json& j, double amplitude) {
  Chromosome c;
  try {
    c.frequencies = j.at("frequencies").get<std::vector<double>>();
    c.phases = j.at("phases").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("chromosome: ") + e.what());
  }
  if (c.frequencies.size() != c.phases.size() || c.frequencies.empty())
    throw ValidationError("chromosome: frequencies and phases must be non-empty and of equal length");
  c.fixed_amplitude = amplitude;
  return c;
}

ParetoFront load_front(const std::string& path, double amplitude) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open front file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(fmt::format("front '{}' is not valid JSON: {}", path, e.what()));
  }
  if (!doc.contains("points") || !doc["points"].is_array()) throw ValidationError("front: 'points' array required");
  ParetoFront front;
  for (const auto& p : doc["points"]) {
    ParetoPoint pt;
    pt.chromosome = chromosome_from_json(p, amplitude);
    pt.nominal = p.value("nominal", 0.0);
    pt.expected = p.value("expected", 0.0);
    pt.variance = p.value("variance", 0.0);
    front.points.push_back(std::move(pt));
  }
  if (front.points.empty()) throw ValidationError("front: no points");
  return front;
}

json cmd_simulate(RunContext& ctx) {
  const auto& c = ctx.config;
  const QuantumSystem sys = c.make_system();
  const ControlField field = c.make_field();
  const TimeGrid grid = c.grid();
  const PropagationResult r = propagate(sys, field, grid);

  const int dim = sys.dimension();
  Csv pop(ctx.output("populations.csv"), {"state", "probability"});
  for (int s = 0; s < dim; ++s) pop.row({std::to_string(s), num(std::norm(r.interaction_final(s, c.objective.initial)))});

  json report = {{"objective", objective_name(c.objective)},
                 {"initial", c.objective.initial},
                 {"target", c.objective.target},
                 {"value", objective_value(r, c.objective)},
                 {"unitarity_residual", r.unitarity_residual},
                 {"n_steps", grid.n_steps},
                 {"dt", grid.dt()}};

  if (c.simulate.dyson) {
    const DysonDecomposition d =
        dyson_terms_adaptive(sys, field, grid, c.simulate.dyson_initial_order, c.simulate.dyson_tail);
    const InterferenceTable t = order_interference(d, c.objective.initial, c.objective.target);
    Csv orders(ctx.output("dyson_orders.csv"), {"order", "re", "im", "abs", "direct"});
    for (int m = 0; m <= d.truncation_order(); ++m) {
      const cplx a = d.orders[static_cast<std::size_t>(m)](c.objective.target, c.objective.initial);
      orders.row({std::to_string(m), num(a.real()), num(a.imag()), num(std::abs(a)),
                  num(t.direct_terms[static_cast<std::size_t>(m)])});
    }
    Csv cross(ctx.output("order_interference.csv"), {"order", "other_order", "cross_term"});
    for (Eigen::Index m = 0; m < t.cross_terms.rows(); ++m)
      for (Eigen::Index q = 0; q < m; ++q)
        cross.row({std::to_string(m), std::to_string(q), num(t.cross_terms(m, q))});
    report["dyson"] = {{"truncation_order", d.truncation_order()},
                       {"tail_norm", d.tail_norm()},
                       {"direct_sum", t.direct_sum},
                       {"cross_sum", t.cross_sum},
                       {"total", t.total},
                       {"series_vs_propagator", std::abs(t.total - objective_value(r, c.objective))}};
  }
  ctx.write_json("simulate.json", report);
  return report;
}

json cmd_landscape(RunContext& ctx) {
  const auto& c = ctx.config;
  const Landscape l = landscape_scan(c.make_system(), c.chromosome(), c.grid(), c.landscape.axis1,
                                     c.landscape.axis2, c.objective);
  Csv csv(ctx.output("landscape.csv"), {"axis1", "axis2", "value"});
  for (int a = 0; a < c.landscape.axis1.points; ++a)
    for (int b = 0; b < c.landscape.axis2.points; ++b)
      csv.row({num(c.landscape.axis1.value(a)), num(c.landscape.axis2.value(b)), num(l.values(a, b))});
  json report = {{"axis1_gene", c.landscape.axis1.gene},
                 {"axis2_gene", c.landscape.axis2.gene},
                 {"max", l.values.maxCoeff()},
                 {"min", l.values.minCoeff()},
                 {"local_maxima", count_local_maxima(l.values)}};
  ctx.write_json("landscape.json", report);
  return report;
}

json cmd_pathways(RunContext& ctx) {
  const auto& c = ctx.config;
  const QuantumSystem sys = c.make_system();
  const ControlField field = c.make_field();
  const TimeGrid grid = c.grid();
  const EncodingScheme scheme = c.encoding_scheme(c.encoding.max_total_order);
  const DecodeResult d = decode_pathways_detailed(sys, field, grid, scheme, c.objective.initial, c.objective.target,
                                                  {c.encoding.retention_tol, c.encoding.alias_tol});

  Csv csv(ctx.output("pathways.csv"), {"rank", "polytope", "order", "magnitude", "phase", "weighted_magnitude"});
  for (std::size_t r = 0; r < d.pathways.size(); ++r) {
    const auto& p = d.pathways[r];
    csv.row({std::to_string(r + 1), polytope_label(p.polytope), std::to_string(p.order()), num(p.magnitude()),
             num(p.phase()), num(p.weighted_magnitude)});
  }

  const cplx exact = propagate(sys, field, grid).interaction_final(c.objective.target, c.objective.initial);
  const cplx rec = reconstruct_amplitude(d.pathways, d.theta);

  const SignificanceReport sig = significant_parameters(sys, field, grid, c.objective, c.significance_threshold);
  Csv s(ctx.output("significance.csv"),
        {"parameter", "nominal", "derivative", "curvature", "score", "significant"});
  for (const auto& p : sig.candidates) {
    bool significant = false;
    for (const auto& q : sig.significant) significant = significant || q.target == p.target;
    s.row({p.target.label(), num(p.nominal), num(p.derivative), num(p.curvature), num(p.score),
           significant ? "1" : "0"});
  }
  json significant = json::array();
  for (const auto& q : sig.significant) significant.push_back(q.target.label());

  json report = {{"encoded", string_list(scheme.encoded())},
                 {"gammas", scheme.gammas()},
                 {"s_points", scheme.s_points()},
                 {"max_total_order", scheme.max_total_order()},
                 {"retained", d.pathways.size()},
                 {"max_bin", d.max_bin},
                 {"alias_ratio", d.alias_ratio},
                 {"exact_amplitude", {exact.real(), exact.imag()}},
                 {"reconstructed_amplitude", {rec.real(), rec.imag()}},
                 {"reconstruction_error", std::abs(rec - exact)},
                 {"critical", sig.critical},
                 {"gradient_max_norm", sig.gradient_max_norm},
                 {"significant", significant}};
  ctx.write_json("pathways.json", report);
  return report;
}

json cmd_moments(RunContext& ctx) {
  const auto& c = ctx.config;
  const QuantumSystem sys = c.make_system();
  const ControlField field = c.make_field();
  const TimeGrid grid = c.grid();
  const MomentSpec spec = c.moment_spec();
  const EncodingScheme scheme = EncodingScheme::standard(spec.targets(), c.encoding.max_total_order);
  spec.check_alignment(scheme);

  const DecodeResult d = decode_pathways_detailed(sys, field, grid, scheme, c.objective.initial, c.objective.target,
                                                  {c.encoding.retention_tol, c.encoding.alias_tol});
  const RobustnessReport a = asymptotic_moments(d.pathways, d.theta, spec);
  const double budget = truncation_budget(d.pathways, d.theta, spec);
  const cplx exact = propagate(sys, field, grid).interaction_final(c.objective.target, c.objective.initial);
  const double rec_error = std::abs(reconstruct_amplitude(d.pathways, d.theta) - exact);

  const InterferenceBreakdown ib = interference_breakdown(d.pathways, d.theta, spec, c.moments.interference_bins);
  Csv bins(ctx.output("interference_bins.csv"),
           {"lower", "upper", "center", "nominal", "expected", "count", "constructive"});
  for (const auto& b : ib.bins)
    bins.row({num(b.lower), num(b.upper), num(b.center), num(b.nominal), num(b.expected), std::to_string(b.count),
              b.constructive() ? "1" : "0"});

  McOptions mo;
  mo.threads = ctx.threads;
  const McEstimate mc =
      mc_estimate(sys, field, grid, spec, c.objective, c.moments.mc_samples, stream_key(c.seed, {0x3c0}), mo);
  const double z = mc.se_mean > 0.0 ? (a.expected_probability - mc.mean) / mc.se_mean : 0.0;

  json report = {
      {"encoded", string_list(scheme.encoded())},
      {"max_total_order", scheme.max_total_order()},
      {"pathways", d.pathways.size()},
      {"reconstruction_error", rec_error},
      {"converged", rec_error <= 1e-6},
      {"nominal_probability", a.nominal_probability},  // from the retained pathways
      {"exact_probability", std::norm(exact)},
      {"asymptotic",
       {{"expected_probability", a.expected_probability},
        {"expected_amplitude", {a.expected_amplitude.real(), a.expected_amplitude.imag()}},
        {"amplitude_variance_re", a.variance_re},
        {"amplitude_variance_im", a.variance_im},
        {"truncation_flag", a.truncation_flag},
        {"truncation_budget", budget}}},
      {"monte_carlo",
       {{"samples", mc.samples},
        {"mean", mc.mean},
        {"variance", mc.variance},
        {"se_mean", mc.se_mean},
        {"se_variance", mc.se_variance},
        {"z_asymptotic_vs_mc", z},
        {"agrees", std::abs(a.expected_probability - mc.mean) <= 3.0 * mc.se_mean + budget}}},
      {"interference",
       {{"direct_nominal", ib.direct_nominal},
        {"direct_expected", ib.direct_expected},
        {"pairwise_nominal", ib.pairwise_nominal},
        {"pairwise_expected", ib.pairwise_expected},
        {"constructive_nominal", ib.constructive_nominal},
        {"destructive_nominal", ib.destructive_nominal},
        {"constructive_expected", ib.constructive_expected},
        {"destructive_expected", ib.destructive_expected}}}};
  if (c.moments.leading_order) {
    const LeadingOrderMoments lo = leading_order_moments(sys, field, grid, spec, c.objective);
    report["leading_order"] = {{"first_order_E_shift", lo.first_order_E_shift},
                               {"second_order_E_shift", lo.second_order_E_shift},
                               {"first_order_variance", lo.first_order_variance},
                               {"expected_probability", std::norm(exact) + lo.second_order_E_shift},
                               {"gradient", lo.gradient}};
  }
  ctx.write_json("moments.json", report);
  return report;
}

json cmd_optimize(RunContext& ctx, const std::string& algorithm) {
  const auto& c = ctx.config;
  const QuantumSystem sys = c.make_system();
  const TimeGrid grid = c.grid();
  const AmplitudeNoise noise{c.amplitude_noise};
  json report = {{"algorithm", algorithm}, {"seeded_from_front", !c.seed_front.empty()}};

  if (algorithm == "tga") {
    GAConfig ga = c.tga.ga;
    ga.initial_population = seeded_population(c, ga);
    BatchEvaluator eval;
    if (c.tga.mode == "nominal") eval = nominal_evaluator(sys, grid, c.objective, ctx.threads);
    else if (c.tga.mode == "noisy") eval = amplitude_noise_evaluator(sys, grid, c.objective, noise, ctx.threads);
    else eval = averaged_noise_evaluator(sys, grid, c.objective, noise, c.tga.draws, ctx.threads);
    const GAResult r = tga_optimize(eval, ga);
    write_trace(ctx, "trace.csv", r.diversity);
    write_population(ctx, "population.csv", r.population);
    report["mode"] = c.tga.mode;
    report["best_fitness"] = r.best.fitness;
    report["best_nominal"] = nominal_p(c, r.best.chromosome, ctx.threads);
    report["best"] = chromosome_to_json(r.best.chromosome);
    report["final_spd"] = r.diversity.spd.back();
    report["final_hpd"] = r.diversity.hpd.back();
    report["generations_to_95pct"] = generations_to_reach(r.diversity);
  } else if (algorithm == "acromuse") {
    AcromuseConfig ac = c.acromuse;
    ac.ga.initial_population = seeded_population(c, ac.ga);
    const AcromuseResult r =
        acromuse_optimize(amplitude_noise_evaluator(sys, grid, c.objective, noise, ctx.threads), ac);
    write_trace(ctx, "trace.csv", r.diversity);
    write_population(ctx, "population.csv", r.population);

    const auto& in = r.instances;
    const auto ns = in.solutions.size();
    const auto ni = in.instance_seeds.size();
    std::vector<std::string> sh{"gene"};
    for (std::size_t s = 0; s < ns; ++s) sh.push_back(fmt::format("x{}", s + 1));
    Csv sol(ctx.output("solutions.csv"), sh);
    for (int g = 0; g < (ns ? in.solutions[0].gene_count() : 0); ++g) {
      std::vector<std::string> row{std::to_string(g)};
      for (const auto& x : in.solutions) row.push_back(num(x.genes()[static_cast<std::size_t>(g)]));
      sol.row(row);
    }
    std::vector<std::string> ih{"solution"};
    for (std::size_t k = 0; k < ni; ++k) ih.push_back(fmt::format("instance{}", k + 1));
    Csv inst(ctx.output("instances.csv"), ih);
    for (std::size_t s = 0; s < ns; ++s) {
      std::vector<std::string> row{fmt::format("x{}", s + 1)};
      for (std::size_t k = 0; k < ni; ++k)
        row.push_back(num(in.fitness(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k))));
      inst.row(row);
    }
    std::vector<std::string> ah{"mode"};
    for (std::size_t k = 0; k < ni; ++k) ah.push_back(fmt::format("amplitude{}", k + 1));
    Csv amp(ctx.output("instance_amplitudes.csv"), ah);
    std::vector<std::vector<double>> mult;
    for (auto seed : in.instance_seeds) mult.push_back(noise.multipliers(seed, c.field.modes));
    for (int m = 0; m < c.field.modes; ++m) {
      std::vector<std::string> row{std::to_string(m)};
      for (std::size_t k = 0; k < ni; ++k) row.push_back(num(c.field.amplitude * mult[k][static_cast<std::size_t>(m)]));
      amp.row(row);
    }
    report["best_fitness"] = r.population.front().fitness;
    report["best_nominal"] = nominal_p(c, r.population.front().chromosome, ctx.threads);
    report["best"] = chromosome_to_json(r.population.front().chromosome);
    report["final_spd"] = r.diversity.spd.back();
    report["final_hpd"] = r.diversity.hpd.back();
    report["instance_winners"] = in.winners;
  } else if (algorithm == "nsga2") {
    Nsga2Config nc = c.nsga2;
    nc.ga.initial_population = seeded_population(c, nc.ga);
    const ParetoFront f =
        nsga2_optimize(mc_moment_evaluator(sys, grid, c.moment_spec(), c.objective, ctx.threads), nc);
    json points = json::array();
    Csv csv(ctx.output("front.csv"), [&] {
      std::vector<std::string> h{"index", "nominal", "expected", "variance", "se_expected", "samples"};
      for (int m = 0; m < c.field.modes; ++m) h.push_back(fmt::format("frequency{}", m));
      for (int m = 0; m < c.field.modes; ++m) h.push_back(fmt::format("phase{}", m));
      return h;
    }());
    for (std::size_t i = 0; i < f.points.size(); ++i) {
      const auto& p = f.points[i];
      json pj = chromosome_to_json(p.chromosome);
      pj["nominal"] = p.nominal;
      pj["expected"] = p.expected;
      pj["variance"] = p.variance;
      pj["se_expected"] = p.se_expected;
      pj["samples"] = p.sample_count;
      points.push_back(pj);
      std::vector<std::string> row{std::to_string(i),      num(p.nominal),     num(p.expected),
                                   num(p.variance),        num(p.se_expected), std::to_string(p.sample_count)};
      for (double g : p.chromosome.genes()) row.push_back(num(g));
      csv.row(row);
    }
    ctx.write_json("front.json", {{"certified", f.certified},
                                  {"samples_per_generation", f.samples_per_generation},
                                  {"points", points}});
    const auto& nb = f.points[f.nominal_best()];
    report["front_size"] = f.points.size();
    report["certified"] = f.certified;
    report["nominal_best"] = {{"nominal", nb.nominal}, {"expected", nb.expected}, {"variance", nb.variance}};
    report["final_samples"] = f.samples_per_generation.empty() ? 0 : f.samples_per_generation.back();
  } else {
    throw ValidationError("optimize: unknown algorithm '" + algorithm + "' (tga, acromuse, nsga2)");
  }
  ctx.write_json("optimize.json", report);
  return report;
}

json cmd_verify_pmp(RunContext& ctx) {
  const auto& c = ctx.config;
  const QuantumSystem sys = c.make_system();
  const TimeGrid grid = c.grid();
  Chromosome ch = c.chromosome();
  json report;
  if (c.pmp.polish) {
    const PolishResult p = gradient_polish(sys, ch, grid, c.objective, c.bounds);
    ch = p.chromosome;
    report["polish"] = {{"objective", p.objective},
                        {"gradient_norm", p.gradient_norm},
                        {"iterations", p.iterations},
                        {"chromosome", chromosome_to_json(ch)}};
  }
  const ControlField field = c.pmp.polish ? ch.to_field(c.field.duration) : c.make_field();

  const GradientTrace g = nominal_gradient(sys, field, grid, c.objective);

  // Spot check against central differences of a single-step bump.
  const auto samples = field.sample_midpoints(grid.n_steps);
  json bumps = json::array();
  double worst = 0.0;
  for (int k = 1; k <= 5; ++k) {
    const int q = k * grid.n_steps / 6;
    const double h = 1e-4;
    auto plus = samples, minus = samples;
    plus[static_cast<std::size_t>(q)] += h;
    minus[static_cast<std::size_t>(q)] -= h;
    const double fd = (objective_value(propagate_samples(sys, plus, grid), c.objective) -
                       objective_value(propagate_samples(sys, minus, grid), c.objective)) /
                      (2.0 * h);
    const double an = g.bump_derivative(q);
    const double rel = std::abs(fd - an) / std::max(std::abs(fd), 1e-12);
    if (std::abs(fd) > 1e-8) worst = std::max(worst, rel);
    bumps.push_back({{"step", q}, {"finite_difference", fd}, {"analytic", an}});
  }

  report["objective"] = objective_name(c.objective);
  report["objective_value"] = g.objective_value;
  report["nominal_residual"] = pmp_residual(g);
  report["bump_checks"] = bumps;
  report["bump_max_relative_error"] = worst;

  std::optional<GradientTrace> e;
  if (c.pmp.expected) {
    const MomentSpec spec = c.moment_spec();
    const EncodingScheme scheme = EncodingScheme::standard(spec.targets(), c.pmp.expected_order);
    e = expected_gradient(sys, field, grid, scheme, spec, c.objective, {ctx.threads, c.encoding.alias_tol});
    report["expected_value"] = e->objective_value;
    report["expected_residual"] = pmp_residual(*e);
  }
  Csv csv(ctx.output("gradient.csv"), e ? std::vector<std::string>{"t", "nominal", "expected"}
                                        : std::vector<std::string>{"t", "nominal"});
  for (std::size_t q = 0; q < g.values.size(); ++q) {
    std::vector<std::string> row{num(g.times[q]), num(g.values[q])};
    if (e) row.push_back(num(e->values[q]));
    csv.row(row);
  }

  const HessianRankReport hr = hessian_rank_check(sys, ch, grid, c.objective);
  report["hessian"] = {{"checked", hr.checked},
                       {"status", hr.status},
                       {"gradient_max_norm", hr.gradient_max_norm},
                       {"numerical_rank", hr.numerical_rank},
                       {"rank_bound", hr.rank_bound},
                       {"eigenvalues", hr.eigenvalues}};
  ctx.write_json("pmp.json", report);
  return report;
}

json cmd_repro_table3(RunContext& ctx) {
  const auto& c = ctx.config;
  const PaperTables tables = load_paper_tables(c.data_dir, c.field.amplitude);
  const Table3Report r = reproduce_table3(c.make_system(), tables, c.grid(), c.objective, 0.05, ctx.threads);
  json mappings = json::array();
  for (const auto& m : r.mappings) {
    Csv csv(ctx.output(fmt::format("table3_{}.csv", m.name)),
            {"row", "instance1", "instance2", "instance3", "instance4"});
    json rows = json::array();
    for (Eigen::Index s = 0; s < m.computed.rows(); ++s) {
      std::vector<std::string> row{std::to_string(s + 1)};
      json jr = json::array();
      for (Eigen::Index k = 0; k < m.computed.cols(); ++k) {
        row.push_back(num(m.computed(s, k)));
        jr.push_back(m.computed(s, k));
      }
      csv.row(row);
      rows.push_back(jr);
    }
    mappings.push_back({{"name", m.name},
                        {"description", m.description},
                        {"matrix", rows},
                        {"max_abs_error", m.max_abs_error},
                        {"column_winners", m.winners},
                        {"diagonal_winners", m.diagonal_winners}});
  }
  json reported = json::array();
  for (Eigen::Index s = 0; s < tables.reported.rows(); ++s) {
    json jr = json::array();
    for (Eigen::Index k = 0; k < tables.reported.cols(); ++k) jr.push_back(tables.reported(s, k));
    reported.push_back(jr);
  }
  json report = {{"reported", reported},
                 {"mappings", mappings},
                 {"best_mapping", r.mappings[r.best].name},
                 {"best_max_abs_error", r.mappings[r.best].max_abs_error},
                 {"tolerance", r.tolerance},
                 {"matched", r.matched},
                 {"winner_structure_reproduced", r.structure}};
  if (!r.matched)
    report["discrepancy"] = fmt::format(
        "neither column mapping reproduces the reported matrix within {} (best: {} with max error {:.4f}); "
        "the row layout of the solution table or the instance amplitudes may differ from the printed tables",
        r.tolerance, r.mappings[r.best].name, r.mappings[r.best].max_abs_error);
  ctx.write_json("table3.json", report);
  return report;
}

json run_command(const std::string& name, ExperimentConfig config, const fs::path& out, int threads,
                 const std::function<json(RunContext&)>& body) {
  const auto start = std::chrono::steady_clock::now();
  const std::time_t started = std::time(nullptr);
  config.resolve();
  if (threads > 0) set_default_threads(threads);

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());

  RunContext ctx{std::move(config), out, threads, {}};
  ctx.write_json("resolved-config.json", config_to_json(ctx.config));
  json summary = body(ctx);

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&started));
  ctx.outputs.push_back("manifest.json");
  const json manifest = {
      {"command", name},
      {"versions",
       {{"qpr", kVersion},
        {"compiler", __VERSION__},
        {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
        {"fmt", FMT_VERSION},
        {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                      NLOHMANN_JSON_VERSION_PATCH)}}},
      {"seed", ctx.config.seed},
      {"precision", precision_name(ctx.config.precision)},
      {"threads", resolve_threads(threads)},
      {"isa", std::string(kernels::isa_name(kernels::active_isa()))},
      {"started_utc", stamp},
      {"wall_time_seconds", wall},
      {"outputs", ctx.outputs}};
  std::ofstream f(out / "manifest.json");
  if (!f) throw IoError("cannot write manifest");
  f << manifest.dump(2) << '\n';
  return summary;
}

}  // namespace qpr::cli
