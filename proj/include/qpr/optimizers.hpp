#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "qpr/moments.hpp"
#include "qpr/propagator.hpp"
#include "qpr/rng.hpp"
#include "qpr/system.hpp"

namespace qpr {

// Genome layout follows Chromosome::genes(): K frequencies in
// [frequency_min, frequency_max] (clipped) then K phases in [0, 2*pi) (wrapped).

struct GAConfig {
  int population_size = 60;
  int generations = 300;
  int modes = 7;
  double amplitude = 0.15;
  FieldBounds bounds;
  double crossover_prob = 0.9;
  double mutation_prob = 0.01;  // per gene; negative means 1 / gene_count
  int tournament_size = 3;
  int elitism_count = 2;
  std::uint64_t seed = 1;
  double sbx_eta = 10.0;
  double poly_eta = 20.0;
  /// Noisy evaluators: elites are re-evaluated under fresh noise every
  /// generation instead of carrying a stale lucky draw.
  bool noisy_fitness = false;
  /// Replaces the random initial population (padded randomly or truncated).
  std::vector<Chromosome> initial_population;

  int gene_count() const { return 2 * modes; }
  double effective_mutation_prob() const { return mutation_prob < 0.0 ? 1.0 / gene_count() : mutation_prob; }
  void validate() const;
};

struct Individual {
  Chromosome chromosome;
  double fitness = 0.0;             // maximised
  std::vector<double> objectives;   // minimised (NSGA-II)
  int rank = 0;
  double crowding_distance = 0.0;
  std::uint64_t last_eval_seed = 0;
};

/// Fitness of a batch of chromosomes, maximised. seeds[i] keys the noise
/// realisation for chromosomes[i]; deterministic evaluators ignore it, and
/// noisy evaluators must give identical draws for identical seeds.
using BatchEvaluator =
    std::function<std::vector<double>(std::span<const Chromosome>, std::span<const std::uint64_t>)>;

struct DiversityTrace {
  std::vector<double> spd;
  std::vector<double> hpd;
  std::vector<double> best;        // best fitness of the generation (as evaluated)
  std::vector<double> mean;
  std::vector<double> crossover_prob;
  std::vector<double> mutation_prob;  // population-level base rate
  std::vector<int> tournament_size;

  void record(double spd_value, double hpd_value, std::span<const double> fitness, double pc, double pm, int tau);
};

/// Mean over genes of the per-gene standard deviation divided by the gene
/// range, clipped to [0, 1]. Frequencies deviate from the arithmetic centroid;
/// phases, being periodic, from the circular mean with wrapped differences.
double spd(std::span<const Chromosome> population, const FieldBounds& bounds);
/// Same measure with individuals weighted by w_i = f_i / sum f. Fitness values
/// are shifted by their minimum when any is negative; all-zero weights fall
/// back to uniform.
double hpd(std::span<const Chromosome> population, std::span<const double> fitness, const FieldBounds& bounds);

// Real-coded operators (bounded SBX and polynomial mutation). Both respect
// the bounds: frequencies are clipped, phases wrapped.

void sbx_crossover(Chromosome& a, Chromosome& b, const FieldBounds& bounds, double eta, Engine& rng);
void polynomial_mutation(Chromosome& c, const FieldBounds& bounds, double eta, double per_gene_prob, Engine& rng);
Chromosome random_chromosome(int modes, double amplitude, const FieldBounds& bounds, Engine& rng);

struct GAResult {
  Individual best;                  // best-ever
  std::vector<double> best_ever;    // per generation, generation 0 = initial population
  DiversityTrace diversity;
  std::vector<Individual> population;
};

GAResult tga_optimize(const BatchEvaluator& evaluator, const GAConfig& config);

struct AcromuseConfig {
  GAConfig ga;
  double crossover_min = 0.6;
  double crossover_max = 0.95;
  double mutation_min = -1.0;  // negative means 1 / gene_count
  double mutation_max = 0.25;
  int tournament_min = 2;
  int tournament_max = 5;
  /// Polynomial mutation index for ACROMUSE; heavier tails than the tGA
  /// default so raised mutation rates actually restore spread.
  double mutation_eta = 0.5;
  double spd_reference = 0.2887;
  double hpd_reference = 0.2887;
  int retained_solutions = 4;
  int noise_instances = 4;

  void validate() const;
  double effective_mutation_min() const { return mutation_min < 0.0 ? 1.0 / ga.gene_count() : mutation_min; }
  /// p_c = min + (max - min) * SPD / SPD_ref, clipped.
  double crossover_for(double spd_value) const;
  /// Base mutation rate, rising as SPD falls: min + (max - min) * (1 - SPD / SPD_ref).
  double mutation_for(double spd_value) const;
  /// tau = tau_min + round((tau_max - tau_min) * (1 - HPD / HPD_ref)), clipped.
  int tournament_for(double hpd_value) const;
};

/// Per-individual mutation rate from the population base rate: below-average
/// individuals get the base rate, fitter ones proportionally less, never below
/// mutation_min.
std::vector<double> individual_mutation_rates(std::span<const double> fitness, double base_rate, double floor);

/// Retained solutions evaluated on shared noise instances (same seed per column).
struct InstanceTable {
  std::vector<Chromosome> solutions;
  std::vector<std::uint64_t> instance_seeds;
  RMatrix fitness;           // solutions x instances
  std::vector<int> winners;  // best solution per instance
};

struct AcromuseResult {
  std::vector<Individual> population;  // final population, best first
  DiversityTrace diversity;
  InstanceTable instances;
};

AcromuseResult acromuse_optimize(const BatchEvaluator& noisy_evaluator, const AcromuseConfig& config);

/// First generation whose best fitness reaches `fraction` of the final
/// `window`-generation mean best fitness.
int generations_to_reach(const DiversityTrace& trace, double fraction = 0.95, int window = 10);

// NSGA-II.

/// a dominates b under minimisation.
bool dominates(std::span<const double> a, std::span<const double> b);
/// Fast non-dominated sort; returns fronts of indices and sets ranks.
std::vector<std::vector<std::size_t>> non_dominated_sort(const std::vector<std::vector<double>>& objectives,
                                                         std::vector<int>& rank);
std::vector<double> crowding_distance(const std::vector<std::vector<double>>& objectives,
                                      std::span<const std::size_t> front);
/// Independent O(n^2) pairwise check; throws InvariantError on a dominated point.
void certify_non_domination(const std::vector<std::vector<double>>& objectives);

/// Objective vectors (minimised) for a batch; generation keys common noise.
using VectorEvaluator =
    std::function<std::vector<std::vector<double>>(std::span<const Chromosome>, int generation)>;

struct Nsga2Run {
  std::vector<Individual> population;
  std::vector<Individual> front;  // rank 0 of the final population
};

/// Plain NSGA-II on arbitrary minimised objectives (binary tournament on
/// rank then crowding, SBX, polynomial mutation, elitist (mu + lambda) survival).
Nsga2Run nsga2_minimize(const VectorEvaluator& evaluator, const GAConfig& config);

struct MomentValues {
  double nominal = 0.0;
  double expected = 0.0;
  double variance = 0.0;
  double se_expected = 0.0;
  std::size_t samples = 0;
};

/// (J_nom, E[P], var(P)) for a batch. All chromosomes in one call share the
/// noise stream so comparisons use common random numbers.
using MomentEvaluator =
    std::function<std::vector<MomentValues>(std::span<const Chromosome>, std::uint64_t stream, std::size_t samples)>;

/// Nominal by exact propagation; E[P] and var(P) by Monte Carlo over spec.
MomentEvaluator mc_moment_evaluator(const QuantumSystem& system, const TimeGrid& grid, const MomentSpec& spec,
                                    const TransitionProbability& objective, int threads = 0);

struct Nsga2Config {
  GAConfig ga = [] {
    GAConfig g;
    g.population_size = 80;
    g.generations = 150;
    g.mutation_prob = -1.0;
    return g;
  }();
  double mc_halfwidth = 0.02;
  double mc_confidence = 0.95;
  std::size_t pilot_samples = 64;
  std::size_t max_samples = 20000;
  int recalibrate_every = 10;
  int final_precision_factor = 16;

  void validate() const;
};

struct ParetoPoint {
  Chromosome chromosome;
  double nominal = 0.0;
  double expected = 0.0;
  double variance = 0.0;
  double se_expected = 0.0;
  std::size_t sample_count = 0;
};

struct ParetoFront {
  std::vector<ParetoPoint> points;
  std::vector<std::size_t> samples_per_generation;
  bool certified = false;

  /// Index of the point with the largest nominal value.
  std::size_t nominal_best() const;
};

/// Maximise J_nom and E[P], minimise var(P). The final rank-0 set is
/// re-evaluated with final_precision_factor times the calibrated sample
/// count on a fresh stream, filtered for non-domination and certified.
ParetoFront nsga2_optimize(const MomentEvaluator& evaluator, const Nsga2Config& config);

/// Front chromosomes first, padded to population_size with bounded Gaussian
/// jitter (2% of each gene range) around the members in turn.
std::vector<Chromosome> seed_from_front(const ParetoFront& front, const GAConfig& config);

// Evaluators for the benchmark control problem.

/// Multiplicative Gaussian amplitude noise, one factor 1 + sigma z per mode,
/// drawn from the stream keyed by the evaluation seed.
struct AmplitudeNoise {
  double relative_sigma = 0.1;
  std::vector<double> multipliers(std::uint64_t seed, int modes) const;
};

BatchEvaluator nominal_evaluator(const QuantumSystem& system, const TimeGrid& grid,
                                 const TransitionProbability& objective, int threads = 0);
/// One noise draw per evaluation (model-free learning without averaging).
BatchEvaluator amplitude_noise_evaluator(const QuantumSystem& system, const TimeGrid& grid,
                                         const TransitionProbability& objective, const AmplitudeNoise& noise,
                                         int threads = 0);
/// Sample mean over `draws` noise realisations (expected fitness).
BatchEvaluator averaged_noise_evaluator(const QuantumSystem& system, const TimeGrid& grid,
                                        const TransitionProbability& objective, const AmplitudeNoise& noise,
                                        int draws, int threads = 0);

// Gradient polishing of GA output (projected BFGS on the genes).

struct PolishOptions {
  int max_iterations = 300;
  double gradient_tolerance = 1e-9;  // sup-norm of the gene gradient
  // Also stops after three accepted steps in a row that gain nothing above round-off.
  bool maximize = true;
};

struct PolishResult {
  Chromosome chromosome;
  double objective = 0.0;
  double gradient_norm = 0.0;  // sup-norm over free genes
  int iterations = 0;
};

PolishResult gradient_polish(const QuantumSystem& system, const Chromosome& start, const TimeGrid& grid,
                             const ObjectiveSpec& objective, const FieldBounds& bounds,
                             const PolishOptions& options = {});

}  // namespace qpr
