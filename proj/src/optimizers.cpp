#include "qpr/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "qpr/error.hpp"
#include "qpr/parallel.hpp"
#include "qpr/pmp.hpp"

namespace qpr {

namespace {

double& gene_ref(Chromosome& c, int g) {
  const int k = c.mode_count();
  return g < k ? c.frequencies[static_cast<std::size_t>(g)] : c.phases[static_cast<std::size_t>(g - k)];
}

double gene_at(const Chromosome& c, int g) {
  const int k = c.mode_count();
  return g < k ? c.frequencies[static_cast<std::size_t>(g)] : c.phases[static_cast<std::size_t>(g - k)];
}

bool periodic_gene(const Chromosome& c, int g) { return g >= c.mode_count(); }

double gene_lower(const Chromosome& c, int g, const FieldBounds& b) {
  return periodic_gene(c, g) ? 0.0 : b.frequency_min;
}

double gene_upper(const Chromosome& c, int g, const FieldBounds& b) {
  return periodic_gene(c, g) ? kTwoPi : b.frequency_max;
}

void restore_bounds(Chromosome& c, const FieldBounds& b) {
  for (auto& w : c.frequencies) w = std::clamp(w, b.frequency_min, b.frequency_max);
  for (auto& p : c.phases) p = wrap_phase(p);
}

double wrapped_difference(double a, double b) {
  double d = std::remainder(a - b, kTwoPi);
  if (d >= std::numbers::pi) d -= kTwoPi;
  return d;
}

double uniform01(Engine& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Weighted diversity; weights must sum to one.
double diversity(std::span<const Chromosome> population, std::span<const double> weights, const FieldBounds& bounds) {
  if (population.empty()) throw ValidationError("diversity of an empty population");
  bounds.validate();
  const Chromosome& first = population.front();
  const int genes = first.gene_count();
  if (genes == 0) throw ValidationError("diversity needs at least one gene");
  for (const auto& c : population) {
    if (c.gene_count() != genes) throw ValidationError("population has mixed gene counts");
  }
  double total = 0.0;
  for (int g = 0; g < genes; ++g) {
    const double range = gene_upper(first, g, bounds) - gene_lower(first, g, bounds);
    if (!(range > 0.0)) throw ValidationError("gene range must be positive");
    double var = 0.0;
    if (periodic_gene(first, g)) {
      double s = 0.0, co = 0.0;
      for (std::size_t i = 0; i < population.size(); ++i) {
        s += weights[i] * std::sin(gene_at(population[i], g));
        co += weights[i] * std::cos(gene_at(population[i], g));
      }
      const double centre = (std::hypot(s, co) > 1e-14) ? std::atan2(s, co) : 0.0;
      for (std::size_t i = 0; i < population.size(); ++i) {
        const double d = wrapped_difference(gene_at(population[i], g), centre);
        var += weights[i] * d * d;
      }
    } else {
      double mean = 0.0;
      for (std::size_t i = 0; i < population.size(); ++i) mean += weights[i] * gene_at(population[i], g);
      for (std::size_t i = 0; i < population.size(); ++i) {
        const double d = gene_at(population[i], g) - mean;
        var += weights[i] * d * d;
      }
    }
    total += std::sqrt(std::max(var, 0.0)) / range;
  }
  return std::clamp(total / genes, 0.0, 1.0);
}

std::vector<double> fitness_of(std::span<const Individual> pop) {
  std::vector<double> f;
  f.reserve(pop.size());
  for (const auto& ind : pop) f.push_back(ind.fitness);
  return f;
}

std::vector<Chromosome> chromosomes_of(std::span<const Individual> pop) {
  std::vector<Chromosome> c;
  c.reserve(pop.size());
  for (const auto& ind : pop) c.push_back(ind.chromosome);
  return c;
}

std::uint64_t eval_seed(std::uint64_t seed, int generation, std::size_t index) {
  return stream_key(seed, {static_cast<std::uint64_t>(generation), static_cast<std::uint64_t>(index), 1});
}

/// Evaluates `targets` (indices into pop) in one batch with fresh seeds.
void evaluate_into(const BatchEvaluator& evaluator, std::vector<Individual>& pop,
                   std::span<const std::size_t> targets, std::uint64_t seed, int generation) {
  if (targets.empty()) return;
  std::vector<Chromosome> batch;
  std::vector<std::uint64_t> seeds;
  for (auto i : targets) {
    batch.push_back(pop[i].chromosome);
    seeds.push_back(eval_seed(seed, generation, i));
  }
  const auto values = evaluator(batch, seeds);
  if (values.size() != batch.size()) throw InvariantError("evaluator returned the wrong number of values");
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (!std::isfinite(values[k])) throw InvariantError("evaluator returned a non-finite fitness");
    pop[targets[k]].fitness = values[k];
    pop[targets[k]].last_eval_seed = seeds[k];
  }
}

std::vector<Individual> initial_population(const GAConfig& config) {
  auto rng = make_engine(config.seed, {0, 0x1a17});
  std::vector<Individual> pop;
  for (const auto& c : config.initial_population) {
    if (static_cast<int>(pop.size()) == config.population_size) break;
    if (c.mode_count() != config.modes) throw ValidationError("initial population has the wrong mode count");
    Individual ind;
    ind.chromosome = c;
    restore_bounds(ind.chromosome, config.bounds);
    pop.push_back(std::move(ind));
  }
  while (static_cast<int>(pop.size()) < config.population_size) {
    Individual ind;
    ind.chromosome = random_chromosome(config.modes, config.amplitude, config.bounds, rng);
    pop.push_back(std::move(ind));
  }
  return pop;
}

std::size_t tournament(std::span<const double> fitness, int size, Engine& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, fitness.size() - 1);
  std::size_t best = pick(rng);
  for (int k = 1; k < size; ++k) {
    const std::size_t c = pick(rng);
    if (fitness[c] > fitness[best] || (fitness[c] == fitness[best] && c < best)) best = c;
  }
  return best;
}

/// Indices by descending fitness, ties by index.
std::vector<std::size_t> ranking(std::span<const double> fitness) {
  std::vector<std::size_t> order(fitness.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return fitness[a] > fitness[b]; });
  return order;
}

double population_hpd(std::span<const Individual> pop, const FieldBounds& bounds) {
  const auto c = chromosomes_of(pop);
  const auto f = fitness_of(pop);
  return hpd(c, f, bounds);
}

double population_spd(std::span<const Individual> pop, const FieldBounds& bounds) {
  const auto c = chromosomes_of(pop);
  return spd(c, bounds);
}

/// Elites (re-evaluated when noisy) plus offspring from `breed`, evaluated in one batch.
template <class Breed>
std::vector<Individual> next_generation(const BatchEvaluator& evaluator, const std::vector<Individual>& pop,
                                        const GAConfig& config, int generation, Breed&& breed) {
  const auto fitness = fitness_of(pop);
  const auto order = ranking(fitness);
  const auto n = static_cast<std::size_t>(config.population_size);
  const auto elites = std::min(static_cast<std::size_t>(config.elitism_count), n);
  std::vector<Individual> next;
  next.reserve(n);
  for (std::size_t e = 0; e < elites; ++e) next.push_back(pop[order[e]]);
  auto rng = make_engine(config.seed, {static_cast<std::uint64_t>(generation), 0xb7ee});
  while (next.size() < n) {
    auto [a, b] = breed(fitness, rng);
    Individual ia;
    ia.chromosome = std::move(a);
    next.push_back(std::move(ia));
    if (next.size() < n) {
      Individual ib;
      ib.chromosome = std::move(b);
      next.push_back(std::move(ib));
    }
  }
  std::vector<std::size_t> targets;
  for (std::size_t i = config.noisy_fitness ? 0 : elites; i < n; ++i) targets.push_back(i);
  evaluate_into(evaluator, next, targets, config.seed, generation);
  return next;
}

double min_distance(const Chromosome& c, std::span<const Chromosome> others, const FieldBounds& bounds) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : others) {
    double d = 0.0;
    for (int g = 0; g < c.gene_count(); ++g) {
      const double range = gene_upper(c, g, bounds) - gene_lower(c, g, bounds);
      const double diff = periodic_gene(c, g) ? wrapped_difference(gene_at(c, g), gene_at(o, g))
                                              : gene_at(c, g) - gene_at(o, g);
      d += std::abs(diff) / range;
    }
    best = std::min(best, d / c.gene_count());
  }
  return best;
}

}  // namespace

void GAConfig::validate() const {
  bounds.validate();
  if (population_size < 4 || population_size % 2 != 0) throw ValidationError("population_size must be even and >= 4");
  if (generations < 0) throw ValidationError("generations must be >= 0");
  if (modes < 1) throw ValidationError("modes must be >= 1");
  if (!(crossover_prob >= 0.0 && crossover_prob <= 1.0)) throw ValidationError("crossover_prob must lie in [0, 1]");
  if (mutation_prob > 1.0) throw ValidationError("mutation_prob must lie in [0, 1]");
  if (tournament_size < 2) throw ValidationError("tournament_size must be >= 2");
  if (elitism_count < 0 || elitism_count >= population_size) throw ValidationError("elitism_count out of range");
  if (!(sbx_eta >= 0.0) || !(poly_eta >= 0.0)) throw ValidationError("distribution indices must be >= 0");
}

void DiversityTrace::record(double spd_value, double hpd_value, std::span<const double> fitness, double pc, double pm,
                            int tau) {
  spd.push_back(spd_value);
  hpd.push_back(hpd_value);
  best.push_back(*std::max_element(fitness.begin(), fitness.end()));
  mean.push_back(std::accumulate(fitness.begin(), fitness.end(), 0.0) / static_cast<double>(fitness.size()));
  crossover_prob.push_back(pc);
  mutation_prob.push_back(pm);
  tournament_size.push_back(tau);
}

double spd(std::span<const Chromosome> population, const FieldBounds& bounds) {
  const std::vector<double> w(population.size(), 1.0 / static_cast<double>(std::max<std::size_t>(population.size(), 1)));
  return diversity(population, w, bounds);
}

double hpd(std::span<const Chromosome> population, std::span<const double> fitness, const FieldBounds& bounds) {
  if (fitness.size() != population.size()) throw ValidationError("fitness and population sizes differ");
  if (population.empty()) throw ValidationError("diversity of an empty population");
  const double fmin = *std::min_element(fitness.begin(), fitness.end());
  const double shift = fmin < 0.0 ? -fmin : 0.0;
  std::vector<double> w(fitness.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(fitness[i])) throw ValidationError("fitness must be finite");
    w[i] = fitness[i] + shift;
    total += w[i];
  }
  if (!(total > 0.0)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
  } else {
    for (auto& x : w) x /= total;
  }
  return diversity(population, w, bounds);
}

void sbx_crossover(Chromosome& a, Chromosome& b, const FieldBounds& bounds, double eta, Engine& rng) {
  if (a.gene_count() != b.gene_count()) throw ValidationError("crossover of chromosomes with different lengths");
  for (int g = 0; g < a.gene_count(); ++g) {
    if (uniform01(rng) > 0.5) continue;
    double& x1 = gene_ref(a, g);
    double& x2 = gene_ref(b, g);
    if (std::abs(x1 - x2) <= 1e-14) continue;
    const double lo = gene_lower(a, g, bounds), hi = gene_upper(a, g, bounds);
    const double y1 = std::min(x1, x2), y2 = std::max(x1, x2);
    const double u = uniform01(rng);
    auto spread = [&](double beta) {
      const double alpha = 2.0 - std::pow(beta, -(eta + 1.0));
      return u <= 1.0 / alpha ? std::pow(u * alpha, 1.0 / (eta + 1.0))
                              : std::pow(1.0 / (2.0 - u * alpha), 1.0 / (eta + 1.0));
    };
    const double bq1 = spread(1.0 + 2.0 * (y1 - lo) / (y2 - y1));
    const double bq2 = spread(1.0 + 2.0 * (hi - y2) / (y2 - y1));
    double c1 = std::clamp(0.5 * ((y1 + y2) - bq1 * (y2 - y1)), lo, hi);
    double c2 = std::clamp(0.5 * ((y1 + y2) + bq2 * (y2 - y1)), lo, hi);
    if (uniform01(rng) < 0.5) std::swap(c1, c2);
    x1 = c1;
    x2 = c2;
  }
  restore_bounds(a, bounds);
  restore_bounds(b, bounds);
}

void polynomial_mutation(Chromosome& c, const FieldBounds& bounds, double eta, double per_gene_prob, Engine& rng) {
  for (int g = 0; g < c.gene_count(); ++g) {
    if (uniform01(rng) >= per_gene_prob) continue;
    double& y = gene_ref(c, g);
    const double lo = gene_lower(c, g, bounds), hi = gene_upper(c, g, bounds);
    const double range = hi - lo;
    const double d1 = (y - lo) / range, d2 = (hi - y) / range;
    const double r = uniform01(rng);
    const double power = 1.0 / (eta + 1.0);
    double dq;
    if (r < 0.5) {
      const double v = 2.0 * r + (1.0 - 2.0 * r) * std::pow(1.0 - d1, eta + 1.0);
      dq = std::pow(v, power) - 1.0;
    } else {
      const double v = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * std::pow(1.0 - d2, eta + 1.0);
      dq = 1.0 - std::pow(v, power);
    }
    y = std::clamp(y + dq * range, lo, hi);
  }
  restore_bounds(c, bounds);
}

Chromosome random_chromosome(int modes, double amplitude, const FieldBounds& bounds, Engine& rng) {
  Chromosome c;
  c.fixed_amplitude = amplitude;
  std::uniform_real_distribution<double> w(bounds.frequency_min, bounds.frequency_max);
  std::uniform_real_distribution<double> p(0.0, kTwoPi);
  for (int k = 0; k < modes; ++k) c.frequencies.push_back(w(rng));
  for (int k = 0; k < modes; ++k) c.phases.push_back(wrap_phase(p(rng)));
  return c;
}

GAResult tga_optimize(const BatchEvaluator& evaluator, const GAConfig& config) {
  config.validate();
  const double pm = config.effective_mutation_prob();
  auto pop = initial_population(config);
  std::vector<std::size_t> all(pop.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  evaluate_into(evaluator, pop, all, config.seed, 0);

  GAResult result;
  auto record = [&] {
    const auto f = fitness_of(pop);
    result.diversity.record(population_spd(pop, config.bounds), population_hpd(pop, config.bounds), f,
                            config.crossover_prob, pm, config.tournament_size);
    const auto top = ranking(f).front();
    if (result.best_ever.empty() || pop[top].fitness > result.best.fitness) result.best = pop[top];
    result.best_ever.push_back(result.best.fitness);
  };
  record();

  for (int g = 1; g <= config.generations; ++g) {
    pop = next_generation(evaluator, pop, config, g, [&](std::span<const double> fitness, Engine& rng) {
      Chromosome a = pop[tournament(fitness, config.tournament_size, rng)].chromosome;
      Chromosome b = pop[tournament(fitness, config.tournament_size, rng)].chromosome;
      if (uniform01(rng) < config.crossover_prob) sbx_crossover(a, b, config.bounds, config.sbx_eta, rng);
      polynomial_mutation(a, config.bounds, config.poly_eta, pm, rng);
      polynomial_mutation(b, config.bounds, config.poly_eta, pm, rng);
      return std::pair{std::move(a), std::move(b)};
    });
    record();
  }
  result.population = std::move(pop);
  return result;
}

void AcromuseConfig::validate() const {
  ga.validate();
  if (!(0.0 <= crossover_min && crossover_min <= crossover_max && crossover_max <= 1.0)) {
    throw ValidationError("crossover range must satisfy 0 <= min <= max <= 1");
  }
  const double mmin = effective_mutation_min();
  if (!(0.0 <= mmin && mmin <= mutation_max && mutation_max <= 1.0)) {
    throw ValidationError("mutation range must satisfy 0 <= min <= max <= 1");
  }
  if (tournament_min < 2 || tournament_max < tournament_min) throw ValidationError("tournament range invalid");
  if (!(spd_reference > 0.0) || !(hpd_reference > 0.0)) throw ValidationError("diversity references must be > 0");
  if (!(mutation_eta >= 0.0)) throw ValidationError("mutation_eta must be >= 0");
  if (retained_solutions < 1 || noise_instances < 1) throw ValidationError("instance table sizes must be >= 1");
  if (retained_solutions > ga.population_size) throw ValidationError("more retained solutions than individuals");
}

double AcromuseConfig::crossover_for(double spd_value) const {
  const double r = std::clamp(spd_value / spd_reference, 0.0, 1.0);
  return crossover_min + (crossover_max - crossover_min) * r;
}

double AcromuseConfig::mutation_for(double spd_value) const {
  const double r = std::clamp(spd_value / spd_reference, 0.0, 1.0);
  const double lo = effective_mutation_min();
  return lo + (mutation_max - lo) * (1.0 - r);
}

int AcromuseConfig::tournament_for(double hpd_value) const {
  const double r = std::clamp(hpd_value / hpd_reference, 0.0, 1.0);
  const int tau = tournament_min + static_cast<int>(std::lround((tournament_max - tournament_min) * (1.0 - r)));
  return std::clamp(tau, tournament_min, tournament_max);
}

std::vector<double> individual_mutation_rates(std::span<const double> fitness, double base_rate, double floor) {
  std::vector<double> rates(fitness.size(), base_rate);
  if (fitness.empty()) return rates;
  const double mean = std::accumulate(fitness.begin(), fitness.end(), 0.0) / static_cast<double>(fitness.size());
  const double fmax = *std::max_element(fitness.begin(), fitness.end());
  for (std::size_t i = 0; i < fitness.size(); ++i) {
    if (fitness[i] < mean) continue;
    const double r = base_rate * (fmax - fitness[i]) / (fmax - mean + 1e-12);
    rates[i] = std::clamp(r, std::min(floor, base_rate), base_rate);
  }
  return rates;
}

AcromuseResult acromuse_optimize(const BatchEvaluator& noisy_evaluator, const AcromuseConfig& config) {
  config.validate();
  const GAConfig& ga = config.ga;
  auto pop = initial_population(ga);
  std::vector<std::size_t> all(pop.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  evaluate_into(noisy_evaluator, pop, all, ga.seed, 0);

  AcromuseResult result;
  double pc = 0.0, pm = 0.0;
  int tau = 2;
  auto measure = [&] {
    const double s = population_spd(pop, ga.bounds);
    const double h = population_hpd(pop, ga.bounds);
    pc = config.crossover_for(s);
    pm = config.mutation_for(s);
    tau = config.tournament_for(h);
    result.diversity.record(s, h, fitness_of(pop), pc, pm, tau);
  };
  measure();

  for (int g = 1; g <= ga.generations; ++g) {
    const auto rates = individual_mutation_rates(fitness_of(pop), pm, config.effective_mutation_min());
    pop = next_generation(noisy_evaluator, pop, ga, g, [&](std::span<const double> fitness, Engine& rng) {
      const auto i = tournament(fitness, tau, rng);
      const auto j = tournament(fitness, tau, rng);
      Chromosome a = pop[i].chromosome;
      Chromosome b = pop[j].chromosome;
      if (uniform01(rng) < pc) sbx_crossover(a, b, ga.bounds, ga.sbx_eta, rng);
      polynomial_mutation(a, ga.bounds, config.mutation_eta, rates[i], rng);
      polynomial_mutation(b, ga.bounds, config.mutation_eta, rates[j], rng);
      return std::pair{std::move(a), std::move(b)};
    });
    measure();
  }

  const auto order = ranking(fitness_of(pop));
  for (auto i : order) result.population.push_back(pop[i]);

  // Retain distinct high-fitness solutions and score them on shared noise instances.
  auto& table = result.instances;
  std::vector<bool> used(result.population.size(), false);
  for (std::size_t i = 0; i < result.population.size() &&
                          static_cast<int>(table.solutions.size()) < config.retained_solutions;
       ++i) {
    const auto& c = result.population[i].chromosome;
    if (table.solutions.empty() || min_distance(c, table.solutions, ga.bounds) > 1e-3) {
      table.solutions.push_back(c);
      used[i] = true;
    }
  }
  for (std::size_t i = 0; i < result.population.size() &&
                          static_cast<int>(table.solutions.size()) < config.retained_solutions;
       ++i) {
    if (!used[i]) table.solutions.push_back(result.population[i].chromosome);
  }
  const auto ns = table.solutions.size();
  table.fitness = RMatrix::Zero(static_cast<Eigen::Index>(ns), config.noise_instances);
  for (int k = 0; k < config.noise_instances; ++k) {
    const auto s = stream_key(ga.seed, {static_cast<std::uint64_t>(ga.generations + 1),
                                        static_cast<std::uint64_t>(k), 0x1257});
    table.instance_seeds.push_back(s);
    const std::vector<std::uint64_t> seeds(ns, s);
    const auto values = noisy_evaluator(table.solutions, seeds);
    Eigen::Index best = 0;
    for (std::size_t i = 0; i < ns; ++i) {
      table.fitness(static_cast<Eigen::Index>(i), k) = values[i];
      if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<Eigen::Index>(i);
    }
    table.winners.push_back(static_cast<int>(best));
  }
  return result;
}

int generations_to_reach(const DiversityTrace& trace, double fraction, int window) {
  const auto& b = trace.best;
  if (b.empty()) throw ValidationError("empty trace");
  const auto w = std::min<std::size_t>(static_cast<std::size_t>(std::max(window, 1)), b.size());
  const double final_level = std::accumulate(b.end() - static_cast<std::ptrdiff_t>(w), b.end(), 0.0) /
                             static_cast<double>(w);
  const double target = fraction * final_level;
  for (std::size_t g = 0; g < b.size(); ++g) {
    if (b[g] >= target) return static_cast<int>(g);
  }
  return static_cast<int>(b.size()) - 1;
}

bool dominates(std::span<const double> a, std::span<const double> b) {
  bool strictly = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] > b[k]) return false;
    if (a[k] < b[k]) strictly = true;
  }
  return strictly;
}

std::vector<std::vector<std::size_t>> non_dominated_sort(const std::vector<std::vector<double>>& objectives,
                                                         std::vector<int>& rank) {
  const std::size_t n = objectives.size();
  rank.assign(n, 0);
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<int> count(n, 0);
  std::vector<std::vector<std::size_t>> fronts(1);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p == q) continue;
      if (dominates(objectives[p], objectives[q])) {
        dominated[p].push_back(q);
      } else if (dominates(objectives[q], objectives[p])) {
        ++count[p];
      }
    }
    if (count[p] == 0) fronts[0].push_back(p);
  }
  for (std::size_t f = 0; !fronts[f].empty(); ++f) {
    std::vector<std::size_t> next;
    for (auto p : fronts[f]) {
      for (auto q : dominated[p]) {
        if (--count[q] == 0) {
          rank[q] = static_cast<int>(f + 1);
          next.push_back(q);
        }
      }
    }
    fronts.push_back(std::move(next));
  }
  fronts.pop_back();
  return fronts;
}

std::vector<double> crowding_distance(const std::vector<std::vector<double>>& objectives,
                                      std::span<const std::size_t> front) {
  const std::size_t n = front.size();
  std::vector<double> d(n, 0.0);
  if (n == 0) return d;
  if (n <= 2) {
    std::fill(d.begin(), d.end(), std::numeric_limits<double>::infinity());
    return d;
  }
  const std::size_t m = objectives[front[0]].size();
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < m; ++k) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return objectives[front[a]][k] < objectives[front[b]][k]; });
    const double lo = objectives[front[order.front()]][k];
    const double hi = objectives[front[order.back()]][k];
    d[order.front()] = d[order.back()] = std::numeric_limits<double>::infinity();
    if (!(hi > lo)) continue;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      d[order[i]] += (objectives[front[order[i + 1]]][k] - objectives[front[order[i - 1]]][k]) / (hi - lo);
    }
  }
  return d;
}

void certify_non_domination(const std::vector<std::vector<double>>& objectives) {
  for (std::size_t a = 0; a < objectives.size(); ++a) {
    for (std::size_t b = 0; b < objectives.size(); ++b) {
      if (a != b && dominates(objectives[a], objectives[b])) {
        throw InvariantError(fmt::format("front point {} dominates point {}", a, b));
      }
    }
  }
}

namespace {

void assign_rank_crowding(std::vector<Individual>& pop) {
  std::vector<std::vector<double>> obj;
  for (const auto& ind : pop) obj.push_back(ind.objectives);
  std::vector<int> rank;
  const auto fronts = non_dominated_sort(obj, rank);
  for (const auto& front : fronts) {
    const auto cd = crowding_distance(obj, front);
    for (std::size_t i = 0; i < front.size(); ++i) {
      pop[front[i]].rank = rank[front[i]];
      pop[front[i]].crowding_distance = cd[i];
    }
  }
}

bool crowded_better(const Individual& a, const Individual& b) {
  if (a.rank != b.rank) return a.rank < b.rank;
  return a.crowding_distance > b.crowding_distance;
}

void evaluate_objectives(const VectorEvaluator& evaluator, std::vector<Individual>& pop, std::size_t from,
                         int generation) {
  if (from >= pop.size()) return;
  std::vector<Chromosome> batch;
  for (std::size_t i = from; i < pop.size(); ++i) batch.push_back(pop[i].chromosome);
  const auto values = evaluator(batch, generation);
  if (values.size() != batch.size()) throw InvariantError("evaluator returned the wrong number of vectors");
  for (std::size_t k = 0; k < values.size(); ++k) {
    for (double v : values[k]) {
      if (!std::isfinite(v)) throw InvariantError("evaluator returned a non-finite objective");
    }
    pop[from + k].objectives = values[k];
  }
}

}  // namespace

Nsga2Run nsga2_minimize(const VectorEvaluator& evaluator, const GAConfig& config) {
  config.validate();
  const double pm = config.effective_mutation_prob();
  const auto n = static_cast<std::size_t>(config.population_size);
  auto pop = initial_population(config);
  evaluate_objectives(evaluator, pop, 0, 0);
  assign_rank_crowding(pop);

  for (int g = 1; g <= config.generations; ++g) {
    auto rng = make_engine(config.seed, {static_cast<std::uint64_t>(g), 0x2a2});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    auto select = [&]() -> const Individual& {
      const auto a = pick(rng), b = pick(rng);
      return crowded_better(pop[b], pop[a]) ? pop[b] : pop[a];
    };
    std::vector<Individual> combined = pop;
    while (combined.size() < 2 * n) {
      Chromosome a = select().chromosome;
      Chromosome b = select().chromosome;
      if (uniform01(rng) < config.crossover_prob) sbx_crossover(a, b, config.bounds, config.sbx_eta, rng);
      polynomial_mutation(a, config.bounds, config.poly_eta, pm, rng);
      polynomial_mutation(b, config.bounds, config.poly_eta, pm, rng);
      Individual ia, ib;
      ia.chromosome = std::move(a);
      ib.chromosome = std::move(b);
      combined.push_back(std::move(ia));
      if (combined.size() < 2 * n) combined.push_back(std::move(ib));
    }
    evaluate_objectives(evaluator, combined, n, g);

    std::vector<std::vector<double>> obj;
    for (const auto& ind : combined) obj.push_back(ind.objectives);
    std::vector<int> rank;
    const auto fronts = non_dominated_sort(obj, rank);
    std::vector<Individual> next;
    for (const auto& front : fronts) {
      if (next.size() + front.size() <= n) {
        for (auto i : front) next.push_back(combined[i]);
        continue;
      }
      const auto cd = crowding_distance(obj, front);
      std::vector<std::size_t> order(front.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return cd[a] > cd[b]; });
      for (std::size_t i = 0; next.size() < n; ++i) next.push_back(combined[front[order[i]]]);
      break;
    }
    pop = std::move(next);
    assign_rank_crowding(pop);
  }

  Nsga2Run run;
  for (const auto& ind : pop) {
    if (ind.rank == 0) run.front.push_back(ind);
  }
  run.population = std::move(pop);
  return run;
}

MomentEvaluator mc_moment_evaluator(const QuantumSystem& system, const TimeGrid& grid, const MomentSpec& spec,
                                    const TransitionProbability& objective, int threads) {
  validate_objective(objective, system.dimension());
  return [system, grid, spec, objective, threads](std::span<const Chromosome> batch, std::uint64_t stream,
                                                  std::size_t samples) {
    std::vector<ControlField> fields;
    for (const auto& c : batch) fields.push_back(c.to_field(grid.duration));
    const auto nominal = transition_probabilities(system, fields, grid, objective.initial, objective.target, threads);
    std::vector<MomentValues> out(batch.size());
    McOptions opts;
    opts.threads = threads;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto mc = mc_estimate(system, fields[i], grid, spec, objective, samples, stream, opts);
      out[i] = {nominal[i], mc.mean, mc.variance, mc.se_mean, mc.samples};
    }
    return out;
  };
}

void Nsga2Config::validate() const {
  ga.validate();
  if (!(mc_halfwidth > 0.0)) throw ValidationError("mc_halfwidth must be > 0");
  if (!(mc_confidence > 0.0 && mc_confidence < 1.0)) throw ValidationError("mc_confidence must lie in (0, 1)");
  if (pilot_samples < 2 || max_samples < pilot_samples) throw ValidationError("sample budget invalid");
  if (recalibrate_every < 1 || final_precision_factor < 1) throw ValidationError("recalibration settings invalid");
}

std::size_t ParetoFront::nominal_best() const {
  if (points.empty()) throw ValidationError("empty Pareto front");
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].nominal > points[best].nominal) best = i;
  }
  return best;
}

ParetoFront nsga2_optimize(const MomentEvaluator& evaluator, const Nsga2Config& config) {
  config.validate();
  ParetoFront result;
  std::size_t samples = config.pilot_samples;
  auto calibrate = [&](double max_var) {
    const auto n = calibrate_samples(config.mc_halfwidth, max_var, config.mc_confidence);
    samples = std::clamp(n, config.pilot_samples, config.max_samples);
  };
  const VectorEvaluator vec = [&](std::span<const Chromosome> batch, int generation) {
    const auto stream = stream_key(config.ga.seed, {static_cast<std::uint64_t>(generation), 0x5eed});
    const auto values = evaluator(batch, stream, samples);
    if (static_cast<int>(result.samples_per_generation.size()) <= generation) {
      result.samples_per_generation.resize(static_cast<std::size_t>(generation) + 1, 0);
    }
    result.samples_per_generation[static_cast<std::size_t>(generation)] = samples;
    std::vector<std::vector<double>> out;
    double max_var = 0.0;
    for (const auto& v : values) {
      out.push_back({-v.nominal, -v.expected, v.variance});
      max_var = std::max(max_var, v.variance);
    }
    if (generation % config.recalibrate_every == 0) calibrate(max_var);
    return out;
  };
  const auto run = nsga2_minimize(vec, config.ga);

  // Re-evaluate the distinct rank-0 chromosomes at higher precision on a fresh stream.
  std::vector<Chromosome> distinct;
  for (const auto& ind : run.front) {
    const bool seen = std::any_of(distinct.begin(), distinct.end(), [&](const Chromosome& c) {
      return c.frequencies == ind.chromosome.frequencies && c.phases == ind.chromosome.phases;
    });
    if (!seen) distinct.push_back(ind.chromosome);
  }
  const auto final_samples =
      std::min(samples * static_cast<std::size_t>(config.final_precision_factor), config.max_samples * 16);
  const auto stream = stream_key(config.ga.seed, {static_cast<std::uint64_t>(config.ga.generations + 1), 0xf17a1});
  const auto values = evaluator(distinct, stream, final_samples);
  std::vector<std::vector<double>> obj;
  for (const auto& v : values) obj.push_back({-v.nominal, -v.expected, v.variance});
  std::vector<int> rank;
  non_dominated_sort(obj, rank);
  std::vector<std::vector<double>> kept;
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    if (rank[i] != 0) continue;
    const auto& v = values[i];
    result.points.push_back({distinct[i], v.nominal, v.expected, v.variance, v.se_expected, v.samples});
    kept.push_back(obj[i]);
  }
  certify_non_domination(kept);
  result.certified = true;
  return result;
}

std::vector<Chromosome> seed_from_front(const ParetoFront& front, const GAConfig& config) {
  config.validate();
  if (front.points.empty()) throw ValidationError("cannot seed from an empty front");
  const auto n = static_cast<std::size_t>(config.population_size);
  std::vector<Chromosome> out;
  for (const auto& p : front.points) {
    if (out.size() == n) break;
    out.push_back(p.chromosome);
  }
  const std::size_t members = out.size();
  for (std::size_t k = 0; out.size() < n; ++k) {
    auto rng = make_engine(config.seed, {0x5eedf, static_cast<std::uint64_t>(k)});
    std::normal_distribution<double> normal;
    Chromosome c = out[k % members];
    for (int g = 0; g < c.gene_count(); ++g) {
      const double range = gene_upper(c, g, config.bounds) - gene_lower(c, g, config.bounds);
      gene_ref(c, g) += 0.02 * range * normal(rng);
    }
    restore_bounds(c, config.bounds);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<double> AmplitudeNoise::multipliers(std::uint64_t seed, int modes) const {
  auto rng = make_engine(seed, {0xa41});
  std::normal_distribution<double> normal;
  std::vector<double> m(static_cast<std::size_t>(modes));
  for (auto& x : m) x = 1.0 + relative_sigma * normal(rng);
  return m;
}

BatchEvaluator nominal_evaluator(const QuantumSystem& system, const TimeGrid& grid,
                                 const TransitionProbability& objective, int threads) {
  validate_objective(objective, system.dimension());
  return [system, grid, objective, threads](std::span<const Chromosome> batch, std::span<const std::uint64_t>) {
    std::vector<ControlField> fields;
    for (const auto& c : batch) fields.push_back(c.to_field(grid.duration));
    return transition_probabilities(system, fields, grid, objective.initial, objective.target, threads);
  };
}

namespace {

std::vector<double> noisy_values(const QuantumSystem& system, const TimeGrid& grid,
                                 const TransitionProbability& objective, const AmplitudeNoise& noise,
                                 std::span<const Chromosome> batch, std::span<const std::uint64_t> seeds, int draws,
                                 int threads) {
  const auto lanes = batch.size() * static_cast<std::size_t>(draws);
  std::vector<std::vector<double>> tables;
  for (const auto& c : batch) tables.push_back(c.to_field(grid.duration).mode_table_midpoints(grid.n_steps));
  const CMatrix mu = system.dipole().cast<cplx>();
  std::vector<double> values(lanes);
  propagate_columns(
      system, grid, lanes,
      [&](std::size_t idx, LaneRequest& lane) {
        const auto i = idx / static_cast<std::size_t>(draws);
        const auto d = idx % static_cast<std::size_t>(draws);
        const auto seed = draws == 1 ? seeds[i] : stream_key(seeds[i], {static_cast<std::uint64_t>(d)});
        const auto& c = batch[i];
        const auto m = noise.multipliers(seed, c.mode_count());
        lane.coupling = mu;
        lane.initial = objective.initial;
        lane.field.assign(static_cast<std::size_t>(grid.n_steps), cplx{});
        for (int k = 0; k < c.mode_count(); ++k) {
          const double a = c.fixed_amplitude * m[static_cast<std::size_t>(k)];
          const double* row = tables[i].data() + static_cast<std::size_t>(k) * static_cast<std::size_t>(grid.n_steps);
          for (int q = 0; q < grid.n_steps; ++q) lane.field[static_cast<std::size_t>(q)] += a * row[q];
        }
      },
      [&](std::size_t idx, const CVector& col) { values[idx] = std::norm(col[objective.target]); }, threads);
  std::vector<double> out(batch.size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double s = 0.0;
    for (int d = 0; d < draws; ++d) s += values[i * static_cast<std::size_t>(draws) + static_cast<std::size_t>(d)];
    out[i] = s / draws;
  }
  return out;
}

}  // namespace

BatchEvaluator amplitude_noise_evaluator(const QuantumSystem& system, const TimeGrid& grid,
                                         const TransitionProbability& objective, const AmplitudeNoise& noise,
                                         int threads) {
  validate_objective(objective, system.dimension());
  return [=](std::span<const Chromosome> batch, std::span<const std::uint64_t> seeds) {
    return noisy_values(system, grid, objective, noise, batch, seeds, 1, threads);
  };
}

BatchEvaluator averaged_noise_evaluator(const QuantumSystem& system, const TimeGrid& grid,
                                        const TransitionProbability& objective, const AmplitudeNoise& noise,
                                        int draws, int threads) {
  validate_objective(objective, system.dimension());
  if (draws < 1) throw ValidationError("draws must be >= 1");
  return [=](std::span<const Chromosome> batch, std::span<const std::uint64_t> seeds) {
    return noisy_values(system, grid, objective, noise, batch, seeds, draws, threads);
  };
}

PolishResult gradient_polish(const QuantumSystem& system, const Chromosome& start, const TimeGrid& grid,
                             const ObjectiveSpec& objective, const FieldBounds& bounds, const PolishOptions& options) {
  bounds.validate();
  const int k = start.mode_count();
  const int n = 2 * k;
  const double sign = options.maximize ? -1.0 : 1.0;  // minimise sign * J
  const double amplitude = start.fixed_amplitude;

  auto to_chromosome = [&](const RVector& x) {
    std::vector<double> genes(x.data(), x.data() + x.size());
    auto c = Chromosome::from_genes(genes, amplitude);
    restore_bounds(c, bounds);
    return c;
  };
  auto value = [&](const RVector& x) {
    return sign * objective_value(propagate(system, to_chromosome(x).to_field(grid.duration), grid), objective);
  };
  auto gradient = [&](const RVector& x, double& f) {
    const auto c = to_chromosome(x);
    const auto trace = nominal_gradient(system, c.to_field(grid.duration), grid, objective);
    f = sign * trace.objective_value;
    const auto g = gene_gradient(c, trace);
    RVector out(n);
    for (int i = 0; i < n; ++i) out[i] = sign * g[static_cast<std::size_t>(i)];
    return out;
  };
  auto project = [&](RVector& x) {
    for (int i = 0; i < k; ++i) x[i] = std::clamp(x[i], bounds.frequency_min, bounds.frequency_max);
  };
  // Frequencies pinned at a bound with the descent direction pointing outward are frozen.
  auto free_mask = [&](const RVector& x, const RVector& g) {
    std::vector<bool> free(static_cast<std::size_t>(n), true);
    for (int i = 0; i < k; ++i) {
      if ((x[i] <= bounds.frequency_min && g[i] > 0.0) || (x[i] >= bounds.frequency_max && g[i] < 0.0)) {
        free[static_cast<std::size_t>(i)] = false;
      }
    }
    return free;
  };
  auto free_norm = [&](const RVector& g, const std::vector<bool>& free) {
    double m = 0.0;
    for (int i = 0; i < n; ++i) {
      if (free[static_cast<std::size_t>(i)]) m = std::max(m, std::abs(g[i]));
    }
    return m;
  };

  const auto g0 = start.genes();
  RVector x = Eigen::Map<const RVector>(g0.data(), n);
  project(x);
  double f = 0.0;
  RVector g = gradient(x, f);
  RMatrix h = RMatrix::Identity(n, n) / std::max(1.0, g.cwiseAbs().maxCoeff());
  PolishResult result;
  int it = 0;
  int stalled = 0;  // consecutive accepted steps that gained nothing above round-off
  for (; it < options.max_iterations; ++it) {
    auto free = free_mask(x, g);
    if (free_norm(g, free) < options.gradient_tolerance) break;
    RVector d = -h * g;
    for (int i = 0; i < n; ++i) {
      if (!free[static_cast<std::size_t>(i)]) d[i] = 0.0;
    }
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      h = RMatrix::Identity(n, n) / std::max(1.0, g.cwiseAbs().maxCoeff());
      d = -h * g;
      for (int i = 0; i < n; ++i) {
        if (!free[static_cast<std::size_t>(i)]) d[i] = 0.0;
      }
      slope = g.dot(d);
      if (!(slope < 0.0)) break;
    }
    double t = 1.0;
    RVector xn = x;
    double fn = f;
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      xn = x + t * d;
      project(xn);
      fn = value(xn);
      if (fn <= f + 1e-4 * g.dot(xn - x)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    stalled = (f - fn) <= 1e-15 * std::max(1.0, std::abs(f)) ? stalled + 1 : 0;
    double fg = 0.0;
    const RVector gn = gradient(xn, fg);
    const RVector s = xn - x;
    const RVector y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-14 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const RMatrix id = RMatrix::Identity(n, n);
      h = (id - rho * s * y.transpose()) * h * (id - rho * y * s.transpose()) + rho * s * s.transpose();
    } else {
      h = RMatrix::Identity(n, n) / std::max(1.0, gn.cwiseAbs().maxCoeff());
    }
    x = xn;
    f = fg;
    g = gn;
    if (stalled >= 3) break;
  }
  result.chromosome = to_chromosome(x);
  result.objective = sign * f;
  result.gradient_norm = free_norm(g, free_mask(x, g));
  result.iterations = it;
  return result;
}

}  // namespace qpr
