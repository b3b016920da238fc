#pragma once

// Genetic search over exit placements and confidence thresholds, maximizing
// the weighted objective w_acc*acc_norm + w_sen*sen_norm - w_com*flops_norm
// with min-max normalization over the full candidate universe. Exhaustive
// search over the same universe serves as the verification oracle: the GA
// can never report a fitness the table does not contain.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcn/evaluator.hpp"
#include "dcn/exit_graph.hpp"

namespace dcn {

struct ObjectiveWeights {
  double w_acc = 1.0;
  double w_sen = 1.0;
  double w_com = 1.0;

  void validate() const {
    if (w_acc < 0.0 || w_sen < 0.0 || w_com < 0.0)
      throw InvalidInput("weights must be non-negative");
    if (w_acc == 0.0 && w_sen == 0.0 && w_com == 0.0)
      throw InvalidInput("weights must not all be zero");
  }
};

struct GAConfig {
  int population_size = 20;
  int generations = 50;
  double crossover_prob = 0.8;
  // high enough to keep exploring the 101-point threshold grid after the
  // population concentrates; 0.1 stalls well short of the optimum
  double mutation_prob = 0.3;
  std::uint64_t seed = 1;

  void validate() const {
    if (population_size < 2) throw InvalidInput("ga: population must be >= 2");
    if (generations < 1) throw InvalidInput("ga: generations must be >= 1");
    if (crossover_prob < 0.0 || crossover_prob > 1.0 || mutation_prob < 0.0 ||
        mutation_prob > 1.0)
      throw InvalidInput("ga: probabilities must lie in [0,1]");
  }
};

struct MetricCells {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double flops = 0.0;
};

// Precomputed sweep metrics per (placement, threshold) pair.
struct MetricsTable {
  std::vector<ExitPlacement> placements;
  std::vector<double> thresholds;
  std::vector<std::vector<MetricCells>> cells;  // [placement][threshold]

  static MetricsTable from_sweeps(const std::vector<SweepReport>& reports) {
    if (reports.empty()) throw InvalidInput("metrics table: no sweep reports");
    MetricsTable t;
    for (const auto& r : reports) {
      if (t.thresholds.empty()) {
        for (const auto& p : r.points) t.thresholds.push_back(p.threshold);
      } else {
        if (r.points.size() != t.thresholds.size())
          throw InvalidInput("metrics table: sweeps use different grids");
        for (std::size_t i = 0; i < r.points.size(); ++i)
          if (std::abs(r.points[i].threshold - t.thresholds[i]) > 1e-12)
            throw InvalidInput("metrics table: sweeps use different grids");
      }
      t.placements.push_back(r.placement);
      std::vector<MetricCells> row;
      for (const auto& p : r.points)
        row.push_back({p.system_accuracy, p.system_sensitivity, p.total_flops});
      t.cells.push_back(std::move(row));
    }
    return t;
  }

  std::size_t placement_index(const ExitPlacement& p) const {
    for (std::size_t i = 0; i < placements.size(); ++i)
      if (placements[i] == p) return i;
    throw InvalidInput("metrics table: candidate placement not covered");
  }

  const MetricCells& at(std::size_t placement_idx,
                        std::size_t threshold_idx) const {
    return cells.at(placement_idx).at(threshold_idx);
  }
};

struct Chromosome {
  ExitPlacement placement;
  int threshold_index = 0;

  bool operator==(const Chromosome&) const = default;
};

struct FitnessScore {
  double of_value = 0.0;
  MetricCells raw;
  MetricCells normalized;
};

// The candidate universe fixes the normalization bounds: fitness must be
// comparable across generations, so bounds never track the GA population.
struct CandidateUniverse {
  const MetricsTable* table = nullptr;
  std::vector<Chromosome> candidates;  // canonical order: placement, threshold
  MetricCells lo, hi;

  static CandidateUniverse of(const MetricsTable& table,
                              std::vector<Chromosome> candidates) {
    if (candidates.empty()) throw InvalidInput("universe: empty candidate set");
    CandidateUniverse u;
    u.table = &table;
    u.candidates = std::move(candidates);
    bool first = true;
    for (const auto& c : u.candidates) {
      const auto& m = table.at(table.placement_index(c.placement),
                               std::size_t(c.threshold_index));
      if (first) {
        u.lo = u.hi = m;
        first = false;
      } else {
        u.lo.accuracy = std::min(u.lo.accuracy, m.accuracy);
        u.hi.accuracy = std::max(u.hi.accuracy, m.accuracy);
        u.lo.sensitivity = std::min(u.lo.sensitivity, m.sensitivity);
        u.hi.sensitivity = std::max(u.hi.sensitivity, m.sensitivity);
        u.lo.flops = std::min(u.lo.flops, m.flops);
        u.hi.flops = std::max(u.hi.flops, m.flops);
      }
    }
    return u;
  }

  // Every (placement, threshold) pair the table covers.
  static CandidateUniverse over(const MetricsTable& table) {
    std::vector<Chromosome> all;
    for (const auto& p : table.placements)
      for (std::size_t t = 0; t < table.thresholds.size(); ++t)
        all.push_back({p, int(t)});
    return of(table, std::move(all));
  }
};

namespace detail {

inline double min_max_norm(double x, double lo, double hi) {
  return hi == lo ? 0.0 : (x - lo) / (hi - lo);
}

}  // namespace detail

inline FitnessScore fitness(const Chromosome& candidate,
                            const CandidateUniverse& universe,
                            const ObjectiveWeights& weights) {
  weights.validate();
  const MetricsTable& table = *universe.table;
  if (candidate.threshold_index < 0 ||
      std::size_t(candidate.threshold_index) >= table.thresholds.size())
    throw InvalidInput("fitness: threshold index outside the table");
  FitnessScore s;
  s.raw = table.at(table.placement_index(candidate.placement),
                   std::size_t(candidate.threshold_index));
  s.normalized.accuracy =
      detail::min_max_norm(s.raw.accuracy, universe.lo.accuracy,
                           universe.hi.accuracy);
  s.normalized.sensitivity =
      detail::min_max_norm(s.raw.sensitivity, universe.lo.sensitivity,
                           universe.hi.sensitivity);
  s.normalized.flops =
      detail::min_max_norm(s.raw.flops, universe.lo.flops, universe.hi.flops);
  s.of_value = weights.w_acc * s.normalized.accuracy +
               weights.w_sen * s.normalized.sensitivity -
               weights.w_com * s.normalized.flops;
  return s;
}

struct SearchResult {
  Chromosome best;
  FitnessScore score;
};

// Full scan; ties break towards the earlier placement and lower threshold
// index (the universe's canonical order).
inline SearchResult exhaustive(const CandidateUniverse& universe,
                               const ObjectiveWeights& weights) {
  weights.validate();
  SearchResult best;
  bool first = true;
  for (const auto& c : universe.candidates) {
    const FitnessScore s = fitness(c, universe, weights);
    if (first || s.of_value > best.score.of_value) {
      best.best = c;
      best.score = s;
      first = false;
    }
  }
  return best;
}

struct GenerationLog {
  int generation = 0;  // 0 = initial population
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
};

struct GAResult {
  Chromosome best;
  FitnessScore score;
  std::vector<GenerationLog> log;
};

// Generational GA with fitness-proportional selection, single-point
// crossover of the (placement, threshold) genes, per-offspring uniform
// gene mutation, and elitism of one.
inline GAResult optimize(const CandidateUniverse& universe,
                         const ObjectiveWeights& weights,
                         const GAConfig& config) {
  weights.validate();
  config.validate();
  const auto& candidates = universe.candidates;
  const MetricsTable& table = *universe.table;

  // gene pools and membership over the universe
  std::vector<std::size_t> placement_pool;
  std::vector<int> threshold_pool;
  std::map<std::pair<std::size_t, int>, std::size_t> member;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto p = table.placement_index(candidates[i].placement);
    const int t = candidates[i].threshold_index;
    member[{p, t}] = i;
    if (placement_pool.empty() || placement_pool.back() != p) {
      bool seen = false;
      for (auto q : placement_pool) seen = seen || q == p;
      if (!seen) placement_pool.push_back(p);
    }
    bool seen_t = false;
    for (int q : threshold_pool) seen_t = seen_t || q == t;
    if (!seen_t) threshold_pool.push_back(t);
  }
  auto lookup = [&member](std::size_t p, int t) -> std::int64_t {
    const auto it = member.find({p, t});
    return it == member.end() ? -1 : std::int64_t(it->second);
  };

  Rng rng(config.seed);
  const std::size_t n = std::size_t(config.population_size);
  std::vector<std::size_t> pop;
  for (std::size_t i = 0; i < n; ++i)
    pop.push_back(std::size_t(
        rng.uniform_int(0, std::int64_t(candidates.size()) - 1)));

  std::vector<double> fit(n);
  GAResult result;
  auto evaluate_and_sort = [&](int generation) {
    for (std::size_t i = 0; i < n; ++i)
      fit[i] = fitness(candidates[pop[i]], universe, weights).of_value;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       if (fit[a] != fit[b]) return fit[a] > fit[b];
                       return pop[a] < pop[b];
                     });
    std::vector<std::size_t> sorted_pop(n);
    std::vector<double> sorted_fit(n);
    for (std::size_t i = 0; i < n; ++i) {
      sorted_pop[i] = pop[order[i]];
      sorted_fit[i] = fit[order[i]];
    }
    pop = std::move(sorted_pop);
    fit = std::move(sorted_fit);
    double mean = 0.0;
    for (double f : fit) mean += f;
    result.log.push_back({generation, fit[0], mean / double(n)});
  };

  auto roulette_pick = [&]() -> std::size_t {
    double fmin = fit[0], fmax = fit[0];
    for (double f : fit) {
      fmin = std::min(fmin, f);
      fmax = std::max(fmax, f);
    }
    const double eps = (fmax - fmin) * 1e-3 + 1e-12;
    double total = 0.0;
    for (double f : fit) total += (f - fmin) + eps;
    double r = rng.uniform() * total;
    for (std::size_t i = 0; i < n; ++i) {
      r -= (fit[i] - fmin) + eps;
      if (r <= 0.0) return i;
    }
    return n - 1;
  };

  auto mutate = [&](std::size_t cand_idx) -> std::size_t {
    const auto& c = candidates[cand_idx];
    const auto p = table.placement_index(c.placement);
    const int t = c.threshold_index;
    if (rng.uniform() < 0.5) {
      const auto np = placement_pool[std::size_t(
          rng.uniform_int(0, std::int64_t(placement_pool.size()) - 1))];
      const auto idx = lookup(np, t);
      return idx >= 0 ? std::size_t(idx) : cand_idx;
    }
    const int nt = threshold_pool[std::size_t(
        rng.uniform_int(0, std::int64_t(threshold_pool.size()) - 1))];
    const auto idx = lookup(p, nt);
    return idx >= 0 ? std::size_t(idx) : cand_idx;
  };

  evaluate_and_sort(0);
  for (int g = 1; g <= config.generations; ++g) {
    std::vector<std::size_t> next;
    next.reserve(n);
    next.push_back(pop[0]);  // elite
    while (next.size() < n) {
      const std::size_t a = roulette_pick();
      const std::size_t b = roulette_pick();
      std::size_t child1 = pop[a];
      std::size_t child2 = pop[b];
      if (rng.uniform() < config.crossover_prob) {
        // single-point swap of the two genes: each child takes one parent's
        // placement and the other's threshold
        const auto& ca = candidates[pop[a]];
        const auto& cb = candidates[pop[b]];
        const auto pa = table.placement_index(ca.placement);
        const auto pb = table.placement_index(cb.placement);
        const auto x1 = lookup(pa, cb.threshold_index);
        const auto x2 = lookup(pb, ca.threshold_index);
        if (x1 >= 0) child1 = std::size_t(x1);
        if (x2 >= 0) child2 = std::size_t(x2);
      }
      for (std::size_t child : {child1, child2}) {
        if (rng.uniform() < config.mutation_prob) child = mutate(child);
        if (next.size() < n) next.push_back(child);
      }
    }
    pop = std::move(next);
    evaluate_and_sort(g);
  }

  result.best = candidates[pop[0]];
  result.score = fitness(result.best, universe, weights);
  return result;
}

// Optimizer report: weights, config, per-generation best/mean fitness and
// the winning candidate with its metrics.
inline nlohmann::json ga_report_json(const GAResult& result,
                                     const ObjectiveWeights& weights,
                                     const GAConfig& config,
                                     const MetricsTable& table,
                                     const nlohmann::json& meta = {}) {
  nlohmann::json j;
  if (!meta.is_null()) j["meta"] = meta;
  j["weights"] = {{"w_acc", weights.w_acc},
                  {"w_sen", weights.w_sen},
                  {"w_com", weights.w_com}};
  j["config"] = {{"population_size", config.population_size},
                 {"generations", config.generations},
                 {"crossover_prob", config.crossover_prob},
                 {"mutation_prob", config.mutation_prob},
                 {"seed", config.seed}};
  j["generations"] = nlohmann::json::array();
  for (const auto& g : result.log)
    j["generations"].push_back({{"generation", g.generation},
                                {"best_fitness", round9(g.best_fitness)},
                                {"mean_fitness", round9(g.mean_fitness)}});
  j["winner"] = {
      {"placement", result.best.placement.boundaries},
      {"threshold", round9(table.thresholds.at(
                        std::size_t(result.best.threshold_index)))},
      {"threshold_index", result.best.threshold_index},
      {"of_value", round9(result.score.of_value)},
      {"accuracy", round9(result.score.raw.accuracy)},
      {"sensitivity", round9(result.score.raw.sensitivity)},
      {"flops", round9(result.score.raw.flops)}};
  return j;
}

inline void write_ga_report_json(const std::filesystem::path& path,
                                 const GAResult& result,
                                 const ObjectiveWeights& weights,
                                 const GAConfig& config,
                                 const MetricsTable& table,
                                 const nlohmann::json& meta = {}) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InvalidInput("cannot open for writing: " + path.string());
  f << ga_report_json(result, weights, config, table, meta).dump(2) << "\n";
}

}  // namespace dcn
