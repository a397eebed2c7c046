// Copyright 2026 The splitnas Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "splitnas/supernet.hpp"
#include "splitnas/training.hpp"

namespace splitnas {

struct SearchConstraint {
  enum class Metric { kFlops, kParams } metric = Metric::kFlops;
  double max_value = 0;
};

struct EvoConfig {
  int population = 50;
  int generations = 20;
  int parents = 10;
  int crossover_children = 25;
  int mutation_children = 25;
  double mutation_prob = 0.1;
  int retry_budget = 100;
  std::uint64_t seed = 0;
  std::optional<SearchConstraint> constraint;
};

struct Candidate {
  std::uint64_t code = 0;
  double fitness = 0;
  double cost = 0;
};

struct HistoryRow {
  int generation = 0;
  int rank = 0;  // 0 = best of its generation
  std::uint64_t code = 0;
  double fitness = 0;
  double cost = 0;
};

struct SearchResult {
  Candidate best;
  std::vector<HistoryRow> history;
  std::uint64_t evaluations = 0;  // distinct subnets evaluated
};

using FitnessFn = std::function<double(const Subnet&)>;
using CostFn = std::function<double(const Subnet&)>;

// Cost at full width; constraints describe the deployed subnet, not the
// channel-reduced training copy.
inline CostFn make_cost_fn(const SearchSpace& space,
                           SearchConstraint::Metric metric) {
  if (metric == SearchConstraint::Metric::kFlops)
    return [&space](const Subnet& s) {
      return static_cast<double>(flops(space, s, 1));
    };
  return [&space](const Subnet& s) {
    return static_cast<double>(param_count(space, s, 1));
  };
}

// Each edge flips to a different op with probability `prob`.
inline Subnet mutate(const SearchSpace& space, const Subnet& parent,
                     double prob, Rng& rng) {
  Subnet child = parent;
  for (std::size_t j = 0; j < space.edges.size(); ++j) {
    if (rng.uniform() >= prob) continue;
    int arity = static_cast<int>(space.edges[j].candidates.size());
    int shifted = static_cast<int>(rng.uniform_below(arity - 1));
    child.choices[j] = shifted >= parent.choices[j] ? shifted + 1 : shifted;
  }
  return child;
}

// Uniform crossover, one coin per edge.
inline Subnet crossover(const SearchSpace& space, const Subnet& a,
                        const Subnet& b, Rng& rng) {
  Subnet child = a;
  for (std::size_t j = 0; j < space.edges.size(); ++j)
    if (rng.next() & 1) child.choices[j] = b.choices[j];
  return child;
}

// Fitness ordering with a total tie-break: higher fitness wins, equal
// fitness prefers the smaller encoding.
inline bool fitter(const Candidate& a, const Candidate& b) {
  if (a.fitness != b.fitness) return a.fitness > b.fitness;
  return a.code < b.code;
}

namespace detail {

class EvalCache {
 public:
  EvalCache(const SearchSpace& space, const FitnessFn& fitness,
            const CostFn& cost)
      : space_(space), fitness_(fitness), cost_(cost) {}

  Candidate evaluate(const Subnet& s) {
    std::uint64_t code = encode(space_, s);
    auto it = cache_.find(code);
    if (it != cache_.end()) return it->second;
    Candidate c{code, fitness_(s), cost_ ? cost_(s) : 0.0};
    cache_.emplace(code, c);
    return c;
  }

  double cost_of(const Subnet& s) { return cost_ ? cost_(s) : 0.0; }
  std::uint64_t evaluations() const { return cache_.size(); }

 private:
  const SearchSpace& space_;
  const FitnessFn& fitness_;
  const CostFn& cost_;
  std::unordered_map<std::uint64_t, Candidate> cache_;
};

}  // namespace detail

// Evolutionary search in the SPOS style: seed a feasible population, then
// each generation breeds crossover and mutation children from the
// cumulative top-`parents` candidates. Constraint violations are retried up
// to retry_budget times per slot and then reported as infeasible; duplicate
// children are steered away from but allowed.
inline SearchResult evolutionary_search(const SearchSpace& space,
                                        const FitnessFn& fitness,
                                        const CostFn& cost,
                                        const EvoConfig& cfg) {
  validate_space(space);
  if (!fitness) throw ValidationError("evolutionary search needs a fitness");
  if (cfg.population < 1 || cfg.generations < 0 || cfg.parents < 1 ||
      cfg.crossover_children < 0 || cfg.mutation_children < 0 ||
      cfg.retry_budget < 1)
    throw ValidationError("evolutionary search config has a non-positive field");
  if (cfg.crossover_children + cfg.mutation_children != cfg.population)
    throw ValidationError(
        "crossover_children + mutation_children must equal population");
  if (cfg.parents > cfg.population)
    throw ValidationError("parents must not exceed population");
  if (cfg.constraint && !cost)
    throw ValidationError("constrained search needs a cost function");
  if (cfg.mutation_prob < 0 || cfg.mutation_prob > 1)
    throw ValidationError("mutation probability outside [0, 1]");

  detail::EvalCache cache(space, fitness, cost);
  Rng rng(derive_seed(cfg.seed, "evolution"));
  std::unordered_set<std::uint64_t> seen;
  auto feasible = [&](double c) {
    return !cfg.constraint || c <= cfg.constraint->max_value;
  };

  constexpr int kDupTries = 10;
  auto draw_candidate = [&](const std::function<Subnet()>& make) -> Subnet {
    std::optional<Subnet> duplicate;
    int dup_tries = 0;
    for (int attempt = 0; attempt < cfg.retry_budget; ++attempt) {
      Subnet s = make();
      if (!feasible(cache.cost_of(s))) continue;
      if (!seen.count(encode(space, s))) return s;
      if (!duplicate) duplicate = s;
      if (++dup_tries >= kDupTries) return *duplicate;
    }
    if (duplicate) return *duplicate;
    throw InfeasibleError(
        "no candidate satisfied the constraint in " +
        std::to_string(cfg.retry_budget) +
        " attempts; the constraint is too tight for this space");
  };

  std::vector<Candidate> pool;  // cumulative top-`parents`, deduplicated
  auto update_pool = [&](const Candidate& c) {
    for (const Candidate& p : pool)
      if (p.code == c.code) return;
    pool.push_back(c);
    std::sort(pool.begin(), pool.end(), fitter);
    if (pool.size() > static_cast<std::size_t>(cfg.parents))
      pool.resize(cfg.parents);
  };

  SearchResult result;
  // A generation's standing population is the kept elites plus the fresh
  // children, ranked together and truncated back to `population`. Keeping
  // the elites in the ranking makes the per-generation best non-decreasing.
  auto run_generation = [&](int gen, const std::vector<Subnet>& members) {
    std::vector<Candidate> ranked;
    ranked.reserve(members.size() + pool.size());
    std::unordered_set<std::uint64_t> in_ranked;
    for (const Candidate& p : pool)
      if (in_ranked.insert(p.code).second) ranked.push_back(p);
    for (const Subnet& s : members) {
      Candidate c = cache.evaluate(s);
      seen.insert(c.code);
      if (in_ranked.insert(c.code).second) ranked.push_back(c);
    }
    std::sort(ranked.begin(), ranked.end(), fitter);
    if (ranked.size() > static_cast<std::size_t>(cfg.population))
      ranked.resize(static_cast<std::size_t>(cfg.population));
    for (int r = 0; r < static_cast<int>(ranked.size()); ++r)
      result.history.push_back(
          {gen, r, ranked[r].code, ranked[r].fitness, ranked[r].cost});
    for (const Candidate& c : ranked) update_pool(c);
  };

  std::vector<Subnet> members;
  members.reserve(cfg.population);
  for (int i = 0; i < cfg.population; ++i)
    members.push_back(
        draw_candidate([&] { return uniform_subnet(space, rng); }));
  run_generation(0, members);

  auto decode_parent = [&](std::size_t i) {
    return decode(space, pool[i].code);
  };
  for (int gen = 1; gen <= cfg.generations; ++gen) {
    members.clear();
    for (int i = 0; i < cfg.crossover_children; ++i)
      members.push_back(draw_candidate([&] {
        std::size_t a = rng.uniform_below(pool.size());
        std::size_t b = rng.uniform_below(pool.size());
        return crossover(space, decode_parent(a), decode_parent(b), rng);
      }));
    for (int i = 0; i < cfg.mutation_children; ++i)
      members.push_back(draw_candidate([&] {
        std::size_t a = rng.uniform_below(pool.size());
        return mutate(space, decode_parent(a), cfg.mutation_prob, rng);
      }));
    run_generation(gen, members);
  }

  result.best = pool.front();
  result.evaluations = cache.evaluations();
  return result;
}

// Ground-truth argmax by full enumeration, same tie-break as the
// evolutionary search. Refuses spaces larger than `limit`.
inline SearchResult exhaustive_search(const SearchSpace& space,
                                      const FitnessFn& fitness,
                                      const CostFn& cost,
                                      const std::optional<SearchConstraint>&
                                          constraint,
                                      std::uint64_t limit = 1u << 20) {
  if (!fitness) throw ValidationError("exhaustive search needs a fitness");
  if (constraint && !cost)
    throw ValidationError("constrained search needs a cost function");
  detail::EvalCache cache(space, fitness, cost);
  std::optional<Candidate> best;
  for (const Subnet& s : enumerate(space, limit)) {
    double c = cache.cost_of(s);
    if (constraint && c > constraint->max_value) continue;
    Candidate cand = cache.evaluate(s);
    if (!best || fitter(cand, *best)) best = cand;
  }
  if (!best)
    throw InfeasibleError("no subnet satisfies the constraint");
  SearchResult result;
  result.best = *best;
  result.evaluations = cache.evaluations();
  return result;
}

// Validation accuracy of a subnet under its supernet's weights; the
// standard fitness for the evolutionary search.
template <typename T>
double supernet_accuracy(const SupernetStore<T>& store,
                         const SearchSpace& space, const Partition& partition,
                         const Subnet& subnet, const Dataset<T>& val,
                         int eval_batch = 256,
                         const ProbeFn* probe = nullptr) {
  if (store.partition_fp != partition_fingerprint(partition))
    throw ContractError(
        "supernet store was trained under a different partition");
  int k = assign(partition,
                 score(partition.criterion(), space, subnet, probe));
  return top1_accuracy(space, subnet, store.nets[k], val, eval_batch);
}

// Mean validation cross-entropy under inherited weights, for ranking by
// loss instead of accuracy.
template <typename T>
double supernet_val_loss(const SupernetStore<T>& store,
                         const SearchSpace& space, const Partition& partition,
                         const Subnet& subnet, const Dataset<T>& val,
                         int eval_batch = 256,
                         const ProbeFn* probe = nullptr) {
  if (store.partition_fp != partition_fingerprint(partition))
    throw ContractError(
        "supernet store was trained under a different partition");
  if (val.size() == 0) throw ValidationError("empty evaluation set");
  int k = assign(partition,
                 score(partition.criterion(), space, subnet, probe));
  double weighted = 0;
  for (std::size_t start = 0; start < val.size(); start += eval_batch) {
    std::size_t count = std::min<std::size_t>(eval_batch, val.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    Tape<T> tape(/*train_mode=*/false);
    ForwardResult<T> out = forward_network(tape, space, subnet,
                                           store.nets[k], val.batch(idx));
    auto loss = tape.softmax_cross_entropy(out.logits, val.batch_labels(idx));
    weighted += static_cast<double>(tape.value(loss).data[0]) *
                static_cast<double>(count);
  }
  return weighted / static_cast<double>(val.size());
}

enum class FitnessMetric { kAccuracy, kNegLoss };

// The search maximizes, so the loss variant is negated.
template <typename T>
FitnessFn make_supernet_fitness(const SupernetStore<T>& store,
                                const SearchSpace& space,
                                const Partition& partition,
                                const Dataset<T>& val, int eval_batch = 256,
                                const ProbeFn* probe = nullptr,
                                FitnessMetric metric =
                                    FitnessMetric::kAccuracy) {
  return [&store, &space, &partition, &val, eval_batch, probe,
          metric](const Subnet& s) {
    if (metric == FitnessMetric::kAccuracy)
      return supernet_accuracy(store, space, partition, s, val, eval_batch,
                               probe);
    return -supernet_val_loss(store, space, partition, s, val, eval_batch,
                              probe);
  };
}

}  // namespace splitnas
