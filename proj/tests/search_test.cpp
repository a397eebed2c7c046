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

#include "splitnas/search.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace splitnas {
namespace {

// Deterministic fitness with a hash-scrambled landscape: no structure for
// the search to exploit, distinct values for almost every pair of subnets.
FitnessFn scrambled_fitness(const SearchSpace& space, std::uint64_t salt) {
  return [&space, salt](const Subnet& s) {
    std::uint64_t h = derive_seed(salt, encode(space, s));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  };
}

// 1.0 once a subnet uses at least two ReLU ops, else 0.0. A fitness plateau
// that only the tie-break can resolve.
FitnessFn plateau_fitness(const SearchSpace& space) {
  return [&space](const Subnet& s) {
    return count_nonlinearities(space, s) >= 2 ? 1.0 : 0.0;
  };
}

std::map<int, std::vector<HistoryRow>> by_generation(
    const SearchResult& result) {
  std::map<int, std::vector<HistoryRow>> gens;
  for (const HistoryRow& row : result.history)
    gens[row.generation].push_back(row);
  return gens;
}

TEST(Mutate, ZeroProbabilityIsTheIdentity) {
  SearchSpace space = nas201_like_space();
  Subnet parent = decode(space, 12345);
  Rng rng(7);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(mutate(space, parent, 0.0, rng), parent);
}

TEST(Mutate, FullProbabilityChangesEveryEdgeToADifferentOp) {
  SearchSpace space = nas201_like_space();
  Subnet parent = decode(space, 12345);
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    Subnet child = mutate(space, parent, 1.0, rng);
    for (std::size_t j = 0; j < space.edges.size(); ++j) {
      EXPECT_NE(child.choices[j], parent.choices[j]) << "edge " << j;
      EXPECT_GE(child.choices[j], 0);
      EXPECT_LT(child.choices[j],
                static_cast<int>(space.edges[j].candidates.size()));
    }
  }
}

TEST(Mutate, FlipRateMatchesTheConfiguredProbability) {
  SearchSpace space = nas201_like_space();
  Subnet parent{{2, 2, 2, 2, 2, 2}};
  Rng rng(42);
  int flips = 0;
  for (int i = 0; i < 10000; ++i) {
    Subnet child = mutate(space, parent, 0.1, rng);
    for (std::size_t j = 0; j < space.edges.size(); ++j)
      if (child.choices[j] != parent.choices[j]) ++flips;
  }
  // 60000 Bernoulli(0.1) trials: mean 6000, sigma ~73.5. The bound is a
  // little over three sigma; the fixed seed keeps the count reproducible.
  EXPECT_LT(std::abs(flips - 6000), 250) << "flips = " << flips;
}

TEST(Crossover, EveryGeneComesFromOneOfTheParents) {
  SearchSpace space = nas201_like_space();
  Subnet a{{0, 0, 0, 0, 0, 0}};
  Subnet b{{2, 2, 2, 2, 2, 2}};
  Rng rng(9);
  int from_b = 0;
  for (int i = 0; i < 5000; ++i) {
    Subnet child = crossover(space, a, b, rng);
    for (std::size_t j = 0; j < space.edges.size(); ++j) {
      ASSERT_TRUE(child.choices[j] == 0 || child.choices[j] == 2);
      if (child.choices[j] == 2) ++from_b;
    }
  }
  // 30000 fair coins: mean 15000, sigma ~86.6.
  EXPECT_LT(std::abs(from_b - 15000), 300) << "from_b = " << from_b;
}

TEST(Crossover, IdenticalParentsBreedTrueCopies) {
  SearchSpace space = desk3x3_space();
  Subnet a{{1, 2, 0}};
  Rng rng(3);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(crossover(space, a, a, rng), a);
}

TEST(Fitter, OrdersByFitnessThenBySmallerEncoding) {
  Candidate low{5, 1.0, 0};
  Candidate high_small{3, 2.0, 0};
  Candidate high_large{7, 2.0, 0};
  EXPECT_TRUE(fitter(high_small, low));
  EXPECT_FALSE(fitter(low, high_small));
  EXPECT_TRUE(fitter(high_small, high_large));
  EXPECT_FALSE(fitter(high_large, high_small));
  EXPECT_FALSE(fitter(high_small, high_small));
}

TEST(MakeCostFn, ReportsFullWidthCosts) {
  SearchSpace space = desk3x3_space();
  Subnet s{{1, 0, 2}};
  CostFn fl = make_cost_fn(space, SearchConstraint::Metric::kFlops);
  CostFn pa = make_cost_fn(space, SearchConstraint::Metric::kParams);
  EXPECT_DOUBLE_EQ(fl(s), static_cast<double>(flops(space, s, 1)));
  EXPECT_DOUBLE_EQ(pa(s), static_cast<double>(param_count(space, s, 1)));
}

TEST(EvoConfig, RejectsContradictoryBudgets) {
  SearchSpace space = desk3x3_space();
  FitnessFn fit = scrambled_fitness(space, 1);
  CostFn cost = make_cost_fn(space, SearchConstraint::Metric::kFlops);

  EvoConfig bad_sum;
  bad_sum.crossover_children = 10;  // 10 + 25 != 50
  EXPECT_THROW(evolutionary_search(space, fit, cost, bad_sum),
               ValidationError);

  EvoConfig bad_parents;
  bad_parents.parents = 60;
  EXPECT_THROW(evolutionary_search(space, fit, cost, bad_parents),
               ValidationError);

  EvoConfig bad_prob;
  bad_prob.mutation_prob = 1.5;
  EXPECT_THROW(evolutionary_search(space, fit, cost, bad_prob),
               ValidationError);

  EvoConfig bad_retry;
  bad_retry.retry_budget = 0;
  EXPECT_THROW(evolutionary_search(space, fit, cost, bad_retry),
               ValidationError);

  EXPECT_THROW(evolutionary_search(space, FitnessFn{}, cost, EvoConfig{}),
               ValidationError);

  EvoConfig constrained;
  constrained.constraint = SearchConstraint{};
  EXPECT_THROW(evolutionary_search(space, fit, CostFn{}, constrained),
               ValidationError);
}

TEST(ExhaustiveSearch, PicksTheArgmaxWithTheSmallestEncodingOnTies) {
  SearchSpace space = desk3x3_space();
  // Fitness plateaus at 1.0 for every subnet with two or more convs. The
  // smallest such encoding is 4 = {1, 1, 0}: conv on the first two edges.
  SearchResult result = exhaustive_search(space, plateau_fitness(space),
                                          CostFn{}, std::nullopt);
  EXPECT_EQ(result.best.code, 4u);
  EXPECT_DOUBLE_EQ(result.best.fitness, 1.0);
  EXPECT_EQ(result.evaluations, 27u);
}

TEST(ExhaustiveSearch, ImpossibleConstraintIsAnError) {
  SearchSpace space = desk3x3_space();
  SearchConstraint never{SearchConstraint::Metric::kFlops, -1.0};
  EXPECT_THROW(
      exhaustive_search(space, scrambled_fitness(space, 2),
                        make_cost_fn(space, SearchConstraint::Metric::kFlops),
                        never),
      InfeasibleError);
}

TEST(EvolutionarySearch, ImpossibleConstraintIsAnError) {
  SearchSpace space = desk3x3_space();
  EvoConfig cfg;
  cfg.constraint = SearchConstraint{SearchConstraint::Metric::kFlops, -1.0};
  EXPECT_THROW(
      evolutionary_search(space, scrambled_fitness(space, 2),
                          make_cost_fn(space, SearchConstraint::Metric::kFlops),
                          cfg),
      InfeasibleError);
}

TEST(EvolutionarySearch, SoleFeasibleSubnetIsReturned) {
  SearchSpace space = desk3x3_space();
  // Only the all-skip cell meets an all-skip FLOPs budget; every conv adds
  // cost. The search must return it no matter where fitness peaks.
  Subnet all_skip{{0, 0, 0}};
  double budget = static_cast<double>(flops(space, all_skip, 1));
  CostFn cost = make_cost_fn(space, SearchConstraint::Metric::kFlops);

  EvoConfig cfg;
  cfg.seed = 11;
  cfg.constraint = SearchConstraint{SearchConstraint::Metric::kFlops, budget};
  SearchResult evo = evolutionary_search(space, scrambled_fitness(space, 3),
                                         cost, cfg);
  EXPECT_EQ(evo.best.code, 0u);
  EXPECT_EQ(evo.evaluations, 1u);

  SearchResult full = exhaustive_search(space, scrambled_fitness(space, 3),
                                        cost, cfg.constraint);
  EXPECT_EQ(full.best.code, 0u);
}

TEST(EvolutionarySearch, EveryRankedCandidateSatisfiesTheConstraint) {
  SearchSpace space = desk3x3_space();
  // Budget set at a two-conv cell: roomy enough for a real population, tight
  // enough to exclude the heaviest subnets.
  double budget = static_cast<double>(flops(space, Subnet{{1, 1, 0}}, 1));
  CostFn cost = make_cost_fn(space, SearchConstraint::Metric::kFlops);

  EvoConfig cfg;
  cfg.seed = 17;
  cfg.constraint = SearchConstraint{SearchConstraint::Metric::kFlops, budget};
  SearchResult evo = evolutionary_search(space, scrambled_fitness(space, 4),
                                         cost, cfg);
  ASSERT_FALSE(evo.history.empty());
  for (const HistoryRow& row : evo.history) EXPECT_LE(row.cost, budget);
  EXPECT_LE(evo.best.cost, budget);

  SearchResult full = exhaustive_search(space, scrambled_fitness(space, 4),
                                        cost, cfg.constraint);
  EXPECT_EQ(evo.best.code, full.best.code);
}

TEST(EvolutionarySearch, MatchesExhaustiveSearchOnTheDeskSpace) {
  SearchSpace space = desk3x3_space();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    FitnessFn fit = scrambled_fitness(space, 1000 + seed);
    SearchResult full = exhaustive_search(space, fit, CostFn{}, std::nullopt);
    EvoConfig cfg;
    cfg.seed = seed;
    SearchResult evo = evolutionary_search(space, fit, CostFn{}, cfg);
    EXPECT_EQ(evo.best.code, full.best.code) << "seed " << seed;
    EXPECT_DOUBLE_EQ(evo.best.fitness, full.best.fitness);
  }
}

TEST(EvolutionarySearch, TieBreakPrefersTheSmallestEncoding) {
  SearchSpace space = desk3x3_space();
  EvoConfig cfg;
  cfg.seed = 5;
  SearchResult evo = evolutionary_search(space, plateau_fitness(space),
                                         CostFn{}, cfg);
  EXPECT_EQ(evo.best.code, 4u);
}

TEST(EvolutionarySearch, BestOfEachGenerationNeverRegresses) {
  SearchSpace space = nas201_like_space();
  EvoConfig cfg;
  cfg.seed = 3;
  SearchResult evo = evolutionary_search(space, scrambled_fitness(space, 77),
                                         CostFn{}, cfg);
  auto gens = by_generation(evo);
  ASSERT_EQ(gens.size(), static_cast<std::size_t>(cfg.generations + 1));
  double best_so_far = -1;
  for (const auto& [gen, rows] : gens) {
    EXPECT_GE(rows.front().fitness, best_so_far) << "generation " << gen;
    best_so_far = rows.front().fitness;
  }
  EXPECT_DOUBLE_EQ(evo.best.fitness, best_so_far);
  EXPECT_EQ(evo.best.code, gens.rbegin()->second.front().code);
}

TEST(EvolutionarySearch, HistoryIsRankedAndReproducible) {
  SearchSpace space = nas201_like_space();
  FitnessFn fit = scrambled_fitness(space, 8);
  EvoConfig cfg;
  cfg.seed = 21;
  SearchResult a = evolutionary_search(space, fit, CostFn{}, cfg);
  SearchResult b = evolutionary_search(space, fit, CostFn{}, cfg);

  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].code, b.history[i].code);
    EXPECT_EQ(a.history[i].generation, b.history[i].generation);
    EXPECT_EQ(a.history[i].rank, b.history[i].rank);
    EXPECT_DOUBLE_EQ(a.history[i].fitness, b.history[i].fitness);
  }
  EXPECT_EQ(a.best.code, b.best.code);
  EXPECT_EQ(a.evaluations, b.evaluations);

  for (const auto& [gen, rows] : by_generation(a)) {
    ASSERT_LE(rows.size(), static_cast<std::size_t>(cfg.population));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      EXPECT_EQ(rows[r].rank, static_cast<int>(r));
      if (r > 0) {
        // Strictly sorted: ties in fitness fall back to the encoding.
        bool ordered = rows[r - 1].fitness > rows[r].fitness ||
                       (rows[r - 1].fitness == rows[r].fitness &&
                        rows[r - 1].code < rows[r].code);
        EXPECT_TRUE(ordered) << "generation " << gen << " rank " << r;
      }
    }
  }
  EXPECT_LE(a.evaluations,
            static_cast<std::uint64_t>(cfg.population) *
                (static_cast<std::uint64_t>(cfg.generations) + 1));
}

TEST(SupernetFitness, WrapsAccuracyAndNegatedLoss) {
  SearchSpace desk = desk3x3_space();
  Criterion crit{CriterionKind::kNonlinearCount, {}};
  Partition part = build_partition(desk, crit, 2, 1000, 1);
  SupernetStore<float> store = init_supernets<float>(desk, part, 2, 7);

  SyntheticSpec spec;
  spec.train_count = 8;
  spec.test_count = 32;
  Dataset<float> val = make_synthetic<float>(spec, 5).test;

  Subnet s{{1, 1, 0}};
  double acc = supernet_accuracy(store, desk, part, s, val, 16);
  double loss = supernet_val_loss(store, desk, part, s, val, 16);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  EXPECT_GT(loss, 0.0);

  FitnessFn by_acc = make_supernet_fitness(store, desk, part, val, 16,
                                           nullptr, FitnessMetric::kAccuracy);
  FitnessFn by_loss = make_supernet_fitness(store, desk, part, val, 16,
                                            nullptr, FitnessMetric::kNegLoss);
  EXPECT_DOUBLE_EQ(by_acc(s), acc);
  EXPECT_DOUBLE_EQ(by_loss(s), -loss);
}

TEST(SupernetFitness, RejectsAForeignPartitionAndAnEmptyValSet) {
  SearchSpace desk = desk3x3_space();
  Criterion crit{CriterionKind::kNonlinearCount, {}};
  Partition part = build_partition(desk, crit, 2, 1000, 1);
  SupernetStore<float> store = init_supernets<float>(desk, part, 2, 7);

  SyntheticSpec spec;
  spec.train_count = 8;
  spec.test_count = 16;
  Dataset<float> val = make_synthetic<float>(spec, 5).test;
  Subnet s{{1, 1, 0}};

  Partition other = build_partition(desk, crit, 2, 1000, 2);  // another seed
  EXPECT_THROW(supernet_accuracy(store, desk, other, s, val), ContractError);
  EXPECT_THROW(supernet_val_loss(store, desk, other, s, val), ContractError);

  Dataset<float> empty;
  EXPECT_THROW(supernet_val_loss(store, desk, part, s, empty),
               ValidationError);
}

}  // namespace
}  // namespace splitnas
