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
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitnas/space.hpp"

namespace splitnas {

// A partition splits the search space into K disjoint subspaces by a scalar
// structural score, so each subspace gets its own supernet. Scores are
// binned into contiguous ranges with near-equal subnet mass; a score value
// is never split across bins.

enum class CriterionKind {
  kNonlinearCount,
  kFlops,
  kLinearRegions,
};

inline std::string criterion_name(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::kNonlinearCount: return "nonlinear_count";
    case CriterionKind::kFlops: return "flops";
    case CriterionKind::kLinearRegions: return "linear_regions";
  }
  throw ValidationError("unknown criterion kind");
}

inline CriterionKind criterion_from_name(const std::string& name) {
  if (name == "nonlinear_count") return CriterionKind::kNonlinearCount;
  if (name == "flops") return CriterionKind::kFlops;
  if (name == "linear_regions") return CriterionKind::kLinearRegions;
  throw ConfigError("unknown partition criterion \"" + name +
                    "\"; expected nonlinear_count, flops, or linear_regions");
}

struct ProbeSpec {
  int samples = 8;
  std::uint64_t seed = 0;
};

struct Criterion {
  CriterionKind kind = CriterionKind::kNonlinearCount;
  ProbeSpec probe;
};

// Engine hook for criteria that must run a forward pass (linear regions).
// The structural criteria never call it.
using ProbeFn = std::function<double(const SearchSpace&, const Subnet&,
                                     const ProbeSpec&)>;

inline double score(const Criterion& criterion, const SearchSpace& space,
                    const Subnet& subnet, const ProbeFn* probe = nullptr) {
  switch (criterion.kind) {
    case CriterionKind::kNonlinearCount:
      return static_cast<double>(count_nonlinearities(space, subnet));
    case CriterionKind::kFlops:
      return static_cast<double>(flops(space, subnet, 1));
    case CriterionKind::kLinearRegions:
      if (probe == nullptr || !*probe)
        throw ConfigError(
            "linear_regions criterion needs a probe engine; none was wired");
      return (*probe)(space, subnet, criterion.probe);
  }
  throw ValidationError("unknown criterion kind");
}

struct Partition {
  CriterionKind kind = CriterionKind::kNonlinearCount;
  ProbeSpec probe;
  int K = 1;
  // Inclusive upper score bound per bin, K-1 entries; the last bin is
  // unbounded. assign() clamps, so every finite score lands somewhere.
  std::vector<double> upper_edges;
  std::vector<std::uint64_t> subspace_sizes;
  std::uint64_t seed = 0;
  std::uint64_t space_fp = 0;
  // When the space was too large to enumerate, subspace_sizes counts a
  // uniform sample instead of the full space.
  bool sampled = false;

  Criterion criterion() const { return {kind, probe}; }
};

inline int assign(const Partition& partition, double s) {
  for (int k = 0; k + 1 < partition.K; ++k)
    if (s <= partition.upper_edges[k]) return k;
  return partition.K - 1;
}

inline std::uint64_t partition_fingerprint(const Partition& p) {
  std::ostringstream os;
  os << criterion_name(p.kind) << '|' << p.K << '|' << p.seed << '|'
     << p.space_fp << '|' << p.probe.samples << '|' << p.probe.seed;
  os.precision(17);
  for (double e : p.upper_edges) os << '|' << e;
  return fnv1a64(os.str());
}

// Greedy equal-mass binning over the score histogram. Walks values in
// ascending order; a bin keeps absorbing the next value while that moves
// its mass closer to (remaining mass / remaining bins), subject to leaving
// at least one value for every later bin.
inline Partition build_partition(const SearchSpace& space,
                                 const Criterion& criterion, int K,
                                 std::uint64_t sample_budget,
                                 std::uint64_t seed,
                                 const ProbeFn* probe = nullptr) {
  validate_space(space);
  if (K < 1) throw ValidationError("K must be at least 1");
  if (sample_budget < static_cast<std::uint64_t>(K))
    throw ValidationError("sample budget smaller than K");

  std::map<double, std::uint64_t> histogram;
  std::uint64_t total = 0;
  std::uint64_t n = space_size_clamped(space, sample_budget);
  bool sampled = n > sample_budget;
  if (!sampled) {
    for (std::uint64_t c = 0; c < n; ++c) {
      Subnet s = decode(space, c);
      histogram[score(criterion, space, s, probe)] += 1;
    }
    total = n;
  } else {
    Rng rng(derive_seed(seed, "partition-sample"));
    for (std::uint64_t i = 0; i < sample_budget; ++i) {
      Subnet s = uniform_subnet(space, rng);
      histogram[score(criterion, space, s, probe)] += 1;
    }
    total = sample_budget;
  }

  if (histogram.size() < static_cast<std::size_t>(K))
    throw PartitionError("criterion " + criterion_name(criterion.kind) +
                         " takes only " + std::to_string(histogram.size()) +
                         " distinct values; cannot split into " +
                         std::to_string(K) + " non-empty subspaces");

  std::vector<std::pair<double, std::uint64_t>> values(histogram.begin(),
                                                       histogram.end());
  Partition p;
  p.kind = criterion.kind;
  p.probe = criterion.probe;
  p.K = K;
  p.seed = seed;
  p.space_fp = space_fingerprint(space);
  p.sampled = sampled;
  p.subspace_sizes.assign(K, 0);

  std::size_t pos = 0;
  std::uint64_t remaining_mass = total;
  for (int b = 0; b < K; ++b) {
    int remaining_bins = K - b;
    double target =
        static_cast<double>(remaining_mass) / static_cast<double>(remaining_bins);
    std::uint64_t mass = 0;
    std::size_t taken = 0;
    while (pos < values.size()) {
      std::size_t left_after = values.size() - pos - 1;
      bool must_leave = left_after < static_cast<std::size_t>(remaining_bins - 1);
      if (taken > 0 && must_leave) break;
      double w = static_cast<double>(values[pos].second);
      if (taken > 0 && 2.0 * static_cast<double>(mass) + w >= 2.0 * target)
        break;
      mass += values[pos].second;
      ++taken;
      ++pos;
    }
    p.subspace_sizes[b] = mass;
    remaining_mass -= mass;
    if (b + 1 < K) p.upper_edges.push_back(values[pos - 1].first);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_partition(const std::string& path, const Partition& p) {
  nlohmann::json doc;
  doc["criterion"] = criterion_name(p.kind);
  doc["k"] = p.K;
  doc["upper_edges"] = p.upper_edges;
  doc["subspace_sizes"] = p.subspace_sizes;
  doc["seed"] = p.seed;
  doc["space_fingerprint"] = p.space_fp;
  doc["sampled"] = p.sampled;
  doc["probe"] = {{"samples", p.probe.samples}, {"seed", p.probe.seed}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open partition file for writing: " + path);
  os << doc.dump(2) << '\n';
  if (!os) throw IoError("partition write failed: " + path);
}

inline Partition load_partition(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open partition file: " + path);
  nlohmann::json doc;
  try {
    is >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": not valid JSON: " + e.what());
  }
  Partition p;
  try {
    p.kind = criterion_from_name(doc.at("criterion").get<std::string>());
    p.K = doc.at("k").get<int>();
    p.upper_edges = doc.at("upper_edges").get<std::vector<double>>();
    p.subspace_sizes =
        doc.at("subspace_sizes").get<std::vector<std::uint64_t>>();
    p.seed = doc.at("seed").get<std::uint64_t>();
    p.space_fp = doc.at("space_fingerprint").get<std::uint64_t>();
    p.sampled = doc.value("sampled", false);
    p.probe.samples = doc.at("probe").at("samples").get<int>();
    p.probe.seed = doc.at("probe").at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": malformed partition document: " + e.what());
  }
  if (p.K < 1 || p.upper_edges.size() + 1 != static_cast<std::size_t>(p.K) ||
      p.subspace_sizes.size() != static_cast<std::size_t>(p.K))
    throw ConfigError(path + ": partition document is inconsistent");
  if (!std::is_sorted(p.upper_edges.begin(), p.upper_edges.end()))
    throw ConfigError(path + ": bin edges are not ascending");
  return p;
}

// ---------------------------------------------------------------------------
// Subspace statistics
// ---------------------------------------------------------------------------

struct HistogramRow {
  int supernet_k = 0;
  std::string metric;
  double lo = 0;
  double hi = 0;
  std::uint64_t count = 0;
};

struct MedianRow {
  int supernet_k = 0;
  std::string metric;
  double median = 0;
  std::uint64_t count = 0;
};

struct PartitionStats {
  std::uint64_t total = 0;
  std::vector<std::uint64_t> per_bin;
  std::vector<HistogramRow> histograms;
  std::vector<MedianRow> medians;
};

namespace detail {

inline double median_of_sorted(const std::vector<double>& v) {
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void histogram_metric(const std::string& metric,
                             const std::vector<std::vector<double>>& per_bin,
                             int bins, PartitionStats& stats) {
  double lo = 0, hi = 0;
  bool first = true;
  for (const auto& vals : per_bin)
    for (double v : vals) {
      if (first) { lo = hi = v; first = false; }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (first) return;
  if (hi == lo) hi = lo + 1;  // degenerate range, single occupied bucket
  double width = (hi - lo) / bins;
  for (int k = 0; k < static_cast<int>(per_bin.size()); ++k) {
    std::vector<std::uint64_t> counts(bins, 0);
    for (double v : per_bin[k]) {
      int b = static_cast<int>((v - lo) / width);
      counts[std::clamp(b, 0, bins - 1)] += 1;
    }
    for (int b = 0; b < bins; ++b)
      stats.histograms.push_back({k, metric, lo + b * width,
                                  lo + (b + 1) * width, counts[b]});
    std::vector<double> sorted = per_bin[k];
    std::sort(sorted.begin(), sorted.end());
    if (!sorted.empty())
      stats.medians.push_back({k, metric, median_of_sorted(sorted),
                               static_cast<std::uint64_t>(sorted.size())});
  }
}

}  // namespace detail

// FLOPs/parameter distributions per subspace, plus accuracy when an oracle
// lookup is supplied. Metrics use full-width channels (G = 1). Enumerates
// the space up to `limit` subnets, sampling `limit` subnets beyond that.
using AccuracyLookup =
    std::function<bool(std::uint64_t code, double* accuracy)>;

inline PartitionStats partition_stats(const SearchSpace& space,
                                      const Partition& partition,
                                      std::uint64_t limit,
                                      const AccuracyLookup* oracle = nullptr,
                                      const ProbeFn* probe = nullptr,
                                      int bins = 20) {
  if (partition.space_fp != space_fingerprint(space))
    throw ContractError("partition was built for a different search space");
  PartitionStats stats;
  stats.per_bin.assign(partition.K, 0);
  std::vector<std::vector<double>> flops_by_bin(partition.K);
  std::vector<std::vector<double>> params_by_bin(partition.K);
  std::vector<std::vector<double>> acc_by_bin(partition.K);
  Criterion criterion = partition.criterion();

  auto visit = [&](const Subnet& s) {
    int k = assign(partition, score(criterion, space, s, probe));
    stats.per_bin[k] += 1;
    stats.total += 1;
    flops_by_bin[k].push_back(static_cast<double>(flops(space, s, 1)));
    params_by_bin[k].push_back(static_cast<double>(param_count(space, s, 1)));
    if (oracle != nullptr && *oracle) {
      double acc = 0;
      if ((*oracle)(encode(space, s), &acc)) acc_by_bin[k].push_back(acc);
    }
  };

  std::uint64_t n = space_size_clamped(space, limit);
  if (n <= limit) {
    for (std::uint64_t c = 0; c < n; ++c) visit(decode(space, c));
  } else {
    Rng rng(derive_seed(partition.seed, "stats-sample"));
    for (std::uint64_t i = 0; i < limit; ++i)
      visit(uniform_subnet(space, rng));
  }

  detail::histogram_metric("flops", flops_by_bin, bins, stats);
  detail::histogram_metric("params", params_by_bin, bins, stats);
  bool any_acc = false;
  for (const auto& v : acc_by_bin) any_acc = any_acc || !v.empty();
  if (any_acc) detail::histogram_metric("accuracy", acc_by_bin, bins, stats);
  return stats;
}

}  // namespace splitnas
