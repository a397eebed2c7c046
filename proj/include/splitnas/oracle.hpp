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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "splitnas/partition.hpp"
#include "splitnas/training.hpp"

namespace splitnas {

// ---------------------------------------------------------------------------
// Kendall rank correlation, tie-corrected (tau-b)
// ---------------------------------------------------------------------------

namespace detail {

// Strict inversions (left > right) counted during a bottom-up merge sort.
// Equal elements merge left-first, so ties never count.
inline std::uint64_t merge_count(std::vector<double>& v) {
  std::size_t n = v.size();
  std::vector<double> buf(n);
  std::uint64_t inversions = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
      std::size_t mid = lo + width;
      std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, o = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          inversions += mid - i;
          buf[o++] = v[j++];
        } else {
          buf[o++] = v[i++];
        }
      }
      while (i < mid) buf[o++] = v[i++];
      while (j < hi) buf[o++] = v[j++];
      std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
    }
  }
  return inversions;
}

// Sum over runs of equal values of C(run, 2).
inline std::uint64_t tie_pairs(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::uint64_t pairs = 0, run = 1;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] == v[i - 1]) {
      ++run;
    } else {
      pairs += run * (run - 1) / 2;
      run = 1;
    }
  }
  pairs += run * (run - 1) / 2;
  return pairs;
}

}  // namespace detail

// Tau-b over paired samples in O(n log n): sort by (x, y), count strict y
// inversions with a merge sort, correct for ties on either side. A vector
// with every value tied has no defined ranking; that is an error, not NaN.
inline double kendall_tau(const std::vector<double>& x,
                          const std::vector<double>& y) {
  if (x.size() != y.size())
    throw ValidationError("kendall_tau: length mismatch, " +
                          std::to_string(x.size()) + " vs " +
                          std::to_string(y.size()));
  std::uint64_t n = x.size();
  if (n < 2) throw ValidationError("kendall_tau: need at least 2 samples");
  for (double v : x)
    if (!std::isfinite(v))
      throw ValidationError("kendall_tau: non-finite value in x");
  for (double v : y)
    if (!std::isfinite(v))
      throw ValidationError("kendall_tau: non-finite value in y");

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });

  std::uint64_t n0 = n * (n - 1) / 2;
  std::uint64_t n1 = detail::tie_pairs(x);
  std::uint64_t n2 = detail::tie_pairs(y);
  if (n1 == n0)
    throw ValidationError("kendall_tau: every x value is tied");
  if (n2 == n0)
    throw ValidationError("kendall_tau: every y value is tied");

  std::uint64_t n3 = 0;  // pairs tied in both, lie inside x-runs
  {
    std::uint64_t run = 1;
    for (std::size_t i = 1; i < n; ++i) {
      if (x[idx[i]] == x[idx[i - 1]] && y[idx[i]] == y[idx[i - 1]]) {
        ++run;
      } else {
        n3 += run * (run - 1) / 2;
        run = 1;
      }
    }
    n3 += run * (run - 1) / 2;
  }

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  std::uint64_t discordant = detail::merge_count(ys);
  // Pairs sharing an x value are y-sorted inside their run, so the merge
  // count holds only cross-run strict inversions: exactly the discordant
  // pairs. Everything else splits into x-ties, y-ties, and concordant.
  std::uint64_t concordant = n0 - n1 - n2 + n3 - discordant;

  double num = static_cast<double>(concordant) - static_cast<double>(discordant);
  double den = std::sqrt(static_cast<double>(n0 - n1)) *
               std::sqrt(static_cast<double>(n0 - n2));
  return num / den;
}

// ---------------------------------------------------------------------------
// Oracle tables: ground-truth accuracy per subnet encoding
// ---------------------------------------------------------------------------

struct OracleRow {
  double accuracy = 0;  // percent, [0, 100]
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

struct OracleTable {
  // dataset name -> encoding -> row; ordered so iteration is reproducible.
  std::map<std::string, std::map<std::uint64_t, OracleRow>> by_dataset;
  std::string provenance;  // file path or construction descriptor

  const std::map<std::uint64_t, OracleRow>& dataset(
      const std::string& name) const {
    auto it = by_dataset.find(name);
    if (it == by_dataset.end())
      throw ValidationError("oracle table has no dataset \"" + name + "\"");
    return it->second;
  }

  // The single dataset, when the table holds exactly one.
  const std::map<std::uint64_t, OracleRow>& only() const {
    if (by_dataset.size() != 1)
      throw ValidationError("oracle table holds " +
                            std::to_string(by_dataset.size()) +
                            " datasets; name one explicitly");
    return by_dataset.begin()->second;
  }
};

inline void save_oracle(const std::string& path, const OracleTable& table) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open oracle file for writing: " + path);
  os << "encoding,dataset,accuracy,flops,params\n";
  os.precision(17);
  for (const auto& [name, rows] : table.by_dataset)
    for (const auto& [code, row] : rows)
      os << code << ',' << name << ',' << row.accuracy << ',' << row.flops
         << ',' << row.params << '\n';
  if (!os) throw IoError("oracle write failed: " + path);
}

inline OracleTable load_oracle(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open oracle file: " + path);
  OracleTable table;
  table.provenance = path;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw ConfigError(path + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != "encoding,dataset,accuracy,flops,params")
        fail("unexpected header \"" + line + "\"");
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) fail("expected 5 comma-separated fields");
    for (int f : {0, 3, 4})
      if (!fields[f].empty() && fields[f][0] == '-')
        fail("field " + std::to_string(f) + " must be non-negative");
    std::uint64_t code;
    OracleRow row;
    try {
      code = std::stoull(fields[0]);
      row.accuracy = std::stod(fields[2]);
      row.flops = std::stoull(fields[3]);
      row.params = std::stoull(fields[4]);
    } catch (const std::exception&) {
      fail("unparsable numeric field");
      return table;  // unreachable
    }
    if (!(row.accuracy >= 0.0 && row.accuracy <= 100.0))
      fail("accuracy " + fields[2] + " outside [0, 100]");
    auto& rows = table.by_dataset[fields[1]];
    if (!rows.emplace(code, row).second)
      fail("duplicate encoding " + fields[0] + " for dataset " + fields[1]);
  }
  return table;  // a header-only file is a valid empty table
}

// ---------------------------------------------------------------------------
// Rank-quality report: estimates vs oracle
// ---------------------------------------------------------------------------

struct ScatterRow {
  std::uint64_t code = 0;
  double oracle_accuracy = 0;
  double estimate = 0;
  int supernet_k = -1;
};

struct RankReport {
  double tau_all = 0;
  double tau_top = 0;
  int top_m_requested = 0;
  int top_m_used = 0;
  std::vector<ScatterRow> scatter;       // ordered by encoding
  std::vector<MedianRow> oracle_medians; // accuracy medians per subspace
};

// Compares estimated scores against oracle accuracy. Every estimated
// encoding must have an oracle row. tau_top ranks the oracle's best top_m
// of the compared set. Passing a partition adds per-subspace
// oracle-accuracy medians and tags each scatter row with its supernet.
inline RankReport rank_report(
    const std::map<std::uint64_t, double>& estimates,
    const std::map<std::uint64_t, OracleRow>& oracle, int top_m,
    const SearchSpace* space = nullptr, const Partition* partition = nullptr,
    const ProbeFn* probe = nullptr) {
  if (top_m < 2) throw ValidationError("top_m must be at least 2");
  RankReport report;
  report.top_m_requested = top_m;
  for (const auto& [code, est] : estimates) {
    auto it = oracle.find(code);
    if (it == oracle.end())
      throw ValidationError("estimate for encoding " + std::to_string(code) +
                            " has no oracle row");
    ScatterRow row{code, it->second.accuracy, est, -1};
    if (space != nullptr && partition != nullptr) {
      Subnet s = decode(*space, code);
      row.supernet_k =
          assign(*partition, score(partition->criterion(), *space, s, probe));
    }
    report.scatter.push_back(row);
  }
  if (report.scatter.size() < 2)
    throw ValidationError("need at least 2 estimated subnets to rank");

  std::vector<double> oracle_acc, est;
  for (const ScatterRow& r : report.scatter) {
    oracle_acc.push_back(r.oracle_accuracy);
    est.push_back(r.estimate);
  }
  report.tau_all = kendall_tau(oracle_acc, est);

  std::vector<std::size_t> order(report.scatter.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (oracle_acc[a] != oracle_acc[b]) return oracle_acc[a] > oracle_acc[b];
    return report.scatter[a].code < report.scatter[b].code;
  });
  report.top_m_used =
      std::min<int>(top_m, static_cast<int>(order.size()));
  std::vector<double> top_oracle, top_est;
  for (int i = 0; i < report.top_m_used; ++i) {
    top_oracle.push_back(oracle_acc[order[i]]);
    top_est.push_back(est[order[i]]);
  }
  report.tau_top = kendall_tau(top_oracle, top_est);

  if (space != nullptr && partition != nullptr) {
    std::vector<std::vector<double>> acc_by_bin(partition->K);
    for (const ScatterRow& r : report.scatter)
      acc_by_bin[r.supernet_k].push_back(r.oracle_accuracy);
    for (int k = 0; k < partition->K; ++k) {
      if (acc_by_bin[k].empty()) continue;
      std::sort(acc_by_bin[k].begin(), acc_by_bin[k].end());
      report.oracle_medians.push_back(
          {k, "accuracy", detail::median_of_sorted(acc_by_bin[k]),
           static_cast<std::uint64_t>(acc_by_bin[k].size())});
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ground-truth construction
// ---------------------------------------------------------------------------

struct OracleProtocol {
  int epochs = 10;
  int batch_size = 64;
  double lr0 = 0.05;
  double momentum = 0.9;
  double weight_decay = 4e-5;
  int seeds_per_subnet = 2;
  std::uint64_t base_seed = 0;
  std::uint64_t limit = 512;  // refuse larger spaces
  int eval_batch = 256;
  int threads = 1;
};

using OracleProgress = std::function<void(std::uint64_t done,
                                          std::uint64_t total)>;

// Trains every subnet of a small space from scratch and records mean test
// accuracy over independent seeds. This is hours of work on anything but a
// deliberately tiny space; the limit guards against accidents. Subnets
// train independently (each from its own derived seed), so they fan out
// across threads with bit-identical results at any thread count.
template <typename T>
OracleTable build_standalone_oracle(const SearchSpace& space,
                                    const DataBundle<T>& bundle,
                                    const std::string& dataset_name,
                                    const OracleProtocol& protocol,
                                    const OracleProgress& progress = nullptr) {
  std::uint64_t n = space_size_clamped(space, protocol.limit);
  if (n > protocol.limit)
    throw ValidationError(
        "space has more than " + std::to_string(protocol.limit) +
        " subnets; a standalone oracle over it is not tractable here");
  if (protocol.seeds_per_subnet < 1)
    throw ValidationError("seeds_per_subnet must be positive");
  std::vector<double> accuracy(n);
  std::atomic<std::uint64_t> done{0};
  parallel_for(n, protocol.threads, [&](std::uint64_t code) {
    Subnet s = decode(space, code);
    double acc_sum = 0;
    for (int r = 0; r < protocol.seeds_per_subnet; ++r) {
      std::uint64_t seed = derive_seed(
          derive_seed(protocol.base_seed, "standalone"), code * 1000 + r);
      ParamSet<T> params = train_single<T>(
          space, s, bundle.train, protocol.epochs, protocol.batch_size,
          protocol.lr0, protocol.momentum, protocol.weight_decay, seed);
      acc_sum += top1_accuracy(space, s, params, bundle.test,
                               protocol.eval_batch);
    }
    accuracy[code] = 100.0 * acc_sum / protocol.seeds_per_subnet;
    if (progress) progress(done.fetch_add(1) + 1, n);
  });
  OracleTable table;
  table.provenance = "standalone-training:" + dataset_name;
  auto& rows = table.by_dataset[dataset_name];
  for (std::uint64_t code = 0; code < n; ++code) {
    Subnet s = decode(space, code);
    OracleRow row;
    row.accuracy = accuracy[code];
    row.flops = flops(space, s, 1);
    row.params = param_count(space, s, 1);
    rows.emplace(code, row);
  }
  return table;
}

}  // namespace splitnas
