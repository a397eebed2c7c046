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

#include "splitnas/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace splitnas {
namespace {

// Pair-by-pair tau-b. Quadratic, but every count is exact, and the final
// arithmetic mirrors kendall_tau so agreement must be bit-for-bit.
double brute_tau(const std::vector<double>& x, const std::vector<double>& y) {
  std::uint64_t n = x.size();
  std::uint64_t n0 = n * (n - 1) / 2;
  std::uint64_t concordant = 0, discordant = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      bool x_tied = x[i] == x[j];
      bool y_tied = y[i] == y[j];
      if (x_tied) ++tx;
      if (y_tied) ++ty;
      if (x_tied || y_tied) continue;
      if ((x[i] < x[j]) == (y[i] < y[j]))
        ++concordant;
      else
        ++discordant;
    }
  }
  double num = static_cast<double>(concordant) -
               static_cast<double>(discordant);
  double den = std::sqrt(static_cast<double>(n0 - tx)) *
               std::sqrt(static_cast<double>(n0 - ty));
  return num / den;
}

std::vector<double> random_values(std::size_t n, std::uint64_t seed,
                                  int buckets) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& e : v)
    e = buckets > 0 ? std::floor(rng.uniform() * buckets) : rng.uniform();
  return v;
}

std::string tmp_path(const std::string& name) {
  return ::testing::TempDir() + name;
}

// Writes `content`, loads it, and hands back the resulting error message.
std::string load_failure(const std::string& name, const std::string& content) {
  std::string path = tmp_path(name);
  std::ofstream(path, std::ios::trunc) << content;
  try {
    load_oracle(path);
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected load_oracle to reject " << name;
  return "";
}

TEST(KendallTau, PerfectAgreementIsExactlyOne) {
  std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> y{10, 20, 30, 40, 50};
  EXPECT_DOUBLE_EQ(kendall_tau(x, y), 1.0);
  for (double& v : y) v = -v;
  EXPECT_DOUBLE_EQ(kendall_tau(x, y), -1.0);
}

TEST(KendallTau, OneSwapOutOfSixPairs) {
  // One discordant pair among C(4,2) = 6: tau = (5 - 1) / 6.
  std::vector<double> x{1, 2, 3, 4};
  std::vector<double> y{1, 2, 4, 3};
  EXPECT_NEAR(kendall_tau(x, y), 2.0 / 3.0, 1e-12);
}

TEST(KendallTau, TieCorrectionMatchesTheClosedForm) {
  // One tied x pair: 5 concordant pairs of n0 = 6, tau = 5 / sqrt(5 * 6).
  std::vector<double> x{1, 1, 2, 3};
  std::vector<double> y{1, 2, 3, 4};
  EXPECT_NEAR(kendall_tau(x, y), 5.0 / std::sqrt(30.0), 1e-12);
}

TEST(KendallTau, RejectsDegenerateInput) {
  std::vector<double> a{1, 2, 3};
  std::vector<double> short_b{1, 2};
  EXPECT_THROW(kendall_tau(a, short_b), ValidationError);
  EXPECT_THROW(kendall_tau({1.0}, {2.0}), ValidationError);
  EXPECT_THROW(kendall_tau({}, {}), ValidationError);
  EXPECT_THROW(kendall_tau({5, 5, 5}, {1, 2, 3}), ValidationError);
  EXPECT_THROW(kendall_tau({1, 2, 3}, {7, 7, 7}), ValidationError);
  double nan = std::nan("");
  EXPECT_THROW(kendall_tau({1, nan, 3}, {1, 2, 3}), ValidationError);
  double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(kendall_tau({1, 2, 3}, {1, inf, 3}), ValidationError);
}

TEST(KendallTau, MatchesQuadraticCountingOnDistinctValues) {
  for (std::size_t n : {2u, 3u, 17u, 101u, 256u}) {
    std::vector<double> x = random_values(n, 100 + n, 0);
    std::vector<double> y = random_values(n, 200 + n, 0);
    EXPECT_EQ(kendall_tau(x, y), brute_tau(x, y)) << "n = " << n;
  }
}

TEST(KendallTau, MatchesQuadraticCountingUnderHeavyTies) {
  for (std::size_t n : {17u, 101u, 256u}) {
    std::vector<double> x = random_values(n, 300 + n, 5);
    std::vector<double> y = random_values(n, 400 + n, 3);
    EXPECT_EQ(kendall_tau(x, y), brute_tau(x, y)) << "n = " << n;
  }
  // Long runs of equal x with scrambled y exercise the within-run ordering.
  std::vector<double> runs(64), ys(64);
  Rng rng(9);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    runs[i] = static_cast<double>(i / 8);
    ys[i] = std::floor(rng.uniform() * 4);
  }
  EXPECT_EQ(kendall_tau(runs, ys), brute_tau(runs, ys));
}

TEST(OracleTable, LooksUpDatasetsByNameAndRefusesAmbiguity) {
  OracleTable table;
  table.by_dataset["cifar"][0] = {50.0, 100, 10};
  EXPECT_EQ(table.only().at(0).accuracy, 50.0);
  EXPECT_EQ(table.dataset("cifar").size(), 1u);
  EXPECT_THROW(table.dataset("imagenet"), ValidationError);
  table.by_dataset["svhn"][0] = {60.0, 100, 10};
  EXPECT_THROW(table.only(), ValidationError);
}

TEST(OracleIo, RoundtripPreservesEveryValueExactly) {
  OracleTable table;
  table.by_dataset["cifar"][0] = {100.0 / 3.0, 1234567890123ull, 98765ull};
  table.by_dataset["cifar"][26] = {91.60493827160494, 7ull, 0ull};
  table.by_dataset["svhn"][4] = {0.0, 0ull, 42ull};
  std::string path = tmp_path("oracle_roundtrip.csv");
  save_oracle(path, table);

  OracleTable back = load_oracle(path);
  EXPECT_EQ(back.provenance, path);
  ASSERT_EQ(back.by_dataset.size(), 2u);
  for (const auto& [name, rows] : table.by_dataset) {
    const auto& got = back.dataset(name);
    ASSERT_EQ(got.size(), rows.size());
    for (const auto& [code, row] : rows) {
      EXPECT_EQ(got.at(code).accuracy, row.accuracy);
      EXPECT_EQ(got.at(code).flops, row.flops);
      EXPECT_EQ(got.at(code).params, row.params);
    }
  }
}

TEST(OracleIo, HeaderOnlyFileIsAValidEmptyTable) {
  std::string path = tmp_path("oracle_empty.csv");
  std::ofstream(path, std::ios::trunc)
      << "encoding,dataset,accuracy,flops,params\n";
  OracleTable table = load_oracle(path);
  EXPECT_TRUE(table.by_dataset.empty());
}

TEST(OracleIo, RejectsMissingOrMalformedFiles) {
  EXPECT_THROW(load_oracle(tmp_path("no_such_oracle.csv")), IoError);

  std::string msg = load_failure("oracle_bad_header.csv", "code,acc\n");
  EXPECT_NE(msg.find(":1:"), std::string::npos) << msg;

  msg = load_failure("oracle_few_fields.csv",
                     "encoding,dataset,accuracy,flops,params\n3,cifar,50.0\n");
  EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("5 comma-separated"), std::string::npos) << msg;

  msg = load_failure(
      "oracle_negative.csv",
      "encoding,dataset,accuracy,flops,params\n3,cifar,50.0,-7,9\n");
  EXPECT_NE(msg.find("non-negative"), std::string::npos) << msg;

  msg = load_failure(
      "oracle_range.csv",
      "encoding,dataset,accuracy,flops,params\n3,cifar,150.0,7,9\n");
  EXPECT_NE(msg.find("outside [0, 100]"), std::string::npos) << msg;

  msg = load_failure(
      "oracle_dup.csv",
      "encoding,dataset,accuracy,flops,params\n"
      "3,cifar,50.0,7,9\n3,cifar,51.0,7,9\n");
  EXPECT_NE(msg.find("duplicate encoding 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;

  msg = load_failure(
      "oracle_garbage.csv",
      "encoding,dataset,accuracy,flops,params\nabc,cifar,50.0,7,9\n");
  EXPECT_NE(msg.find("unparsable"), std::string::npos) << msg;
}

TEST(RankReport, PerfectEstimatesScoreTauOne) {
  std::map<std::uint64_t, OracleRow> oracle;
  std::map<std::uint64_t, double> estimates;
  for (std::uint64_t code = 0; code < 10; ++code) {
    double acc = 40.0 + 3.0 * static_cast<double>(code);
    oracle[code] = {acc, code, code};
    estimates[code] = acc / 100.0;
  }
  RankReport report = rank_report(estimates, oracle, 5);
  EXPECT_NEAR(report.tau_all, 1.0, 1e-12);
  EXPECT_NEAR(report.tau_top, 1.0, 1e-12);
  EXPECT_EQ(report.top_m_requested, 5);
  EXPECT_EQ(report.top_m_used, 5);
  ASSERT_EQ(report.scatter.size(), 10u);
  for (std::size_t i = 0; i < report.scatter.size(); ++i) {
    EXPECT_EQ(report.scatter[i].code, i);
    EXPECT_EQ(report.scatter[i].supernet_k, -1);
  }
  EXPECT_TRUE(report.oracle_medians.empty());
}

TEST(RankReport, AntiCorrelatedEstimatesScoreTauMinusOne) {
  std::map<std::uint64_t, OracleRow> oracle;
  std::map<std::uint64_t, double> estimates;
  for (std::uint64_t code = 0; code < 8; ++code) {
    oracle[code] = {10.0 + static_cast<double>(code), 0, 0};
    estimates[code] = -static_cast<double>(code);
  }
  RankReport report = rank_report(estimates, oracle, 4);
  EXPECT_NEAR(report.tau_all, -1.0, 1e-12);
  EXPECT_NEAR(report.tau_top, -1.0, 1e-12);
}

TEST(RankReport, TopMIsClampedToTheComparedSet) {
  std::map<std::uint64_t, OracleRow> oracle;
  std::map<std::uint64_t, double> estimates;
  for (std::uint64_t code = 0; code < 4; ++code) {
    oracle[code] = {50.0 + static_cast<double>(code), 0, 0};
    estimates[code] = static_cast<double>(code);
  }
  RankReport report = rank_report(estimates, oracle, 10);
  EXPECT_EQ(report.top_m_requested, 10);
  EXPECT_EQ(report.top_m_used, 4);
}

TEST(RankReport, RejectsUnmatchedOrUndersizedInput) {
  std::map<std::uint64_t, OracleRow> oracle;
  oracle[0] = {50.0, 0, 0};
  oracle[1] = {60.0, 0, 0};

  std::map<std::uint64_t, double> missing{{0, 0.1}, {999, 0.2}};
  EXPECT_THROW(rank_report(missing, oracle, 2), ValidationError);

  std::map<std::uint64_t, double> lonely{{0, 0.1}};
  EXPECT_THROW(rank_report(lonely, oracle, 2), ValidationError);

  std::map<std::uint64_t, double> fine{{0, 0.1}, {1, 0.2}};
  EXPECT_THROW(rank_report(fine, oracle, 1), ValidationError);
}

TEST(RankReport, PartitionTagsRowsAndAddsAccuracyMedians) {
  SearchSpace desk = desk3x3_space();
  Criterion crit{CriterionKind::kNonlinearCount, {}};
  Partition part = build_partition(desk, crit, 3, 1000, 1);

  std::map<std::uint64_t, OracleRow> oracle;
  std::map<std::uint64_t, double> estimates;
  for (std::uint64_t code = 0; code < 27; ++code) {
    oracle[code] = {3.0 * static_cast<double>(code), 0, 0};
    estimates[code] = 0.1 * static_cast<double>(code);
  }
  RankReport report = rank_report(estimates, oracle, 5, &desk, &part);
  EXPECT_NEAR(report.tau_all, 1.0, 1e-12);

  // Supernet tags follow the ReLU count of the decoded subnet.
  EXPECT_EQ(report.scatter[0].supernet_k, 0);   // all skip
  EXPECT_EQ(report.scatter[4].supernet_k, 1);   // two convs
  EXPECT_EQ(report.scatter[26].supernet_k, 2);  // three convs

  // With accuracy = 3 * code, the per-bin medians are fixed by the
  // partition: bins of 7, 12, and 8 subnets.
  ASSERT_EQ(report.oracle_medians.size(), 3u);
  EXPECT_EQ(report.oracle_medians[0].supernet_k, 0);
  EXPECT_EQ(report.oracle_medians[0].metric, "accuracy");
  EXPECT_DOUBLE_EQ(report.oracle_medians[0].median, 9.0);
  EXPECT_EQ(report.oracle_medians[0].count, 7u);
  EXPECT_DOUBLE_EQ(report.oracle_medians[1].median, 34.5);
  EXPECT_EQ(report.oracle_medians[1].count, 12u);
  EXPECT_DOUBLE_EQ(report.oracle_medians[2].median, 58.5);
  EXPECT_EQ(report.oracle_medians[2].count, 8u);
}

TEST(BuildStandaloneOracle, DeterministicAtAnyThreadCount) {
  SearchSpace desk = desk3x3_space();
  SyntheticSpec spec;
  spec.train_count = 8;
  spec.test_count = 8;
  DataBundle<float> bundle = make_synthetic<float>(spec, 12);

  OracleProtocol protocol;
  protocol.epochs = 1;
  protocol.batch_size = 4;
  protocol.seeds_per_subnet = 1;
  protocol.eval_batch = 8;

  OracleTable a = build_standalone_oracle(desk, bundle, "tiny", protocol);
  protocol.threads = 3;
  OracleTable b = build_standalone_oracle(desk, bundle, "tiny", protocol);

  EXPECT_EQ(a.provenance, "standalone-training:tiny");
  const auto& rows_a = a.dataset("tiny");
  const auto& rows_b = b.dataset("tiny");
  ASSERT_EQ(rows_a.size(), 27u);
  ASSERT_EQ(rows_b.size(), 27u);
  for (const auto& [code, row] : rows_a) {
    EXPECT_EQ(rows_b.at(code).accuracy, row.accuracy) << "code " << code;
    EXPECT_GE(row.accuracy, 0.0);
    EXPECT_LE(row.accuracy, 100.0);
    Subnet s = decode(desk, code);
    EXPECT_EQ(row.flops, flops(desk, s, 1));
    EXPECT_EQ(row.params, param_count(desk, s, 1));
  }

  // The base seed reaches every subnet's training run.
  protocol.threads = 1;
  protocol.base_seed = 99;
  OracleTable c = build_standalone_oracle(desk, bundle, "tiny", protocol);
  int changed = 0;
  for (const auto& [code, row] : c.dataset("tiny"))
    if (row.accuracy != rows_a.at(code).accuracy) ++changed;
  EXPECT_GT(changed, 0);
}

TEST(BuildStandaloneOracle, RefusesIntractableOrSenselessProtocols) {
  SearchSpace desk = desk3x3_space();
  SyntheticSpec spec;
  spec.train_count = 8;
  spec.test_count = 8;
  DataBundle<float> bundle = make_synthetic<float>(spec, 12);

  OracleProtocol small_limit;
  small_limit.limit = 10;  // the space holds 27
  EXPECT_THROW(build_standalone_oracle(desk, bundle, "tiny", small_limit),
               ValidationError);

  OracleProtocol no_seeds;
  no_seeds.seeds_per_subnet = 0;
  EXPECT_THROW(build_standalone_oracle(desk, bundle, "tiny", no_seeds),
               ValidationError);
}

}  // namespace
}  // namespace splitnas
