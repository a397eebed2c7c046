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

#include <cstdio>
#include <filesystem>
#include <string>

#include "CLI11.hpp"
#include "splitnas/cli.hpp"
#include "splitnas/splitnas.hpp"

namespace {

using namespace splitnas;

struct CommonArgs {
  std::string config_path;
  std::string out_override;
  std::string partition_path;
  std::string checkpoint_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> threads_override;
  bool resume = false;
};

RunConfig prepare(const CommonArgs& args) {
  RunConfig cfg = load_run_config(args.config_path);
  if (!args.out_override.empty()) cfg.out_dir = args.out_override;
  if (args.seed_override) cfg.seed = *args.seed_override;
  if (args.threads_override) cfg.threads = *args.threads_override;
  validate_run_config(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  return cfg;
}

std::string partition_path_of(const CommonArgs& args, const RunConfig& cfg) {
  return args.partition_path.empty() ? cfg.out_dir + "/partition.json"
                                     : args.partition_path;
}

std::string checkpoint_path_of(const CommonArgs& args, const RunConfig& cfg) {
  return args.checkpoint_path.empty() ? cfg.out_dir + "/checkpoint.bin"
                                      : args.checkpoint_path;
}

DataBundle<float> load_bundle(const RunConfig& cfg) {
  if (cfg.dataset == "synthetic")
    return make_synthetic<float>(cfg.synth, derive_seed(cfg.seed, "data"));
  return load_dataset<float>(cfg.dataset);
}

const std::map<std::uint64_t, OracleRow>& oracle_rows(
    const RunConfig& cfg, const OracleTable& table) {
  return cfg.oracle_dataset.empty() ? table.only()
                                    : table.dataset(cfg.oracle_dataset);
}

int cmd_split(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  SearchSpace space = load_space(cfg.space_path);
  ProbeFn probe = linear_region_probe();
  Criterion criterion{cfg.criterion, cfg.probe};
  Partition partition =
      build_partition(space, criterion, cfg.K, cfg.sample_budget,
                      derive_seed(cfg.seed, "split"), &probe);
  save_partition(partition_path_of(args, cfg), partition);

  Manifest manifest("split", cfg.seed, cfg.out_dir);
  if (args.partition_path.empty()) manifest.add("partition.json");

  std::optional<OracleTable> table;
  AccuracyLookup lookup;
  if (!cfg.oracle_path.empty()) {
    table = load_oracle(cfg.oracle_path);
    const auto& rows = oracle_rows(cfg, *table);
    lookup = [&rows](std::uint64_t code, double* acc) {
      auto it = rows.find(code);
      if (it == rows.end()) return false;
      *acc = it->second.accuracy;
      return true;
    };
  }
  PartitionStats stats = partition_stats(
      space, partition, cfg.sample_budget, lookup ? &lookup : nullptr, &probe);
  write_stats(cfg.out_dir, "split", cfg.seed, stats, manifest);
  manifest.save();

  std::printf("criterion=%s k=%d total=%llu\n",
              criterion_name(partition.kind).c_str(), partition.K,
              static_cast<unsigned long long>(stats.total));
  for (int k = 0; k < partition.K; ++k)
    std::printf("supernet %d: %llu subnets%s\n", k,
                static_cast<unsigned long long>(partition.subspace_sizes[k]),
                partition.sampled ? " (sampled)" : "");
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  SearchSpace space = load_space(cfg.space_path);
  Partition partition = load_partition(partition_path_of(args, cfg));
  ProbeFn probe = linear_region_probe();
  DataBundle<float> bundle = load_bundle(cfg);
  auto [train_half, val_half] = split_train_val(bundle.train);
  (void)val_half;  // the search and ranking stages consume it

  std::string ckpt = checkpoint_path_of(args, cfg);
  SupernetStore<float> store;
  if (args.resume) {
    store = load_checkpoint<float>(ckpt);
    if (store.partition_fp != partition_fingerprint(partition))
      throw ContractError(
          "checkpoint was trained under a different partition");
  } else {
    store = init_supernets<float>(space, partition, cfg.G,
                                  derive_seed(cfg.seed, "init"));
  }

  TrainConfig train_cfg = make_train_config(cfg);
  TrainResult<float> result = train_supernets(
      store, space, partition, train_half, train_cfg, &probe);
  save_checkpoint(ckpt, store);

  Manifest manifest("train", cfg.seed, cfg.out_dir);
  write_train_log(cfg.out_dir + "/train_log.csv", "train", cfg.seed,
                  result.rows);
  manifest.add("train_log.csv");
  write_epoch_summary(cfg.out_dir + "/train_epochs.csv", "train", cfg.seed,
                      result.rows);
  manifest.add("train_epochs.csv");
  if (args.checkpoint_path.empty()) manifest.add("checkpoint.bin");
  manifest.save();

  std::printf("trained %lld steps (total %lld); updates per supernet:",
              result.steps_run, store.steps);
  for (int k = 0; k < store.K; ++k)
    std::printf(" %lld", store.update_counts[k]);
  std::printf("\n");
  return 0;
}

int cmd_search(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  SearchSpace space = load_space(cfg.space_path);
  Partition partition = load_partition(partition_path_of(args, cfg));
  ProbeFn probe = linear_region_probe();
  SupernetStore<float> store =
      load_checkpoint<float>(checkpoint_path_of(args, cfg));
  DataBundle<float> bundle = load_bundle(cfg);
  auto [train_half, val_half] = split_train_val(bundle.train);
  (void)train_half;

  FitnessMetric metric = cfg.fitness == "loss" ? FitnessMetric::kNegLoss
                                               : FitnessMetric::kAccuracy;
  FitnessFn fitness = make_supernet_fitness(store, space, partition, val_half,
                                            cfg.eval_batch, &probe, metric);
  SearchConstraint::Metric cost_metric =
      cfg.evo.constraint ? cfg.evo.constraint->metric
                         : SearchConstraint::Metric::kFlops;
  CostFn cost = make_cost_fn(space, cost_metric);
  EvoConfig evo = cfg.evo;
  evo.seed = derive_seed(cfg.seed, "search");
  SearchResult result = evolutionary_search(space, fitness, cost, evo);

  Manifest manifest("search", cfg.seed, cfg.out_dir);
  write_history(cfg.out_dir + "/search_history.csv", "search", cfg.seed,
                result.history);
  manifest.add("search_history.csv");

  Subnet best = decode(space, result.best.code);
  nlohmann::json doc;
  doc["encoding"] = result.best.code;
  nlohmann::json ops = nlohmann::json::array();
  for (std::size_t j = 0; j < space.edges.size(); ++j)
    ops.push_back(space.edges[j].candidates[best.choices[j]].name);
  doc["ops"] = ops;
  doc["fitness"] = result.best.fitness;
  doc["cost"] = result.best.cost;
  doc["evaluations"] = result.evaluations;
  {
    std::ostringstream hex;
    hex << std::hex << partition_fingerprint(partition);
    doc["partition_fnv64"] = hex.str();
  }
  doc["seed"] = cfg.seed;
  std::string rpath = cfg.out_dir + "/search_result.json";
  std::ofstream os(rpath, std::ios::trunc);
  if (!os) throw IoError("cannot write result: " + rpath);
  os << doc.dump(2) << '\n';
  os.close();
  manifest.add("search_result.json");
  manifest.save();

  std::printf("best encoding=%llu fitness=%.6f cost=%.0f\n",
              static_cast<unsigned long long>(result.best.code),
              result.best.fitness, result.best.cost);
  return 0;
}

int cmd_eval_rank(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  if (cfg.oracle_path.empty())
    throw ConfigError("eval-rank needs an 'oracle' table in the config");
  SearchSpace space = load_space(cfg.space_path);
  Partition partition = load_partition(partition_path_of(args, cfg));
  ProbeFn probe = linear_region_probe();
  SupernetStore<float> store =
      load_checkpoint<float>(checkpoint_path_of(args, cfg));
  DataBundle<float> bundle = load_bundle(cfg);
  auto [train_half, val_half] = split_train_val(bundle.train);
  (void)train_half;

  OracleTable table = load_oracle(cfg.oracle_path);
  const auto& rows = oracle_rows(cfg, table);
  std::vector<std::uint64_t> codes;
  codes.reserve(rows.size());
  for (const auto& [code, row] : rows) codes.push_back(code);
  if (cfg.rank_sample > 0 &&
      static_cast<std::size_t>(cfg.rank_sample) < codes.size()) {
    Rng rng(derive_seed(cfg.seed, "rank-sample"));
    for (std::size_t i = codes.size(); i > 1; --i)
      std::swap(codes[i - 1], codes[rng.uniform_below(i)]);
    codes.resize(cfg.rank_sample);
    std::sort(codes.begin(), codes.end());
  }

  std::map<std::uint64_t, double> estimates;
  for (std::uint64_t code : codes) {
    Subnet s = decode(space, code);
    estimates[code] = 100.0 * supernet_accuracy(store, space, partition, s,
                                                val_half, cfg.eval_batch,
                                                &probe);
  }
  RankReport report = rank_report(estimates, rows, cfg.top_m, &space,
                                  &partition, &probe);

  Manifest manifest("eval-rank", cfg.seed, cfg.out_dir);
  write_rank_report(cfg.out_dir, "eval-rank", cfg.seed, report, manifest);
  manifest.save();

  std::printf("tau_all=%.6f tau_top_%d=%.6f over %zu subnets\n",
              report.tau_all, report.top_m_used, report.tau_top,
              report.scatter.size());
  if (report.top_m_used < report.top_m_requested)
    std::printf("warning: top_m clamped from %d to %d\n",
                report.top_m_requested, report.top_m_used);
  return 0;
}

int cmd_enumerate(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  SearchSpace space = load_space(cfg.space_path);
  Manifest manifest("enumerate", cfg.seed, cfg.out_dir);
  CsvWriter csv(cfg.out_dir + "/subnets.csv", "enumerate", cfg.seed,
                "subnet_code,nonlinearities,flops,params");
  std::uint64_t n = 0;
  for (const Subnet& s : enumerate(space, cfg.sample_budget)) {
    csv.row(encode(space, s), count_nonlinearities(space, s),
            flops(space, s, 1), param_count(space, s, 1));
    ++n;
  }
  csv.close();
  manifest.add("subnets.csv");
  manifest.save();
  std::printf("enumerated %llu subnets\n",
              static_cast<unsigned long long>(n));
  return 0;
}

int cmd_desk_oracle(const CommonArgs& args) {
  RunConfig cfg = prepare(args);
  SearchSpace space = load_space(cfg.space_path);
  DataBundle<float> bundle = load_bundle(cfg);
  OracleProtocol protocol = cfg.oracle_protocol;
  protocol.base_seed = derive_seed(cfg.seed, "oracle");
  protocol.eval_batch = cfg.eval_batch;
  protocol.threads = cfg.threads;
  OracleProgress progress = [](std::uint64_t done, std::uint64_t total) {
    std::fprintf(stderr, "\roracle %llu/%llu",
                 static_cast<unsigned long long>(done),
                 static_cast<unsigned long long>(total));
    if (done == total) std::fprintf(stderr, "\n");
  };
  OracleTable table = build_standalone_oracle(space, bundle, space.name,
                                              protocol, progress);
  Manifest manifest("desk-oracle", cfg.seed, cfg.out_dir);
  save_oracle(cfg.out_dir + "/oracle.csv", table);
  manifest.add("oracle.csv");
  manifest.save();
  std::printf("oracle rows: %zu (dataset %s)\n",
              table.dataset(space.name).size(), space.name.c_str());
  return 0;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_partition,
                bool with_checkpoint) {
  cmd->add_option("config", args.config_path, "run configuration file")
      ->required();
  cmd->add_option("--out", args.out_override, "output directory override");
  cmd->add_option("--seed", args.seed_override, "root seed override");
  cmd->add_option("--threads", args.threads_override, "worker thread cap");
  if (with_partition)
    cmd->add_option("--partition", args.partition_path,
                    "partition document (default: <out>/partition.json)");
  if (with_checkpoint)
    cmd->add_option("--checkpoint", args.checkpoint_path,
                    "checkpoint path (default: <out>/checkpoint.bin)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot supernet search toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  int (*handler)(const CommonArgs&) = nullptr;

  auto* split = app.add_subcommand(
      "split", "partition a search space and emit subspace statistics");
  add_common(split, args, true, false);
  split->callback([&] { handler = cmd_split; });

  auto* train = app.add_subcommand(
      "train", "train the per-subspace supernets with balanced sampling");
  add_common(train, args, true, true);
  train->add_flag("--resume", args.resume,
                  "continue from an existing checkpoint");
  train->callback([&] { handler = cmd_train; });

  auto* search = app.add_subcommand(
      "search", "evolutionary search over a trained checkpoint");
  add_common(search, args, true, true);
  search->callback([&] { handler = cmd_search; });

  auto* eval_rank = app.add_subcommand(
      "eval-rank", "rank-correlation report against an oracle table");
  add_common(eval_rank, args, true, true);
  eval_rank->callback([&] { handler = cmd_eval_rank; });

  auto* enumerate = app.add_subcommand(
      "enumerate", "list every subnet with its structural metrics");
  add_common(enumerate, args, false, false);
  enumerate->callback([&] { handler = cmd_enumerate; });

  auto* desk_oracle = app.add_subcommand(
      "desk-oracle", "train every subnet stand-alone to build ground truth");
  add_common(desk_oracle, args, false, false);
  desk_oracle->callback([&] { handler = cmd_desk_oracle; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return handler(args);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
