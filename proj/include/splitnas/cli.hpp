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

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitnas/oracle.hpp"
#include "splitnas/search.hpp"

namespace splitnas {

// One human-editable key = value document configures a whole run; every
// training hyperparameter has a named key. Presets fill the defaults:
// "desk" is sized for the bundled synthetic task on one core, "paper" keeps
// the full-scale recipe for documentation fidelity.
struct RunConfig {
  std::string space_path;
  CriterionKind criterion = CriterionKind::kNonlinearCount;
  int K = 3;
  int G = 2;
  ProbeSpec probe;

  std::string train_preset = "desk";  // desk | paper
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr0;
  std::optional<double> momentum;
  std::optional<double> weight_decay;
  std::string train_mode = "balanced";  // balanced | uniform

  EvoConfig evo;
  std::string fitness = "accuracy";  // accuracy | loss

  std::string dataset = "synthetic";  // "synthetic" or a dataset directory
  SyntheticSpec synth;

  std::string oracle_path;
  std::string oracle_dataset;
  OracleProtocol oracle_protocol;

  std::uint64_t seed = 0;
  std::string out_dir = "run-out";
  int top_m = 150;
  std::uint64_t sample_budget = 20000;
  int eval_batch = 256;
  int rank_sample = 0;  // 0 = rank every oracle row
  int threads = 1;
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true/false, got '" + v + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& in,
                                  const std::string& origin) {
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::strip(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = detail::strip(line.substr(0, eq));
    std::string value = detail::strip(line.substr(eq + 1));
    try {
      if (key == "space") cfg.space_path = value;
      else if (key == "criterion") cfg.criterion = criterion_from_name(value);
      else if (key == "k") cfg.K = std::stoi(value);
      else if (key == "g") cfg.G = std::stoi(value);
      else if (key == "probe_samples") cfg.probe.samples = std::stoi(value);
      else if (key == "probe_seed") cfg.probe.seed = std::stoull(value);
      else if (key == "train_preset") cfg.train_preset = value;
      else if (key == "epochs") cfg.epochs = std::stoi(value);
      else if (key == "batch_size") cfg.batch_size = std::stoi(value);
      else if (key == "lr0") cfg.lr0 = std::stod(value);
      else if (key == "momentum") cfg.momentum = std::stod(value);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
      else if (key == "train_mode") cfg.train_mode = value;
      else if (key == "evo_population") cfg.evo.population = std::stoi(value);
      else if (key == "evo_generations")
        cfg.evo.generations = std::stoi(value);
      else if (key == "evo_parents") cfg.evo.parents = std::stoi(value);
      else if (key == "evo_crossover")
        cfg.evo.crossover_children = std::stoi(value);
      else if (key == "evo_mutation")
        cfg.evo.mutation_children = std::stoi(value);
      else if (key == "evo_mutation_prob")
        cfg.evo.mutation_prob = std::stod(value);
      else if (key == "evo_retry") cfg.evo.retry_budget = std::stoi(value);
      else if (key == "constraint_metric") {
        SearchConstraint c = cfg.evo.constraint.value_or(SearchConstraint{});
        if (value == "flops") c.metric = SearchConstraint::Metric::kFlops;
        else if (value == "params")
          c.metric = SearchConstraint::Metric::kParams;
        else
          throw ConfigError("constraint_metric must be flops or params");
        cfg.evo.constraint = c;
      } else if (key == "constraint_max") {
        SearchConstraint c = cfg.evo.constraint.value_or(SearchConstraint{});
        c.max_value = std::stod(value);
        cfg.evo.constraint = c;
      } else if (key == "fitness") cfg.fitness = value;
      else if (key == "dataset") cfg.dataset = value;
      else if (key == "synth_classes") cfg.synth.num_classes = std::stoi(value);
      else if (key == "synth_channels") cfg.synth.channels = std::stoi(value);
      else if (key == "synth_height") cfg.synth.height = std::stoi(value);
      else if (key == "synth_width") cfg.synth.width = std::stoi(value);
      else if (key == "synth_train") cfg.synth.train_count = std::stoi(value);
      else if (key == "synth_test") cfg.synth.test_count = std::stoi(value);
      else if (key == "synth_noise") cfg.synth.noise = std::stod(value);
      else if (key == "oracle") cfg.oracle_path = value;
      else if (key == "oracle_dataset") cfg.oracle_dataset = value;
      else if (key == "oracle_epochs")
        cfg.oracle_protocol.epochs = std::stoi(value);
      else if (key == "oracle_batch_size")
        cfg.oracle_protocol.batch_size = std::stoi(value);
      else if (key == "oracle_lr0") cfg.oracle_protocol.lr0 = std::stod(value);
      else if (key == "oracle_seeds")
        cfg.oracle_protocol.seeds_per_subnet = std::stoi(value);
      else if (key == "oracle_limit")
        cfg.oracle_protocol.limit = std::stoull(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "out") cfg.out_dir = value;
      else if (key == "top_m") cfg.top_m = std::stoi(value);
      else if (key == "sample_budget") cfg.sample_budget = std::stoull(value);
      else if (key == "eval_batch") cfg.eval_batch = std::stoi(value);
      else if (key == "rank_sample") cfg.rank_sample = std::stoi(value);
      else if (key == "threads") cfg.threads = std::stoi(value);
      else
        throw ConfigError("unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": bad number in '" + value + "'");
    } catch (const std::out_of_range&) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": number out of range in '" + value + "'");
    } catch (const ConfigError& e) {
      std::string what = e.what();
      if (what.rfind(origin, 0) == 0) throw;
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + what);
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  return parse_run_config(in, path);
}

inline void validate_run_config(const RunConfig& cfg) {
  if (cfg.space_path.empty())
    throw ConfigError("config needs a 'space' path");
  if (!std::filesystem::exists(cfg.space_path))
    throw ConfigError("space definition does not exist: " + cfg.space_path);
  if (cfg.G != 1 && cfg.G != 2 && cfg.G != 4)
    throw ConfigError("g must be 1, 2, or 4; got " + std::to_string(cfg.G));
  if (cfg.K < 1) throw ConfigError("k must be positive");
  if (cfg.train_preset != "desk" && cfg.train_preset != "paper")
    throw ConfigError("train_preset must be desk or paper");
  if (cfg.train_mode != "balanced" && cfg.train_mode != "uniform")
    throw ConfigError("train_mode must be balanced or uniform");
  if (cfg.fitness != "accuracy" && cfg.fitness != "loss")
    throw ConfigError("fitness must be accuracy or loss");
  if (cfg.dataset != "synthetic" && !std::filesystem::exists(cfg.dataset))
    throw ConfigError("dataset directory does not exist: " + cfg.dataset);
  if (!cfg.oracle_path.empty() && !std::filesystem::exists(cfg.oracle_path))
    throw ConfigError("oracle table does not exist: " + cfg.oracle_path);
  if (cfg.threads < 1) throw ConfigError("threads must be positive");
}

inline TrainConfig make_train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train_preset == "paper" ? TrainConfig::paper_preset()
                                              : TrainConfig::desk_preset();
  if (cfg.epochs) t.epochs = *cfg.epochs;
  if (cfg.batch_size) t.batch_size = *cfg.batch_size;
  if (cfg.lr0) t.lr0 = *cfg.lr0;
  if (cfg.momentum) t.momentum = *cfg.momentum;
  if (cfg.weight_decay) t.weight_decay = *cfg.weight_decay;
  t.mode = cfg.train_mode == "uniform" ? TrainConfig::Mode::kUniformOneShot
                                       : TrainConfig::Mode::kBalanced;
  t.seed = derive_seed(cfg.seed, "train");
  return t;
}

// ---------------------------------------------------------------------------
// Output artifacts
// ---------------------------------------------------------------------------

inline std::uint64_t file_fnv64(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot hash missing file: " + path);
  std::uint64_t h = kFnvOffset;
  char buf[4096];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
  return h;
}

// Every command finishes by writing a manifest listing its artifacts with
// content hashes, so downstream stages and humans can verify what a run
// produced.
class Manifest {
 public:
  Manifest(std::string command, std::uint64_t seed, std::string dir)
      : command_(std::move(command)), seed_(seed), dir_(std::move(dir)) {}

  void add(const std::string& relpath) {
    std::string full = dir_ + "/" + relpath;
    std::ostringstream hex;
    hex << std::hex << file_fnv64(full);
    entries_.push_back({relpath, hex.str(),
                        static_cast<std::uint64_t>(
                            std::filesystem::file_size(full))});
  }

  void save() const {
    nlohmann::json doc;
    doc["command"] = command_;
    doc["seed"] = seed_;
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& e : entries_)
      arts.push_back({{"path", e.path}, {"fnv64", e.hash},
                      {"bytes", e.bytes}});
    doc["artifacts"] = arts;
    std::string path = dir_ + "/manifest.json";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest: " + path);
    os << doc.dump(2) << '\n';
    if (!os) throw IoError("manifest write failed: " + path);
  }

 private:
  struct Entry {
    std::string path;
    std::string hash;
    std::uint64_t bytes;
  };
  std::string command_;
  std::uint64_t seed_;
  std::string dir_;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// CSV emission. Numbers print with max_digits10 precision so re-running a
// command reproduces files byte for byte.
// ---------------------------------------------------------------------------

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& command,
            std::uint64_t seed, const std::string& header)
      : path_(path), os_(path, std::ios::trunc) {
    if (!os_) throw IoError("cannot open for writing: " + path);
    os_.precision(17);
    os_ << "# stage=" << command << " seed=" << seed << '\n';
    os_ << header << '\n';
  }

  template <typename... Fields>
  void row(const Fields&... fields) {
    bool first = true;
    ((os_ << (first ? "" : ","), first = false, os_ << fields), ...);
    os_ << '\n';
  }

  void close() {
    os_.flush();
    if (!os_) throw IoError("write failed: " + path_);
    os_.close();
  }

 private:
  std::string path_;
  std::ofstream os_;
};

inline void write_train_log(const std::string& path,
                            const std::string& command, std::uint64_t seed,
                            const std::vector<TrainLogRow>& rows) {
  CsvWriter csv(path, command, seed,
                "epoch,step,supernet_k,subnet_code,loss,lr");
  for (const TrainLogRow& r : rows)
    csv.row(r.epoch, r.step, r.supernet_k, r.subnet_code, r.loss, r.lr);
  csv.close();
}

// Per-epoch mean loss per supernet, summarized from the step log.
inline void write_epoch_summary(const std::string& path,
                                const std::string& command,
                                std::uint64_t seed,
                                const std::vector<TrainLogRow>& rows) {
  CsvWriter csv(path, command, seed, "epoch,lr,supernet_k,mean_loss");
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  std::map<int, double> last_lr;
  for (const TrainLogRow& r : rows) {
    auto& a = acc[{r.epoch, r.supernet_k}];
    a.first += r.loss;
    a.second += 1;
    last_lr[r.epoch] = r.lr;
  }
  for (const auto& [key, sum] : acc)
    csv.row(key.first, last_lr[key.first], key.second,
            sum.first / sum.second);
  csv.close();
}

inline void write_history(const std::string& path, const std::string& command,
                          std::uint64_t seed,
                          const std::vector<HistoryRow>& rows) {
  CsvWriter csv(path, command, seed,
                "generation,rank,subnet_code,fitness,cost");
  for (const HistoryRow& r : rows)
    csv.row(r.generation, r.rank, r.code, r.fitness, r.cost);
  csv.close();
}

inline void write_stats(const std::string& dir, const std::string& command,
                        std::uint64_t seed, const PartitionStats& stats,
                        Manifest& manifest) {
  {
    CsvWriter csv(dir + "/stats_histograms.csv", command, seed,
                  "supernet,metric,bin_lo,bin_hi,count");
    for (const HistogramRow& r : stats.histograms)
      csv.row(r.supernet_k, r.metric, r.lo, r.hi, r.count);
    csv.close();
    manifest.add("stats_histograms.csv");
  }
  {
    CsvWriter csv(dir + "/stats_medians.csv", command, seed,
                  "supernet,metric,median,count");
    for (const MedianRow& r : stats.medians)
      csv.row(r.supernet_k, r.metric, r.median, r.count);
    csv.close();
    manifest.add("stats_medians.csv");
  }
}

inline void write_rank_report(const std::string& dir,
                              const std::string& command, std::uint64_t seed,
                              const RankReport& report, Manifest& manifest) {
  {
    CsvWriter csv(dir + "/rank_scatter.csv", command, seed,
                  "subnet_code,oracle_acc,estimated_acc,supernet_k");
    for (const ScatterRow& r : report.scatter)
      csv.row(r.code, r.oracle_accuracy, r.estimate, r.supernet_k);
    csv.close();
    manifest.add("rank_scatter.csv");
  }
  {
    CsvWriter csv(dir + "/rank_summary.csv", command, seed, "key,value");
    csv.row("tau_all", report.tau_all);
    csv.row("tau_top_m", report.tau_top);
    csv.row("top_m_requested", report.top_m_requested);
    csv.row("top_m_used", report.top_m_used);
    for (const MedianRow& m : report.oracle_medians)
      csv.row("median_supernet_" + std::to_string(m.supernet_k), m.median);
    csv.close();
    manifest.add("rank_summary.csv");
  }
}

}  // namespace splitnas
