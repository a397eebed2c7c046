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

#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "splitnas/dataset.hpp"
#include "splitnas/supernet.hpp"

namespace splitnas {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 1024;
  double lr0 = 0.12;
  double momentum = 0.9;
  double weight_decay = 4e-5;
  std::uint64_t seed = 0;
  enum class Mode { kBalanced, kUniformOneShot } mode = Mode::kBalanced;
  // Cap on steps executed by one call; 0 runs to the epoch budget. Lets a
  // caller checkpoint mid-schedule without moving the lr horizon.
  long long step_limit = 0;

  // Large-scale recipe; needs real hardware and a real dataset.
  static TrainConfig paper_preset() { return TrainConfig{}; }

  // Shrunk recipe sized for the bundled synthetic task on one core.
  static TrainConfig desk_preset() {
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 64;
    cfg.lr0 = 0.05;
    return cfg;
  }
};

// One subnet per subspace, each uniform within its subspace. Rejection
// sampling from the whole space: a draw landing in bucket k is uniform over
// bucket k, and with K = 1 the first draw is always accepted, which makes
// the balanced step literally the uniform one-shot step.
inline std::vector<Subnet> sample_balanced(const SearchSpace& space,
                                           const Partition& partition,
                                           Rng& rng,
                                           const ProbeFn* probe = nullptr) {
  constexpr int kMaxDraws = 100000;
  Criterion criterion = partition.criterion();
  std::vector<Subnet> picks(partition.K);
  for (int k = 0; k < partition.K; ++k) {
    bool found = false;
    for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
      Subnet s = uniform_subnet(space, rng);
      if (assign(partition, score(criterion, space, s, probe)) == k) {
        picks[k] = std::move(s);
        found = true;
        break;
      }
    }
    if (!found)
      throw PartitionError("subspace " + std::to_string(k) +
                           " produced no subnet in " +
                           std::to_string(kMaxDraws) +
                           " draws; it is empty or vanishingly small");
  }
  return picks;
}

struct TrainLogRow {
  int epoch = 0;
  long long step = 0;
  int supernet_k = 0;
  std::uint64_t subnet_code = 0;
  double loss = 0;
  double lr = 0;
};

using TrainSink = std::function<void(const TrainLogRow&)>;

namespace detail {

// Forward + backward + SGD on one (net, subnet, batch) triple. Returns the
// batch loss.
template <typename T>
double update_one(ParamSet<T>& params, SgdState<T>& state,
                  const SearchSpace& space, const Subnet& subnet,
                  const Tensor<T>& batch, const std::vector<int>& labels,
                  double lr, double momentum, double weight_decay) {
  Tape<T> tape(/*train_mode=*/true);
  ForwardResult<T> out = forward_network(tape, space, subnet, params, batch);
  auto loss = tape.softmax_cross_entropy(out.logits, labels);
  tape.backward(loss);
  std::vector<Tensor<T>> grads;
  grads.reserve(out.used_vars.size());
  for (auto v : out.used_vars) grads.push_back(tape.grad(v));
  sgd_step(params, out.used_names, grads, state, lr, momentum, weight_decay);
  return static_cast<double>(tape.value(loss).data[0]);
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                            int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(derive_seed(seed, "shuffle"), std::uint64_t(epoch)));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_below(i)]);
  return order;
}

}  // namespace detail

template <typename T>
struct TrainResult {
  std::vector<TrainLogRow> rows;
  long long steps_run = 0;
};

// Trains the store on `data` for cfg.epochs total epochs, resuming from
// store.steps. Every step draws through a stream derived from the global
// step index, so a resumed run replays the exact trajectory of an
// uninterrupted one. In balanced mode each step applies one update per
// supernet on the same batch; in uniform mode (K = 1 only) one update to
// the single supernet.
template <typename T>
TrainResult<T> train_supernets(SupernetStore<T>& store,
                               const SearchSpace& space,
                               const Partition& partition,
                               const Dataset<T>& data, const TrainConfig& cfg,
                               const ProbeFn* probe = nullptr,
                               const TrainSink& sink = nullptr) {
  if (store.partition_fp != partition_fingerprint(partition))
    throw ContractError("store and partition do not match");
  if (store.space_fp != space_fingerprint(space))
    throw ContractError("store and search space do not match");
  if (data.num_classes != space.num_classes ||
      data.channels != space.input_shape[0] ||
      data.height != space.input_shape[1] ||
      data.width != space.input_shape[2])
    throw ValidationError("dataset geometry does not match the search space");
  if (cfg.mode == TrainConfig::Mode::kUniformOneShot && store.K != 1)
    throw ContractError("uniform one-shot training requires K = 1, store has " +
                        std::to_string(store.K));
  if (cfg.batch_size < 2)
    throw ValidationError("batch size must be at least 2 for batch norm");
  if (cfg.step_limit < 0)
    throw ValidationError("step limit cannot be negative");
  long long spe =
      static_cast<long long>(data.size()) / cfg.batch_size;
  if (spe < 1)
    throw ValidationError("dataset smaller than one batch");
  long long total_steps = spe * cfg.epochs;
  Criterion criterion = partition.criterion();
  std::uint64_t draw_root = derive_seed(cfg.seed, "draw");

  TrainResult<T> result;
  while (store.steps < total_steps &&
         (cfg.step_limit == 0 || result.steps_run < cfg.step_limit)) {
    long long step = store.steps;
    int epoch = static_cast<int>(step / spe);
    long long pos = (step % spe) * cfg.batch_size;
    std::vector<std::size_t> order =
        detail::epoch_order(data.size(), cfg.seed, epoch);
    std::vector<std::size_t> idx(order.begin() + pos,
                                 order.begin() + pos + cfg.batch_size);
    Tensor<T> batch = data.batch(idx);
    std::vector<int> labels = data.batch_labels(idx);
    double lr = cosine_lr(step, total_steps, cfg.lr0);

    Rng rng(derive_seed(draw_root, std::uint64_t(step)));
    std::vector<Subnet> picks;
    if (cfg.mode == TrainConfig::Mode::kBalanced) {
      picks = sample_balanced(space, partition, rng, probe);
    } else {
      Subnet s = uniform_subnet(space, rng);
      int k = assign(partition, score(criterion, space, s, probe));
      if (k != 0)
        throw ContractError("uniform one-shot draw left subspace 0");
      picks.push_back(std::move(s));
    }
    for (int k = 0; k < static_cast<int>(picks.size()); ++k) {
      double loss = detail::update_one(store.nets[k], store.opt[k], space,
                                       picks[k], batch, labels, lr,
                                       cfg.momentum, cfg.weight_decay);
      store.update_counts[k] += 1;
      TrainLogRow row{epoch, step, k, encode(space, picks[k]), loss, lr};
      if (sink) sink(row);
      result.rows.push_back(row);
    }
    store.steps += 1;
    result.steps_run += 1;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Standalone (single subnet, full width) training and evaluation
// ---------------------------------------------------------------------------

// Top-1 accuracy as a fraction in [0, 1]. Batch norm uses current-batch
// statistics even at eval time, so the fixed batching below is part of the
// metric's definition.
template <typename T>
double top1_accuracy(const SearchSpace& space, const Subnet& subnet,
                     const ParamSet<T>& params, const Dataset<T>& data,
                     int eval_batch = 256) {
  if (data.size() == 0) throw ValidationError("empty evaluation set");
  std::size_t correct = 0, total = 0;
  for (std::size_t start = 0; start < data.size(); start += eval_batch) {
    std::size_t count = std::min<std::size_t>(eval_batch, data.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    Tensor<T> batch = data.batch(idx);
    std::vector<int> labels = data.batch_labels(idx);
    Tape<T> tape(/*train_mode=*/false);
    ForwardResult<T> out =
        forward_network(tape, space, subnet, params, batch);
    const Tensor<T>& logits = tape.value(out.logits);
    int classes = logits.shape[1];
    for (std::size_t b = 0; b < count; ++b) {
      const T* row = logits.data.data() + b * classes;
      int best = 0;
      for (int c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
      correct += (best == labels[b]);
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

// Trains one subnet from scratch at full width with the same optimizer
// recipe as the supernets.
template <typename T>
ParamSet<T> train_single(const SearchSpace& space, const Subnet& subnet,
                         const Dataset<T>& data, int epochs, int batch_size,
                         double lr0, double momentum, double weight_decay,
                         std::uint64_t seed) {
  if (batch_size < 2)
    throw ValidationError("batch size must be at least 2 for batch norm");
  long long spe = static_cast<long long>(data.size()) / batch_size;
  if (spe < 1) throw ValidationError("dataset smaller than one batch");
  ParamSet<T> params = init_params<T>(space, 1, derive_seed(seed, "init"));
  SgdState<T> state;
  long long total_steps = spe * epochs;
  for (long long step = 0; step < total_steps; ++step) {
    int epoch = static_cast<int>(step / spe);
    long long pos = (step % spe) * batch_size;
    std::vector<std::size_t> order =
        detail::epoch_order(data.size(), seed, epoch);
    std::vector<std::size_t> idx(order.begin() + pos,
                                 order.begin() + pos + batch_size);
    double lr = cosine_lr(step, total_steps, lr0);
    detail::update_one(params, state, space, subnet, data.batch(idx),
                       data.batch_labels(idx), lr, momentum, weight_decay);
  }
  return params;
}

}  // namespace splitnas
