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

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "splitnas/network.hpp"
#include "splitnas/partition.hpp"

namespace splitnas {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// K channel-reduced supernets plus their optimizer state. Each supernet
// owns a full stem/classifier copy; nothing is shared across k.
template <typename T>
struct SupernetStore {
  int K = 1;
  int G = 1;
  std::uint64_t seed = 0;
  std::uint64_t partition_fp = 0;
  std::uint64_t space_fp = 0;
  long long steps = 0;
  std::vector<ParamSet<T>> nets;
  std::vector<SgdState<T>> opt;
  std::vector<long long> update_counts;
};

template <typename T>
SupernetStore<T> init_supernets(const SearchSpace& space,
                                const Partition& partition, int G,
                                std::uint64_t seed) {
  if (partition.space_fp != space_fingerprint(space))
    throw ContractError("partition was built for a different search space");
  SupernetStore<T> store;
  store.K = partition.K;
  store.G = G;
  store.seed = seed;
  store.partition_fp = partition_fingerprint(partition);
  store.space_fp = partition.space_fp;
  store.nets.reserve(store.K);
  store.opt.resize(store.K);
  store.update_counts.assign(store.K, 0);
  for (int k = 0; k < store.K; ++k)
    store.nets.push_back(
        init_params<T>(space, G, derive_seed(seed, std::uint64_t(k))));
  return store;
}

template <typename T>
ParamCounts total_params(const SearchSpace& space,
                         const SupernetStore<T>& store) {
  ParamCounts one = param_counts(space, store.G);
  ParamCounts all;
  std::uint64_t k = static_cast<std::uint64_t>(store.K);
  all.cell_conv = one.cell_conv * k;
  all.stem_conv = one.stem_conv * k;
  all.reduction_conv = one.reduction_conv * k;
  all.linear = one.linear * k;
  all.bn_affine = one.bn_affine * k;
  all.bias = one.bias * k;
  return all;
}

// Inference through supernet k. Refuses a subnet that the partition maps
// elsewhere; the caller resolves k with assign() first.
template <typename T>
Tensor<T> forward_subnet(const SupernetStore<T>& store,
                         const SearchSpace& space, const Partition& partition,
                         const Subnet& subnet, int k, const Tensor<T>& input,
                         const ProbeFn* probe = nullptr) {
  if (store.partition_fp != partition_fingerprint(partition))
    throw ContractError(
        "supernet store was trained under a different partition");
  if (k < 0 || k >= store.K)
    throw ValidationError("supernet index out of range");
  int expected = assign(partition, score(partition.criterion(), space, subnet,
                                         probe));
  if (expected != k)
    throw ContractError("subnet " + std::to_string(encode(space, subnet)) +
                        " belongs to supernet " + std::to_string(expected) +
                        ", not " + std::to_string(k));
  Tape<T> tape(/*train_mode=*/false);
  ForwardResult<T> out =
      forward_network(tape, space, subnet, store.nets[k], input);
  return tape.value(out.logits);
}

// Distinct ReLU activation sign patterns over a Gaussian probe batch.
// Weights come from a fixed name-derived init shared by every subnet, so
// scores are comparable across the space.
inline double count_linear_regions(const SearchSpace& space,
                                   const Subnet& subnet,
                                   const ProbeSpec& probe) {
  validate_subnet(space, subnet);
  ParamSet<float> params =
      init_params<float>(space, 1, derive_seed(probe.seed, "probe-params"));
  Tensor<float> batch({probe.samples, space.input_shape[0],
                       space.input_shape[1], space.input_shape[2]});
  Rng rng(derive_seed(probe.seed, "probe-batch"));
  for (float& v : batch.data) v = static_cast<float>(rng.normal());
  Tape<float> tape(/*train_mode=*/false);
  ActivationRecorder recorder;
  tape.set_recorder(&recorder);
  forward_network(tape, space, subnet, params, batch);
  // A network with no ReLUs is one linear region: every sample shares the
  // empty pattern.
  std::size_t n = recorder.distinct_patterns();
  return static_cast<double>(n == 0 ? 1 : n);
}

inline ProbeFn linear_region_probe() {
  return [](const SearchSpace& space, const Subnet& subnet,
            const ProbeSpec& probe) {
    return count_linear_regions(space, subnet, probe);
  };
}

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'N', 'C', 'K',
                                             'P', 'T', '0', '1'};

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_raw(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  std::uint32_t n = read_raw<std::uint32_t>(is);
  if (n > (1u << 20)) throw IoError("checkpoint name length implausible");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("checkpoint truncated");
  return s;
}

template <typename T>
void write_tensor(std::ostream& os, const std::string& name,
                  const Tensor<T>& t) {
  write_string(os, name);
  write_raw(os, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) write_raw(os, static_cast<std::int64_t>(d));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(T)));
}

template <typename T>
std::pair<std::string, Tensor<T>> read_tensor(std::istream& is) {
  std::string name = read_string(is);
  std::uint32_t ndim = read_raw<std::uint32_t>(is);
  if (ndim > 8) throw IoError("checkpoint tensor rank implausible");
  std::vector<int> shape(ndim);
  for (std::uint32_t d = 0; d < ndim; ++d)
    shape[d] = static_cast<int>(read_raw<std::int64_t>(is));
  Tensor<T> t(shape);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(T)));
  if (!is) throw IoError("checkpoint truncated");
  return {name, std::move(t)};
}

}  // namespace detail

// Binary checkpoint holding weights and momentum buffers. A resumed run
// continues the step counter, so the remaining schedule and sampling
// streams replay exactly.
template <typename T>
void save_checkpoint(const std::string& path, const SupernetStore<T>& store) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_raw(os, static_cast<std::uint32_t>(sizeof(T)));
  detail::write_raw(os, static_cast<std::int32_t>(store.K));
  detail::write_raw(os, static_cast<std::int32_t>(store.G));
  detail::write_raw(os, store.seed);
  detail::write_raw(os, store.partition_fp);
  detail::write_raw(os, store.space_fp);
  detail::write_raw(os, static_cast<std::int64_t>(store.steps));
  for (int k = 0; k < store.K; ++k)
    detail::write_raw(os, static_cast<std::int64_t>(store.update_counts[k]));
  for (int k = 0; k < store.K; ++k) {
    const ParamSet<T>& net = store.nets[k];
    const ParamSet<T>& vel = store.opt[k].velocity;
    detail::write_raw(os, static_cast<std::uint64_t>(net.size()));
    for (std::size_t i = 0; i < net.size(); ++i)
      detail::write_tensor(os, net.names[i], net.values[i]);
    detail::write_raw(os, static_cast<std::uint64_t>(vel.size()));
    for (std::size_t i = 0; i < vel.size(); ++i)
      detail::write_tensor(os, vel.names[i], vel.values[i]);
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

template <typename T>
SupernetStore<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw IoError("not a supernet checkpoint: " + path);
  std::uint32_t dtype = detail::read_raw<std::uint32_t>(is);
  if (dtype != sizeof(T))
    throw IoError("checkpoint element width " + std::to_string(dtype) +
                  " does not match requested width " +
                  std::to_string(sizeof(T)));
  SupernetStore<T> store;
  store.K = detail::read_raw<std::int32_t>(is);
  store.G = detail::read_raw<std::int32_t>(is);
  if (store.K < 1 || store.K > 4096 || store.G < 1)
    throw IoError("checkpoint header implausible");
  store.seed = detail::read_raw<std::uint64_t>(is);
  store.partition_fp = detail::read_raw<std::uint64_t>(is);
  store.space_fp = detail::read_raw<std::uint64_t>(is);
  store.steps = detail::read_raw<std::int64_t>(is);
  store.update_counts.resize(store.K);
  for (int k = 0; k < store.K; ++k)
    store.update_counts[k] = detail::read_raw<std::int64_t>(is);
  store.nets.resize(store.K);
  store.opt.resize(store.K);
  for (int k = 0; k < store.K; ++k) {
    std::uint64_t n = detail::read_raw<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n; ++i) {
      auto [name, t] = detail::read_tensor<T>(is);
      store.nets[k].add(name, std::move(t));
    }
    std::uint64_t m = detail::read_raw<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < m; ++i) {
      auto [name, t] = detail::read_tensor<T>(is);
      store.opt[k].velocity.add(name, std::move(t));
    }
  }
  return store;
}

template <typename T>
std::uint64_t store_checksum(const SupernetStore<T>& store) {
  std::uint64_t h = kFnvOffset;
  h = fnv1a64(&store.K, sizeof(store.K), h);
  h = fnv1a64(&store.G, sizeof(store.G), h);
  h = fnv1a64(&store.steps, sizeof(store.steps), h);
  for (int k = 0; k < store.K; ++k) {
    h = fnv1a64(&store.update_counts[k], sizeof(long long), h);
    std::uint64_t nc = store.nets[k].checksum();
    std::uint64_t vc = store.opt[k].velocity.checksum();
    h = fnv1a64(&nc, sizeof(nc), h);
    h = fnv1a64(&vc, sizeof(vc), h);
  }
  return h;
}

}  // namespace splitnas
