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

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace splitnas {

// ---------------------------------------------------------------------------
// Errors. Every failure mode surfaces as one of these so the CLI can map
// them onto exit codes (config/usage -> 2, everything else -> 1).
// ---------------------------------------------------------------------------

// Bad input data or violated precondition.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed configuration, space definition, or command usage.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Partition construction or assignment failure.
struct PartitionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller broke an inter-module contract (e.g. wrong supernet index).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A resource constraint cannot be satisfied within the retry budget.
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File I/O or serialization failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Hashing and seed derivation. All randomness in the toolkit flows from one
// root seed; per-stage and per-step streams are derived with splitmix64 so
// runs are reproducible and resumable without serializing generator state.
// ---------------------------------------------------------------------------

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(const void* bytes, std::size_t len,
                             std::uint64_t h = kFnvOffset) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

// Without this exact match, a string literal plus a chain value would bind
// to the (bytes, len) overload above and read `h` bytes.
inline std::uint64_t fnv1a64(const char* s, std::uint64_t h = kFnvOffset) {
  return fnv1a64(std::string_view(s), h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  return splitmix64(root ^ fnv1a64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t n) {
  return splitmix64(root ^ splitmix64(n));
}

// ---------------------------------------------------------------------------
// Rng: a thin deterministic generator. Distribution code is written out
// here instead of using <random> adaptors because their output is
// implementation-defined and we promise bit-stable streams across builds.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ kFnvOffset)) {}

  std::uint64_t next() {
    // xorshift* keeps the generator self-contained and fast.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw ValidationError("uniform_below: n must be positive");
    std::uint64_t x, r;
    do {
      x = next();
      r = x % n;
    } while (x - r > std::uint64_t(0) - n);
    return r;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; one spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// parallel_for: fixed block assignment so results never depend on
// scheduling. fn(i) must only write state owned by index i.
// ---------------------------------------------------------------------------
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t workers = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline int default_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace splitnas
