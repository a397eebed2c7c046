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
#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "splitnas/common.hpp"

namespace splitnas {

// ---------------------------------------------------------------------------
// Candidate operations
// ---------------------------------------------------------------------------

// Which cost formula applies to an operation.
enum class FlopsModel { kConv, kPool, kSkip, kNone };

struct OpSpec {
  std::string name;
  int kernel_size = 0;         // filter side in pixels; 0 for weightless ops
  int nonlinearity_count = 0;  // ReLU applications per use of this op
  bool has_weights = false;
  FlopsModel flops_model = FlopsModel::kNone;
};

// The built-in vocabulary. Cell ops follow the ReLU-conv-BN motif, so each
// conv op contributes exactly one nonlinearity.
inline const std::vector<OpSpec>& builtin_ops() {
  static const std::vector<OpSpec> kOps = {
      {"none", 0, 0, false, FlopsModel::kNone},
      {"skip_connect", 0, 0, false, FlopsModel::kSkip},
      {"nor_conv_1x1", 1, 1, true, FlopsModel::kConv},
      {"nor_conv_3x3", 3, 1, true, FlopsModel::kConv},
      {"avg_pool_3x3", 0, 0, false, FlopsModel::kPool},
  };
  return kOps;
}

inline const OpSpec& builtin_op(const std::string& name) {
  for (const OpSpec& op : builtin_ops())
    if (op.name == name) return op;
  throw ConfigError("unknown operation name: " + name);
}

// ---------------------------------------------------------------------------
// Search space: a repeated DAG cell inside a fixed macro plan
// (stem conv -> stages of cells, stride-2 reduction between stages ->
// global average pool -> classifier).
// ---------------------------------------------------------------------------

struct EdgeSlot {
  int src = 0;
  int dst = 0;
  std::vector<OpSpec> candidates;
};

struct SearchSpace {
  std::string name;
  std::vector<EdgeSlot> edges;       // declaration order fixes the encoding
  int cell_repeats = 1;              // cells per stage
  std::vector<int> stage_channels;   // base width per stage
  std::array<int, 3> input_shape{};  // channels, height, width
  int num_classes = 2;

  int num_nodes() const {
    int n = 0;
    for (const EdgeSlot& e : edges) n = std::max(n, std::max(e.src, e.dst));
    return n + 1;
  }
  int num_stages() const { return static_cast<int>(stage_channels.size()); }
};

// One architecture: an operation index per edge slot.
struct Subnet {
  std::vector<int> choices;

  bool operator==(const Subnet& o) const { return choices == o.choices; }
};

struct StructMetrics {
  int nonlinearity_count = 0;
  std::uint64_t flops = 0;   // whole network, stem and classifier included
  std::uint64_t params = 0;  // weighted cell ops chosen by the subnet
};

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void validate_space(const SearchSpace& space) {
  if (space.edges.empty()) throw ValidationError("space has no edges");
  for (std::size_t j = 0; j < space.edges.size(); ++j) {
    const EdgeSlot& e = space.edges[j];
    if (e.candidates.size() < 2)
      throw ValidationError("edge " + std::to_string(j) +
                            " needs at least 2 candidate ops");
    if (e.src >= e.dst)
      throw ValidationError("edge " + std::to_string(j) +
                            " must go from a lower to a higher node");
    for (const OpSpec& op : e.candidates) {
      if (op.has_weights && op.kernel_size < 1)
        throw ValidationError("weighted op " + op.name + " needs kernel >= 1");
      if (!op.has_weights && op.kernel_size != 0)
        throw ValidationError("weightless op " + op.name +
                              " must have kernel_size 0");
    }
  }
  if (space.cell_repeats < 1)
    throw ValidationError("cell_repeats must be positive");
  if (space.stage_channels.empty())
    throw ValidationError("space needs at least one stage");
  for (int c : space.stage_channels)
    if (c < 1) throw ValidationError("stage channels must be positive");
  if (space.input_shape[0] < 1 || space.input_shape[1] < 1 ||
      space.input_shape[2] < 1)
    throw ValidationError("input shape must be positive");
  if (space.num_classes < 2)
    throw ValidationError("num_classes must be at least 2");
}

inline void validate_subnet(const SearchSpace& space, const Subnet& subnet) {
  if (subnet.choices.size() != space.edges.size())
    throw ValidationError(
        "subnet has " + std::to_string(subnet.choices.size()) +
        " choices, space has " + std::to_string(space.edges.size()) +
        " edges");
  for (std::size_t j = 0; j < subnet.choices.size(); ++j) {
    int c = subnet.choices[j];
    int arity = static_cast<int>(space.edges[j].candidates.size());
    if (c < 0 || c >= arity)
      throw ValidationError("choice " + std::to_string(c) + " at edge " +
                            std::to_string(j) + " out of range [0, " +
                            std::to_string(arity) + ")");
  }
}

inline void validate_divisor(const SearchSpace& space, int G) {
  if (G < 1) throw ValidationError("channel divisor G must be >= 1");
  for (int c : space.stage_channels)
    if (c % G != 0)
      throw ConfigError("stage width " + std::to_string(c) +
                        " is not divisible by G=" + std::to_string(G));
}

// ---------------------------------------------------------------------------
// Encoding: mixed radix over edge arities, edge 0 least significant.
// ---------------------------------------------------------------------------

// Total space size, clamped to `cap` to avoid overflow on huge spaces.
inline std::uint64_t space_size_clamped(const SearchSpace& space,
                                        std::uint64_t cap) {
  std::uint64_t n = 1;
  for (const EdgeSlot& e : space.edges) {
    std::uint64_t arity = e.candidates.size();
    if (n > cap / arity) return cap + 1;
    n *= arity;
  }
  return n;
}

inline std::uint64_t space_size(const SearchSpace& space) {
  std::uint64_t n = space_size_clamped(space, UINT64_MAX / 2);
  if (n > UINT64_MAX / 2) throw ValidationError("space size overflows");
  return n;
}

inline std::uint64_t encode(const SearchSpace& space, const Subnet& subnet) {
  validate_subnet(space, subnet);
  std::uint64_t code = 0, radix = 1;
  for (std::size_t j = 0; j < space.edges.size(); ++j) {
    code += radix * static_cast<std::uint64_t>(subnet.choices[j]);
    radix *= space.edges[j].candidates.size();
  }
  return code;
}

inline Subnet decode(const SearchSpace& space, std::uint64_t code) {
  std::uint64_t n = space_size(space);
  if (code >= n)
    throw ValidationError("code " + std::to_string(code) +
                          " out of range [0, " + std::to_string(n) + ")");
  Subnet subnet;
  subnet.choices.resize(space.edges.size());
  for (std::size_t j = 0; j < space.edges.size(); ++j) {
    std::uint64_t arity = space.edges[j].candidates.size();
    subnet.choices[j] = static_cast<int>(code % arity);
    code /= arity;
  }
  return subnet;
}

// All subnets in encoding order. Refuses spaces larger than `limit`; large
// spaces are meant for the evolutionary search instead.
inline std::vector<Subnet> enumerate(const SearchSpace& space,
                                     std::uint64_t limit) {
  std::uint64_t n = space_size_clamped(space, limit);
  if (n > limit)
    throw ValidationError(
        "space has more than " + std::to_string(limit) +
        " subnets; enumeration refused, use the evolutionary search");
  std::vector<Subnet> out;
  out.reserve(n);
  for (std::uint64_t c = 0; c < n; ++c) out.push_back(decode(space, c));
  return out;
}

inline Subnet uniform_subnet(const SearchSpace& space, Rng& rng) {
  Subnet s;
  s.choices.resize(space.edges.size());
  for (std::size_t j = 0; j < space.edges.size(); ++j)
    s.choices[j] =
        static_cast<int>(rng.uniform_below(space.edges[j].candidates.size()));
  return s;
}

// ---------------------------------------------------------------------------
// Structural metrics
// ---------------------------------------------------------------------------

// Nonlinearity count per unique cell (the macro multiplier is a constant
// shared by every subnet and is excluded).
inline int count_nonlinearities(const SearchSpace& space,
                                const Subnet& subnet) {
  validate_subnet(space, subnet);
  int d = 0;
  for (std::size_t j = 0; j < space.edges.size(); ++j)
    d += space.edges[j].candidates[subnet.choices[j]].nonlinearity_count;
  return d;
}

// Per-stage feature-map geometry under the fixed macro plan. Spatial size
// halves at each stride-2 reduction.
struct StageDims {
  int channels = 0;
  int height = 0;
  int width = 0;
};

inline std::vector<StageDims> stage_dims(const SearchSpace& space) {
  std::vector<StageDims> dims;
  int h = space.input_shape[1];
  int w = space.input_shape[2];
  for (int s = 0; s < space.num_stages(); ++s) {
    if (s > 0) {  // reduction conv: kernel 3, stride 2, padding 1
      h = (h + 2 - 3) / 2 + 1;
      w = (w + 2 - 3) / 2 + 1;
    }
    dims.push_back({space.stage_channels[s], h, w});
  }
  return dims;
}

// Cost convention: one multiply-accumulate = 2 FLOPs; BN, ReLU, and pooling
// cost 0. Counts are per input sample.
inline std::uint64_t conv_flops(std::uint64_t c_out, std::uint64_t c_in,
                                std::uint64_t kernel, std::uint64_t h_out,
                                std::uint64_t w_out) {
  return 2 * c_out * c_in * kernel * kernel * h_out * w_out;
}

inline std::uint64_t conv_params(std::uint64_t c_out, std::uint64_t c_in,
                                 std::uint64_t kernel) {
  return c_out * c_in * kernel * kernel;
}

// FLOPs of the chosen cell ops only, all cell instances.
inline std::uint64_t cell_flops(const SearchSpace& space, const Subnet& subnet,
                                int G) {
  validate_subnet(space, subnet);
  validate_divisor(space, G);
  std::uint64_t total = 0;
  for (const StageDims& d : stage_dims(space)) {
    std::uint64_t per_cell = 0;
    std::uint64_t c = d.channels / G;
    for (std::size_t j = 0; j < space.edges.size(); ++j) {
      const OpSpec& op = space.edges[j].candidates[subnet.choices[j]];
      if (op.flops_model == FlopsModel::kConv)
        per_cell += conv_flops(c, c, op.kernel_size, d.height, d.width);
    }
    total += per_cell * space.cell_repeats;
  }
  return total;
}

// Whole-network FLOPs: stem, cells, reductions, classifier.
inline std::uint64_t flops(const SearchSpace& space, const Subnet& subnet,
                           int G) {
  validate_divisor(space, G);
  std::vector<StageDims> dims = stage_dims(space);
  std::uint64_t total = conv_flops(dims[0].channels / G, space.input_shape[0],
                                   3, dims[0].height, dims[0].width);
  total += cell_flops(space, subnet, G);
  for (std::size_t s = 1; s < dims.size(); ++s)
    total += conv_flops(dims[s].channels / G, dims[s - 1].channels / G, 3,
                        dims[s].height, dims[s].width);
  // classifier: one dot product per class
  total += 2ull * space.num_classes * (dims.back().channels / G);
  return total;
}

// Weight elements of the chosen cell ops (the searchable parameters).
inline std::uint64_t param_count(const SearchSpace& space,
                                 const Subnet& subnet, int G) {
  validate_subnet(space, subnet);
  validate_divisor(space, G);
  std::uint64_t total = 0;
  for (const StageDims& d : stage_dims(space)) {
    std::uint64_t c = d.channels / G;
    for (std::size_t j = 0; j < space.edges.size(); ++j) {
      const OpSpec& op = space.edges[j].candidates[subnet.choices[j]];
      if (op.has_weights)
        total += conv_params(c, c, op.kernel_size) * space.cell_repeats;
    }
  }
  return total;
}

inline StructMetrics struct_metrics(const SearchSpace& space,
                                    const Subnet& subnet, int G) {
  return {count_nonlinearities(space, subnet), flops(space, subnet, G),
          param_count(space, subnet, G)};
}

// ---------------------------------------------------------------------------
// Fingerprint: identifies the space semantics so partitions and checkpoints
// can refuse to mix definitions.
// ---------------------------------------------------------------------------
inline std::uint64_t space_fingerprint(const SearchSpace& space) {
  std::ostringstream os;
  os << space.cell_repeats << '|' << space.num_classes << '|'
     << space.input_shape[0] << 'x' << space.input_shape[1] << 'x'
     << space.input_shape[2];
  for (int c : space.stage_channels) os << '|' << c;
  for (const EdgeSlot& e : space.edges) {
    os << '|' << e.src << '>' << e.dst;
    for (const OpSpec& op : e.candidates) os << ',' << op.name;
  }
  return fnv1a64(os.str());
}

// ---------------------------------------------------------------------------
// Space definition files: a small key-value document.
//
//   name = nas201
//   input_shape = 3 32 32
//   num_classes = 10
//   stage_channels = 16 32 64
//   cell_repeats = 5
//   ops = none skip_connect nor_conv_1x1 nor_conv_3x3 avg_pool_3x3
//   edge = 0 1
//   edge = 0 2 : skip_connect nor_conv_3x3     # per-edge override
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::string strip(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline SearchSpace parse_space(std::istream& in, const std::string& origin) {
  SearchSpace space;
  std::vector<OpSpec> default_ops;
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
      if (key == "name") {
        space.name = value;
      } else if (key == "input_shape") {
        auto v = detail::split_ws(value);
        if (v.size() != 3) throw ConfigError("input_shape needs 3 numbers");
        for (int i = 0; i < 3; ++i) space.input_shape[i] = std::stoi(v[i]);
      } else if (key == "num_classes") {
        space.num_classes = std::stoi(value);
      } else if (key == "stage_channels") {
        space.stage_channels.clear();
        for (const std::string& t : detail::split_ws(value))
          space.stage_channels.push_back(std::stoi(t));
      } else if (key == "cell_repeats") {
        space.cell_repeats = std::stoi(value);
      } else if (key == "ops") {
        default_ops.clear();
        for (const std::string& t : detail::split_ws(value))
          default_ops.push_back(builtin_op(t));
      } else if (key == "edge") {
        std::size_t colon = value.find(':');
        std::string head =
            colon == std::string::npos ? value : value.substr(0, colon);
        auto nodes = detail::split_ws(head);
        if (nodes.size() != 2) throw ConfigError("edge needs src and dst");
        EdgeSlot e;
        e.src = std::stoi(nodes[0]);
        e.dst = std::stoi(nodes[1]);
        if (colon != std::string::npos) {
          for (const std::string& t :
               detail::split_ws(value.substr(colon + 1)))
            e.candidates.push_back(builtin_op(t));
        } else {
          if (default_ops.empty())
            throw ConfigError("edge listed before any 'ops' line");
          e.candidates = default_ops;
        }
        space.edges.push_back(std::move(e));
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": bad number in '" + value + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
  validate_space(space);
  return space;
}

inline SearchSpace load_space(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open space definition: " + path);
  return parse_space(in, path);
}

// ---------------------------------------------------------------------------
// Bundled definitions (the .space assets mirror these).
// ---------------------------------------------------------------------------

// The canonical micro space: 4-node cell, 6 edges, 5 ops per edge.
inline SearchSpace nas201_like_space() {
  SearchSpace space;
  space.name = "nas201";
  space.input_shape = {3, 32, 32};
  space.num_classes = 10;
  space.stage_channels = {16, 32, 64};
  space.cell_repeats = 5;
  const std::vector<OpSpec>& ops = builtin_ops();
  const int pairs[6][2] = {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}};
  for (const auto& p : pairs) space.edges.push_back({p[0], p[1], ops});
  validate_space(space);
  return space;
}

// Desk-scale space: 3-node cell, 3 edges, 3 ops per edge. Small enough to
// enumerate, train stand-alone oracles for, and search exhaustively.
inline SearchSpace desk3x3_space() {
  SearchSpace space;
  space.name = "desk3x3";
  space.input_shape = {3, 8, 8};
  space.num_classes = 4;
  space.stage_channels = {8};
  space.cell_repeats = 1;
  std::vector<OpSpec> ops = {builtin_op("skip_connect"),
                             builtin_op("nor_conv_1x1"),
                             builtin_op("nor_conv_3x3")};
  const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (const auto& p : pairs) space.edges.push_back({p[0], p[1], ops});
  validate_space(space);
  return space;
}

}  // namespace splitnas
