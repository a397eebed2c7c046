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

#include <optional>
#include <string>
#include <vector>

#include "splitnas/autodiff.hpp"
#include "splitnas/optim.hpp"
#include "splitnas/space.hpp"

namespace splitnas {

// Fixed macro plan: stem conv-BN, stages of searched cells with a
// ReLU-conv-BN stride-2 reduction between stages, global average pool,
// linear classifier. Every candidate op of every cell instance is
// materialized, so one parameter set is one supernet.

enum class ParamKind {
  kStemConv,
  kCellConv,       // the searchable w(i,j) tensors
  kReductionConv,
  kLinear,
  kBnAffine,
  kBias,
};

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  ParamKind kind;
};

namespace detail {

inline std::string cell_param_prefix(int stage, int rep, int edge, int op) {
  return "s" + std::to_string(stage) + ".c" + std::to_string(rep) + ".e" +
         std::to_string(edge) + ".o" + std::to_string(op);
}

}  // namespace detail

inline std::vector<ParamInfo> param_plan(const SearchSpace& space, int G) {
  validate_space(space);
  validate_divisor(space, G);
  std::vector<ParamInfo> plan;
  std::vector<StageDims> dims = stage_dims(space);
  int c0 = dims[0].channels / G;
  plan.push_back({"stem.conv.w",
                  {c0, space.input_shape[0], 3, 3},
                  ParamKind::kStemConv});
  plan.push_back({"stem.bn.g", {c0}, ParamKind::kBnAffine});
  plan.push_back({"stem.bn.b", {c0}, ParamKind::kBnAffine});
  for (int s = 0; s < space.num_stages(); ++s) {
    int c = dims[s].channels / G;
    if (s > 0) {
      int cp = dims[s - 1].channels / G;
      std::string red = "red" + std::to_string(s - 1);
      plan.push_back({red + ".conv.w", {c, cp, 3, 3},
                      ParamKind::kReductionConv});
      plan.push_back({red + ".bn.g", {c}, ParamKind::kBnAffine});
      plan.push_back({red + ".bn.b", {c}, ParamKind::kBnAffine});
    }
    for (int r = 0; r < space.cell_repeats; ++r)
      for (std::size_t j = 0; j < space.edges.size(); ++j)
        for (std::size_t i = 0; i < space.edges[j].candidates.size(); ++i) {
          const OpSpec& op = space.edges[j].candidates[i];
          if (!op.has_weights) continue;
          std::string p = detail::cell_param_prefix(
              s, r, static_cast<int>(j), static_cast<int>(i));
          plan.push_back({p + ".conv.w",
                          {c, c, op.kernel_size, op.kernel_size},
                          ParamKind::kCellConv});
          plan.push_back({p + ".bn.g", {c}, ParamKind::kBnAffine});
          plan.push_back({p + ".bn.b", {c}, ParamKind::kBnAffine});
        }
  }
  int cl = dims.back().channels / G;
  plan.push_back({"head.fc.w", {space.num_classes, cl}, ParamKind::kLinear});
  plan.push_back({"head.fc.b", {space.num_classes}, ParamKind::kBias});
  return plan;
}

// Fan-in-scaled normal init for weights; BN affine starts at identity.
// Each tensor draws from its own name-derived stream, so initialization is
// independent of plan order.
template <typename T>
ParamSet<T> init_params(const SearchSpace& space, int G, std::uint64_t seed) {
  ParamSet<T> params;
  for (const ParamInfo& info : param_plan(space, G)) {
    Tensor<T> t(info.shape);
    switch (info.kind) {
      case ParamKind::kStemConv:
      case ParamKind::kCellConv:
      case ParamKind::kReductionConv:
      case ParamKind::kLinear: {
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < info.shape.size(); ++d)
          fan_in *= static_cast<std::size_t>(info.shape[d]);
        double std = std::sqrt(2.0 / static_cast<double>(fan_in));
        Rng rng(derive_seed(seed, info.name));
        for (T& v : t.data) v = static_cast<T>(rng.normal() * std);
        break;
      }
      case ParamKind::kBnAffine:
        t.fill(info.name.back() == 'g' ? T(1) : T(0));
        break;
      case ParamKind::kBias:
        break;  // zeros
    }
    params.add(info.name, std::move(t));
  }
  return params;
}

// Element counts per parameter kind for one supernet.
struct ParamCounts {
  std::uint64_t cell_conv = 0;
  std::uint64_t stem_conv = 0;
  std::uint64_t reduction_conv = 0;
  std::uint64_t linear = 0;
  std::uint64_t bn_affine = 0;
  std::uint64_t bias = 0;

  std::uint64_t total() const {
    return cell_conv + stem_conv + reduction_conv + linear + bn_affine + bias;
  }
};

inline ParamCounts param_counts(const SearchSpace& space, int G) {
  ParamCounts counts;
  for (const ParamInfo& info : param_plan(space, G)) {
    std::uint64_t n = 1;
    for (int d : info.shape) n *= static_cast<std::uint64_t>(d);
    switch (info.kind) {
      case ParamKind::kStemConv: counts.stem_conv += n; break;
      case ParamKind::kCellConv: counts.cell_conv += n; break;
      case ParamKind::kReductionConv: counts.reduction_conv += n; break;
      case ParamKind::kLinear: counts.linear += n; break;
      case ParamKind::kBnAffine: counts.bn_affine += n; break;
      case ParamKind::kBias: counts.bias += n; break;
    }
  }
  return counts;
}

// Forward pass of one subnet through the macro plan, touching only the
// parameters its chosen ops name.
template <typename T>
struct ForwardResult {
  typename Tape<T>::VarId logits;
  typename Tape<T>::VarId input;
  std::vector<std::string> used_names;
  std::vector<typename Tape<T>::VarId> used_vars;
};

template <typename T>
ForwardResult<T> forward_network(Tape<T>& tape, const SearchSpace& space,
                                 const Subnet& subnet,
                                 const ParamSet<T>& params,
                                 const Tensor<T>& input) {
  validate_subnet(space, subnet);
  using VarId = typename Tape<T>::VarId;
  ForwardResult<T> result;
  auto use = [&](const std::string& name) -> VarId {
    VarId v = tape.leaf(params.at(name));
    result.used_names.push_back(name);
    result.used_vars.push_back(v);
    return v;
  };
  auto relu_conv_bn = [&](VarId x, const std::string& prefix, int stride,
                          int padding) -> VarId {
    VarId y = tape.relu(x);
    y = tape.conv2d(y, use(prefix + ".conv.w"), stride, padding);
    return tape.batchnorm(y, use(prefix + ".bn.g"), use(prefix + ".bn.b"));
  };

  VarId x = tape.leaf(input);
  result.input = x;
  x = tape.conv2d(x, use("stem.conv.w"), 1, 1);
  x = tape.batchnorm(x, use("stem.bn.g"), use("stem.bn.b"));

  int num_nodes = space.num_nodes();
  for (int s = 0; s < space.num_stages(); ++s) {
    if (s > 0) x = relu_conv_bn(x, "red" + std::to_string(s - 1), 2, 1);
    for (int r = 0; r < space.cell_repeats; ++r) {
      std::vector<std::optional<VarId>> node(num_nodes);
      node[0] = x;
      for (int t = 1; t < num_nodes; ++t) {
        std::optional<VarId> acc;
        for (std::size_t j = 0; j < space.edges.size(); ++j) {
          const EdgeSlot& e = space.edges[j];
          if (e.dst != t) continue;
          const OpSpec& op = e.candidates[subnet.choices[j]];
          if (op.flops_model == FlopsModel::kNone) continue;  // zero tensor
          if (!node[e.src].has_value()) continue;  // upstream zeroed out
          VarId src = *node[e.src];
          VarId contrib;
          switch (op.flops_model) {
            case FlopsModel::kSkip:
              contrib = src;
              break;
            case FlopsModel::kPool:
              contrib = tape.avgpool3x3(src);
              break;
            case FlopsModel::kConv:
              contrib = relu_conv_bn(
                  src,
                  detail::cell_param_prefix(s, r, static_cast<int>(j),
                                            subnet.choices[j]),
                  1, op.kernel_size / 2);
              break;
            default:
              continue;
          }
          acc = acc.has_value() ? tape.add(*acc, contrib) : contrib;
        }
        node[t] = acc;  // stays empty when every incoming edge is zero
      }
      x = node[num_nodes - 1].has_value()
              ? *node[num_nodes - 1]
              : tape.zeros(tape.value(x).shape);
    }
  }

  VarId feat = tape.global_avgpool(x);
  result.logits = tape.linear(feat, use("head.fc.w"), use("head.fc.b"));
  return result;
}

}  // namespace splitnas
