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
#include <string>
#include <unordered_map>
#include <vector>

#include "splitnas/tensor.hpp"

namespace splitnas {

// Ordered, name-addressed collection of parameter tensors. Iteration order
// is insertion order, which keeps checksums and checkpoints deterministic.
template <typename T>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, Tensor<T> t) {
    if (index.count(name))
      throw ValidationError("duplicate parameter name: " + name);
    names.push_back(name);
    values.push_back(std::move(t));
    index[name] = static_cast<int>(values.size()) - 1;
    return index[name];
  }

  int find(const std::string& name) const {
    auto it = index.find(name);
    return it == index.end() ? -1 : it->second;
  }

  Tensor<T>& at(const std::string& name) {
    int i = find(name);
    if (i < 0) throw ValidationError("no such parameter: " + name);
    return values[i];
  }
  const Tensor<T>& at(const std::string& name) const {
    return const_cast<ParamSet*>(this)->at(name);
  }

  std::size_t size() const { return values.size(); }

  std::uint64_t checksum() const {
    std::uint64_t h = kFnvOffset;
    for (std::size_t i = 0; i < values.size(); ++i) {
      h = fnv1a64(names[i], h);
      h = fnv1a64(values[i].data.data(), values[i].data.size() * sizeof(T), h);
    }
    return h;
  }
};

// Classic momentum SGD with the L2 term added to the gradient:
//   v <- momentum * v + g + weight_decay * p
//   p <- p - lr * v
// One velocity buffer per parameter, created on first touch.
template <typename T>
struct SgdState {
  ParamSet<T> velocity;
};

template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity,
              double lr, double momentum, double weight_decay) {
  if (param.shape != grad.shape || param.shape != velocity.shape)
    throw ValidationError("sgd_step shape mismatch: param " +
                          shape_str(param.shape) + " grad " +
                          shape_str(grad.shape));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    T g = grad.data[i] + static_cast<T>(weight_decay) * param.data[i];
    velocity.data[i] = static_cast<T>(momentum) * velocity.data[i] + g;
    param.data[i] -= static_cast<T>(lr) * velocity.data[i];
  }
}

// Applies one update to every named parameter that received a gradient.
template <typename T>
void sgd_step(ParamSet<T>& params, const std::vector<std::string>& touched,
              const std::vector<Tensor<T>>& grads, SgdState<T>& state,
              double lr, double momentum, double weight_decay) {
  if (touched.size() != grads.size())
    throw ValidationError("sgd_step: names and gradients differ in length");
  for (std::size_t i = 0; i < touched.size(); ++i) {
    Tensor<T>& p = params.at(touched[i]);
    int vi = state.velocity.find(touched[i]);
    if (vi < 0) vi = state.velocity.add(touched[i], Tensor<T>(p.shape));
    sgd_step(p, grads[i], state.velocity.values[vi], lr, momentum,
             weight_decay);
  }
}

// Cosine annealing without restart.
inline double cosine_lr(long long step, long long total_steps, double lr0) {
  if (step < 0 || step > total_steps)
    throw ValidationError("cosine_lr: step " + std::to_string(step) +
                          " outside [0, " + std::to_string(total_steps) + "]");
  if (total_steps == 0) return lr0;
  double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

}  // namespace splitnas
