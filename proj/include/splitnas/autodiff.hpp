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
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "splitnas/tensor.hpp"

namespace splitnas {

// Per-sample binary ReLU sign patterns, collected during a probe forward
// pass. The number of distinct patterns over a batch is the linear-regions
// proxy score.
struct ActivationRecorder {
  std::vector<std::vector<std::uint64_t>> bits;  // one bit vector per sample
  std::vector<int> filled;                       // bits appended per sample

  void ensure_batch(int b) {
    if (static_cast<int>(bits.size()) < b) {
      bits.resize(b);
      filled.resize(b, 0);
    }
  }

  void append(int sample, bool bit) {
    int pos = filled[sample]++;
    if (pos % 64 == 0) bits[sample].push_back(0);
    if (bit) bits[sample].back() |= (1ull << (pos % 64));
  }

  std::size_t distinct_patterns() const {
    std::vector<std::vector<std::uint64_t>> sorted = bits;
    std::sort(sorted.begin(), sorted.end());
    return static_cast<std::size_t>(
        std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  }
};

// Reverse-mode tape. A forward pass records one node per primitive; one
// backward sweep per tape propagates exact gradients to every leaf.
//
// Values and gradients are owned by the tape and addressed by VarId, so a
// tape is self-contained and independent tapes can run on separate threads.
template <typename T>
class Tape {
 public:
  using VarId = int;

  explicit Tape(bool train_mode = false) : train_mode_(train_mode) {}

  bool train_mode() const { return train_mode_; }
  void set_recorder(ActivationRecorder* r) { recorder_ = r; }

  VarId leaf(Tensor<T> v) {
    vals_.push_back(std::move(v));
    grads_.emplace_back(vals_.back().shape);
    return static_cast<VarId>(vals_.size() - 1);
  }

  VarId zeros(std::vector<int> shape) { return leaf(Tensor<T>(shape)); }

  const Tensor<T>& value(VarId id) const { return vals_[id]; }
  const Tensor<T>& grad(VarId id) const { return grads_[id]; }

  // --- primitives ---------------------------------------------------------

  VarId conv2d(VarId x, VarId w, int stride, int padding) {
    const Tensor<T>& X = vals_[x];
    const Tensor<T>& W = vals_[w];
    if (X.ndim() != 4 || W.ndim() != 4 || X.dim(1) != W.dim(1))
      throw ValidationError("conv2d shape mismatch: input " +
                            shape_str(X.shape) + " vs weight " +
                            shape_str(W.shape));
    if (W.dim(2) != W.dim(3) || W.dim(2) % 2 == 0)
      throw ValidationError("conv2d kernel must be square and odd, got " +
                            shape_str(W.shape));
    if (stride < 1 || padding < 0)
      throw ValidationError("conv2d: bad stride/padding");
    const int B = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    const int Co = W.dim(0), K = W.dim(2);
    const int Ho = (H + 2 * padding - K) / stride + 1;
    const int Wo = (Wd + 2 * padding - K) / stride + 1;
    if (Ho < 1 || Wo < 1)
      throw ValidationError("conv2d output would be empty for input " +
                            shape_str(X.shape));
    Tensor<T> out({B, Co, Ho, Wo});
    for (int b = 0; b < B; ++b)
      for (int co = 0; co < Co; ++co) {
        T* o = out.ptr() + ((b * Co + co) * Ho) * Wo;
        for (int ci = 0; ci < Ci; ++ci)
          for (int kh = 0; kh < K; ++kh)
            for (int kw = 0; kw < K; ++kw) {
              T wv = W.data[((co * Ci + ci) * K + kh) * K + kw];
              if (wv == T(0)) continue;
              for (int oh = 0; oh < Ho; ++oh) {
                int ih = oh * stride - padding + kh;
                if (ih < 0 || ih >= H) continue;
                const T* in = X.ptr() + ((b * Ci + ci) * H + ih) * Wd;
                for (int ow = 0; ow < Wo; ++ow) {
                  int iw = ow * stride - padding + kw;
                  if (iw < 0 || iw >= Wd) continue;
                  o[oh * Wo + ow] += wv * in[iw];
                }
              }
            }
      }
    VarId y = leaf(std::move(out));
    check_finite(y);
    nodes_.push_back([=](Tape& t) {
      const Tensor<T>& Xv = t.vals_[x];
      const Tensor<T>& Wv = t.vals_[w];
      const Tensor<T>& dY = t.grads_[y];
      Tensor<T>& dX = t.grads_[x];
      Tensor<T>& dW = t.grads_[w];
      for (int b = 0; b < B; ++b)
        for (int co = 0; co < Co; ++co) {
          const T* dy = dY.ptr() + ((b * Co + co) * Ho) * Wo;
          for (int ci = 0; ci < Ci; ++ci)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                T wv = Wv.data[((co * Ci + ci) * K + kh) * K + kw];
                T acc = T(0);
                for (int oh = 0; oh < Ho; ++oh) {
                  int ih = oh * stride - padding + kh;
                  if (ih < 0 || ih >= H) continue;
                  const T* in = Xv.ptr() + ((b * Ci + ci) * H + ih) * Wd;
                  T* dx = dX.ptr() + ((b * Ci + ci) * H + ih) * Wd;
                  for (int ow = 0; ow < Wo; ++ow) {
                    int iw = ow * stride - padding + kw;
                    if (iw < 0 || iw >= Wd) continue;
                    T g = dy[oh * Wo + ow];
                    acc += g * in[iw];
                    dx[iw] += g * wv;
                  }
                }
                dW.data[((co * Ci + ci) * K + kh) * K + kw] += acc;
              }
        }
    });
    return y;
  }

  VarId relu(VarId x) {
    const Tensor<T>& X = vals_[x];
    Tensor<T> out(X.shape);
    for (std::size_t i = 0; i < X.numel(); ++i)
      out.data[i] = X.data[i] > T(0) ? X.data[i] : T(0);
    if (recorder_ != nullptr && X.ndim() >= 1) {
      int B = X.dim(0);
      recorder_->ensure_batch(B);
      std::size_t per = X.numel() / static_cast<std::size_t>(B);
      for (std::size_t i = 0; i < X.numel(); ++i)
        recorder_->append(static_cast<int>(i / per), X.data[i] > T(0));
    }
    VarId y = leaf(std::move(out));
    nodes_.push_back([=](Tape& t) {
      const Tensor<T>& Xv = t.vals_[x];
      const Tensor<T>& dY = t.grads_[y];
      Tensor<T>& dX = t.grads_[x];
      for (std::size_t i = 0; i < Xv.numel(); ++i)
        if (Xv.data[i] > T(0)) dX.data[i] += dY.data[i];
    });
    return y;
  }

  // Normalizes with current-batch statistics in every mode; no running
  // statistics are kept. Input (B,C,H,W), gamma/beta (C).
  VarId batchnorm(VarId x, VarId gamma, VarId beta) {
    static constexpr double kEps = 1e-6;
    const Tensor<T>& X = vals_[x];
    const Tensor<T>& Gm = vals_[gamma];
    const Tensor<T>& Bt = vals_[beta];
    if (X.ndim() != 4)
      throw ValidationError("batchnorm expects 4-d input, got " +
                            shape_str(X.shape));
    const int B = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    if (Gm.numel() != static_cast<std::size_t>(C) || Bt.numel() != Gm.numel())
      throw ValidationError("batchnorm affine params " + shape_str(Gm.shape) +
                            " do not match channels of " + shape_str(X.shape));
    if (train_mode_ && B < 2)
      throw ValidationError("batchnorm requires batch size >= 2 in train mode");
    const std::size_t plane = static_cast<std::size_t>(H) * Wd;
    const std::size_t n = static_cast<std::size_t>(B) * plane;
    Tensor<T> xhat(X.shape);
    std::vector<T> inv_std(C);
    Tensor<T> out(X.shape);
    for (int c = 0; c < C; ++c) {
      double mean = 0;
      for (int b = 0; b < B; ++b) {
        const T* p = X.ptr() + ((b * C + c) * plane);
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= static_cast<double>(n);
      double var = 0;
      for (int b = 0; b < B; ++b) {
        const T* p = X.ptr() + ((b * C + c) * plane);
        for (std::size_t i = 0; i < plane; ++i) {
          double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(n);
      T is = static_cast<T>(1.0 / std::sqrt(var + kEps));
      inv_std[c] = is;
      T g = Gm.data[c], bt = Bt.data[c];
      for (int b = 0; b < B; ++b) {
        const T* p = X.ptr() + ((b * C + c) * plane);
        T* xh = xhat.ptr() + ((b * C + c) * plane);
        T* o = out.ptr() + ((b * C + c) * plane);
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = static_cast<T>((p[i] - mean) * is);
          o[i] = g * xh[i] + bt;
        }
      }
    }
    VarId y = leaf(std::move(out));
    check_finite(y);
    auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
    auto istd = std::make_shared<std::vector<T>>(std::move(inv_std));
    nodes_.push_back([=](Tape& t) {
      const Tensor<T>& dY = t.grads_[y];
      Tensor<T>& dX = t.grads_[x];
      Tensor<T>& dG = t.grads_[gamma];
      Tensor<T>& dB = t.grads_[beta];
      const Tensor<T>& Gv = t.vals_[gamma];
      for (int c = 0; c < C; ++c) {
        double sum_dy = 0, sum_dy_xh = 0;
        for (int b = 0; b < B; ++b) {
          const T* dy = dY.ptr() + ((b * C + c) * plane);
          const T* xhp = xh->ptr() + ((b * C + c) * plane);
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xhp[i];
          }
        }
        dG.data[c] += static_cast<T>(sum_dy_xh);
        dB.data[c] += static_cast<T>(sum_dy);
        T coef = Gv.data[c] * (*istd)[c];
        T mean_dy = static_cast<T>(sum_dy / static_cast<double>(n));
        T mean_dy_xh = static_cast<T>(sum_dy_xh / static_cast<double>(n));
        for (int b = 0; b < B; ++b) {
          const T* dy = dY.ptr() + ((b * C + c) * plane);
          const T* xhp = xh->ptr() + ((b * C + c) * plane);
          T* dx = dX.ptr() + ((b * C + c) * plane);
          for (std::size_t i = 0; i < plane; ++i)
            dx[i] += coef * (dy[i] - mean_dy - xhp[i] * mean_dy_xh);
        }
      }
    });
    return y;
  }

  // 3x3 average pool, stride 1, padding 1. Padded cells are excluded from
  // the divisor so constants pass through unchanged.
  VarId avgpool3x3(VarId x) {
    const Tensor<T>& X = vals_[x];
    if (X.ndim() != 4)
      throw ValidationError("avgpool3x3 expects 4-d input, got " +
                            shape_str(X.shape));
    const int B = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    Tensor<T> out(X.shape);
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T* in = X.ptr() + ((b * C + c) * H) * Wd;
        T* o = out.ptr() + ((b * C + c) * H) * Wd;
        for (int oh = 0; oh < H; ++oh)
          for (int ow = 0; ow < Wd; ++ow) {
            T acc = T(0);
            int cnt = 0;
            for (int dh = -1; dh <= 1; ++dh)
              for (int dw = -1; dw <= 1; ++dw) {
                int ih = oh + dh, iw = ow + dw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= Wd) continue;
                acc += in[ih * Wd + iw];
                ++cnt;
              }
            o[oh * Wd + ow] = acc / static_cast<T>(cnt);
          }
      }
    VarId y = leaf(std::move(out));
    nodes_.push_back([=](Tape& t) {
      const Tensor<T>& dY = t.grads_[y];
      Tensor<T>& dX = t.grads_[x];
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const T* dy = dY.ptr() + ((b * C + c) * H) * Wd;
          T* dx = dX.ptr() + ((b * C + c) * H) * Wd;
          for (int oh = 0; oh < H; ++oh)
            for (int ow = 0; ow < Wd; ++ow) {
              int cnt = (std::min(oh + 1, H - 1) - std::max(oh - 1, 0) + 1) *
                        (std::min(ow + 1, Wd - 1) - std::max(ow - 1, 0) + 1);
              T g = dy[oh * Wd + ow] / static_cast<T>(cnt);
              for (int dh = -1; dh <= 1; ++dh)
                for (int dw = -1; dw <= 1; ++dw) {
                  int ih = oh + dh, iw = ow + dw;
                  if (ih < 0 || ih >= H || iw < 0 || iw >= Wd) continue;
                  dx[ih * Wd + iw] += g;
                }
            }
        }
    });
    return y;
  }

  VarId global_avgpool(VarId x) {
    const Tensor<T>& X = vals_[x];
    if (X.ndim() != 4)
      throw ValidationError("global_avgpool expects 4-d input, got " +
                            shape_str(X.shape));
    const int B = X.dim(0), C = X.dim(1);
    const std::size_t plane =
        static_cast<std::size_t>(X.dim(2)) * X.dim(3);
    Tensor<T> out({B, C});
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T* p = X.ptr() + ((b * C + c) * plane);
        T acc = T(0);
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        out.data[b * C + c] = acc / static_cast<T>(plane);
      }
    VarId y = leaf(std::move(out));
    nodes_.push_back([=](Tape& t) {
      const Tensor<T>& dY = t.grads_[y];
      Tensor<T>& dX = t.grads_[x];
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          T g = dY.data[b * C + c] / static_cast<T>(plane);
          T* dx = dX.ptr() + ((b * C + c) * plane);
          for (std::size_t i = 0; i < plane; ++i) dx[i] += g;
        }
    });
    return y;
  }

  VarId linear(VarId x, VarId w, VarId bias) {
    const Tensor<T>& X = vals_[x];
    const Tensor<T>& W = vals_[w];
    const Tensor<T>& Bv = vals_[bias];
    if (X.ndim() != 2 || W.ndim() != 2 || X.dim(1) != W.dim(1) ||
        Bv.numel() != static_cast<std::size_t>(W.dim(0)))
      throw ValidationError("linear shape mismatch: input " +
                            shape_str(X.shape) + " weight " +
                            shape_str(W.shape) + " bias " +
                            shape_str(Bv.shape));
    const int B = X.dim(0), In = X.dim(1), Out = W.dim(0);
    Tensor<T> out({B, Out});
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < Out; ++o) {
        T acc = Bv.data[o];
        const T* xp = X.ptr() + b * In;
        const T* wp = W.ptr() + o * In;
        for (int i = 0; i < In; ++i) acc += xp[i] * wp[i];
        out.data[b * Out + o] = acc;
      }
    VarId y = leaf(std::move(out));
    check_finite(y);
    nodes_.push_back([=](Tape& t) {
      const Tensor<T>& Xv = t.vals_[x];
      const Tensor<T>& Wv = t.vals_[w];
      const Tensor<T>& dY = t.grads_[y];
      Tensor<T>& dX = t.grads_[x];
      Tensor<T>& dW = t.grads_[w];
      Tensor<T>& dB = t.grads_[bias];
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < Out; ++o) {
          T g = dY.data[b * Out + o];
          dB.data[o] += g;
          const T* xp = Xv.ptr() + b * In;
          const T* wp = Wv.ptr() + o * In;
          T* dxp = dX.ptr() + b * In;
          T* dwp = dW.ptr() + o * In;
          for (int i = 0; i < In; ++i) {
            dwp[i] += g * xp[i];
            dxp[i] += g * wp[i];
          }
        }
    });
    return y;
  }

  VarId add(VarId a, VarId b) {
    const Tensor<T>& A = vals_[a];
    const Tensor<T>& Bv = vals_[b];
    if (A.shape != Bv.shape)
      throw ValidationError("add shape mismatch: " + shape_str(A.shape) +
                            " vs " + shape_str(Bv.shape));
    Tensor<T> out(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i)
      out.data[i] = A.data[i] + Bv.data[i];
    VarId y = leaf(std::move(out));
    nodes_.push_back([=](Tape& t) {
      const Tensor<T>& dY = t.grads_[y];
      Tensor<T>& dA = t.grads_[a];
      Tensor<T>& dB = t.grads_[b];
      for (std::size_t i = 0; i < dY.numel(); ++i) {
        dA.data[i] += dY.data[i];
        dB.data[i] += dY.data[i];
      }
    });
    return y;
  }

  // Mean cross-entropy over the batch. Returns a scalar variable.
  VarId softmax_cross_entropy(VarId logits, const std::vector<int>& labels) {
    const Tensor<T>& Z = vals_[logits];
    if (Z.ndim() != 2 ||
        Z.dim(0) != static_cast<int>(labels.size()))
      throw ValidationError("cross_entropy: logits " + shape_str(Z.shape) +
                            " do not match " +
                            std::to_string(labels.size()) + " labels");
    const int B = Z.dim(0), C = Z.dim(1);
    for (int l : labels)
      if (l < 0 || l >= C)
        throw ValidationError("label " + std::to_string(l) +
                              " out of range [0, " + std::to_string(C) + ")");
    Tensor<T> probs({B, C});
    double loss = 0;
    for (int b = 0; b < B; ++b) {
      const T* z = Z.ptr() + b * C;
      T m = z[0];
      for (int c = 1; c < C; ++c) m = std::max(m, z[c]);
      double sum = 0;
      for (int c = 0; c < C; ++c) sum += std::exp(static_cast<double>(z[c] - m));
      double lse = static_cast<double>(m) + std::log(sum);
      loss += lse - static_cast<double>(z[labels[b]]);
      for (int c = 0; c < C; ++c)
        probs.data[b * C + c] =
            static_cast<T>(std::exp(static_cast<double>(z[c]) - lse));
    }
    loss /= B;
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(loss);
    VarId y = leaf(std::move(out));
    check_finite(y);
    auto pr = std::make_shared<Tensor<T>>(std::move(probs));
    auto lb = std::make_shared<std::vector<int>>(labels);
    nodes_.push_back([=](Tape& t) {
      T g = t.grads_[y].data[0] / static_cast<T>(B);
      Tensor<T>& dZ = t.grads_[logits];
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
          dZ.data[b * C + c] +=
              g * (pr->data[b * C + c] - T(c == (*lb)[b] ? 1 : 0));
    });
    return y;
  }

  // --- reverse sweep ------------------------------------------------------

  void backward(VarId loss) {
    if (swept_)
      throw ValidationError("backward called twice on one tape");
    if (vals_[loss].numel() != 1)
      throw ValidationError("backward expects a scalar loss, got " +
                            shape_str(vals_[loss].shape));
    swept_ = true;
    grads_[loss].data[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
#ifndef NDEBUG
    for (const Tensor<T>& g : grads_)
      for (T v : g.data)
        if (!std::isfinite(static_cast<double>(v)))
          throw ValidationError("non-finite gradient after backward sweep");
#endif
  }

 private:
  void check_finite(VarId id) const {
#ifndef NDEBUG
    for (T v : vals_[id].data)
      if (!std::isfinite(static_cast<double>(v)))
        throw ValidationError("non-finite value in forward pass");
#else
    (void)id;
#endif
  }

  bool train_mode_;
  bool swept_ = false;
  ActivationRecorder* recorder_ = nullptr;
  std::vector<Tensor<T>> vals_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::function<void(Tape&)>> nodes_;
};

}  // namespace splitnas
