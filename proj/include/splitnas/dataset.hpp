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
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitnas/common.hpp"
#include "splitnas/tensor.hpp"

namespace splitnas {

template <typename T>
struct Dataset {
  int channels = 0;
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<T> images;  // N * C * H * W, row-major
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const {
    return static_cast<std::size_t>(channels) * height * width;
  }

  Tensor<T> batch(const std::vector<std::size_t>& idx) const {
    Tensor<T> out({static_cast<int>(idx.size()), channels, height, width});
    std::size_t n = sample_numel();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      if (idx[b] >= size()) throw ValidationError("sample index out of range");
      const T* src = images.data() + idx[b] * n;
      std::copy(src, src + n, out.data.data() + b * n);
    }
    return out;
  }

  std::vector<int> batch_labels(const std::vector<std::size_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) out[b] = labels[idx[b]];
    return out;
  }

  Dataset slice(std::size_t start, std::size_t count) const {
    if (start + count > size()) throw ValidationError("slice out of range");
    Dataset out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.num_classes = num_classes;
    std::size_t n = sample_numel();
    out.images.assign(images.begin() + start * n,
                      images.begin() + (start + count) * n);
    out.labels.assign(labels.begin() + start,
                      labels.begin() + start + count);
    return out;
  }
};

template <typename T>
struct DataBundle {
  Dataset<T> train;
  Dataset<T> test;
};

struct SyntheticSpec {
  int num_classes = 4;
  int channels = 3;
  int height = 8;
  int width = 8;
  int train_count = 1024;
  int test_count = 512;
  double noise = 0.9;
};

namespace detail {

// Smooth, per-channel zero-mean, unit-RMS pattern. Smoothing gives it local
// spatial structure a convolution can exploit; the zero mean keeps a
// global-average-pool shortcut useless.
template <typename T>
std::vector<T> make_prototype(const SyntheticSpec& spec, Rng& rng) {
  int h = spec.height, w = spec.width;
  std::size_t hw = static_cast<std::size_t>(h) * w;
  std::vector<T> proto(spec.channels * hw);
  std::vector<double> raw(hw), smooth(hw);
  for (int c = 0; c < spec.channels; ++c) {
    for (double& v : raw) v = rng.normal();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double sum = 0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            sum += raw[yy * w + xx];
            ++cnt;
          }
        smooth[y * w + x] = sum / cnt;
      }
    double mean = 0;
    for (double v : smooth) mean += v;
    mean /= static_cast<double>(hw);
    double ms = 0;
    for (double& v : smooth) {
      v -= mean;
      ms += v * v;
    }
    double scale = ms > 0 ? 1.0 / std::sqrt(ms / static_cast<double>(hw)) : 1.0;
    for (std::size_t i = 0; i < hw; ++i)
      proto[c * hw + i] = static_cast<T>(smooth[i] * scale);
  }
  return proto;
}

// Number of bits needed to write every label.
inline int label_bits(int num_classes) {
  int b = 1;
  while ((1 << b) < num_classes) ++b;
  return b;
}

// Label bit j is carried as the XOR of two pattern switches: pattern 2j is
// on with a fair coin, pattern 2j+1 exactly when that coin disagrees with
// the bit. Every class then has the same pixel mean, so no linear readout
// of the image beats chance and decoding needs a nonlinearity between
// convolutions; accuracy rises with a cell's nonlinearity count instead of
// saturating for every architecture.
template <typename T>
Dataset<T> synth_split(const SyntheticSpec& spec,
                       const std::vector<std::vector<T>>& protos, int count,
                       std::uint64_t seed) {
  Dataset<T> data;
  data.channels = spec.channels;
  data.height = spec.height;
  data.width = spec.width;
  data.num_classes = spec.num_classes;
  std::size_t n = data.sample_numel();
  data.images.resize(static_cast<std::size_t>(count) * n);
  data.labels.resize(count);
  Rng rng(seed);
  int bits = label_bits(spec.num_classes);
  for (int i = 0; i < count; ++i) {
    int label = i % spec.num_classes;  // interleaved, so any prefix is balanced
    data.labels[i] = label;
    T* dst = data.images.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < bits; ++j) {
      int bit = (label >> j) & 1;
      int a = static_cast<int>(rng.next() & 1);
      int b = a ^ bit;
      if (a)
        for (std::size_t p = 0; p < n; ++p) dst[p] += protos[2 * j][p];
      if (b)
        for (std::size_t p = 0; p < n; ++p) dst[p] += protos[2 * j + 1][p];
    }
    for (std::size_t p = 0; p < n; ++p)
      dst[p] += static_cast<T>(spec.noise * rng.normal());
  }
  return data;
}

}  // namespace detail

// Classification task whose label bits are XOR-encoded across pairs of
// fixed spatial patterns plus Gaussian pixel noise. The encoding makes all
// class-conditional means coincide, so purely linear pipelines sit at
// chance while rectified ones can decode; architecture choice moves
// accuracy instead of every cell saturating the task.
template <typename T>
DataBundle<T> make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2 || spec.channels < 1 || spec.height < 1 ||
      spec.width < 1 || spec.train_count < 1 || spec.test_count < 1)
    throw ValidationError("synthetic dataset spec has a non-positive field");
  int bits = detail::label_bits(spec.num_classes);
  std::vector<std::vector<T>> protos;
  protos.reserve(2 * bits);
  for (int j = 0; j < 2 * bits; ++j) {
    Rng rng(derive_seed(seed, "proto-" + std::to_string(j)));
    protos.push_back(detail::make_prototype<T>(spec, rng));
  }
  DataBundle<T> bundle;
  bundle.train = detail::synth_split<T>(spec, protos, spec.train_count,
                                        derive_seed(seed, "train"));
  bundle.test = detail::synth_split<T>(spec, protos, spec.test_count,
                                       derive_seed(seed, "test"));
  return bundle;
}

// ---------------------------------------------------------------------------
// On-disk format: meta.json plus raw little-endian float32 image blobs and
// int32 label blobs, one pair per split.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_split(const std::string& dir, const std::string& split,
                 const Dataset<T>& data) {
  {
    std::ofstream os(dir + "/" + split + "_images.f32",
                     std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write dataset blob in " + dir);
    for (T v : data.images) {
      float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
    if (!os) throw IoError("dataset image write failed in " + dir);
  }
  {
    std::ofstream os(dir + "/" + split + "_labels.i32",
                     std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write dataset blob in " + dir);
    for (int v : data.labels) {
      std::int32_t l = v;
      os.write(reinterpret_cast<const char*>(&l), sizeof(l));
    }
    if (!os) throw IoError("dataset label write failed in " + dir);
  }
}

template <typename T>
Dataset<T> read_split(const std::string& dir, const std::string& split,
                      int channels, int height, int width, int num_classes,
                      int count) {
  Dataset<T> data;
  data.channels = channels;
  data.height = height;
  data.width = width;
  data.num_classes = num_classes;
  std::size_t n = data.sample_numel() * static_cast<std::size_t>(count);
  std::string ipath = dir + "/" + split + "_images.f32";
  std::ifstream is(ipath, std::ios::binary);
  if (!is) throw IoError("cannot open dataset blob: " + ipath);
  data.images.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    is.read(reinterpret_cast<char*>(&f), sizeof(f));
    data.images[i] = static_cast<T>(f);
  }
  if (!is) throw IoError("dataset blob truncated: " + ipath);
  std::string lpath = dir + "/" + split + "_labels.i32";
  std::ifstream ls(lpath, std::ios::binary);
  if (!ls) throw IoError("cannot open dataset blob: " + lpath);
  data.labels.resize(count);
  for (int i = 0; i < count; ++i) {
    std::int32_t l;
    ls.read(reinterpret_cast<char*>(&l), sizeof(l));
    if (l < 0 || l >= num_classes)
      throw IoError(lpath + ": label " + std::to_string(l) +
                    " outside [0, " + std::to_string(num_classes) + ")");
    data.labels[i] = l;
  }
  if (!ls) throw IoError("dataset blob truncated: " + lpath);
  return data;
}

}  // namespace detail

template <typename T>
void save_dataset(const std::string& dir, const DataBundle<T>& bundle) {
  nlohmann::json meta;
  meta["channels"] = bundle.train.channels;
  meta["height"] = bundle.train.height;
  meta["width"] = bundle.train.width;
  meta["num_classes"] = bundle.train.num_classes;
  meta["train_count"] = bundle.train.size();
  meta["test_count"] = bundle.test.size();
  std::ofstream os(dir + "/meta.json", std::ios::trunc);
  if (!os) throw IoError("cannot write dataset meta in " + dir);
  os << meta.dump(2) << '\n';
  detail::write_split(dir, "train", bundle.train);
  detail::write_split(dir, "test", bundle.test);
}

template <typename T>
DataBundle<T> load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/meta.json");
  if (!is) throw IoError("cannot open dataset meta: " + dir + "/meta.json");
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(dir + "/meta.json: not valid JSON: " + e.what());
  }
  int channels, height, width, num_classes, train_count, test_count;
  try {
    channels = meta.at("channels").get<int>();
    height = meta.at("height").get<int>();
    width = meta.at("width").get<int>();
    num_classes = meta.at("num_classes").get<int>();
    train_count = meta.at("train_count").get<int>();
    test_count = meta.at("test_count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(dir + "/meta.json: malformed: " + e.what());
  }
  DataBundle<T> bundle;
  bundle.train = detail::read_split<T>(dir, "train", channels, height, width,
                                       num_classes, train_count);
  bundle.test = detail::read_split<T>(dir, "test", channels, height, width,
                                      num_classes, test_count);
  return bundle;
}

// First/second half split of an interleaved-label set; both halves stay
// class balanced.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> split_train_val(const Dataset<T>& data) {
  std::size_t half = data.size() / 2;
  if (half == 0) throw ValidationError("dataset too small to split");
  return {data.slice(0, half), data.slice(half, data.size() - half)};
}

}  // namespace splitnas
