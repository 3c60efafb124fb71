// Copyright 2026 The px2graph Authors.
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

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace px2graph::ad {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-d array. Treated as an immutable value once it has been
/// handed to a Tape; the buffer is shared, never copied on assignment.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(numel_of(t.shape), T(0));
    return t;
  }

  static Tensor full(std::vector<int> shape, T v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : *t.data) x = v;
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(std::vector<int> shape, std::vector<T> values) {
    if (numel_of(shape) != values.size()) {
      throw std::invalid_argument("Tensor::from: " + shape_str(shape) + " does not hold " +
                                  std::to_string(values.size()) + " values");
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static size_t numel_of(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim in " + shape_str(shape));
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  size_t numel() const { return data ? data->size() : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T& operator[](size_t i) { return (*data)[i]; }
  const T& operator[](size_t i) const { return (*data)[i]; }

  /// Deep copy.
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    t.requires_grad = requires_grad;
    return t;
  }

  /// Same buffer, new shape (numel must match).
  Tensor reshaped(std::vector<int> new_shape) const {
    if (numel_of(new_shape) != numel()) {
      throw std::invalid_argument("Tensor::reshaped: " + shape_str(shape) + " -> " +
                                  shape_str(new_shape) + " changes element count");
    }
    Tensor t;
    t.shape = std::move(new_shape);
    t.data = data;
    t.requires_grad = requires_grad;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<U>>(numel());
    for (size_t i = 0; i < numel(); ++i) (*t.data)[i] = static_cast<U>((*data)[i]);
    t.requires_grad = requires_grad;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(t[i]))) return false;
  }
  return true;
}

}  // namespace px2graph::ad
