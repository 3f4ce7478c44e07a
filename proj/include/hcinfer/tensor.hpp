/* Copyright 2026 The hcinfer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hcinfer/errors.hpp"

namespace hcinfer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Immutable once constructed; every
/// constructor checks that the element count matches the shape and that all
/// values are finite.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.empty()) throw DimensionError("tensor shape must be non-empty");
    for (auto d : shape_) {
      if (d == 0) {
        throw DimensionError("tensor dimension of size 0 in " +
                             shape_string(shape_));
      }
    }
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
    for (double v : data_) {
      if (!std::isfinite(v)) throw Error("non-finite value in tensor");
    }
  }

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double value) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  std::size_t bytes() const { return data_.size() * sizeof(double); }

  std::span<const double> data() const { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }

  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_.back() + j];
  }

  /// Number of rows when viewed as a [rows, last_dim] matrix.
  std::size_t rows() const { return data_.size() / shape_.back(); }
  std::size_t cols() const { return shape_.back(); }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  /// Releases the storage; the tensor is left as a scalar zero.
  std::vector<double> take() && {
    std::vector<double> out = std::move(data_);
    shape_ = {1};
    data_.assign(1, 0.0);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Maps a 64-bit generator draw to [0, 1) using the top 53 bits, so the
/// sequence is identical on every platform.
inline double unit_double(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline Tensor random_uniform(Shape shape, std::uint64_t seed, double lo = -1.0,
                             double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = lo + (hi - lo) * unit_double(gen());
  return Tensor(std::move(shape), std::move(data));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("cannot compare " + shape_string(a.shape()) +
                         " with " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

/// Counts multiply-accumulates performed by linear layers on the current
/// thread while in scope. Scopes nest and every live scope receives counts.
class MacCounter {
 public:
  MacCounter() : previous_(current()) { current() = this; }
  ~MacCounter() { current() = previous_; }
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const { return count_; }

  static void add(std::uint64_t macs) {
    for (auto* c = current(); c != nullptr; c = c->previous_) c->count_ += macs;
  }

 private:
  static MacCounter*& current() {
    thread_local MacCounter* counter = nullptr;
    return counter;
  }

  MacCounter* previous_;
  std::uint64_t count_ = 0;
};

}  // namespace hcinfer
