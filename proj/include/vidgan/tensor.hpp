// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with value semantics. Video tensors use the
// (N, C, T, H, W) layout throughout the library.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vidgan {

using Index = std::int64_t;
using Shape = std::vector<Index>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

template <class S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S{})
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != checked_size(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + vidgan::to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const noexcept { return static_cast<Index>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }
  std::span<S> values() noexcept { return data_; }
  std::span<const S> values() const noexcept { return data_; }
  std::vector<S>& storage() noexcept { return data_; }
  const std::vector<S>& storage() const noexcept { return data_; }

  S& operator[](Index i) noexcept { return data_[static_cast<std::size_t>(i)]; }
  const S& operator[](Index i) const noexcept { return data_[static_cast<std::size_t>(i)]; }

  // rank-5 accessor for (N, C, T, H, W) tensors
  S& at(Index n, Index c, Index t, Index h, Index w) noexcept {
    return data_[static_cast<std::size_t>(offset5(n, c, t, h, w))];
  }
  const S& at(Index n, Index c, Index t, Index h, Index w) const noexcept {
    return data_[static_cast<std::size_t>(offset5(n, c, t, h, w))];
  }

  Tensor reshaped(Shape shape) const {
    if (checked_size(shape) != size()) {
      throw ShapeError("cannot reshape " + vidgan::to_string(shape_) + " to " +
                       vidgan::to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(S value) { std::fill(data_.begin(), data_.end(), value); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](const S& v) { return U(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static Index checked_size(const Shape& shape) {
    for (Index d : shape) {
      if (d < 0) throw ShapeError("negative dimension in shape " + vidgan::to_string(shape));
    }
    return shape_size(shape);
  }

  Index offset5(Index n, Index c, Index t, Index h, Index w) const noexcept {
    return (((n * shape_[1] + c) * shape_[2] + t) * shape_[3] + h) * shape_[4] + w;
  }

  Shape shape_;
  std::vector<S> data_;
};

inline void require_rank(const Shape& shape, int rank, const char* what) {
  if (static_cast<int>(shape.size()) != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(shape));
  }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

}  // namespace vidgan
