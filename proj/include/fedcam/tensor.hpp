#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedcam/errors.hpp"

namespace fedcam {

using Real = double;
using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = 0.0)
      : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_volume(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  const std::vector<Real>& vector() const noexcept { return data_; }
  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  /// Element access for rank-2 tensors.
  Real& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Element access for rank-3 (channel, row, column) tensors.
  Real& at(std::size_t ch, std::size_t r, std::size_t c) {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }
  Real at(std::size_t ch, std::size_t r, std::size_t c) const {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }

  /// Same data viewed under a new shape of equal volume.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const {
    for (Real v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

inline Real dot(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) throw AlignmentError("dot: length mismatch");
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Real l2_norm(std::span<const Real> a) { return std::sqrt(dot(a, a)); }

inline Real squared_distance(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) throw AlignmentError("distance: length mismatch");
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Real d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline Real euclidean_distance(std::span<const Real> a, std::span<const Real> b) {
  return std::sqrt(squared_distance(a, b));
}

}  // namespace fedcam
