// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

// The library is built once per working precision. Each build lives in its own
// inline namespace so a float32 and a float64 build can be linked side by side.
#if defined(SATSWIN_DOUBLE)
#define SATSWIN_PRECISION_NS f64
#else
#define SATSWIN_PRECISION_NS f32
#endif

#define SATSWIN_NAMESPACE_BEGIN \
  namespace satswin {           \
  inline namespace SATSWIN_PRECISION_NS {
#define SATSWIN_NAMESPACE_END \
  }                           \
  }

SATSWIN_NAMESPACE_BEGIN

#if defined(SATSWIN_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t volume(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor of Real values. Value semantics; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  Real* data() { return values_.data(); }
  const Real* data() const { return values_.data(); }
  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }
  std::vector<Real>& storage() { return values_; }
  const std::vector<Real>& storage() const { return values_; }

  Real& operator[](std::size_t i) { return values_[i]; }
  Real operator[](std::size_t i) const { return values_[i]; }

  /// Flat offset of a multi-index (bounds are checked).
  std::size_t offset(std::initializer_list<std::size_t> index) const;
  Real& at(std::initializer_list<std::size_t> index) { return values_[offset(index)]; }
  Real at(std::initializer_list<std::size_t> index) const { return values_[offset(index)]; }

  /// Same values, new shape of equal volume.
  Tensor reshaped(Shape shape) const;
  void fill(Real v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<Real> values_;
};

/// Bitwise equality of shape and payload (distinguishes -0.0 and NaN payloads).
bool bitwise_equal(const Tensor& a, const Tensor& b);
Real max_abs_diff(const Tensor& a, const Tensor& b);

SATSWIN_NAMESPACE_END
