#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "hfnet/errors.hpp"

namespace hfnet {

using Dims = std::vector<std::size_t>;

enum class DType { float32, float64 };

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
  static constexpr DType value = DType::float32;
};
template <>
struct DTypeOf<double> {
  static constexpr DType value = DType::float64;
};

inline std::size_t product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. The scalar type fixes the dtype at compile time;
/// float is the training type, double is reserved for oracles and grad checks.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;
  static constexpr DType dtype = DTypeOf<T>::value;

  Tensor() = default;

  explicit Tensor(Dims dims, T fill = T{0}) : dims_(std::move(dims)), data_(product(dims_), fill) {}

  Tensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (product(dims_) != data_.size()) {
      throw DimensionError("tensor dims " + to_string(dims_) + " hold " + std::to_string(product(dims_)) +
                           " scalars but buffer has " + std::to_string(data_.size()));
    }
  }

  static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }
  static Tensor full(Dims dims, T value) { return Tensor(std::move(dims), value); }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty() && dims_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != dims_.size()) throw DimensionError("index rank does not match tensor rank");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= dims_[axis]) throw DimensionError("index out of range on axis " + std::to_string(axis));
      off = off * dims_[axis] + i;
      ++axis;
    }
    return off;
  }
  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  Tensor reshaped(Dims dims) const {
    if (product(dims) != numel()) {
      throw DimensionError("cannot reshape " + to_string(dims_) + " to " + to_string(dims));
    }
    return Tensor(std::move(dims), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(dims_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.dims_ == b.dims_ && a.data_ == b.data_; }

 private:
  Dims dims_;
  std::vector<T> data_;
};

/// Maximum of |a-b| / max(|a|,|b|,floor) over all coordinates.
template <typename T>
double max_relative_difference(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-30) {
  if (a.dims() != b.dims()) throw DimensionError("relative difference of " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i];
    const double y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

}  // namespace hfnet
