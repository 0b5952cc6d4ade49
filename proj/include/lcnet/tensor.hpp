#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lcnet/error.hpp"

namespace lcnet {

using Dims = std::vector<std::int64_t>;

std::int64_t dims_product(const Dims &dims);
std::string dims_to_string(const Dims &dims);

// Throws InvalidShape when dims is empty or any extent is < 1.
void validate_dims(const Dims &dims);

// Row-major offset of `index` inside a tensor of extents `dims`.
std::int64_t tensor_offset(const Dims &dims, std::span<const std::int64_t> index);
inline std::int64_t tensor_offset(const Dims &dims, std::initializer_list<std::int64_t> index) {
  return tensor_offset(dims, std::span<const std::int64_t>(index.begin(), index.size()));
}

// Dense row-major tensor. Model data uses T = float; the gradient checker
// re-runs the same graph with T = double.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Dims dims, T fill = T(0)) : dims_(std::move(dims)) {
    validate_dims(dims_);
    data_.assign(static_cast<std::size_t>(dims_product(dims_)), fill);
  }

  BasicTensor(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_dims(dims_);
    if (static_cast<std::int64_t>(data_.size()) != dims_product(dims_)) {
      throw Error(Errc::InvalidShape, "data length " + std::to_string(data_.size()) +
                                          " does not match dims " + dims_to_string(dims_));
    }
  }

  const Dims &dims() const noexcept { return dims_; }
  std::int64_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T *data() noexcept { return data_.data(); }
  const T *data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  T &at(std::initializer_list<std::int64_t> index) {
    return data_[static_cast<std::size_t>(tensor_offset(dims_, index))];
  }
  const T &at(std::initializer_list<std::int64_t> index) const {
    return data_[static_cast<std::size_t>(tensor_offset(dims_, index))];
  }

  // Same data under new extents of equal product.
  BasicTensor reshaped(Dims dims) const {
    return BasicTensor(std::move(dims), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(dims_, std::move(out));
  }

  friend bool operator==(const BasicTensor &a, const BasicTensor &b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

inline Tensor tensor_create(const Dims &dims, float fill) { return Tensor(dims, fill); }

// True iff shapes match and |a_i - b_i| <= atol + rtol * |b_i| everywhere.
template <typename T>
bool tensor_allclose(const BasicTensor<T> &a, const BasicTensor<T> &b, double rtol, double atol);

// Largest |a_i - b_i| / (atol + rtol * |b_i|); used by tests to report misses.
template <typename T>
double tensor_max_violation(const BasicTensor<T> &a, const BasicTensor<T> &b, double rtol,
                            double atol);

// Byte-level equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
template <typename T>
bool tensor_bit_equal(const BasicTensor<T> &a, const BasicTensor<T> &b);

}  // namespace lcnet
