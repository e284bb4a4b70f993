#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace triplab {

/// Dense row-major tensor of rank 1..4. The workhorse container for images,
/// feature maps, parameters and the interaction volume.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    std::int64_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    data_.assign(static_cast<std::size_t>(n), T(0));
  }

  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

  T& operator()(int i, int j) {
    assert(rank() == 2);
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  const T& operator()(int i, int j) const {
    assert(rank() == 2);
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }

  T& operator()(int i, int j, int k) {
    assert(rank() == 3);
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(int i, int j, int k) const {
    assert(rank() == 3);
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }

  T& operator()(int i, int j, int k, int l) {
    assert(rank() == 4);
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& operator()(int i, int j, int k, int l) const {
    assert(rank() == 4);
    return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void zero() { fill(T(0)); }

  void resize(std::vector<int> shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    shape_ = std::move(shape);
    data_.assign(static_cast<std::size_t>(n), T(0));
  }

  /// Reuse storage if the total element count matches; otherwise reallocate.
  /// Contents are unspecified afterwards. Used by workspace buffers in the
  /// training loop to avoid per-step allocations.
  void reshape_buffer(std::vector<int> shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    shape_ = std::move(shape);
    if (static_cast<std::int64_t>(data_.size()) != n) data_.resize(static_cast<std::size_t>(n));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

inline std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace triplab
