#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace wb::nn {

using Scalar = double;

/// Dense row-major tensor. Image batches are NCHW; feature batches are (N, F).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, Scalar fill = 0.0);

  const std::vector<int>& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<Scalar> values() noexcept { return data_; }
  std::span<const Scalar> values() const noexcept { return data_; }
  Scalar& operator[](std::size_t i) noexcept { return data_[i]; }
  Scalar operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same element count required.
  void reshape(std::vector<int> shape);
  void fill(Scalar v);
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;

  /// Product of all dimensions after the first.
  std::size_t per_item() const noexcept;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<int> shape_;
  std::vector<Scalar> data_;
};

std::string shape_string(const std::vector<int>& shape);

}  // namespace wb::nn
