#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace advtrain {

/// Dense row-major tensor of 64-bit reals. The flat data length always
/// equals the product of the shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape);

  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<size_t> shape, double value);
  static Tensor from(std::vector<size_t> shape, std::vector<double> data);

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_[i]; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at2(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
  double at2(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }
  double& at3(size_t i, size_t j, size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at3(size_t i, size_t j, size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at4(size_t i, size_t j, size_t k, size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at4(size_t i, size_t j, size_t k, size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double value);

  /// Reinterprets the flat data under a new shape with equal element count.
  Tensor reshaped(std::vector<size_t> shape) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<size_t> shape_;
  std::vector<double> data_;
};

bool all_finite(const Tensor& t);

/// "[2x3x4]" style shape rendering for error messages.
std::string shape_str(const std::vector<size_t>& shape);

}  // namespace advtrain
