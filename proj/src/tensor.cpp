#include "advtrain/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace advtrain {

namespace {
size_t checked_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) {
    if (d == 0) throw std::invalid_argument("Tensor: zero dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<size_t> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

Tensor Tensor::full(std::vector<size_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> data) {
  if (checked_numel(shape) != data.size())
    throw std::invalid_argument("Tensor::from: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

void Tensor::fill(double value) {
  for (double& v : data_) v = value;
}

Tensor Tensor::reshaped(std::vector<size_t> shape) const {
  if (checked_numel(shape) != data_.size())
    throw std::invalid_argument("Tensor::reshaped: element count mismatch, have " +
                                shape_str(shape_) + ", want " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

bool all_finite(const Tensor& t) {
  for (size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

std::string shape_str(const std::vector<size_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace advtrain
