#include "devae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "devae/errors.hpp"

namespace devae {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw ConfigError("tensor shape " + shape_to_string(shape_) + " does not match " +
                      std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::from(std::initializer_list<std::size_t> shape, std::initializer_list<double> values) {
  return Tensor(Shape(shape), std::vector<double>(values));
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw ConfigError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::rows(std::size_t begin, std::size_t count) const {
  if (shape_.empty() || begin + count > shape_[0]) {
    throw UsageError("row range out of bounds for " + shape_to_string(shape_));
  }
  const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape out_shape = shape_;
  out_shape[0] = count;
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                          data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
  return Tensor(std::move(out_shape), std::move(out));
}

std::vector<double> Tensor::column(std::size_t c) const {
  if (rank() != 2 || c >= shape_[1]) throw UsageError("column index out of range");
  std::vector<double> out(shape_[0]);
  for (std::size_t r = 0; r < shape_[0]; ++r) out[r] = at(r, c);
  return out;
}

}  // namespace devae
