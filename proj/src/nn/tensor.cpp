#include "dfinger/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dfinger/error.hpp"

namespace dfinger::nn {

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeString(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(NumElements(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != NumElements(shape_)) {
    Fail(ErrorKind::kInvalidShape,
         "tensor of shape " + ShapeString(shape_) + " given " +
             std::to_string(values_.size()) + " values");
  }
}

void Tensor::Fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tensor Tensor::Reshaped(Shape shape) const {
  return Tensor(std::move(shape), values_);
}

bool Tensor::AllFinite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::CheckFinite(const std::string& where) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      Fail(ErrorKind::kNumeric, "non-finite value in " + where + " at flat index " +
                                    std::to_string(i));
    }
  }
}

void RequireSameShape(const Shape& a, const Shape& b, const std::string& what) {
  if (a != b) {
    Fail(ErrorKind::kInvalidShape,
         what + ": shape " + ShapeString(a) + " vs " + ShapeString(b));
  }
}

}  // namespace dfinger::nn
