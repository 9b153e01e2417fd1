#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dfinger::nn {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // Size of the trailing dimension and the product of the leading ones.
  std::size_t last_dim() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t leading() const { return shape_.empty() ? 1 : size() / shape_.back(); }

  void Fill(double v);
  Tensor Reshaped(Shape shape) const;
  bool AllFinite() const;
  // Throws kNumeric naming `where` if any value is NaN or infinite.
  void CheckFinite(const std::string& where) const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Throws kInvalidShape with `what` unless a and b have identical shapes.
void RequireSameShape(const Shape& a, const Shape& b, const std::string& what);

}  // namespace dfinger::nn
