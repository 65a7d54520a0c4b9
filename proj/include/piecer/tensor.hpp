#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "piecer/errors.hpp"

namespace piecer {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles.
///
/// Most operations in this library work on rank-2 tensors; a vector is a
/// 1 x n row and a scalar is 1 x 1.
class Tensor {
 public:
  Tensor() : shape_{1, 1}, values_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    values_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape();
    if (shape_numel(shape_) != values_.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape_) + " holds " +
                           std::to_string(shape_numel(shape_)) + " values, got " +
                           std::to_string(values_.size()));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("tensor: ragged row list");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t rows() const {
    require_matrix("rows");
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix("cols");
    return shape_[1];
  }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& data() noexcept { return values_; }
  const std::vector<double>& data() const noexcept { return values_; }

  double item() const {
    if (values_.size() != 1) {
      throw ContractError("tensor: item() on non-scalar " + shape_str(shape_));
    }
    return values_[0];
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool operator==(const Tensor&) const = default;

  void require_matrix(const char* op) const {
    if (shape_.size() != 2) {
      throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(shape_));
    }
  }

 private:
  void check_shape() const {
    if (shape_.empty()) throw DimensionError("tensor: empty shape");
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor: zero-sized dimension in " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<double> values_;
};

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

}  // namespace piecer
