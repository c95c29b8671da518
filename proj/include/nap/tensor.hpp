#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace nap {

/// Dense n-dimensional array of doubles, row-major.
///
/// The universal numeric carrier for activations, weights, masks and
/// curvature matrices. Rank-2 tensors double as matrices with shape
/// {rows, cols}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  /// Builds a tensor from external data; validates shape/size agreement
  /// and rejects non-finite values. Use for data crossing an API boundary.
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data);

  /// Same as from_data but skips the finiteness scan (internal hot paths).
  static Tensor wrap(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t d) const { return shape_[d]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Matrix access (rank 2).
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_[1]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double* row(std::size_t r) { return data_.data() + r * shape_[1]; }
  const double* row(std::size_t r) const { return data_.data() + r * shape_[1]; }

  /// Reshape in place; element count must be preserved.
  void reshape(std::vector<std::size_t> shape);

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;

  void fill(double v);
  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace nap
