#include "nap/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nap {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape");
  }
}

Tensor Tensor::wrap(std::vector<std::size_t> shape, std::vector<double> data) {
  if (shape_product(shape) != data.size()) {
    throw std::invalid_argument("Tensor: shape/data size mismatch");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data) {
  Tensor t = wrap(std::move(shape), std::move(data));
  if (!t.all_finite()) throw std::invalid_argument("Tensor: non-finite value in data");
  return t;
}

void Tensor::reshape(std::vector<std::size_t> shape) {
  if (shape_product(shape) != data_.size()) {
    throw std::invalid_argument("Tensor::reshape: element count changed");
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << ")";
  return os.str();
}

}  // namespace nap
