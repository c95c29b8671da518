#pragma once

#include <stdexcept>
#include <string>

#include "nap/tensor.hpp"

namespace nap::linalg {

/// Thrown when a (damped) factor cannot be inverted.
struct SingularMatrixError : std::runtime_error {
  double condition_estimate;
  SingularMatrixError(const std::string& msg, double cond)
      : std::runtime_error(msg), condition_estimate(cond) {}
};

// c = a * b, row-major; a is m x k, b is k x n, c is m x n.
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate = false);

// c = a^T * b where a is r x m and b is r x n; c is m x n.
void matmul_at_b(const double* a, const double* b, double* c, std::size_t r, std::size_t m,
                 std::size_t n, bool accumulate = false);

// c = a * b^T where a is m x k and b is n x k; c is m x n.
void matmul_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate = false);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor identity(std::size_t n);

/// (a+a^T)/2 in place; rank-2 square only.
void symmetrize(Tensor& a);

double max_abs_diff(const Tensor& a, const Tensor& b);
double frobenius(const Tensor& a);
double frobenius_rel_err(const Tensor& approx, const Tensor& reference);

/// Kronecker product of two matrices.
Tensor kron(const Tensor& a, const Tensor& b);

/// In-place Cholesky of an SPD matrix (lower triangle); returns false on a
/// non-positive pivot. Upper triangle is left untouched.
bool cholesky_lower(Tensor& m);

/// Inverse of the SPD matrix m + damping*I via Cholesky. Throws
/// SingularMatrixError (with a diagonal-based condition estimate) if the
/// damped matrix is still not positive definite.
Tensor spd_inverse(const Tensor& m, double damping = 0.0, const std::string& label = "");

/// Solves (m + damping*I) x = rhs for SPD m; rhs is n x c.
Tensor spd_solve(const Tensor& m, const Tensor& rhs, double damping = 0.0,
                 const std::string& label = "");

}  // namespace nap::linalg
