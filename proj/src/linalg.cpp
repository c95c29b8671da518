#include "nap/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace nap::linalg {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_at_b(const double* a, const double* b, double* c, std::size_t r, std::size_t m,
                 std::size_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t t = 0; t < r; ++t) {
    const double* at = a + t * m;
    const double* bt = b + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double ati = at[i];
      if (ati == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += ati * bt[j];
    }
  }
}

void matmul_a_bt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + acc : acc;
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " x " +
                                b.shape_str());
  }
  Tensor c = Tensor::matrix(a.rows(), b.cols());
  matmul(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

Tensor identity(std::size_t n) {
  Tensor t = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

void symmetrize(Tensor& a) {
  const std::size_t n = a.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (a.at(i, j) + a.at(j, i));
      a.at(i, j) = v;
      a.at(j, i) = v;
    }
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double frobenius(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

double frobenius_rel_err(const Tensor& approx, const Tensor& reference) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    const double d = approx[i] - reference[i];
    num += d * d;
    den += reference[i] * reference[i];
  }
  return std::sqrt(num) / std::sqrt(den);
}

Tensor kron(const Tensor& a, const Tensor& b) {
  const std::size_t am = a.rows(), an = a.cols(), bm = b.rows(), bn = b.cols();
  Tensor k = Tensor::matrix(am * bm, an * bn);
  for (std::size_t i = 0; i < am; ++i)
    for (std::size_t j = 0; j < an; ++j) {
      const double aij = a.at(i, j);
      if (aij == 0.0) continue;
      for (std::size_t p = 0; p < bm; ++p)
        for (std::size_t q = 0; q < bn; ++q)
          k.at(i * bm + p, j * bn + q) = aij * b.at(p, q);
    }
  return k;
}

bool cholesky_lower(Tensor& m) {
  const std::size_t n = m.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double d = m.at(j, j);
    for (std::size_t p = 0; p < j; ++p) d -= m.at(j, p) * m.at(j, p);
    if (d <= 0.0 || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    m.at(j, j) = ljj;
    const double inv = 1.0 / ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m.at(i, j);
      const double* ri = m.row(i);
      const double* rj = m.row(j);
      for (std::size_t p = 0; p < j; ++p) s -= ri[p] * rj[p];
      m.at(i, j) = s * inv;
    }
  }
  return true;
}

namespace {

// Ratio of extreme diagonal magnitudes; crude but enough to label failures.
double diag_condition_estimate(const Tensor& m) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double d = std::abs(m.at(i, i));
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

Tensor damped_cholesky(const Tensor& m, double damping, const std::string& label) {
  if (m.rank() != 2 || m.rows() != m.cols()) {
    throw std::invalid_argument("spd_inverse: matrix must be square");
  }
  Tensor l = m;
  if (damping != 0.0) {
    for (std::size_t i = 0; i < l.rows(); ++i) l.at(i, i) += damping;
  }
  Tensor saved = l;
  if (!cholesky_lower(l)) {
    throw SingularMatrixError("matrix not positive definite after damping " +
                                  std::to_string(damping) +
                                  (label.empty() ? "" : " (" + label + ")") +
                                  ", diag condition estimate " +
                                  std::to_string(diag_condition_estimate(saved)),
                              diag_condition_estimate(saved));
  }
  return l;
}

// Solve L y = rhs_col then L^T x = y for all columns, in place on x.
void cholesky_solve_inplace(const Tensor& l, Tensor& x) {
  const std::size_t n = l.rows(), c = x.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* li = l.row(i);
    double* xi = x.row(i);
    for (std::size_t p = 0; p < i; ++p) {
      const double lip = li[p];
      if (lip == 0.0) continue;
      const double* xp = x.row(p);
      for (std::size_t j = 0; j < c; ++j) xi[j] -= lip * xp[j];
    }
    const double inv = 1.0 / li[i];
    for (std::size_t j = 0; j < c; ++j) xi[j] *= inv;
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double* xi = x.row(ii);
    for (std::size_t p = ii + 1; p < n; ++p) {
      const double lpi = l.at(p, ii);
      if (lpi == 0.0) continue;
      const double* xp = x.row(p);
      for (std::size_t j = 0; j < c; ++j) xi[j] -= lpi * xp[j];
    }
    const double inv = 1.0 / l.at(ii, ii);
    for (std::size_t j = 0; j < c; ++j) xi[j] *= inv;
  }
}

}  // namespace

Tensor spd_inverse(const Tensor& m, double damping, const std::string& label) {
  Tensor l = damped_cholesky(m, damping, label);
  Tensor inv = identity(m.rows());
  cholesky_solve_inplace(l, inv);
  symmetrize(inv);
  return inv;
}

Tensor spd_solve(const Tensor& m, const Tensor& rhs, double damping, const std::string& label) {
  Tensor l = damped_cholesky(m, damping, label);
  Tensor x = rhs;
  cholesky_solve_inplace(l, x);
  return x;
}

}  // namespace nap::linalg
