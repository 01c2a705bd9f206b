#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "zsceval/common.hpp"

namespace zsceval {

// Dense row-major square matrix; sized for the small Gram matrices used in
// subset selection.
class Matrix {
 public:
  Matrix() = default;
  explicit Matrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }

  Matrix principal(std::span<const std::size_t> idx) const {
    Matrix m(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) m(i, j) = (*this)(idx[i], idx[j]);
    return m;
  }

  double max_asymmetry() const {
    double d = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) d = std::max(d, std::abs((*this)(i, j) - (*this)(j, i)));
    return d;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

inline constexpr double kDeterminantJitter = 1e-12;

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot product of vectors with lengths ", a.size(), " and ", b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// K_ij = f_i . f_j
inline Matrix gram_matrix(std::span<const std::vector<double>> features) {
  Matrix k(features.size());
  for (std::size_t i = 0; i < features.size(); ++i)
    for (std::size_t j = i; j < features.size(); ++j) k(i, j) = k(j, i) = dot(features[i], features[j]);
  return k;
}

// In-place Cholesky of (K + jitter I); returns false when a pivot is not
// positive, i.e. the matrix is singular or indefinite at this precision.
inline bool cholesky(Matrix& a, double jitter = kDeterminantJitter) {
  const std::size_t n = a.size();
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(d > 0.0)) return false;
    const double l = std::sqrt(d);
    a(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / l;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = 0.0;
  return true;
}

// Cholesky factor of K, or of K + jitter I when K alone fails to factor.
// The jitter only rescues numerically singular matrices; adding it always
// would bias every well-conditioned determinant.
inline bool psd_factor(Matrix& l, double jitter) {
  const Matrix k = l;
  if (cholesky(l, 0.0)) return true;
  l = k;
  return jitter > 0.0 && cholesky(l, jitter);
}

// Determinant of a symmetric PSD matrix. Singular matrices report 0 or a
// value of the order of the jitter.
inline double psd_determinant(const Matrix& k, double jitter = kDeterminantJitter) {
  if (k.size() == 0) return 1.0;
  Matrix l = k;
  if (!psd_factor(l, jitter)) return 0.0;
  double det = 1.0;
  for (std::size_t i = 0; i < l.size(); ++i) det *= l(i, i) * l(i, i);
  return det;
}

inline double psd_log_determinant(const Matrix& k, double jitter = kDeterminantJitter) {
  Matrix l = k;
  if (!psd_factor(l, jitter)) return -std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) s += 2.0 * std::log(l(i, i));
  return s;
}

// Jacobi eigenvalues of a symmetric matrix, ascending.
inline std::vector<double> symmetric_eigenvalues(Matrix a, int max_sweeps = 100) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

}  // namespace zsceval
