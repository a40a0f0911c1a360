#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mgcap/error.hpp"

namespace mgcap {

using EigenRowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMap = Eigen::Map<EigenRowMat>;
using EigenConstMap = Eigen::Map<const EigenRowMat>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  /// Adopts `data`; rejects a size mismatch or any non-finite entry.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw Error(ErrorKind::DimensionMismatch, "matrix data length " + std::to_string(data_.size()) +
                                                    " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    check_finite();
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) : rows_(rows.size()) {
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw Error(ErrorKind::DimensionMismatch, "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
    check_finite();
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  const double& operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  EigenMap eigen() noexcept { return EigenMap(data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)); }
  EigenConstMap eigen() const noexcept {
    return EigenConstMap(data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void check_finite() const {
    if (!all_finite()) throw Error(ErrorKind::NonFinite, "matrix contains NaN or Inf");
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorKind::DimensionMismatch, std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                                                  std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                                  std::to_string(b.cols()));
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw Error(ErrorKind::DimensionMismatch,
                "matmul: inner dimensions " + std::to_string(a.cols()) + " and " + std::to_string(b.rows()));
  Matrix out(a.rows(), b.cols());
  if (a.cols() == 0) return out;
  out.eigen().noalias() = a.eigen() * b.eigen();
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] += b.values()[k];
  return out;
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] -= b.values()[k];
  return out;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] *= b.values()[k];
  return out;
}

inline double trace(const Matrix& m) {
  if (m.rows() != m.cols()) throw Error(ErrorKind::DimensionMismatch, "trace of non-square matrix");
  double t = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) t += m(i, i);
  return t;
}

inline double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return std::sqrt(s);
}

inline double max_abs(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s = std::max(s, std::abs(v));
  return s;
}

/// Frobenius inner product sum_ij a_ij b_ij.
inline double frobenius_dot(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "frobenius_dot");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.values()[k] * b.values()[k];
  return s;
}

/// (M + M^T) / 2.
inline Matrix sym_part(const Matrix& m) {
  if (m.rows() != m.cols()) throw Error(ErrorKind::DimensionMismatch, "sym_part of non-square matrix");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = 0.5 * (m(i, j) + m(j, i));
  return out;
}

/// Square symmetric matrix. Symmetry is checked on construction:
/// |M(i,j) - M(j,i)| <= 1e-10 * max(1, |M(i,j)|).
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols())
      throw Error(ErrorKind::DimensionMismatch,
                  "symmetric matrix must be square, got " + std::to_string(m_.rows()) + "x" + std::to_string(m_.cols()));
    m_.check_finite();
    for (std::size_t i = 0; i < order(); ++i)
      for (std::size_t j = i + 1; j < order(); ++j)
        if (std::abs(m_(i, j) - m_(j, i)) > 1e-10 * std::max(1.0, std::abs(m_(i, j))))
          throw Error(ErrorKind::NotSymmetric, "entry (" + std::to_string(i) + "," + std::to_string(j) + ")");
  }

  SymMatrix(std::initializer_list<std::initializer_list<double>> rows) : SymMatrix(Matrix(rows)) {}

  /// Forces exact symmetry by averaging with the transpose.
  static SymMatrix symmetrize(const Matrix& m) { return SymMatrix(sym_part(m), Trusted{}); }

  static SymMatrix zeros(std::size_t n) { return SymMatrix(Matrix(n, n), Trusted{}); }
  static SymMatrix identity(std::size_t n) { return SymMatrix(Matrix::identity(n), Trusted{}); }

  std::size_t order() const noexcept { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return m_(i, j); }

  /// Writes both (i,j) and (j,i).
  void set(std::size_t i, std::size_t j, double v) noexcept {
    m_(i, j) = v;
    m_(j, i) = v;
  }

  const Matrix& matrix() const noexcept { return m_; }
  operator const Matrix&() const noexcept { return m_; }  // NOLINT(google-explicit-constructor)

  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  struct Trusted {};
  SymMatrix(Matrix m, Trusted) : m_(std::move(m)) {}

  Matrix m_;
};

/// Eigenpairs of a symmetric matrix: columns of `vectors` are unit eigenvectors,
/// `values` sorted non-increasing.
struct EigSystem {
  Matrix vectors;
  std::vector<double> values;

  std::size_t order() const noexcept { return values.size(); }
};

struct JacobiOptions {
  int max_sweeps = 100;
  /// Convergence when the off-diagonal Frobenius norm falls below tol * ||A||_F.
  double tolerance = 1e-12;
};

namespace detail {

inline double off_diagonal_norm(const std::vector<double>& a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a[i * n + j] * a[i * n + j];
  return std::sqrt(s);
}

}  // namespace detail

/// Cyclic Jacobi eigensolver. Rotations sweep pairs (p, q) in row-major order, so the
/// result depends only on the input bits. Eigenvector signs are fixed so the first
/// component with magnitude above 1e-12 is positive.
inline EigSystem sym_eig(const SymMatrix& m, const JacobiOptions& opts = {}) {
  const std::size_t n = m.order();
  if (n == 0) throw Error(ErrorKind::DimensionMismatch, "sym_eig of empty matrix");

  std::vector<double> a(m.matrix().values().begin(), m.matrix().values().end());
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  const double scale = frobenius_norm(m.matrix());
  const double threshold = opts.tolerance * scale;

  bool converged = false;
  for (int sweep = 0; sweep <= opts.max_sweeps; ++sweep) {
    const double off = detail::off_diagonal_norm(a, n);
    if (off <= threshold || off == 0.0) {
      converged = true;
      break;
    }
    if (sweep == opts.max_sweeps) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        // Entries negligible against both diagonals are dropped rather than rotated.
        const double g = 100.0 * std::abs(apq);
        if (sweep > 3 && std::abs(app) + g == std::abs(app) && std::abs(aqq) + g == std::abs(aqq)) {
          a[p * n + q] = 0.0;
          a[q * n + p] = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        a[p * n + p] = app - t * apq;
        a[q * n + q] = aqq + t * apq;
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;

        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged)
    throw Error(ErrorKind::NonConvergence, "Jacobi exceeded " + std::to_string(opts.max_sweeps) + " sweeps");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });

  EigSystem out{Matrix(n, n), std::vector<double>(n)};
  for (std::size_t col = 0; col < n; ++col) {
    const std::size_t src = idx[col];
    out.values[col] = a[src * n + src];
    double sign = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double x = v[k * n + src];
      if (std::abs(x) > 1e-12) {
        sign = x > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, col) = sign * v[k * n + src];
  }
  return out;
}

/// U * diag(f(values)) * U^T, symmetrized.
inline SymMatrix reconstruct(const EigSystem& e, const std::function<double(double)>& f) {
  const std::size_t n = e.order();
  Eigen::VectorXd d(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    d[static_cast<Eigen::Index>(i)] = f(e.values[i]);
    if (!std::isfinite(d[static_cast<Eigen::Index>(i)]))
      throw Error(ErrorKind::NonFinite, "spectrum function produced a non-finite value");
  }
  Matrix out(n, n);
  const auto u = e.vectors.eigen();
  out.eigen().noalias() = u * d.asDiagonal() * u.transpose();
  return SymMatrix::symmetrize(out);
}

/// Same as reconstruct() with precomputed spectrum values.
inline SymMatrix reconstruct(const Matrix& vectors, std::span<const double> spectrum) {
  const std::size_t n = spectrum.size();
  if (vectors.rows() != n || vectors.cols() != n)
    throw Error(ErrorKind::DimensionMismatch, "reconstruct: eigenvector matrix does not match spectrum length");
  Eigen::Map<const Eigen::VectorXd> d(spectrum.data(), static_cast<Eigen::Index>(n));
  Matrix out(n, n);
  const auto u = vectors.eigen();
  out.eigen().noalias() = u * d.asDiagonal() * u.transpose();
  out.check_finite();
  return SymMatrix::symmetrize(out);
}

}  // namespace mgcap
