#pragma once

// Dense double-precision kernels and the orthogonal-complement projector
// P = I - A^T (A A^T)^+ A, applied through an r x r solve instead of ever
// materializing the d x d operator on the training path.  The Gram
// factorization is a diagonally pivoted Cholesky with a rank tolerance, so
// duplicate or zeroed constraint rows degrade gracefully instead of blowing
// up the solve.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lhdnn {

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct RankExhausted : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotSymmetric : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionMismatch("Matrix: data length != rows*cols");
  }
  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }
  std::size_t size() const { return data_.size(); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<EigenRowMat> emap(Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<const EigenRowMat> emap(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()),
          static_cast<Eigen::Index>(m.cols())};
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions");
  Matrix c(a.rows(), b.cols());
  emap(c).noalias() = emap(a) * emap(b);
  return c;
}

inline std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw DimensionMismatch("matvec: dimensions");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

// Rank-revealing factorization of a symmetric PSD matrix: P G P^T = L L^T
// with diagonal pivoting.  Pivots below n * eps * (largest pivot) end the
// factorization and define the effective rank.
class SpdFactor {
 public:
  SpdFactor() = default;
  explicit SpdFactor(const Matrix& g) : n_(g.rows()), perm_(g.rows()), work_(g) {
    if (g.rows() != g.cols()) throw DimensionMismatch("SpdFactor: square input");
    for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
    double max_pivot = 0.0;
    for (std::size_t i = 0; i < n_; ++i) max_pivot = std::max(max_pivot, work_(i, i));
    const double tol =
        static_cast<double>(n_) * std::numeric_limits<double>::epsilon() * max_pivot;
    tol_ = tol;
    for (std::size_t k = 0; k < n_; ++k) {
      std::size_t p = k;
      for (std::size_t j = k + 1; j < n_; ++j)
        if (work_(j, j) > work_(p, p)) p = j;
      if (!(work_(p, p) > tol)) break;
      if (p != k) {
        std::swap(perm_[k], perm_[p]);
        for (std::size_t j = 0; j < n_; ++j) std::swap(work_(k, j), work_(p, j));
        for (std::size_t i = 0; i < n_; ++i) std::swap(work_(i, k), work_(i, p));
      }
      const double d = std::sqrt(work_(k, k));
      work_(k, k) = d;
      for (std::size_t i = k + 1; i < n_; ++i) work_(i, k) /= d;
      // keep the trailing block symmetric: later pivot swaps read both halves
      for (std::size_t j = k + 1; j < n_; ++j)
        for (std::size_t i = j; i < n_; ++i) {
          const double v = work_(i, k) * work_(j, k);
          work_(i, j) -= v;
          if (i != j) work_(j, i) -= v;
        }
      ++rank_;
    }
  }

  std::size_t rank() const { return rank_; }
  std::size_t dim() const { return n_; }
  double tolerance() const { return tol_; }

  // Solves G s = b on the effective range; components along discarded pivot
  // directions are zeroed.
  std::vector<double> solve(std::span<const double> b) const {
    if (b.size() != n_) throw DimensionMismatch("SpdFactor::solve: rhs length");
    std::vector<double> y(rank_, 0.0), s(n_, 0.0);
    for (std::size_t i = 0; i < rank_; ++i) {
      double v = b[perm_[i]];
      for (std::size_t j = 0; j < i; ++j) v -= work_(i, j) * y[j];
      y[i] = v / work_(i, i);
    }
    for (std::size_t ii = rank_; ii-- > 0;) {
      double v = y[ii];
      for (std::size_t j = ii + 1; j < rank_; ++j) v -= work_(j, ii) * y[j];
      y[ii] = v / work_(ii, ii);
    }
    for (std::size_t i = 0; i < rank_; ++i) s[perm_[i]] = y[i];
    return s;
  }

  // Orthonormal basis of the null space of G (columns), derived from the
  // trapezoidal factor: x1 = -L11^{-T} L21^T x2 for each free coordinate.
  Matrix null_basis() const {
    const std::size_t q = rank_, f = n_ - q;
    Matrix basis(n_, f);
    for (std::size_t c = 0; c < f; ++c) {
      std::vector<double> x1(q, 0.0);
      for (std::size_t ii = q; ii-- > 0;) {
        double v = -work_(q + c, ii);
        for (std::size_t j = ii + 1; j < q; ++j) v -= work_(j, ii) * x1[j];
        x1[ii] = v / work_(ii, ii);
      }
      for (std::size_t i = 0; i < q; ++i) basis(perm_[i], c) = x1[i];
      basis(perm_[q + c], c) = 1.0;
    }
    // modified Gram-Schmidt
    for (std::size_t c = 0; c < f; ++c) {
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n_; ++i) dot += basis(i, c) * basis(i, p);
        for (std::size_t i = 0; i < n_; ++i) basis(i, c) -= dot * basis(i, p);
      }
      double nrm = 0.0;
      for (std::size_t i = 0; i < n_; ++i) nrm += basis(i, c) * basis(i, c);
      nrm = std::sqrt(nrm);
      for (std::size_t i = 0; i < n_; ++i) basis(i, c) /= nrm;
    }
    return basis;
  }

 private:
  std::size_t n_ = 0, rank_ = 0;
  double tol_ = 0.0;
  std::vector<std::size_t> perm_;
  Matrix work_;
};

// Stacked constraint rows A (r x d) with the cached factorization of A A^T.
class ConstraintRows {
 public:
  ConstraintRows() = default;
  explicit ConstraintRows(Matrix a) : a_(std::move(a)) {
    Matrix g(a_.rows(), a_.rows());
    emap(g).noalias() = emap(a_) * emap(a_).transpose();
    gram_ = SpdFactor(g);
  }

  const Matrix& a() const { return a_; }
  std::size_t rows() const { return a_.rows(); }
  std::size_t dim() const { return a_.cols(); }
  std::size_t rank() const { return gram_.rank(); }
  const SpdFactor& gram() const { return gram_; }

 private:
  Matrix a_;
  SpdFactor gram_;
};

// Rows of each head's z-block scaled element-wise by the activation
// derivative, stacked in level order.
inline ConstraintRows build_constraint_rows(const std::vector<Matrix>& head_weights,
                                            std::span<const double> rho_prime) {
  const std::size_t d = rho_prime.size();
  std::size_t r = 0;
  for (const Matrix& h : head_weights) {
    if (h.cols() != d)
      throw DimensionMismatch("build_constraint_rows: head has " +
                              std::to_string(h.cols()) + " columns, expected " +
                              std::to_string(d));
    r += h.rows();
  }
  Matrix a(r, d);
  std::size_t row = 0;
  for (const Matrix& h : head_weights)
    for (std::size_t c = 0; c < h.rows(); ++c, ++row)
      for (std::size_t j = 0; j < d; ++j) a(row, j) = h(c, j) * rho_prime[j];
  return ConstraintRows(std::move(a));
}

// w = v - A^T (A A^T)^+ A v.  Rank 0 passes v through unchanged; rank >= d
// means the complement is trivial and no gradient could survive.
inline void project_complement(const ConstraintRows& c, std::span<const double> v,
                               std::span<double> out) {
  const std::size_t d = c.dim();
  if (v.size() != d || out.size() != d)
    throw DimensionMismatch("project_complement: vector length");
  if (c.rank() >= d && d > 0)
    throw RankExhausted("project_complement: constraint rank " +
                        std::to_string(c.rank()) + " >= dimension " +
                        std::to_string(d));
  if (&out[0] != &v[0]) std::copy(v.begin(), v.end(), out.begin());
  if (c.rank() == 0) return;
  std::vector<double> t = matvec(c.a(), v);
  std::vector<double> s = c.gram().solve(t);
  const Matrix& a = c.a();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double si = s[i];
    if (si == 0.0) continue;
    const double* r = a.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] -= si * r[j];
  }
}

inline std::vector<double> project_complement(const ConstraintRows& c,
                                              std::span<const double> v) {
  std::vector<double> out(v.size());
  project_complement(c, v, out);
  return out;
}

// Test-only materialization of the d x d projector.
inline Matrix dense_projector(const ConstraintRows& c) {
  const std::size_t d = c.dim(), r = c.rows();
  if (d > 512) throw std::invalid_argument("dense_projector: d > 512");
  Matrix s(r, d);  // (A A^T)^+ A, column by column
  std::vector<double> col(r), sol(r);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < r; ++i) col[i] = c.a()(i, j);
    sol = c.gram().solve(col);
    for (std::size_t i = 0; i < r; ++i) s(i, j) = sol[i];
  }
  Matrix p = Matrix::identity(d);
  if (r > 0) emap(p).noalias() -= emap(c.a()).transpose() * emap(s);
  return p;
}

// Least-squares solve of a symmetric PSD system on the effective range.
inline std::vector<double> solve_spd(const Matrix& m, std::span<const double> rhs) {
  if (m.rows() != m.cols()) throw DimensionMismatch("solve_spd: square input");
  double scale = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) scale = std::max(scale, std::abs(m.data()[i]));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * std::max(1.0, scale))
        throw NotSymmetric("solve_spd: input asymmetric at (" + std::to_string(i) +
                           "," + std::to_string(j) + ")");
  return SpdFactor(m).solve(rhs);
}

}  // namespace lhdnn
