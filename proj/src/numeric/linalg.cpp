#include "fedrane/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fedrane {
namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr std::size_t kMaxSweeps = 100;

double off_diagonal_norm_sq(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) s += a(i, j) * a(i, j);
  return 2.0 * s;
}

// One Jacobi rotation zeroing a(p, q). `vt` holds the eigenvectors as rows so
// both updates below run over contiguous memory where possible.
void rotate(Matrix& a, Matrix& vt, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const std::size_t n = a.rows();

  const double app = a(p, p) - t * apq;
  const double aqq = a(q, q) + t * apq;
  double* rp = a.row(p).data();
  double* rq = a.row(q).data();
  for (std::size_t k = 0; k < n; ++k) {
    const double akp = rp[k];
    const double akq = rq[k];
    rp[k] = c * akp - s * akq;
    rq[k] = s * akp + c * akq;
  }
  rp[p] = app;
  rq[q] = aqq;
  rp[q] = 0.0;
  rq[p] = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    a(k, p) = rp[k];
    a(k, q) = rq[k];
  }
  double* vp = vt.row(p).data();
  double* vq = vt.row(q).data();
  for (std::size_t k = 0; k < n; ++k) {
    const double x = vp[k];
    const double y = vq[k];
    vp[k] = c * x - s * y;
    vq[k] = s * x + c * y;
  }
}

}  // namespace

SymEigResult sym_eig(const Matrix& m, const Matrix* basis) {
  if (!m.is_square()) throw ShapeError("sym_eig: matrix is " + shape_string(m));
  if (!m.is_symmetric(kSymmetryTol)) throw NumericError("sym_eig: matrix is not symmetric");
  const std::size_t n = m.rows();

  Matrix a;
  Matrix v;
  if (basis != nullptr) {
    if (basis->rows() != n || basis->cols() != n)
      throw ShapeError("sym_eig: basis is " + shape_string(*basis));
    a = matmul(*basis, matmul(m, *basis), true, false);
    v = basis->transpose();
  } else {
    a = m;
    v = Matrix::identity(n);
  }
  // Re-symmetrize so round-off from the basis change cannot accumulate.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = avg;
      a(j, i) = avg;
    }

  const double scale_sq = std::max(m.frobenius_norm() * m.frobenius_norm(),
                                   std::numeric_limits<double>::min());
  const double eps = std::numeric_limits<double>::epsilon();
  std::size_t sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    if (off_diagonal_norm_sq(a) <= eps * eps * scale_sq * 1e-2) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Drop entries already negligible next to both diagonal entries.
        if (std::abs(apq) <= 0.25 * eps * std::abs(a(p, p)) &&
            std::abs(apq) <= 0.25 * eps * std::abs(a(q, q)) && sweep > 3) {
          a(p, q) = 0.0;
          a(q, p) = 0.0;
          continue;
        }
        rotate(a, v, p, q);
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
  SymEigResult out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  out.sweeps = sweep;
  for (std::size_t c = 0; c < n; ++c) {
    out.values[c] = a(order[c], order[c]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = v(order[c], r);
  }
  return out;
}

Matrix inv_sqrt_psd(const Matrix& m, double eps, const Matrix* basis,
                    Matrix* eigenvectors_out) {
  const SymEigResult eig = sym_eig(m, basis);
  const double neg_floor = -1e-8 * std::max(1.0, m.frobenius_norm());
  const std::size_t n = m.rows();
  Vector scale(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = eig.values[i];
    if (w < neg_floor) throw NumericError("inv_sqrt_psd: matrix is not positive semidefinite");
    const double shifted = std::max(w, 0.0) + eps;
    if (!(shifted > 0.0)) throw NumericError("inv_sqrt_psd: zero eigenvalue with eps = 0");
    scale[i] = 1.0 / std::sqrt(shifted);
  }
  Matrix scaled = eig.vectors;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) scaled(r, c) *= scale[c];
  Matrix out = matmul(scaled, eig.vectors, false, true);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = avg;
      out(j, i) = avg;
    }
  if (eigenvectors_out != nullptr) *eigenvectors_out = eig.vectors;
  return out;
}

std::optional<Matrix> cholesky(const Matrix& m) {
  if (!m.is_square()) throw ShapeError("cholesky: matrix is " + shape_string(m));
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return std::nullopt;
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

namespace {

Vector cholesky_solve(const Matrix& l, std::span<const double> b) {
  const std::size_t n = l.rows();
  Vector y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
    y[i] /= l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) y[ii] -= l(k, ii) * y[k];
    y[ii] /= l(ii, ii);
  }
  return y;
}

}  // namespace

Vector spd_solve(const Matrix& m, std::span<const double> b) {
  if (m.rows() != b.size()) throw ShapeError("spd_solve: rhs length mismatch");
  const auto l = cholesky(m);
  if (!l) throw NumericError("spd_solve: matrix is not positive definite");
  return cholesky_solve(*l, b);
}

Matrix spd_inverse(const Matrix& m) {
  const auto l = cholesky(m);
  if (!l) throw NumericError("spd_inverse: matrix is not positive definite");
  const std::size_t n = m.rows();
  Matrix inv(n, n);
  Vector e(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    e[c] = 1.0;
    const Vector col = cholesky_solve(*l, e);
    e[c] = 0.0;
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = avg;
      inv(j, i) = avg;
    }
  return inv;
}

}  // namespace fedrane
