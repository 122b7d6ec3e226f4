#ifndef FEDRANE_TESTS_ORACLES_HPP_
#define FEDRANE_TESTS_ORACLES_HPP_

// Reference computations used only by tests. Nothing here calls into the
// library's solvers; each oracle is a direct, independent evaluation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedrane/matrix.hpp"
#include "fedrane/rng.hpp"

namespace oracle {

using fedrane::Matrix;
using fedrane::Rng;
using fedrane::Vector;

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

inline Matrix random_normal(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Plain triple-loop product, independent of the library's matmul.
inline Matrix naive_mul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline Matrix naive_transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// Gaussian elimination with partial pivoting.
inline Vector gauss_solve(Matrix a, Vector b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0) throw std::runtime_error("gauss_solve: singular");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a(i, c) * x[c];
    x[i] = s / a(i, i);
  }
  return x;
}

// Gram-Schmidt on the columns of a random normal matrix.
inline Matrix random_orthonormal(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix q = random_normal(rng, rows, cols);
  for (std::size_t c = 0; c < cols; ++c) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t prev = 0; prev < c; ++prev) {
        double d = 0.0;
        for (std::size_t r = 0; r < rows; ++r) d += q(r, c) * q(r, prev);
        for (std::size_t r = 0; r < rows; ++r) q(r, c) -= d * q(r, prev);
      }
    double n = 0.0;
    for (std::size_t r = 0; r < rows; ++r) n += q(r, c) * q(r, c);
    n = std::sqrt(n);
    for (std::size_t r = 0; r < rows; ++r) q(r, c) /= n;
  }
  return q;
}

// d x k matrix U diag(s) V^T with singular values spread so that
// cond(G^T G) = (s_max / s_min)^2 <= max_cond, times a random overall scale.
inline Matrix conditioned_deviations(Rng& rng, std::size_t d, std::size_t k, double max_cond) {
  const Matrix u = random_orthonormal(rng, d, k);
  const Matrix v = random_orthonormal(rng, k, k);
  const double ratio = std::sqrt(max_cond);
  const double scale = std::exp(rng.uniform(std::log(0.01), std::log(10.0)));
  Vector s(k);
  for (std::size_t i = 0; i < k; ++i) s[i] = scale * std::exp(rng.uniform(0.0, std::log(ratio)));
  s[0] = scale;
  if (k > 1) s[1] = scale * ratio * 0.999;
  Matrix g(d, k);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += u(r, i) * s[i] * v(c, i);
      g(r, c) = acc;
    }
  return g;
}

inline Matrix gram_naive(const Matrix& g) { return naive_mul(naive_transpose(g), g); }

// Damped Newton on F(p) = M p - 1/p, the gradient of the strictly convex
// merit f(p) = p^T M p / 2 - sum log p_k. Steps stay inside p > 0.
inline Vector newton_kkt(const Matrix& m, double tol = 1e-14, int max_iter = 200) {
  const std::size_t n = m.rows();
  Vector p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = 1.0 / std::sqrt(m(i, i));
  const auto merit = [&](const Vector& x) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = 0.0;
      for (std::size_t j = 0; j < n; ++j) mx += m(i, j) * x[j];
      f += 0.5 * x[i] * mx - std::log(x[i]);
    }
    return f;
  };
  for (int it = 0; it < max_iter; ++it) {
    Vector f(n);
    Matrix jac = m;
    double fmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mp = 0.0;
      for (std::size_t j = 0; j < n; ++j) mp += m(i, j) * p[j];
      f[i] = mp - 1.0 / p[i];
      jac(i, i) += 1.0 / (p[i] * p[i]);
      fmax = std::max(fmax, std::abs(f[i] * p[i]));
    }
    if (fmax < tol) break;
    Vector neg(n);
    for (std::size_t i = 0; i < n; ++i) neg[i] = -f[i];
    const Vector step = gauss_solve(jac, neg);
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) slope += f[i] * step[i];
    double t = 1.0;
    const double f0 = merit(p);
    Vector trial(n);
    for (int ls = 0; ls < 60; ++ls) {
      bool inside = true;
      for (std::size_t i = 0; i < n; ++i) {
        trial[i] = p[i] + t * step[i];
        inside = inside && trial[i] > 0.0;
      }
      if (inside && merit(trial) <= f0 + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    p = trial;
  }
  return p;
}

// Central differences of a scalar function of a parameter vector.
inline Vector central_differences(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-5) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Direct Pearson coefficient of two vectors.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Shannon entropy in nats of a count histogram.
inline double entropy(const std::vector<std::size_t>& h) {
  double total = 0.0;
  for (auto c : h) total += static_cast<double>(c);
  double e = 0.0;
  for (auto c : h)
    if (c > 0) {
      const double q = static_cast<double>(c) / total;
      e -= q * std::log(q);
    }
  return e;
}

}  // namespace oracle

#endif  // FEDRANE_TESTS_ORACLES_HPP_
