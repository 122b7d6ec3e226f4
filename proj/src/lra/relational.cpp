#include <algorithm>
#include <cmath>

#include "fedrane/linalg.hpp"
#include "fedrane/lra.hpp"

namespace fedrane::lra {

CorrelationMatrix pearson_matrix(const Matrix& z, double eps) {
  if (z.rows() < 2 || z.cols() < 2)
    throw ShapeError("pearson_matrix: need at least 2x2 embeddings, got " + shape_string(z));
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  Matrix u(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (double v : z.row(i)) mean += v;
    mean /= static_cast<double>(d);
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      u(i, j) = z(i, j) - mean;
      sq += u(i, j) * u(i, j);
    }
    const double norm = std::max(std::sqrt(sq), eps);
    for (std::size_t j = 0; j < d; ++j) u(i, j) /= norm;
  }
  CorrelationMatrix out{Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.values(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double c = std::clamp(dot(u.row(i), u.row(j)), -1.0, 1.0);
      out.values(i, j) = c;
      out.values(j, i) = c;
    }
  }
  return out;
}

Matrix slim_update(const Matrix& p, const Matrix& phi, double lambda_r) {
  const std::size_t n = p.rows();
  const Matrix ptp = matmul(p, p, true, false);
  Matrix system = ptp;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) system(i, j) += lambda_r * (phi(i, j) + phi(j, i));
  Matrix h;
  try {
    h = spd_inverse(system);
  } catch (const NumericError&) {
    throw NumericError("slim_solve: P^T P + lambda_r (Phi + Phi^T) is singular");
  }
  // Column j: b_j = H P^T p_j + gamma_j H e_j with gamma_j enforcing b_jj = 0.
  const Matrix base = matmul(h, ptp);
  Matrix b(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double gamma = -base(j, j) / h(j, j);
    for (std::size_t i = 0; i < n; ++i) b(i, j) = i == j ? 0.0 : base(i, j) + gamma * h(i, j);
  }
  return b;
}

namespace {

double fit_term(const Matrix& p, const Matrix& b) {
  const Matrix r = p - matmul(p, b);
  const double f = r.frobenius_norm();
  return 0.5 * f * f;
}

double trace_sqrt(std::span<const double> eigenvalues, double eps) {
  double t = 0.0;
  for (double w : eigenvalues) t += std::sqrt(std::max(w, 0.0) + eps);
  return t;
}

}  // namespace

double slim_objective(const Matrix& p, const Matrix& b, double lambda_r, double eps) {
  const SymEigResult eig = sym_eig(matmul(b, b, false, true));
  return fit_term(p, b) + 2.0 * lambda_r * trace_sqrt(eig.values, eps);
}

SlimResult slim_solve(const CorrelationMatrix& p, const SlimOptions& options) {
  if (!(options.lambda_r > 0.0)) throw std::invalid_argument("slim_solve: lambda_r must be positive");
  const Matrix& pm = p.values;
  if (!pm.is_square()) throw ShapeError("slim_solve: correlation matrix is " + shape_string(pm));
  const std::size_t n = pm.rows();

  SlimResult out;
  out.b = Matrix(n, n);
  // Phi at B = 0.
  Matrix phi = Matrix::identity(n) * (1.0 / std::sqrt(options.eps));
  Matrix basis = Matrix::identity(n);
  out.objective.push_back(fit_term(pm, out.b) + 2.0 * options.lambda_r * static_cast<double>(n) *
                                                    std::sqrt(options.eps));

  for (std::size_t it = 0; it < options.max_iter; ++it) {
    Matrix next = slim_update(pm, phi, options.lambda_r);
    const double step = (next - out.b).frobenius_norm();
    out.b = std::move(next);
    out.iterations = it + 1;

    const Matrix gram = matmul(out.b, out.b, false, true);
    const SymEigResult eig = sym_eig(gram, &basis);
    basis = eig.vectors;
    out.objective.push_back(fit_term(pm, out.b) + 2.0 * options.lambda_r * trace_sqrt(eig.values, options.eps));

    if (step < options.tol) {
      out.converged = true;
      break;
    }
    Matrix scaled = eig.vectors;
    for (std::size_t c = 0; c < n; ++c) {
      const double s = 1.0 / std::sqrt(std::max(eig.values[c], 0.0) + options.eps);
      for (std::size_t r = 0; r < n; ++r) scaled(r, c) *= s;
    }
    phi = matmul(scaled, eig.vectors, false, true);
  }
  for (std::size_t i = 0; i < n; ++i) out.b(i, i) = 0.0;
  return out;
}

RelationalGraph build_graph(Matrix b) {
  if (!b.is_square()) throw ShapeError("build_graph: weights are " + shape_string(b));
  const std::size_t n = b.rows();
  for (std::size_t i = 0; i < n; ++i)
    if (b(i, i) != 0.0) throw std::invalid_argument("build_graph: diagonal of B must be zero");
  RelationalGraph g;
  g.adjacency = Matrix(n, n);
  g.degree = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g.adjacency(i, j) = 0.5 * (std::abs(b(i, j)) + std::abs(b(j, i)));
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : g.adjacency.row(i)) s += v;
    g.degree(i, i) = s;
  }
  g.laplacian = g.degree - g.adjacency;
  g.b = std::move(b);
  return g;
}

Matrix neighbor_mask(const Matrix& adjacency, double threshold) {
  Matrix mask(adjacency.rows(), adjacency.cols());
  for (std::size_t i = 0; i < adjacency.rows(); ++i)
    for (std::size_t j = 0; j < adjacency.cols(); ++j)
      mask(i, j) = (i == j || adjacency(i, j) > threshold) ? 1.0 : 0.0;
  return mask;
}

}  // namespace fedrane::lra
