#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedrane/gne.hpp"
#include "fedrane/linalg.hpp"

namespace fedrane::gne {

DeviationMatrix compute_deviations(const model::FlatParams& theta_global,
                                   std::span<const model::FlatParams> client_params) {
  if (client_params.empty()) throw std::invalid_argument("compute_deviations: no client parameters");
  const std::size_t d = theta_global.size();
  const std::size_t k = client_params.size();
  DeviationMatrix dev{Matrix(d, k), theta_global.layout};
  for (std::size_t c = 0; c < k; ++c) {
    model::require_same_layout(theta_global, client_params[c], "compute_deviations");
    const auto& v = client_params[c].values;
    for (std::size_t i = 0; i < d; ++i) dev.g(i, c) = v[i] - theta_global.values[i];
  }
  return dev;
}

Matrix gram(const Matrix& g) { return matmul(g, g, true, false); }

double kkt_residual(const Matrix& gram_matrix, std::span<const double> p) {
  const Vector q = matvec(gram_matrix, p);
  double r = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) r = std::max(r, std::abs(q[k] * p[k] - 1.0));
  return r;
}

Vector utilities(const Matrix& g, std::span<const double> delta) {
  if (g.rows() != delta.size())
    throw ShapeError("utilities: deviation matrix is " + shape_string(g) + " but update has length " +
                     std::to_string(delta.size()));
  Vector u(g.cols(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t k = 0; k < g.cols(); ++k) u[k] += g(i, k) * delta[i];
  return u;
}

model::FlatParams aggregate(const model::FlatParams& theta, const DeviationMatrix& dev, std::span<const double> p) {
  if (dev.g.rows() != theta.size() || dev.g.cols() != p.size())
    throw ShapeError("aggregate: theta has " + std::to_string(theta.size()) + " entries, G is " +
                     shape_string(dev.g) + ", p has " + std::to_string(p.size()));
  if (!dev.layout.empty() && dev.layout != theta.layout) throw ShapeError("aggregate: parameter layouts differ");
  model::FlatParams out = theta;
  const Vector step = matvec(dev.g, p);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += step[i];
  return out;
}

Vector fedavg_weights(std::span<const std::size_t> sample_counts) {
  if (sample_counts.empty()) throw std::invalid_argument("fedavg_weights: no clients");
  double total = 0.0;
  for (std::size_t n : sample_counts) total += static_cast<double>(n);
  if (total == 0.0) throw std::invalid_argument("fedavg_weights: total sample count is zero");
  Vector p(sample_counts.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = static_cast<double>(sample_counts[k]) / total;
  return p;
}

namespace {

// Barrier weights for the subproblem solve; the tail drives the constraint
// slack, and with it the residual of p .* q = 1, below 1e-9.
constexpr std::array<double, 11> kBarrierSchedule = {1e0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5,
                                                     1e-6, 1e-7, 1e-8, 1e-9, 1e-10};
constexpr double kArmijoC = 1e-4;
constexpr double kArmijoBeta = 0.5;
constexpr std::size_t kMaxContinuationStages = 60;

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

struct Solver {
  const Matrix& m;
  double util_eps;
  std::size_t max_inner;
  std::size_t newton_steps = 0;

  std::size_t k() const { return m.rows(); }

  bool strictly_feasible(std::span<const double> p) const {
    const Vector q = matvec(m, p);
    for (std::size_t i = 0; i < k(); ++i) {
      if (!(p[i] > util_eps) || !(q[i] > 0.0)) return false;
      if (!(std::log(p[i]) + std::log(q[i]) > 0.0)) return false;
    }
    return true;
  }

  double barrier_value(std::span<const double> c, std::span<const double> p, double mu) const {
    const Vector q = matvec(m, p);
    double f = dot(c, p);
    for (std::size_t i = 0; i < k(); ++i)
      f -= mu * (std::log(std::log(p[i]) + std::log(q[i])) + std::log(p[i] - util_eps));
    return f;
  }

  // Newton iterations on c^T p - mu (sum log phi_k + sum log(p_k - eps)).
  void minimize_barrier(std::span<const double> c, Vector& p, double mu) {
    const std::size_t n = k();
    for (std::size_t it = 0; it < max_inner; ++it) {
      const Vector q = matvec(m, p);
      Vector grad(c.begin(), c.end());
      Matrix hess(n, n);
      Vector dphi(n);
      for (std::size_t j = 0; j < n; ++j) {
        const double phi = std::log(p[j]) + std::log(q[j]);
        // grad phi_j = e_j / p_j + m_j / q_j
        for (std::size_t i = 0; i < n; ++i) dphi[i] = m(i, j) / q[j];
        dphi[j] += 1.0 / p[j];
        for (std::size_t i = 0; i < n; ++i) grad[i] -= mu * dphi[i] / phi;
        const double w1 = mu / (phi * phi);
        const double w2 = mu / (phi * q[j] * q[j]);
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t b = 0; b < n; ++b) hess(a, b) += w1 * dphi[a] * dphi[b] + w2 * m(a, j) * m(b, j);
        hess(j, j) += mu / (phi * p[j] * p[j]);
        const double slack = p[j] - util_eps;
        grad[j] -= mu / slack;
        hess(j, j) += mu / (slack * slack);
      }
      Vector neg_grad(n);
      for (std::size_t i = 0; i < n; ++i) neg_grad[i] = -grad[i];
      Vector step;
      try {
        step = spd_solve(hess, neg_grad);
      } catch (const NumericError&) {
        double trace = 0.0;
        for (std::size_t i = 0; i < n; ++i) trace += hess(i, i);
        for (std::size_t i = 0; i < n; ++i) hess(i, i) += 1e-12 * std::max(trace, 1.0);
        step = spd_solve(hess, neg_grad);
      }
      ++newton_steps;
      const double slope = dot(grad, step);
      if (!(slope < 0.0)) return;
      if (inf_norm(step) <= 1e-13 * std::max(1.0, inf_norm(p))) return;

      double t = 1.0;
      Vector trial(n);
      const auto move = [&](double tt) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = p[i] + tt * step[i];
      };
      move(t);
      while (!strictly_feasible(trial)) {
        t *= kArmijoBeta;
        if (t < 1e-20) return;
        move(t);
      }
      const double f0 = barrier_value(c, p, mu);
      while (barrier_value(c, trial, mu) > f0 + kArmijoC * t * slope) {
        t *= kArmijoBeta;
        if (t < 1e-20) return;
        move(t);
      }
      p = trial;
      if (t == 1.0 && inf_norm(step) <= 1e-11 * std::max(1.0, inf_norm(p))) return;
    }
  }

  // Scales p so that every p_k q_k sits comfortably above 1. Requires M p > 0.
  void lift_into_interior(Vector& p) const {
    const Vector q = matvec(m, p);
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k(); ++i) worst = std::min(worst, p[i] * q[i]);
    constexpr double kTarget = 1.5;
    if (worst < kTarget) {
      const double s = std::sqrt(kTarget / worst);
      for (double& v : p) v *= s;
    }
  }

  // Convex-concave outer loop from a strictly feasible point.
  bool convex_concave(Vector& p, std::size_t max_outer, double tol, std::size_t& outer_count) {
    const std::size_t n = k();
    const Vector ones(n, 1.0);
    const Vector m_ones = matvec(m, ones);
    for (std::size_t outer = 0; outer < max_outer; ++outer) {
      const Vector q = matvec(m, p);
      Vector inv_q(n);
      for (std::size_t i = 0; i < n; ++i) inv_q[i] = 1.0 / std::max(q[i], util_eps);
      const Vector m_inv_q = matvec(m, inv_q);
      // Linear objective: sum_k q_k(p) + grad phi(p^t)^T p.
      Vector c(n);
      for (std::size_t i = 0; i < n; ++i) c[i] = m_ones[i] + 1.0 / p[i] + m_inv_q[i];

      Vector next = p;
      for (double mu : kBarrierSchedule) minimize_barrier(c, next, mu);
      ++outer_count;
      double change = 0.0;
      for (std::size_t i = 0; i < n; ++i) change = std::max(change, std::abs(next[i] - p[i]));
      p = std::move(next);
      if (change < tol * std::max(1.0, inf_norm(p))) return true;
    }
    return false;
  }
};

bool all_positive(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; });
}

// Lexicographic column order; ties keep their original order.
std::vector<std::size_t> canonical_order(const Matrix& g, std::vector<std::size_t> cols) {
  std::stable_sort(cols.begin(), cols.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t i = 0; i < g.rows(); ++i) {
      if (g(i, a) < g(i, b)) return true;
      if (g(i, a) > g(i, b)) return false;
    }
    return false;
  });
  return cols;
}

}  // namespace

BargainWeights nash_solve(const Matrix& g, const NashOptions& options) {
  if (g.cols() == 0) throw std::invalid_argument("nash_solve: no clients");
  if (!g.all_finite()) throw NumericError("nash_solve: deviation matrix has non-finite entries");
  const std::size_t k_all = g.cols();
  if (options.init && options.init->size() != k_all)
    throw ShapeError("nash_solve: initial weights have the wrong length");

  std::vector<std::size_t> active;
  for (std::size_t c = 0; c < k_all; ++c) {
    double sq = 0.0;
    for (std::size_t i = 0; i < g.rows(); ++i) sq += g(i, c) * g(i, c);
    if (sq > 0.0) active.push_back(c);
  }
  if (active.empty()) throw NoDeviationError();
  active = canonical_order(g, std::move(active));
  const std::size_t k = active.size();

  // Normalize so the largest deviation has unit norm. Entries are brought
  // to at most 1 first so the Gram matrix cannot overflow.
  double entry_max = 0.0;
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < g.rows(); ++i) entry_max = std::max(entry_max, std::abs(g(i, active[j])));
  Matrix sub(g.rows(), k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < g.rows(); ++i) sub(i, j) = g(i, active[j]) / entry_max;
  const Matrix raw_gram = gram(sub);
  double max_diag = 0.0;
  for (std::size_t j = 0; j < k; ++j) max_diag = std::max(max_diag, raw_gram(j, j));
  Matrix m = raw_gram;
  m *= 1.0 / max_diag;
  const double scale = entry_max * std::sqrt(max_diag);

  Vector p(k);
  for (std::size_t j = 0; j < k; ++j) {
    if (options.init) {
      p[j] = (*options.init)[active[j]] * scale;
    } else {
      p[j] = 1.0 / std::max(std::sqrt(m(j, j)), options.util_eps);
    }
  }
  if (!all_positive(p)) throw std::invalid_argument("nash_solve: initial weights must be positive");

  BargainWeights out;
  bool outer_converged = false;
  Solver direct{m, options.util_eps, options.max_inner};
  if (all_positive(matvec(m, p))) {
    direct.lift_into_interior(p);
    outer_converged = direct.convex_concave(p, options.max_outer, options.tol, out.iterations);
    out.inner_iterations = direct.newton_steps;
  } else {
    // Continuation from the diagonal of the Gram matrix, whose solution
    // 1/||g_k|| is exact, towards the full matrix. Each stage starts from
    // the previous solution, which stays in the domain for small steps.
    for (std::size_t j = 0; j < k; ++j) p[j] = 1.0 / std::max(std::sqrt(m(j, j)), options.util_eps);
    double s = 0.0;
    for (std::size_t stage = 0; stage < kMaxContinuationStages && s < 1.0; ++stage) {
      double delta = 1.0 - s;
      Matrix ms;
      for (;;) {
        const double s_try = std::min(1.0, s + delta);
        ms = m * s_try;
        for (std::size_t j = 0; j < k; ++j) ms(j, j) = m(j, j);
        if (all_positive(matvec(ms, p))) {
          s = s_try;
          break;
        }
        delta *= 0.5;
        if (delta < 1e-6) break;
      }
      if (delta < 1e-6) break;
      Solver stage_solver{ms, options.util_eps, options.max_inner};
      stage_solver.lift_into_interior(p);
      outer_converged = stage_solver.convex_concave(p, options.max_outer, options.tol, out.iterations);
      out.inner_iterations += stage_solver.newton_steps;
    }
    if (s < 1.0) outer_converged = false;
  }

  out.p.assign(k_all, 0.0);
  for (std::size_t j = 0; j < k; ++j) out.p[active[j]] = p[j] / scale;
  out.residual = kkt_residual(m, p);
  out.converged = outer_converged && out.residual <= options.residual_tol && all_positive(p);
  return out;
}

}  // namespace fedrane::gne
