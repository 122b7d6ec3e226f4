#ifndef FEDRANE_GNE_HPP_
#define FEDRANE_GNE_HPP_

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrane/matrix.hpp"
#include "fedrane/model.hpp"

// Server-side aggregation by Nash bargaining over client model deviations.
namespace fedrane::gne {

/// Raised when every client deviation is zero.
class NoDeviationError : public std::invalid_argument {
 public:
  NoDeviationError() : std::invalid_argument("no deviation to aggregate") {}
};

/// d x K matrix whose column k is client k's parameters minus the global ones.
struct DeviationMatrix {
  Matrix g;
  model::Layout layout;
};

/// Solution of G^T G p = 1 / p.
struct BargainWeights {
  Vector p;
  /// max_k |(G^T G p)_k p_k - 1| over the clients that bargained.
  double residual = 0.0;
  bool converged = false;
  /// Outer (convex-concave) iterations, summed over continuation stages.
  std::size_t iterations = 0;
  /// Newton steps taken by the barrier subproblem solves.
  std::size_t inner_iterations = 0;
};

struct NashOptions {
  std::size_t max_outer = 20;
  std::size_t max_inner = 200;
  double tol = 1e-6;
  double util_eps = 1e-8;
  /// Residual at or below which a solve counts as converged.
  double residual_tol = 1e-4;
  std::optional<Vector> init;
};

DeviationMatrix compute_deviations(const model::FlatParams& theta_global,
                                   std::span<const model::FlatParams> client_params);

Matrix gram(const Matrix& g);
inline Matrix gram(const DeviationMatrix& dev) { return gram(dev.g); }

/// ||(M p) .* p - 1||_inf for a Gram matrix M.
double kkt_residual(const Matrix& gram_matrix, std::span<const double> p);

/// Bargaining weights by the convex-concave procedure.
///
/// Each outer step linearizes phi(p) = sum_k log p_k + log q_k(p), with
/// q(p) = G^T G p, at the current iterate and minimizes
///   sum_k q_k(p) + grad phi(p^t)^T p   s.t. phi_k(p) >= 0, p_k > 0
/// with a log-barrier interior-point method. Zero columns get weight 0 and
/// are left out of the bargain. Columns are solved in a canonical order so
/// the result is exactly permutation-equivariant, and G is normalized by a
/// scalar internally so that scaling G by c > 0 scales p by 1/c.
///
/// Throws NoDeviationError when G is all zeros. Budget exhaustion is not an
/// error: the best iterate is returned with converged = false.
BargainWeights nash_solve(const Matrix& g, const NashOptions& options = {});
inline BargainWeights nash_solve(const DeviationMatrix& dev, const NashOptions& options = {}) {
  return nash_solve(dev.g, options);
}

/// u_k = column_k . delta.
Vector utilities(const Matrix& g, std::span<const double> delta);

/// theta + G p.
model::FlatParams aggregate(const model::FlatParams& theta, const DeviationMatrix& dev,
                            std::span<const double> p);

/// p_k = n_k / sum n.
Vector fedavg_weights(std::span<const std::size_t> sample_counts);

}  // namespace fedrane::gne

#endif  // FEDRANE_GNE_HPP_
