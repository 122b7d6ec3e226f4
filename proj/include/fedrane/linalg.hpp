#ifndef FEDRANE_LINALG_HPP_
#define FEDRANE_LINALG_HPP_

#include <optional>

#include "fedrane/matrix.hpp"

namespace fedrane {

/// Eigenvalues in ascending order; column i of `vectors` belongs to values[i].
struct SymEigResult {
  Vector values;
  Matrix vectors;
  std::size_t sweeps = 0;
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// `m` must be square and symmetric within 1e-10 absolute. The optional
/// `basis` is an orthogonal matrix that approximately diagonalizes `m` (for
/// instance the eigenvectors of a nearby matrix); rotating into it first cuts
/// the number of sweeps when a sequence of slowly varying matrices is solved.
SymEigResult sym_eig(const Matrix& m, const Matrix* basis = nullptr);

/// V diag((w + eps)^(-1/2)) V^T for a symmetric positive semidefinite `m`.
/// Throws NumericError when an eigenvalue falls below -1e-8 (scaled by
/// max(1, ||m||_F)) or when w + eps is not positive.
Matrix inv_sqrt_psd(const Matrix& m, double eps = 1e-8, const Matrix* basis = nullptr,
                    Matrix* eigenvectors_out = nullptr);

/// Lower-triangular Cholesky factor, or nullopt if `m` is not positive definite.
std::optional<Matrix> cholesky(const Matrix& m);

/// Solves m x = b for symmetric positive definite m.
Vector spd_solve(const Matrix& m, std::span<const double> b);

/// Inverse of a symmetric positive definite matrix.
Matrix spd_inverse(const Matrix& m);

}  // namespace fedrane

#endif  // FEDRANE_LINALG_HPP_
