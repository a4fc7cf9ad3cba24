#pragma once

#include <span>
#include <vector>

#include "imix/matrix.hpp"

namespace imix {

// (a . b) / (|a| |b|). NumericError on a zero-norm input.
double cosine_sim(std::span<const double> a, std::span<const double> b);

// Unit-norm copy of each row plus the original row norms. NumericError on a
// zero row.
struct NormalizedRows {
  Matrix unit;
  std::vector<double> norms;
};
NormalizedRows normalize_rows(const Matrix& x);

struct SymEig {
  std::vector<double> values;  // descending
  Matrix vectors;              // column k pairs with values[k]
};

// Cyclic Jacobi. Input must be symmetric within 1e-9 (relative to its largest
// entry); it is symmetrised before iterating. Converges when the off-diagonal
// Frobenius norm drops below 1e-12 * max(1, |S|_F), at most 100 sweeps.
SymEig sym_eig(const Matrix& s);

// Symmetric square root of a PSD matrix. Eigenvalues >= -1e-6 * |S|_max are
// clamped to zero; anything more negative raises NumericError.
Matrix psd_sqrt(const Matrix& s);

inline constexpr double kDefaultPinvTol = 1e-10;

// Moore-Penrose pseudoinverse through the eigendecomposition of the smaller
// Gram matrix (A^T A or A A^T). Singular values at or below
// tol * sigma_max are treated as zero; a floor of sqrt(32 * n * eps) * sigma_max
// applies because the Gram route squares the condition number.
Matrix pinv(const Matrix& a, double tol = kDefaultPinvTol);

// V diag(w) V^T
Matrix reconstruct(const SymEig& eig);

}  // namespace imix
