#pragma once

#include "stbhm/common.hpp"

#include <optional>
#include <span>
#include <string_view>

namespace stbhm {

// Relative pivot floor for positive-definiteness: every Cholesky pivot must
// exceed kPdPivotTolerance * trace(A) / dim.
inline constexpr double kPdPivotTolerance = 1e-10;

/// Cholesky factor of a symmetric positive-definite matrix, or nullopt if the
/// factorization fails or a pivot falls below the relative floor.
std::optional<Eigen::LLT<Matrix>> pd_cholesky(const Matrix& a);

bool is_positive_definite(const Matrix& a);

/// Throws NumericalError naming `what` and the smallest eigenvalue when `a`
/// is not positive definite.
void require_positive_definite(const Matrix& a, std::string_view what);

double smallest_eigenvalue(const Matrix& a);

/// log|A| for symmetric PD A; nullopt when not PD.
std::optional<double> log_det_pd(const Matrix& a);

Matrix symmetrize(const Matrix& a);

Matrix inverse_pd(const Matrix& a, std::string_view what);

/// Pairwise summation. Both the serial and the OpenMP code paths reduce through
/// this so results are bit-identical regardless of thread count.
double pairwise_sum(std::span<const double> values);

/// Gaussian log density of x ~ N(mean, cov) given the Cholesky factor of cov.
double gaussian_logpdf(const Vector& x, const Vector& mean, const Eigen::LLT<Matrix>& cov_chol);

}  // namespace stbhm
