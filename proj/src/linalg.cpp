#include "stbhm/linalg.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace stbhm {

std::optional<Eigen::LLT<Matrix>> pd_cholesky(const Matrix& a) {
  if (a.rows() != a.cols() || a.rows() == 0) return std::nullopt;
  if (!a.allFinite()) return std::nullopt;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const double dim = static_cast<double>(a.rows());
  const double floor = kPdPivotTolerance * std::abs(a.trace()) / dim;
  const Matrix& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double pivot = l(i, i) * l(i, i);
    if (!(pivot > floor)) return std::nullopt;
  }
  return llt;
}

bool is_positive_definite(const Matrix& a) { return pd_cholesky(a).has_value(); }

double smallest_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void require_positive_definite(const Matrix& a, std::string_view what) {
  if (is_positive_definite(a)) return;
  std::ostringstream msg;
  msg << what << " is not positive definite";
  if (a.rows() == a.cols() && a.rows() > 0 && a.allFinite()) {
    msg << " (smallest eigenvalue " << smallest_eigenvalue(a) << ")";
  }
  throw NumericalError(msg.str());
}

std::optional<double> log_det_pd(const Matrix& a) {
  auto llt = pd_cholesky(a);
  if (!llt) return std::nullopt;
  return 2.0 * llt->matrixLLT().diagonal().array().log().sum();
}

Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

Matrix inverse_pd(const Matrix& a, std::string_view what) {
  auto llt = pd_cholesky(a);
  if (!llt) require_positive_definite(a, what);
  return symmetrize(llt->solve(Matrix::Identity(a.rows(), a.cols())));
}

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kBlock = 64;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double gaussian_logpdf(const Vector& x, const Vector& mean, const Eigen::LLT<Matrix>& cov_chol) {
  const Vector diff = x - mean;
  const Vector w = cov_chol.matrixL().solve(diff);
  const double log_det = 2.0 * cov_chol.matrixLLT().diagonal().array().log().sum();
  const double n = static_cast<double>(x.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + w.squaredNorm());
}

}  // namespace stbhm
