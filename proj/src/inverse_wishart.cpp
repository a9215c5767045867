#include "stbhm/inverse_wishart.hpp"

#include "stbhm/linalg.hpp"

#include <cmath>

namespace stbhm {

Matrix sample_inverse_wishart(double nu, const Matrix& phi, Rng& rng) {
  const auto r = phi.rows();
  if (!(nu > static_cast<double>(r) - 1.0)) {
    throw DomainError("inverse-Wishart degrees of freedom must exceed r - 1");
  }
  // Precision W ~ Wishart(nu, Phi^-1) = L A A' L' with Phi^-1 = L L'.
  const Matrix phi_inv = inverse_pd(phi, "inverse-Wishart scale");
  Eigen::LLT<Matrix> llt(phi_inv);
  Matrix a = Matrix::Zero(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(nu - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const Matrix m = Matrix(llt.matrixL()) * a;  // lower triangular
  // X = W^-1 = M^-T M^-1.
  const Matrix m_inv =
      m.triangularView<Eigen::Lower>().solve(Matrix::Identity(r, r));
  return symmetrize(m_inv.transpose() * m_inv);
}

Matrix inverse_wishart_mean(double nu, const Matrix& phi) {
  const double denom = nu - static_cast<double>(phi.rows()) - 1.0;
  if (!(denom > 0.0)) throw DomainError("inverse-Wishart mean needs nu > r + 1");
  return phi / denom;
}

}  // namespace stbhm
