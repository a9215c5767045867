#include "stbhm/mcmc.hpp"

#include "stbhm/kernels.hpp"
#include "stbhm/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stbhm {

namespace {

// Block-tridiagonal prior precision of eta_1..eta_T under the VAR(1) prior.
struct EtaPrecision {
  std::vector<Matrix> diag;  // T blocks
  std::vector<Matrix> off;   // T-1 blocks: Q_{t+1,t} = -U^-1 H
  Vector times(std::span<const Vector> eta) const {
    const auto T = diag.size();
    const auto r = diag[0].rows();
    Vector out(static_cast<Eigen::Index>(T) * r);
    for (std::size_t t = 0; t < T; ++t) {
      Vector v = diag[t] * eta[t];
      if (t > 0) v += off[t - 1] * eta[t - 1];
      if (t + 1 < T) v += off[t].transpose() * eta[t + 1];
      out.segment(static_cast<Eigen::Index>(t) * r, r) = v;
    }
    return out;
  }
};

EtaPrecision eta_precision(const Matrix& k, const Matrix& h, const Matrix& u, std::size_t T) {
  const Matrix k_inv = inverse_pd(k, "initial K");
  EtaPrecision q;
  if (T == 1) {
    q.diag.push_back(k_inv);
    return q;
  }
  const Matrix u_inv = inverse_pd(u, "initial U");
  const Matrix hu = h.transpose() * u_inv * h;
  for (std::size_t t = 0; t < T; ++t) {
    if (t == 0) q.diag.push_back(symmetrize(k_inv + hu));
    else if (t + 1 < T) q.diag.push_back(symmetrize(u_inv + hu));
    else q.diag.push_back(u_inv);
    if (t + 1 < T) q.off.push_back(-u_inv * h);
  }
  return q;
}

Matrix starting_covariance(double nu, const Matrix& phi) {
  const double denom = nu - static_cast<double>(phi.rows()) - 1.0;
  return phi / (denom > 0.0 ? denom : nu);
}

struct Problem {
  const StDataset& data;
  std::span<const Matrix> basis;
  EtaPrecision q;
  double sigma2 = 0.0;
  double beta_precision = 0.0;  // 0: flat
  bool beta_free = true;
};

struct Point {
  Vector beta;
  std::vector<Vector> eta;
  std::vector<Vector> xi;
};

double objective(const Problem& pr, const Point& pt) {
  double f = 0.0;
  for (std::size_t t = 0; t < pr.data.T(); ++t) {
    const auto& s = pr.data.slices[t];
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double y = s.X.row(ii).dot(pt.beta) + pr.basis[t].row(ii).dot(pt.eta[t]) +
                       (pt.xi[t].size() ? pt.xi[t](ii) : 0.0);
      f += bernoulli_logpmf(s.z[i], y);
    }
    if (pr.sigma2 > 0.0) f -= 0.5 * pt.xi[t].squaredNorm() / pr.sigma2;
  }
  Vector stacked(pr.q.times(pt.eta).size());
  const auto r = pt.eta[0].size();
  for (std::size_t t = 0; t < pt.eta.size(); ++t) {
    stacked.segment(static_cast<Eigen::Index>(t) * r, r) = pt.eta[t];
  }
  f -= 0.5 * stacked.dot(pr.q.times(pt.eta));
  if (pr.beta_free && pr.beta_precision > 0.0) f -= 0.5 * pr.beta_precision * pt.beta.squaredNorm();
  return f;
}

}  // namespace

InitResult init_state(const StDataset& data, const BasisSystem& basis,
                      std::span<const Matrix> basis_matrices, const PriorSpec& priors,
                      const ChainConfig& cfg) {
  const std::size_t T = data.T();
  const auto r = static_cast<Eigen::Index>(basis.r());
  const auto p = static_cast<Eigen::Index>(data.p());
  if (basis_matrices.size() != T) throw UsageError("one basis matrix per time point is required");

  InitResult res;
  if (cfg.fixed_parameter_mode) {
    if (!cfg.fixed_params) throw UsageError("fixed-parameter mode needs pinned parameter values");
    res.params = *cfg.fixed_params;
  } else {
    res.params.K = starting_covariance(priors.nu_K, priors.Phi_K);
    res.params.U = starting_covariance(priors.nu_U, priors.Phi_U);
    res.params.H = build_propagator(0.0, 0.0, 0.0, basis.adjacency);
    res.params.beta = Vector::Zero(p);
  }
  res.params.sigma2_xi = priors.sigma2_xi;

  Problem pr{data, basis_matrices,
             eta_precision(res.params.K, res.params.H.H, res.params.U, T), priors.sigma2_xi,
             0.0, !cfg.fixed_parameter_mode};
  if (priors.beta_prior_sd) pr.beta_precision = 1.0 / (*priors.beta_prior_sd * *priors.beta_prior_sd);

  const Eigen::Index nb = pr.beta_free ? p : 0;
  const Eigen::Index dim = nb + static_cast<Eigen::Index>(T) * r;
  const bool has_xi = priors.sigma2_xi > 0.0;
  const double prec_xi = has_xi ? 1.0 / priors.sigma2_xi : 0.0;

  Point pt;
  pt.beta = res.params.beta;
  pt.eta.assign(T, Vector::Zero(r));
  for (const auto& s : data.slices) pt.xi.push_back(Vector::Zero(static_cast<Eigen::Index>(s.size())));

  double f = objective(pr, pt);
  double grad_norm = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  std::vector<Vector> w_per_time(T);

  for (;; ++it) {
    // Gradient and Schur-reduced Hessian with xi eliminated.
    Vector grad = Vector::Zero(dim);
    Matrix hess = Matrix::Zero(dim, dim);  // negative Hessian
    std::vector<Vector> g_xi(T), d_xi(T);
    grad_norm = 0.0;
    Vector reduced_rhs = Vector::Zero(dim);
    for (std::size_t t = 0; t < T; ++t) {
      const auto& s = data.slices[t];
      const auto n = static_cast<Eigen::Index>(s.size());
      const auto off = nb + static_cast<Eigen::Index>(t) * r;
      const Matrix& st = basis_matrices[t];
      Vector g(n), w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double y = s.X.row(i).dot(pt.beta) + st.row(i).dot(pt.eta[t]) + pt.xi[t](i);
        const double prob = inv_logit(y);
        g(i) = static_cast<double>(s.z[static_cast<std::size_t>(i)]) - prob;
        w(i) = prob * (1.0 - prob);
      }
      w_per_time[t] = w;
      // xi gradient and the weights after eliminating xi.
      Vector gx = has_xi ? Vector(g - prec_xi * pt.xi[t]) : Vector::Zero(n);
      if (has_xi) grad_norm = std::max(grad_norm, gx.cwiseAbs().maxCoeff());
      Vector c(n), g_red(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (has_xi) {
          const double d = w(i) + prec_xi;
          c(i) = w(i) * prec_xi / d;
          g_red(i) = g(i) - w(i) * gx(i) / d;
        } else {
          c(i) = w(i);
          g_red(i) = g(i);
        }
      }
      g_xi[t] = gx;
      if (nb) {
        grad.head(nb) += s.X.transpose() * g;
        reduced_rhs.head(nb) += s.X.transpose() * g_red;
        hess.topLeftCorner(nb, nb) += s.X.transpose() * c.asDiagonal() * s.X;
        const Matrix xs = s.X.transpose() * c.asDiagonal() * st;
        hess.block(0, off, nb, r) += xs;
        hess.block(off, 0, r, nb) += xs.transpose();
      }
      grad.segment(off, r) += st.transpose() * g;
      reduced_rhs.segment(off, r) += st.transpose() * g_red;
      hess.block(off, off, r, r) += st.transpose() * c.asDiagonal() * st;
    }
    const Vector q_eta = pr.q.times(pt.eta);
    grad.tail(dim - nb) -= q_eta;
    reduced_rhs.tail(dim - nb) -= q_eta;
    if (nb && pr.beta_precision > 0.0) {
      grad.head(nb) -= pr.beta_precision * pt.beta;
      reduced_rhs.head(nb) -= pr.beta_precision * pt.beta;
      hess.topLeftCorner(nb, nb).diagonal().array() += pr.beta_precision;
    }
    for (std::size_t t = 0; t < T; ++t) {
      const auto off = nb + static_cast<Eigen::Index>(t) * r;
      hess.block(off, off, r, r) += pr.q.diag[t];
      if (t + 1 < T) {
        hess.block(off + r, off, r, r) += pr.q.off[t];
        hess.block(off, off + r, r, r) += pr.q.off[t].transpose();
      }
    }
    if (dim) grad_norm = std::max(grad_norm, grad.cwiseAbs().maxCoeff());

    if (grad_norm < cfg.newton_tolerance) break;
    if (it >= cfg.newton_max_iterations) {
      throw NumericalError("posterior-mode search did not converge after " +
                           std::to_string(it) + " Newton steps (gradient norm " +
                           std::to_string(grad_norm) + ")");
    }

    Eigen::LLT<Matrix> llt(symmetrize(hess));
    if (llt.info() != Eigen::Success) {
      throw NumericalError("negative Hessian is not positive definite at the Newton iterate");
    }
    const Vector step = dim ? Vector(llt.solve(reduced_rhs)) : Vector();

    // Back-substitute the xi step: d_xi = (g_xi - w * (X d_beta + S d_eta)) / (w + 1/sigma2).
    for (std::size_t t = 0; t < T; ++t) {
      const auto& s = data.slices[t];
      const auto n = static_cast<Eigen::Index>(s.size());
      if (!has_xi) {
        d_xi[t] = Vector::Zero(n);
        continue;
      }
      const auto off = nb + static_cast<Eigen::Index>(t) * r;
      Vector lin = basis_matrices[t] * step.segment(off, r);
      if (nb) lin += s.X * step.head(nb);
      const Vector& w = w_per_time[t];
      d_xi[t] = ((g_xi[t] - w.cwiseProduct(lin)).array() / (w.array() + prec_xi)).matrix();
    }

    double scale = 1.0;
    Point trial;
    double f_trial = -std::numeric_limits<double>::infinity();
    for (int half = 0; half < 60; ++half, scale *= 0.5) {
      trial = pt;
      if (nb) trial.beta += scale * step.head(nb);
      for (std::size_t t = 0; t < T; ++t) {
        trial.eta[t] += scale * step.segment(nb + static_cast<Eigen::Index>(t) * r, r);
        trial.xi[t] += scale * d_xi[t];
      }
      f_trial = objective(pr, trial);
      if (f_trial >= f - 1e-12 * std::abs(f)) break;
    }
    if (!(f_trial >= f - 1e-12 * std::abs(f))) {
      throw NumericalError("posterior-mode line search failed (gradient norm " +
                           std::to_string(grad_norm) + ")");
    }
    pt = std::move(trial);
    f = f_trial;
  }

  res.gradient_norm = grad_norm;
  res.newton_iterations = it;
  res.log_posterior = f;
  res.params.beta = pt.beta;
  res.state.eta = pt.eta;
  res.state.xi = pt.xi;

  // Proposal covariances from the curvature at the mode.
  if (p > 0) {
    Matrix info = Matrix::Zero(p, p);
    for (std::size_t t = 0; t < T; ++t) {
      const auto& s = data.slices[t];
      info += s.X.transpose() * w_per_time[t].asDiagonal() * s.X;
    }
    if (pr.beta_precision > 0.0) info.diagonal().array() += pr.beta_precision;
    auto llt = pd_cholesky(info);
    res.V_beta = llt ? symmetrize(llt->solve(Matrix::Identity(p, p)))
                     : Matrix(Matrix::Identity(p, p));
  }
  res.V_eta.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Matrix& st = basis_matrices[t];
    Matrix prec = pr.q.diag[t];
    if (st.rows()) prec += st.transpose() * w_per_time[t].asDiagonal() * st;
    res.V_eta[t] = inverse_pd(symmetrize(prec), "eta proposal precision");
  }

  // Numeric curvature of the collapsed U term in tau at lambda = 0.
  if (!cfg.fixed_parameter_mode && T > 1) {
    const double dof = priors.nu_U + static_cast<double>(T) - 1.0;
    for (int j = 0; j < 3; ++j) {
      auto g = [&](double tau) {
        std::array<double, 3> lam{0.0, 0.0, 0.0};
        lam[j] = lambda_from_tau(tau);
        const auto h = build_propagator(lam[0], lam[1], lam[2], basis.adjacency);
        const auto ld = log_det_pd(innovation_scatter(res.state.eta, h.H, priors.Phi_U));
        return (ld ? -0.5 * dof * *ld : -1e300) + log_jacobian_tau(tau);
      };
      const double h = 1e-2;
      const double curv = (g(h) - 2.0 * g(0.0) + g(-h)) / (h * h);
      res.V_lambda[j] = curv < 0.0 ? std::clamp(-1.0 / curv, 1e-4, 10.0) : 1.0;
    }
  }
  return res;
}

}  // namespace stbhm
