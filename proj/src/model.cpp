#include "stbhm/model.hpp"

#include "stbhm/kernels.hpp"
#include "stbhm/linalg.hpp"

#include <cmath>
#include <numbers>

namespace stbhm {

std::size_t StDataset::p() const {
  for (const auto& s : slices) {
    if (s.X.cols() > 0) return static_cast<std::size_t>(s.X.cols());
  }
  return 0;
}

std::size_t StDataset::total_observations() const {
  std::size_t n = 0;
  for (const auto& s : slices) n += s.size();
  return n;
}

std::vector<Location> StDataset::stacked_locations() const {
  std::vector<Location> out;
  out.reserve(total_observations());
  for (const auto& s : slices) out.insert(out.end(), s.locations.begin(), s.locations.end());
  return out;
}

void validate_dataset(const StDataset& data) {
  if (data.T() == 0) throw UsageError("dataset has no time points");
  const auto p = data.p();
  for (std::size_t t = 0; t < data.T(); ++t) {
    const auto& s = data.slices[t];
    const std::string where = "time " + std::to_string(t + 1) + ": ";
    if (s.z.size() != s.size()) throw UsageError(where + "z length differs from location count");
    if (static_cast<std::size_t>(s.X.rows()) != s.size()) {
      throw UsageError(where + "covariate rows differ from location count");
    }
    if (s.size() > 0 && static_cast<std::size_t>(s.X.cols()) != p) {
      throw UsageError(where + "covariate width differs across time");
    }
    for (auto zi : s.z) {
      if (zi > 1) throw UsageError(where + "z must be 0 or 1");
    }
  }
}

Propagator build_propagator(double lambda1, double lambda2, double lambda3,
                            const Matrix& adjacency) {
  for (double l : {lambda1, lambda2, lambda3}) {
    if (!(l > -1.0 && l < 1.0)) throw DomainError("propagator parameters must lie in (-1, 1)");
  }
  const auto r2 = adjacency.rows();
  const auto r1 = adjacency.cols();
  Propagator p;
  p.lambda = {lambda1, lambda2, lambda3};
  p.adjacency = adjacency;
  p.H = Matrix::Zero(r1 + r2, r1 + r2);
  p.H.topLeftCorner(r1, r1).diagonal().setConstant(lambda1);
  p.H.bottomRightCorner(r2, r2).diagonal().setConstant(lambda2);
  p.H.bottomLeftCorner(r2, r1) = lambda3 * adjacency;
  return p;
}

StationarityReport spectral_stationarity(const Propagator& h) {
  double radius = std::abs(h.lambda[0]);
  if (h.adjacency.rows() > 0) radius = std::max(radius, std::abs(h.lambda[1]));
  return {radius, radius < 1.0};
}

Matrix innovation_matrix(const Matrix& k, const Propagator& h) {
  require_positive_definite(k, "K");
  Matrix u = symmetrize(k - h.H * k * h.H.transpose());
  require_positive_definite(u, "innovation matrix U = K - HKH'");
  return u;
}

Matrix propagate_covariance(const Matrix& k, const Propagator& h, const Matrix& u) {
  return symmetrize(h.H * k * h.H.transpose() + u);
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("logit argument must lie in (0, 1)");
  return std::log(p / (1.0 - p));
}

double inv_logit(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

Vector linear_predictor(const Matrix& x, const Vector& beta, const Matrix& s, const Vector& eta,
                        const Vector& xi) {
  Vector y = x * beta + s * eta;
  if (xi.size() > 0) y += xi;
  return y;
}

double complete_data_loglik(const StDataset& data, const LatentState& state,
                            const ModelParams& params, std::span<const Matrix> basis) {
  const auto T = data.T();
  if (state.eta.size() != T || state.xi.size() != T || basis.size() != T) {
    throw UsageError("latent state or basis does not match the dataset time count");
  }
  auto k_chol = pd_cholesky(params.K);
  if (!k_chol) require_positive_definite(params.K, "K");
  std::optional<Eigen::LLT<Matrix>> u_chol;
  if (T > 1) {
    u_chol = pd_cholesky(params.U);
    if (!u_chol) require_positive_definite(params.U, "U");
  }

  double bern = 0.0;
  double fine = 0.0;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& slice = data.slices[t];
    if (slice.size() == 0) continue;
    const Vector y =
        linear_predictor(slice.X, params.beta, basis[t], state.eta[t], state.xi[t]);
    bern += kernels::bernoulli_loglik({y.data(), static_cast<std::size_t>(y.size())}, slice.z);
    const auto n = static_cast<double>(slice.size());
    fine += -0.5 * (n * (log2pi + std::log(params.sigma2_xi)) +
                    state.xi[t].squaredNorm() / params.sigma2_xi);
  }
  const Vector zero = Vector::Zero(params.K.rows());
  double latent = gaussian_logpdf(state.eta[0], zero, *k_chol);
  for (std::size_t t = 1; t < T; ++t) {
    latent += gaussian_logpdf(state.eta[t], params.H.H * state.eta[t - 1], *u_chol);
  }
  return bern + latent + fine;
}

std::vector<Matrix> build_arctic_covariates(std::span<const ArcticTimeInputs> inputs) {
  std::vector<Matrix> out;
  out.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const auto& in = inputs[t];
    const std::pair<const char*, const std::vector<double>*> fields[] = {
        {"summer_anomaly", &in.summer_anomaly},
        {"winter_anomaly", &in.winter_anomaly},
        {"pole_distance", &in.pole_distance},
        {"coast_distance", &in.coast_distance},
        {"longitude", &in.longitude}};
    const std::size_t n = in.longitude.size();
    for (const auto& [name, v] : fields) {
      if (v->empty() && n != 0) {
        throw UsageError("time " + std::to_string(t + 1) + ": missing covariate " + name);
      }
      if (v->size() != n) {
        throw UsageError("time " + std::to_string(t + 1) + ": covariate " + name +
                         " has the wrong length");
      }
    }
    Matrix x(static_cast<Eigen::Index>(n), 9);
    if (n == 0) {
      out.push_back(std::move(x));
      continue;
    }
    const Eigen::Map<const Vector> su(in.summer_anomaly.data(), static_cast<Eigen::Index>(n));
    const Eigen::Map<const Vector> wi(in.winter_anomaly.data(), static_cast<Eigen::Index>(n));
    const double su_bar = su.mean();
    const double wi_bar = wi.mean();
    constexpr double deg = std::numbers::pi / 180.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const double pole = in.pole_distance[i];
      x(row, 0) = 1.0;
      x(row, 1) = su_bar;
      x(row, 2) = wi_bar;
      x(row, 3) = in.summer_anomaly[i] - su_bar;
      x(row, 4) = in.winter_anomaly[i] - wi_bar;
      x(row, 5) = std::cos(in.longitude[i] * deg);
      x(row, 6) = std::sin(in.longitude[i] * deg);
      x(row, 7) = pole;
      x(row, 8) = in.coast_distance[i] < kCoastCutoffKm ? pole : 0.0;
    }
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace stbhm
