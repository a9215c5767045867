#include "stbhm/sim.hpp"

#include "stbhm/kernels.hpp"
#include "stbhm/linalg.hpp"
#include "stbhm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stbhm {

namespace {

constexpr std::uint64_t kSimStream = 0x53494d;  // "SIM"
constexpr std::uint64_t kMarStream = 0x4d4152;  // "MAR"

// Square-root factor F with F F' = cov; cov may be positive semidefinite.
Matrix covariance_factor(const Matrix& cov) {
  if (auto llt = pd_cholesky(cov)) return llt->matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(cov));
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

Vector standard_normal(Rng& rng, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

bool inside(const Location& s, const Rectangle& r) {
  return s.coord1 >= r.x_min && s.coord1 <= r.x_max && s.coord2 >= r.y_min &&
         s.coord2 <= r.y_max;
}

}  // namespace

void validate_sim_config(const SimConfig& cfg) {
  if (cfg.grid_nx < 2 || cfg.grid_ny < 2) throw UsageError("simulation grid needs >= 2 per axis");
  if (cfg.T < 2) throw UsageError("simulation needs T >= 2");
  if (cfg.beta.size() != 2) throw UsageError("simulation beta must have two entries");
  if (!(cfg.sigma2 > 0.0) || !(cfg.psi > 0.0)) throw UsageError("sigma2 and psi must be positive");
  if (!(cfg.small_scale_fraction > 0.0 && cfg.small_scale_fraction < 1.0)) {
    throw UsageError("small_scale_fraction must lie in (0, 1)");
  }
  if (!(cfg.sigma2_xi >= 0.0)) throw UsageError("sigma2_xi must be nonnegative");
  if (cfg.basis_counts.empty()) throw UsageError("simulation basis needs at least one resolution");
  const auto& m = cfg.mbd;
  if (!(m.x_min >= 0.0 && m.x_max <= 1.0 && m.y_min >= 0.0 && m.y_max <= 1.0 &&
        m.x_min < m.x_max && m.y_min < m.y_max)) {
    throw UsageError("MBD rectangle must lie inside the unit square");
  }
}

Matrix exponential_cov_matrix(std::span<const Location> locations, double sigma2, double psi) {
  if (!(sigma2 > 0.0) || !(psi > 0.0)) throw DomainError("sigma2 and psi must be positive");
  const auto n = static_cast<Eigen::Index>(locations.size());
  Matrix c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c(i, i) = sigma2;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double h = distance(locations[static_cast<std::size_t>(i)],
                                locations[static_cast<std::size_t>(j)]);
      c(i, j) = c(j, i) = sigma2 * std::exp(-h / psi);
    }
  }
  return c;
}

namespace {

Eigen::LLT<Matrix> gram_factor(const Matrix& s) {
  Eigen::ColPivHouseholderQR<Matrix> qr(s);
  if (qr.rank() < s.cols()) {
    throw NumericalError("basis matrix is rank deficient (numerical rank " +
                         std::to_string(qr.rank()) + " of " + std::to_string(s.cols()) + ")");
  }
  Eigen::LLT<Matrix> gram(s.transpose() * s);
  if (gram.info() != Eigen::Success) throw NumericalError("S'S is not positive definite");
  return gram;
}

Matrix sandwich(const Eigen::LLT<Matrix>& gram, const Matrix& middle) {
  const Matrix left = gram.solve(middle);
  return symmetrize(gram.solve(left.transpose()));
}

}  // namespace

Matrix frobenius_fit_K(const Matrix& s, const Matrix& sigma0) {
  if (sigma0.rows() != s.rows() || sigma0.cols() != s.rows()) {
    throw UsageError("Sigma0 must be N x N with N = rows of S");
  }
  const auto gram = gram_factor(s);
  return sandwich(gram, s.transpose() * sigma0 * s);
}

Matrix frobenius_fit_K_exponential(const Matrix& s, std::span<const Location> locations,
                                   double sigma2, double psi) {
  if (static_cast<std::size_t>(s.rows()) != locations.size()) {
    throw UsageError("basis rows must match the location count");
  }
  const auto gram = gram_factor(s);
  const Matrix sigma_s = kernels::exp_cov_times(locations, sigma2, psi, s);
  return sandwich(gram, symmetrize(s.transpose() * sigma_s));
}

ScaledK scale_K(const Matrix& k0, const Matrix& s, double small_scale_fraction,
                double total_variance) {
  const double n = static_cast<double>(s.rows());
  const double trace = (s * k0).cwiseProduct(s).sum();  // trace(S K0 S')
  if (!(trace > 0.0)) throw NumericalError("trace(S K0 S') must be positive");
  ScaledK out;
  out.K = symmetrize(small_scale_fraction * k0 / (trace / n));
  require_positive_definite(out.K, "scaled K");
  out.sigma2_xi = total_variance - small_scale_fraction;
  return out;
}

SimDesign build_sim_design(const SimConfig& cfg) {
  validate_sim_config(cfg);
  SimDesign d;
  d.locations.reserve(static_cast<std::size_t>(cfg.grid_nx * cfg.grid_ny));
  for (int iy = 0; iy < cfg.grid_ny; ++iy) {
    for (int ix = 0; ix < cfg.grid_nx; ++ix) {
      d.locations.push_back({(ix + 0.5) / cfg.grid_nx, (iy + 0.5) / cfg.grid_ny, Metric::planar});
    }
  }
  auto res = planar_grid_centers(cfg.basis_counts, Rectangle{}, cfg.boundary_extension);
  d.basis = make_basis_system(std::move(res), Metric::planar,
                              cfg.basis_counts.size() > 1 ? cfg.adjacency_k : 0);
  fit_standardization(d.basis, d.locations);
  d.S = build_basis_matrix(d.locations, d.basis, true);

  const auto n = static_cast<Eigen::Index>(d.locations.size());
  d.X.resize(n, 2);
  const Location center{0.5, 0.5, Metric::planar};
  for (Eigen::Index i = 0; i < n; ++i) {
    d.X(i, 0) = 1.0;
    d.X(i, 1) = distance(d.locations[static_cast<std::size_t>(i)], center);
  }

  const Matrix k0 = frobenius_fit_K_exponential(d.S, d.locations, cfg.sigma2, cfg.psi);
  const auto scaled = scale_K(k0, d.S, cfg.small_scale_fraction);
  d.truth.beta = Eigen::Map<const Vector>(cfg.beta.data(), 2);
  d.truth.K = scaled.K;
  d.truth.H = build_propagator(cfg.lambda[0], cfg.lambda[1], cfg.lambda[2], d.basis.adjacency);
  d.truth.U = innovation_matrix(d.truth.K, d.truth.H);
  d.truth.sigma2_xi = cfg.sigma2_xi;
  return d;
}

SimOutput simulate_from_design(const SimDesign& design, std::size_t T, std::uint64_t seed) {
  Rng rng(stream_key(seed, kSimStream));
  const auto& th = design.truth;
  const auto r = th.K.rows();
  const auto n = static_cast<Eigen::Index>(design.locations.size());
  const Matrix k_factor = covariance_factor(th.K);
  const Matrix u_factor = covariance_factor(th.U);
  const double xi_sd = std::sqrt(th.sigma2_xi);
  const Vector mean = design.X * th.beta;

  SimOutput out;
  for (std::size_t t = 0; t < T; ++t) {
    Vector eta = t == 0 ? Vector(k_factor * standard_normal(rng, r))
                        : Vector(th.H.H * out.latent.eta.back() + u_factor * standard_normal(rng, r));
    Vector xi = xi_sd * standard_normal(rng, n);
    Vector y = mean + design.S * eta + xi;
    TimeSlice slice;
    slice.locations = design.locations;
    slice.X = design.X;
    slice.z.resize(static_cast<std::size_t>(n));
    Vector p(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = inv_logit(y(i));
      slice.z[static_cast<std::size_t>(i)] = rng.bernoulli(p(i)) ? 1 : 0;
    }
    out.data.slices.push_back(std::move(slice));
    out.latent.eta.push_back(std::move(eta));
    out.latent.xi.push_back(std::move(xi));
    out.y.push_back(std::move(y));
    out.p.push_back(std::move(p));
  }
  return out;
}

SimOutput simulate_dataset(const SimConfig& cfg) {
  const auto design = build_sim_design(cfg);
  return simulate_from_design(design, cfg.T, cfg.seed);
}

HoldoutPartition partition_holdout(const StDataset& data, const SimConfig& cfg) {
  const auto& m = cfg.mbd;
  if (!(m.x_min >= 0.0 && m.x_max <= 1.0 && m.y_min >= 0.0 && m.y_max <= 1.0)) {
    throw UsageError("MBD rectangle must lie inside the domain");
  }
  if (data.T() < 2) throw UsageError("hold-out partition needs at least two time points");
  HoldoutPartition part;
  const std::size_t T = data.T();
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const auto& locs = data.slices[t].locations;
    IndexVector mbd;
    IndexVector rest;
    for (std::size_t i = 0; i < locs.size(); ++i) (inside(locs[i], m) ? mbd : rest).push_back(i);
    if (cfg.mar_count > rest.size()) {
      throw UsageError("MAR count " + std::to_string(cfg.mar_count) +
                       " exceeds the locations outside the MBD block");
    }
    // Partial Fisher-Yates: the first mar_count entries are a uniform sample.
    Rng rng(stream_key(cfg.seed, kMarStream, t));
    for (std::size_t k = 0; k < cfg.mar_count; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng() % (rest.size() - k));
      std::swap(rest[k], rest[j]);
    }
    IndexVector mar(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(cfg.mar_count));
    IndexVector train(rest.begin() + static_cast<std::ptrdiff_t>(cfg.mar_count), rest.end());
    std::sort(mar.begin(), mar.end());
    std::sort(train.begin(), train.end());
    part.mbd.push_back(std::move(mbd));
    part.mar.push_back(std::move(mar));
    part.training.push_back(std::move(train));
  }
  part.forecast.resize(data.slices[T - 1].size());
  std::iota(part.forecast.begin(), part.forecast.end(), std::size_t{0});
  return part;
}

double rmspe(std::span<const double> predictions, std::span<const double> truth) {
  if (predictions.empty()) throw UsageError("RMSPE of an empty set");
  if (predictions.size() != truth.size()) throw UsageError("RMSPE inputs differ in length");
  double ss = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - truth[i];
    ss += e * e;
  }
  return std::sqrt(ss / static_cast<double>(predictions.size()));
}

}  // namespace stbhm
