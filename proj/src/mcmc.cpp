#include "stbhm/mcmc.hpp"

#include "stbhm/inverse_wishart.hpp"
#include "stbhm/kernels.hpp"
#include "stbhm/linalg.hpp"

#include <cmath>
#include <limits>

namespace stbhm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::uint64_t kChainStream = 0x434841494e;  // "CHAIN"
constexpr std::uint64_t kXiStream = 0x5849;           // "XI"
constexpr double kRobertsScale = 2.38 * 2.38;

std::span<const double> as_span(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

Vector standard_normal(Rng& rng, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

Matrix lower_factor(const Matrix& cov, std::string_view what) {
  auto llt = pd_cholesky(cov);
  if (!llt) {
    // Add a small ridge before giving up; proposal covariances only need to be
    // usable, not exact.
    const double ridge = 1e-8 * std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
    llt = pd_cholesky(cov + ridge * Matrix::Identity(cov.rows(), cov.cols()));
    if (!llt) require_positive_definite(cov, what);
  }
  return llt->matrixL();
}

// Scatter sum_{s>=1} e_s e_s' + Phi_U, with eta_t replaced by `override` when
// `t` is in range.
Matrix scatter_with(std::span<const Vector> eta, const Matrix& h, const Matrix& phi_u,
                    std::size_t t, const Vector* override) {
  Matrix out = phi_u;
  auto get = [&](std::size_t s) -> const Vector& {
    return (override != nullptr && s == t) ? *override : eta[s];
  };
  for (std::size_t s = 1; s < eta.size(); ++s) {
    const Vector e = get(s) - h * get(s - 1);
    out.selfadjointView<Eigen::Lower>().rankUpdate(e);
  }
  return out.selfadjointView<Eigen::Lower>();
}

double collapsed_k_term(const Vector& eta1, const PriorSpec& priors) {
  Matrix a = priors.Phi_K;
  a.selfadjointView<Eigen::Lower>().rankUpdate(eta1);
  const auto ld = log_det_pd(Matrix(a.selfadjointView<Eigen::Lower>()));
  return ld ? -0.5 * (priors.nu_K + 1.0) * *ld : kNegInf;
}

double collapsed_u_term_of(const Matrix& scatter, const PriorSpec& priors, std::size_t T) {
  if (T < 2) return 0.0;
  const auto ld = log_det_pd(scatter);
  return ld ? -0.5 * (priors.nu_U + static_cast<double>(T) - 1.0) * *ld : kNegInf;
}

}  // namespace

PriorSpec default_priors(const Matrix& k_plugin, const Matrix& u_plugin, double sigma2_xi) {
  const double r = static_cast<double>(k_plugin.rows());
  PriorSpec p;
  p.nu_K = 2.0 * r;
  p.nu_U = 2.0 * r;
  p.Phi_K = symmetrize((3.0 * r + 1.0) * k_plugin);
  p.Phi_U = symmetrize((3.0 * r + 1.0) * u_plugin);
  p.sigma2_xi = sigma2_xi;
  return p;
}

void validate_priors(const PriorSpec& priors, std::size_t r) {
  const auto rr = static_cast<Eigen::Index>(r);
  if (priors.Phi_K.rows() != rr || priors.Phi_K.cols() != rr || priors.Phi_U.rows() != rr ||
      priors.Phi_U.cols() != rr) {
    throw UsageError("prior scale matrices must be r x r with r = " + std::to_string(r));
  }
  if (!(priors.nu_K > static_cast<double>(r) - 1.0) ||
      !(priors.nu_U > static_cast<double>(r) - 1.0)) {
    throw UsageError("inverse-Wishart degrees of freedom must exceed r - 1");
  }
  if (!is_positive_definite(priors.Phi_K)) throw UsageError("Phi_K is not positive definite");
  if (!is_positive_definite(priors.Phi_U)) throw UsageError("Phi_U is not positive definite");
  if (!(priors.sigma2_xi >= 0.0)) throw UsageError("sigma2_xi plug-in must be nonnegative");
  if (priors.beta_prior_sd && !(*priors.beta_prior_sd > 0.0)) {
    throw UsageError("beta prior sd must be positive");
  }
}

std::size_t ChainConfig::retained_draws() const {
  return iterations > burn_in ? (iterations - burn_in) / thin : 0;
}

void validate_chain_config(const ChainConfig& cfg) {
  if (cfg.burn_in >= cfg.iterations) throw UsageError("burn-in must be smaller than iterations");
  if (cfg.thin < 1) throw UsageError("thin must be at least 1");
  if (cfg.fixed_parameter_mode && !cfg.fixed_params) {
    throw UsageError("fixed-parameter mode needs pinned parameter values");
  }
  if (!(cfg.target_acceptance > 0.0 && cfg.target_acceptance < 1.0)) {
    throw UsageError("target acceptance must lie in (0, 1)");
  }
}

double lambda_from_tau(double tau) { return std::tanh(0.5 * tau); }

double tau_from_lambda(double lambda) {
  if (!(lambda > -1.0 && lambda < 1.0)) throw DomainError("lambda must lie in (-1, 1)");
  return std::log((1.0 + lambda) / (1.0 - lambda));
}

double log_jacobian_tau(double tau) {
  // log 2 + tau - 2 log(1 + e^tau), written to avoid overflow.
  const double a = std::abs(tau);
  return std::log(2.0) - a - 2.0 * std::log1p(std::exp(-a));
}

Matrix innovation_scatter(std::span<const Vector> eta, const Matrix& h, const Matrix& phi_u) {
  return scatter_with(eta, h, phi_u, eta.size(), nullptr);
}

Matrix sample_K(const Vector& eta1, const PriorSpec& priors, Rng& rng) {
  Matrix scale = priors.Phi_K + eta1 * eta1.transpose();
  return sample_inverse_wishart(priors.nu_K + 1.0, symmetrize(scale), rng);
}

Matrix sample_U(std::span<const Vector> eta, const Matrix& h, const PriorSpec& priors, Rng& rng) {
  if (eta.size() < 2) throw UsageError("sample_U needs at least two time points");
  const double dof = priors.nu_U + static_cast<double>(eta.size()) - 1.0;
  return sample_inverse_wishart(dof, innovation_scatter(eta, h, priors.Phi_U), rng);
}

double log_integrated_target(const StDataset& data, std::span<const Matrix> basis,
                             std::span<const Vector> eta, std::span<const Vector> xi,
                             const Vector& beta, const std::array<double, 3>& lambda,
                             const Matrix& adjacency, const PriorSpec& priors) {
  for (double l : lambda) {
    if (!(l > -1.0 && l < 1.0)) return kNegInf;
  }
  const auto T = data.T();
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto& s = data.slices[t];
    if (s.size() == 0) continue;
    const Vector y = linear_predictor(s.X, beta, basis[t], eta[t], xi[t]);
    total += kernels::bernoulli_loglik(as_span(y), s.z);
    if (priors.sigma2_xi > 0.0) total -= 0.5 * xi[t].squaredNorm() / priors.sigma2_xi;
  }
  total += collapsed_k_term(eta[0], priors);
  if (T > 1) {
    const auto h = build_propagator(lambda[0], lambda[1], lambda[2], adjacency);
    total += collapsed_u_term_of(innovation_scatter(eta, h.H, priors.Phi_U), priors, T);
  }
  return total;
}

// ---------------------------------------------------------------------------
// PosteriorSamples

std::size_t PosteriorSamples::xi_total() const {
  std::size_t n = 0;
  for (auto v : n_per_time) n += v;
  return n;
}

std::size_t PosteriorSamples::xi_offset(std::size_t t) const {
  std::size_t n = 0;
  for (std::size_t s = 0; s < t; ++s) n += n_per_time[s];
  return n;
}

Eigen::Map<const Vector> PosteriorSamples::beta_draw(std::size_t d) const {
  return {beta.data() + d * p, static_cast<Eigen::Index>(p)};
}

Eigen::Map<const Vector> PosteriorSamples::eta_draw(std::size_t d, std::size_t t) const {
  return {eta.data() + (d * T + t) * r, static_cast<Eigen::Index>(r)};
}

Eigen::Map<const Vector> PosteriorSamples::xi_draw(std::size_t d, std::size_t t) const {
  if (!has_xi) throw UsageError("posterior samples were stored without xi draws");
  return {xi.data() + d * xi_total() + xi_offset(t), static_cast<Eigen::Index>(n_per_time[t])};
}

Eigen::Map<const Matrix> PosteriorSamples::K_draw(std::size_t d) const {
  // Symmetric, so row-major storage reads the same as column-major.
  return {K.data() + d * r * r, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)};
}

Eigen::Map<const Matrix> PosteriorSamples::U_draw(std::size_t d) const {
  return {U.data() + d * r * r, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)};
}

std::array<double, 3> PosteriorSamples::lambda_draw(std::size_t d) const {
  return {lambda[3 * d], lambda[3 * d + 1], lambda[3 * d + 2]};
}

Matrix PosteriorSamples::H_draw(std::size_t d) const {
  const auto l = lambda_draw(d);
  return build_propagator(l[0], l[1], l[2], adjacency).H;
}

Vector PosteriorSamples::beta_mean() const {
  Vector m = Vector::Zero(static_cast<Eigen::Index>(p));
  for (std::size_t d = 0; d < draws; ++d) m += beta_draw(d);
  return draws ? Vector(m / static_cast<double>(draws)) : m;
}

Matrix PosteriorSamples::K_mean() const {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
  for (std::size_t d = 0; d < draws; ++d) m += K_draw(d);
  return draws ? Matrix(m / static_cast<double>(draws)) : m;
}

Matrix PosteriorSamples::U_mean() const {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
  for (std::size_t d = 0; d < draws; ++d) m += U_draw(d);
  return draws ? Matrix(m / static_cast<double>(draws)) : m;
}

std::array<double, 3> PosteriorSamples::lambda_mean() const {
  std::array<double, 3> m{0.0, 0.0, 0.0};
  for (std::size_t d = 0; d < draws; ++d) {
    for (int j = 0; j < 3; ++j) m[j] += lambda[3 * d + j];
  }
  if (draws) {
    for (auto& v : m) v /= static_cast<double>(draws);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Sampler

Sampler::Sampler(StDataset data, std::vector<Matrix> basis, const BasisSystem& system,
                 PriorSpec priors, ChainConfig cfg, const InitResult& init)
    : data_(std::move(data)),
      basis_(std::move(basis)),
      priors_(std::move(priors)),
      cfg_(std::move(cfg)),
      rng_(stream_key(cfg_.seed, kChainStream)),
      r_(system.r()) {
  validate_chain_config(cfg_);
  const auto T = data_.T();
  if (basis_.size() != T) throw UsageError("one basis matrix per time point is required");

  const ModelParams& p = cfg_.fixed_parameter_mode ? *cfg_.fixed_params : init.params;
  state_.beta = p.beta;
  state_.lambda = p.H.lambda;
  state_.H = build_propagator(p.H.lambda[0], p.H.lambda[1], p.H.lambda[2], system.adjacency);
  state_.K = p.K;
  state_.U = p.U;
  state_.eta = init.state.eta;
  state_.xi = init.state.xi;
  if (cfg_.fixed_parameter_mode) {
    k_chol_ = pd_cholesky(state_.K);
    if (!k_chol_) require_positive_definite(state_.K, "pinned K");
    if (T > 1) {
      u_chol_ = pd_cholesky(state_.U);
      if (!u_chol_) require_positive_definite(state_.U, "pinned U");
    }
  }

  xb_.resize(T);
  s_eta_.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    xb_[t] = data_.slices[t].X * state_.beta;
    s_eta_[t] = basis_[t] * state_.eta[t];
  }

  const double p_dim = static_cast<double>(state_.beta.size());
  const Matrix& v_beta = cfg_.V_beta.size() ? cfg_.V_beta : init.V_beta;
  if (v_beta.size()) beta_factor_ = lower_factor(v_beta, "beta proposal covariance");
  log_a_beta_ = std::log(cfg_.a_beta > 0.0 ? cfg_.a_beta : kRobertsScale / std::max(1.0, p_dim));
  for (int j = 0; j < 3; ++j) {
    v_lambda_[j] = cfg_.V_lambda[j] > 0.0 ? cfg_.V_lambda[j] : init.V_lambda[j];
    log_a_lambda_[j] = std::log(cfg_.a_lambda[j] > 0.0 ? cfg_.a_lambda[j] : kRobertsScale);
  }
  const auto& v_eta = cfg_.V_eta.empty() ? init.V_eta : cfg_.V_eta;
  if (v_eta.size() != T) throw UsageError("need one eta proposal covariance per time point");
  eta_cov_ = v_eta;
  eta_mean_ = state_.eta;
  eta_factor_.resize(T);
  eta_samples_.assign(T, 0);
  const double a_eta =
      cfg_.a_eta > 0.0 ? cfg_.a_eta : kRobertsScale / static_cast<double>(std::max<std::size_t>(r_, 1));
  log_a_eta_.assign(T, std::log(a_eta));
  for (std::size_t t = 0; t < T; ++t) refresh_eta_factor(t);
  log_a_xi_ = std::log(cfg_.a_xi > 0.0 ? cfg_.a_xi : kRobertsScale);

  burn_stats_.eta.resize(T);
  post_stats_.eta.resize(T);
}

void Sampler::refresh_eta_factor(std::size_t t) {
  eta_factor_[t] = lower_factor(eta_cov_[t], "eta proposal covariance");
}

bool Sampler::adapting() const { return cfg_.adapt && iteration_ < cfg_.burn_in; }

double Sampler::gain() const { return std::pow(1.0 + static_cast<double>(iteration_), -0.6); }

AcceptanceStats& Sampler::current_stats() {
  return iteration_ < cfg_.burn_in ? burn_stats_ : post_stats_;
}

const AcceptanceStats& Sampler::acceptance(bool after_burn_in) const {
  return after_burn_in ? post_stats_ : burn_stats_;
}

void Sampler::set_z(std::size_t t, std::vector<std::uint8_t> z) {
  if (z.size() != data_.slices.at(t).size()) throw UsageError("z length mismatch");
  data_.slices[t].z = std::move(z);
}

void Sampler::set_state(ChainState s) {
  state_ = std::move(s);
  for (std::size_t t = 0; t < data_.T(); ++t) {
    xb_[t] = data_.slices[t].X * state_.beta;
    s_eta_[t] = basis_[t] * state_.eta[t];
  }
}

double Sampler::bernoulli_time(std::size_t t, const Vector& xb, const Vector& s_eta,
                               const Vector& xi) const {
  const auto& slice = data_.slices[t];
  if (slice.size() == 0) return 0.0;
  Vector y = xb + s_eta;
  if (xi.size()) y += xi;
  return kernels::bernoulli_loglik(as_span(y), slice.z);
}

double Sampler::collapsed_u_term(const Matrix& h) const {
  return collapsed_u_term_of(innovation_scatter(state_.eta, h, priors_.Phi_U), priors_,
                             data_.T());
}

double Sampler::eta_prior_terms(std::size_t t, const Vector& eta_t) const {
  const auto T = data_.T();
  const Matrix& h = state_.H.H;
  if (cfg_.fixed_parameter_mode) {
    double lp = t == 0 ? gaussian_logpdf(eta_t, Vector::Zero(eta_t.size()), *k_chol_)
                       : gaussian_logpdf(eta_t, h * state_.eta[t - 1], *u_chol_);
    if (t + 1 < T) lp += gaussian_logpdf(state_.eta[t + 1], h * eta_t, *u_chol_);
    return lp;
  }
  double lp = t == 0 ? collapsed_k_term(eta_t, priors_) : 0.0;
  if (T > 1) {
    lp += collapsed_u_term_of(scatter_with(state_.eta, h, priors_.Phi_U, t, &eta_t), priors_, T);
  }
  return lp;
}

double Sampler::eta_log_ratio(std::size_t t, const Vector& proposal) const {
  const Vector s_new = basis_[t] * proposal;
  const double d_bern = bernoulli_time(t, xb_[t], s_new, state_.xi[t]) -
                        bernoulli_time(t, xb_[t], s_eta_[t], state_.xi[t]);
  const double lp_new = eta_prior_terms(t, proposal);
  if (lp_new == kNegInf) return kNegInf;
  return d_bern + lp_new - eta_prior_terms(t, state_.eta[t]);
}

void Sampler::update_eta_block(std::size_t t) {
  const double scale = std::exp(0.5 * log_a_eta_[t]);
  const Vector proposal =
      state_.eta[t] + scale * (eta_factor_[t] * standard_normal(rng_, static_cast<Eigen::Index>(r_)));
  const double log_ratio = eta_log_ratio(t, proposal);
  const bool accept = std::log(rng_.uniform()) < log_ratio;
  auto& counts = current_stats().eta[t];
  ++counts.proposed;
  if (accept) {
    ++counts.accepted;
    ++last_eta_accepted;
    state_.eta[t] = proposal;
    s_eta_[t] = basis_[t] * proposal;
  }
  if (adapting()) {
    const double alpha = std::min(1.0, std::exp(log_ratio));
    const double g = gain();
    log_a_eta_[t] += g * (alpha - cfg_.target_acceptance);
    if (iteration_ >= cfg_.adaptation_window) {
      const double w = 1.0 / static_cast<double>(++eta_samples_[t] + cfg_.adaptation_window);
      const Vector diff = state_.eta[t] - eta_mean_[t];
      eta_mean_[t] += w * diff;
      eta_cov_[t] = (1.0 - w) * eta_cov_[t] + w * (1.0 - w) * diff * diff.transpose();
      refresh_eta_factor(t);
    }
  }
}

void Sampler::update_xi() {
  if (!(priors_.sigma2_xi > 0.0)) return;
  const double step_sd = std::sqrt(std::exp(log_a_xi_) * priors_.sigma2_xi);
  std::size_t accepted = 0;
  std::size_t proposed = 0;
  for (std::size_t t = 0; t < data_.T(); ++t) {
    const auto& slice = data_.slices[t];
    if (slice.size() == 0) continue;
    const Vector offset = xb_[t] + s_eta_[t];
    kernels::XiSweepArgs args;
    args.offset = as_span(offset);
    args.z = slice.z;
    args.xi = {state_.xi[t].data(), static_cast<std::size_t>(state_.xi[t].size())};
    args.sigma2 = priors_.sigma2_xi;
    args.step_sd = step_sd;
    args.seed = stream_key(cfg_.seed, kXiStream);
    args.iteration = iteration_;
    args.time = t;
    accepted += kernels::xi_sweep(args);
    proposed += slice.size();
  }
  auto& counts = current_stats().xi;
  counts.accepted += accepted;
  counts.proposed += proposed;
  last_xi_rate = proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
  if (adapting() && proposed) log_a_xi_ += gain() * (last_xi_rate - cfg_.target_acceptance);
}

void Sampler::update_beta() {
  const auto p = state_.beta.size();
  if (p == 0 || beta_factor_.size() == 0) return;
  const double scale = std::exp(0.5 * log_a_beta_);
  const Vector proposal = state_.beta + scale * (beta_factor_ * standard_normal(rng_, p));
  double log_ratio = 0.0;
  std::vector<Vector> xb_new(data_.T());
  for (std::size_t t = 0; t < data_.T(); ++t) {
    xb_new[t] = data_.slices[t].X * proposal;
    log_ratio += bernoulli_time(t, xb_new[t], s_eta_[t], state_.xi[t]) -
                 bernoulli_time(t, xb_[t], s_eta_[t], state_.xi[t]);
  }
  if (priors_.beta_prior_sd) {
    const double v = *priors_.beta_prior_sd * *priors_.beta_prior_sd;
    log_ratio -= 0.5 * (proposal.squaredNorm() - state_.beta.squaredNorm()) / v;
  }
  const bool accept = std::log(rng_.uniform()) < log_ratio;
  auto& counts = current_stats().beta;
  ++counts.proposed;
  last_beta_accepted = accept;
  if (accept) {
    ++counts.accepted;
    state_.beta = proposal;
    xb_ = std::move(xb_new);
  }
  if (adapting()) {
    log_a_beta_ += gain() * (std::min(1.0, std::exp(log_ratio)) - cfg_.target_acceptance);
  }
}

void Sampler::update_lambda() {
  const auto& adj = state_.H.adjacency;
  for (int j = 0; j < 3; ++j) {
    const double tau = tau_from_lambda(state_.lambda[j]);
    const double step = std::sqrt(std::exp(log_a_lambda_[j]) * v_lambda_[j]);
    const double tau_new = tau + step * rng_.normal();
    const double lam_new = lambda_from_tau(tau_new);
    double log_ratio = kNegInf;
    std::array<double, 3> cand = state_.lambda;
    cand[j] = lam_new;
    Propagator h_new;
    if (lam_new > -1.0 && lam_new < 1.0) {
      h_new = build_propagator(cand[0], cand[1], cand[2], adj);
      const double cur = collapsed_u_term(state_.H.H);
      const double nxt = collapsed_u_term(h_new.H);
      if (nxt != kNegInf) {
        log_ratio = nxt - cur + log_jacobian_tau(tau_new) - log_jacobian_tau(tau);
      }
    }
    const bool accept = std::log(rng_.uniform()) < log_ratio;
    auto& counts = current_stats().lambda[j];
    ++counts.proposed;
    last_lambda_accepted[j] = accept;
    if (accept) {
      ++counts.accepted;
      state_.lambda = cand;
      state_.H = std::move(h_new);
    }
    if (adapting()) {
      const double alpha = log_ratio == kNegInf ? 0.0 : std::min(1.0, std::exp(log_ratio));
      log_a_lambda_[j] += gain() * (alpha - cfg_.target_acceptance);
    }
  }
}

void Sampler::update_covariances() {
  state_.K = sample_K(state_.eta[0], priors_, rng_);
  state_.U = data_.T() >= 2 ? sample_U(state_.eta, state_.H.H, priors_, rng_)
                            : sample_inverse_wishart(priors_.nu_U, priors_.Phi_U, rng_);
}

void Sampler::iterate() {
  last_eta_accepted = 0;
  last_beta_accepted = false;
  last_lambda_accepted = {false, false, false};
  last_xi_rate = 0.0;
  for (std::size_t t = 0; t < data_.T(); ++t) update_eta_block(t);
  update_xi();
  if (!cfg_.fixed_parameter_mode) {
    update_beta();
    update_lambda();
    update_covariances();
  }
  ++iteration_;
}

// ---------------------------------------------------------------------------

std::vector<Matrix> basis_per_time(const StDataset& data, const BasisSystem& basis) {
  std::vector<Matrix> out;
  out.reserve(data.T());
  for (const auto& s : data.slices) {
    out.push_back(build_basis_matrix(s.locations, basis, basis.standardized()));
  }
  return out;
}

PosteriorSamples run_chain_from(const StDataset& data, const BasisSystem& basis,
                                std::vector<Matrix> basis_matrices, const PriorSpec& priors,
                                const ChainConfig& cfg, const InitResult& init) {
  validate_chain_config(cfg);
  Sampler sampler(data, std::move(basis_matrices), basis, priors, cfg, init);

  PosteriorSamples out;
  out.p = data.p();
  out.r = basis.r();
  out.T = data.T();
  for (const auto& s : data.slices) out.n_per_time.push_back(s.size());
  out.sigma2_xi = priors.sigma2_xi;
  out.fixed_parameter_mode = cfg.fixed_parameter_mode;
  out.has_xi = cfg.store_xi;
  out.adjacency = basis.adjacency;
  const std::size_t keep = cfg.retained_draws();
  const std::size_t rr = out.r * out.r;
  out.iteration.reserve(keep);
  out.beta.reserve(keep * out.p);
  out.lambda.reserve(keep * 3);
  out.tau.reserve(keep * 3);
  out.K.reserve(keep * rr);
  out.U.reserve(keep * rr);
  out.eta.reserve(keep * out.T * out.r);
  if (cfg.store_xi) out.xi.reserve(keep * out.xi_total());

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    try {
      sampler.iterate();
    } catch (const std::exception& e) {
      throw NumericalError("iteration " + std::to_string(it) + ": " + e.what());
    }
    if (it <= cfg.burn_in || (it - cfg.burn_in) % cfg.thin != 0) continue;
    const auto& st = sampler.state();
    out.iteration.push_back(it);
    out.beta.insert(out.beta.end(), st.beta.data(), st.beta.data() + st.beta.size());
    for (double l : st.lambda) {
      out.lambda.push_back(l);
      out.tau.push_back(tau_from_lambda(l));
    }
    for (Eigen::Index i = 0; i < st.K.rows(); ++i) {
      for (Eigen::Index j = 0; j < st.K.cols(); ++j) out.K.push_back(st.K(i, j));
    }
    for (Eigen::Index i = 0; i < st.U.rows(); ++i) {
      for (Eigen::Index j = 0; j < st.U.cols(); ++j) out.U.push_back(st.U(i, j));
    }
    for (const auto& e : st.eta) out.eta.insert(out.eta.end(), e.data(), e.data() + e.size());
    if (cfg.store_xi) {
      for (const auto& x : st.xi) out.xi.insert(out.xi.end(), x.data(), x.data() + x.size());
    }
    out.beta_accepted.push_back(sampler.last_beta_accepted ? 1 : 0);
    out.lambda_accepted.push_back({static_cast<std::uint8_t>(sampler.last_lambda_accepted[0]),
                                   static_cast<std::uint8_t>(sampler.last_lambda_accepted[1]),
                                   static_cast<std::uint8_t>(sampler.last_lambda_accepted[2])});
    out.eta_blocks_accepted.push_back(sampler.last_eta_accepted);
    out.xi_acceptance.push_back(sampler.last_xi_rate);
    ++out.draws;
  }
  out.burn_in = sampler.acceptance(false);
  out.post_burn_in = sampler.acceptance(true);
  return out;
}

PosteriorSamples run_chain(const StDataset& data, const BasisSystem& basis,
                           const PriorSpec& priors, const ChainConfig& cfg) {
  validate_dataset(data);
  validate_priors(priors, basis.r());
  validate_chain_config(cfg);
  auto mats = basis_per_time(data, basis);
  const auto init = init_state(data, basis, mats, priors, cfg);
  return run_chain_from(data, basis, std::move(mats), priors, cfg, init);
}

}  // namespace stbhm
