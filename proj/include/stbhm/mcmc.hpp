#pragma once

// Hybrid sampler for the binary spatio-temporal model: inverse-Wishart Gibbs
// draws for K and U, adaptive random-walk Metropolis for beta, the propagator
// parameters and each eta_t block, and elementwise Metropolis for xi, with
// sigma2_xi held at a plug-in value.
//
// Outside fixed-parameter mode the Metropolis targets have K and U integrated
// out, so the K and U draws never feed back into the chain; they are taken at
// the end of each iteration from their full conditionals given the current
// eta and lambda. In fixed-parameter mode every parameter is pinned and only
// eta and xi move, with the ordinary Gaussian transition densities.

#include "stbhm/common.hpp"
#include "stbhm/geometry.hpp"
#include "stbhm/model.hpp"
#include "stbhm/rng.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace stbhm {

struct PriorSpec {
  double nu_K = 0.0;
  Matrix Phi_K;
  double nu_U = 0.0;
  Matrix Phi_U;
  std::optional<double> beta_prior_sd;  // nullopt: flat prior on beta
  double sigma2_xi = 0.05;              // plug-in, never sampled
};

/// nu = 2r and Phi = (3r + 1) x plug-in matrix for both K and U.
PriorSpec default_priors(const Matrix& k_plugin, const Matrix& u_plugin, double sigma2_xi);

/// Throws UsageError unless nu > r - 1 and Phi is symmetric PD for K and U.
void validate_priors(const PriorSpec& priors, std::size_t r);

struct ChainConfig {
  std::size_t iterations = 14000;
  std::size_t burn_in = 2000;
  std::size_t thin = 3;
  std::uint64_t seed = 1;

  // Initial step sizes; values <= 0 select 2.38^2 / dimension.
  double a_beta = 0.0;
  std::array<double, 3> a_lambda{0.0, 0.0, 0.0};
  double a_eta = 0.0;
  double a_xi = 0.0;

  // Proposal covariances; empty means "take them from the posterior mode".
  Matrix V_beta;
  std::array<double, 3> V_lambda{0.0, 0.0, 0.0};
  std::vector<Matrix> V_eta;

  bool adapt = true;
  std::size_t adaptation_window = 100;  // eta covariance learning starts after this
  double target_acceptance = 0.38;
  double acceptance_low = 0.26;
  double acceptance_high = 0.50;

  bool fixed_parameter_mode = false;
  std::optional<ModelParams> fixed_params;  // required in fixed-parameter mode

  bool store_xi = true;
  std::size_t newton_max_iterations = 100;
  double newton_tolerance = 1e-6;

  std::size_t retained_draws() const;
};

void validate_chain_config(const ChainConfig& cfg);

/// lambda = (e^tau - 1)/(e^tau + 1).
double lambda_from_tau(double tau);
double tau_from_lambda(double lambda);
/// log(d lambda / d tau) = log(2 e^tau / (e^tau + 1)^2).
double log_jacobian_tau(double tau);

/// IW(nu_K + 1, eta_1 eta_1' + Phi_K).
Matrix sample_K(const Vector& eta1, const PriorSpec& priors, Rng& rng);

/// IW(nu_U + T - 1, sum_t (eta_t - H eta_{t-1})(...)' + Phi_U); needs T >= 2.
Matrix sample_U(std::span<const Vector> eta, const Matrix& h, const PriorSpec& priors, Rng& rng);

/// Scale matrix sum_{t>=2} e_t e_t' + Phi_U with e_t = eta_t - H eta_{t-1}.
Matrix innovation_scatter(std::span<const Vector> eta, const Matrix& h, const Matrix& phi_u);

/// Log of the posterior with K and U integrated out, up to a constant:
/// Bernoulli terms, -(nu_K+1)/2 log|eta_1 eta_1' + Phi_K|,
/// -(nu_U+T-1)/2 log|sum e_t e_t' + Phi_U| (absent when T = 1), and
/// -xi'xi / (2 sigma2_xi). Returns -inf outside the support.
double log_integrated_target(const StDataset& data, std::span<const Matrix> basis,
                             std::span<const Vector> eta, std::span<const Vector> xi,
                             const Vector& beta, const std::array<double, 3>& lambda,
                             const Matrix& adjacency, const PriorSpec& priors);

/// Starting point and proposal covariances from a joint posterior mode of
/// (beta, eta, xi) at fixed covariance parameters.
struct InitResult {
  ModelParams params;
  LatentState state;
  Matrix V_beta;
  std::vector<Matrix> V_eta;
  std::array<double, 3> V_lambda{1.0, 1.0, 1.0};
  double gradient_norm = 0.0;  // max-abs gradient at the returned mode
  std::size_t newton_iterations = 0;
  double log_posterior = 0.0;
};

/// Damped Newton on the log complete-data posterior of (beta, eta, xi).
/// Covariances start at Phi/(nu - r - 1) and lambda at 0; in fixed-parameter
/// mode beta and the covariances are the pinned values and only (eta, xi)
/// are optimized. Throws NumericalError with the final gradient norm when
/// Newton does not converge.
InitResult init_state(const StDataset& data, const BasisSystem& basis,
                      std::span<const Matrix> basis_matrices, const PriorSpec& priors,
                      const ChainConfig& cfg);

struct AcceptanceCounts {
  std::size_t accepted = 0;
  std::size_t proposed = 0;
  double rate() const { return proposed ? static_cast<double>(accepted) / proposed : 0.0; }
};

struct AcceptanceStats {
  std::vector<AcceptanceCounts> eta;  // per time
  std::array<AcceptanceCounts, 3> lambda{};
  AcceptanceCounts beta;
  AcceptanceCounts xi;
};

/// Thinned post-burn-in draws, stored as contiguous row-major records.
struct PosteriorSamples {
  std::size_t p = 0;
  std::size_t r = 0;
  std::size_t T = 0;
  std::vector<std::size_t> n_per_time;
  std::size_t draws = 0;
  double sigma2_xi = 0.0;
  bool fixed_parameter_mode = false;
  bool has_xi = false;

  std::vector<std::size_t> iteration;
  std::vector<double> beta;    // draws x p
  std::vector<double> lambda;  // draws x 3
  std::vector<double> tau;     // draws x 3
  std::vector<double> K;       // draws x r x r
  std::vector<double> U;       // draws x r x r
  std::vector<double> eta;     // draws x T x r
  std::vector<double> xi;      // draws x sum(n_per_time), time-major

  // Per retained draw: acceptance flags of the iteration that produced it.
  std::vector<std::uint8_t> beta_accepted;
  std::vector<std::array<std::uint8_t, 3>> lambda_accepted;
  std::vector<std::uint32_t> eta_blocks_accepted;
  std::vector<double> xi_acceptance;

  AcceptanceStats post_burn_in;
  AcceptanceStats burn_in;
  Matrix adjacency;

  std::size_t xi_total() const;
  std::size_t xi_offset(std::size_t t) const;

  Eigen::Map<const Vector> beta_draw(std::size_t d) const;
  Eigen::Map<const Vector> eta_draw(std::size_t d, std::size_t t) const;
  Eigen::Map<const Vector> xi_draw(std::size_t d, std::size_t t) const;
  Eigen::Map<const Matrix> K_draw(std::size_t d) const;
  Eigen::Map<const Matrix> U_draw(std::size_t d) const;
  std::array<double, 3> lambda_draw(std::size_t d) const;
  /// Propagator realized from a draw's lambda.
  Matrix H_draw(std::size_t d) const;

  Vector beta_mean() const;
  Matrix K_mean() const;
  Matrix U_mean() const;
  std::array<double, 3> lambda_mean() const;
};

/// Mutable chain state plus cached linear-predictor pieces.
struct ChainState {
  Vector beta;
  std::array<double, 3> lambda{0.0, 0.0, 0.0};
  Propagator H;
  Matrix K;
  Matrix U;
  std::vector<Vector> eta;
  std::vector<Vector> xi;
};

/// One chain. Each update_* member is one Metropolis or Gibbs step; iterate()
/// runs them in the order eta_1..eta_T, xi, beta, lambda_1..3, K, U.
class Sampler {
 public:
  Sampler(StDataset data, std::vector<Matrix> basis, const BasisSystem& system,
          PriorSpec priors, ChainConfig cfg, const InitResult& init);

  void iterate();

  void update_eta_block(std::size_t t);
  void update_xi();
  void update_beta();
  void update_lambda();
  void update_covariances();

  /// Log acceptance ratio an eta_t proposal would get, exposed for testing.
  double eta_log_ratio(std::size_t t, const Vector& proposal) const;

  const ChainState& state() const { return state_; }
  const StDataset& data() const { return data_; }
  /// Replace the binary data (successive-substitution testing); caches are
  /// unaffected because they do not depend on z.
  void set_z(std::size_t t, std::vector<std::uint8_t> z);
  void set_state(ChainState s);

  std::size_t iteration() const { return iteration_; }
  bool adapting() const;
  const AcceptanceStats& acceptance(bool after_burn_in) const;

  double step_eta(std::size_t t) const { return log_a_eta_[t]; }

  // Flags from the most recent iteration.
  bool last_beta_accepted = false;
  std::array<bool, 3> last_lambda_accepted{};
  std::uint32_t last_eta_accepted = 0;
  double last_xi_rate = 0.0;

 private:
  double bernoulli_time(std::size_t t, const Vector& xb, const Vector& s_eta,
                        const Vector& xi) const;
  double eta_prior_terms(std::size_t t, const Vector& eta_t) const;
  double collapsed_u_term(const Matrix& h) const;
  AcceptanceStats& current_stats();
  double gain() const;
  void refresh_eta_factor(std::size_t t);

  StDataset data_;
  std::vector<Matrix> basis_;
  PriorSpec priors_;
  ChainConfig cfg_;
  ChainState state_;
  Rng rng_;
  std::size_t iteration_ = 0;
  std::size_t r_ = 0;

  std::vector<Vector> xb_;     // X_t beta
  std::vector<Vector> s_eta_;  // S_t eta_t

  Matrix beta_factor_;  // Cholesky of V_beta
  double log_a_beta_ = 0.0;
  std::array<double, 3> v_lambda_{};
  std::array<double, 3> log_a_lambda_{};
  std::vector<Matrix> eta_cov_;
  std::vector<Vector> eta_mean_;
  std::vector<Matrix> eta_factor_;
  std::vector<double> log_a_eta_;
  std::vector<std::size_t> eta_samples_;
  double log_a_xi_ = 0.0;

  // Fixed-parameter mode caches.
  std::optional<Eigen::LLT<Matrix>> k_chol_;
  std::optional<Eigen::LLT<Matrix>> u_chol_;

  AcceptanceStats burn_stats_;
  AcceptanceStats post_stats_;
};

/// Full run: posterior-mode initialization, iterations, burn-in, thinning.
PosteriorSamples run_chain(const StDataset& data, const BasisSystem& basis,
                           const PriorSpec& priors, const ChainConfig& cfg);

/// Run from an explicit initialization (skips init_state).
PosteriorSamples run_chain_from(const StDataset& data, const BasisSystem& basis,
                                std::vector<Matrix> basis_matrices, const PriorSpec& priors,
                                const ChainConfig& cfg, const InitResult& init);

/// Standardized basis matrix for each time slice.
std::vector<Matrix> basis_per_time(const StDataset& data, const BasisSystem& basis);

}  // namespace stbhm
