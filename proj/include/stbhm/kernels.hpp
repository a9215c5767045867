#pragma once

// Data-parallel inner loops. Each kernel has an OpenMP version in
// stbhm::kernels and a plain serial version in stbhm::kernels::reference.
// The two produce bit-identical results for any thread count: per-element
// work is independent, randomness comes from per-element counter streams,
// and reductions go through pairwise_sum over a materialized term buffer.

#include "stbhm/common.hpp"
#include "stbhm/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <span>

namespace stbhm {

/// log p(z | y) for the logit-Bernoulli model, -log(1 + exp(-(2z-1) y)).
inline double bernoulli_logpmf(std::uint8_t z, double y) {
  const double m = z ? -y : y;  // softplus(m)
  return m > 0.0 ? -(m + std::log1p(std::exp(-m))) : -std::log1p(std::exp(m));
}

namespace kernels {

/// Inputs of one fine-scale sweep at a single time point.
struct XiSweepArgs {
  std::span<const double> offset;   // x'beta + S eta_t for each element
  std::span<const std::uint8_t> z;  // empty: no data term, prior only
  std::span<double> xi;             // updated in place
  double sigma2 = 1.0;
  double step_sd = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t time = 0;
};

/// Unstandardized basis values, out is N x r.
void evaluate_basis(std::span<const Location> locations, const BasisSystem& system, Matrix& out);

/// Sum of Bernoulli log-probabilities at linear predictor `y`.
double bernoulli_loglik(std::span<const double> y, std::span<const std::uint8_t> z);

/// Scalar random-walk Metropolis for every xi element; returns the number of
/// accepted proposals.
std::size_t xi_sweep(const XiSweepArgs& args);

/// Sigma0 * S for the exponential covariance sigma2 exp(-h/psi) without
/// materializing the N x N matrix.
Matrix exp_cov_times(std::span<const Location> locations, double sigma2, double psi,
                     const Matrix& s);

namespace reference {

void evaluate_basis(std::span<const Location> locations, const BasisSystem& system, Matrix& out);
double bernoulli_loglik(std::span<const double> y, std::span<const std::uint8_t> z);
std::size_t xi_sweep(const XiSweepArgs& args);
Matrix exp_cov_times(std::span<const Location> locations, double sigma2, double psi,
                     const Matrix& s);

}  // namespace reference

/// Number of threads the parallel kernels will use.
int thread_count();
void set_thread_count(int n);

}  // namespace kernels
}  // namespace stbhm
