#include "stbhm/kernels.hpp"

#include "stbhm/linalg.hpp"
#include "stbhm/rng.hpp"

#include <vector>

#ifdef STBHM_HAVE_OPENMP
#include <omp.h>
#endif

namespace stbhm::kernels {

namespace {

inline double xi_log_target(double offset, std::uint8_t z, bool has_data, double xi,
                            double sigma2) {
  const double prior = -0.5 * xi * xi / sigma2;
  return has_data ? prior + bernoulli_logpmf(z, offset + xi) : prior;
}

// One scalar MH step with its own counter stream; shared by both code paths.
inline bool xi_step(const XiSweepArgs& a, std::size_t i) {
  Rng rng(stream_key(a.seed, a.iteration, a.time, i));
  const bool has_data = !a.z.empty();
  const std::uint8_t zi = has_data ? a.z[i] : 0;
  const double current = a.xi[i];
  const double proposal = current + a.step_sd * rng.normal();
  const double log_ratio = xi_log_target(a.offset[i], zi, has_data, proposal, a.sigma2) -
                           xi_log_target(a.offset[i], zi, has_data, current, a.sigma2);
  if (std::log(rng.uniform()) < log_ratio) {
    a.xi[i] = proposal;
    return true;
  }
  return false;
}

inline void basis_row(const Location& loc, const BasisSystem& system, Matrix& out,
                      Eigen::Index row) {
  Eigen::Index col = 0;
  for (const auto& res : system.resolutions) {
    for (const auto& c : res.centers) {
      out(row, col++) = bisquare_at_distance(distance(loc, c), res.aperture);
    }
  }
}

inline double exp_cov_entry(const Location& a, const Location& b, double sigma2, double psi) {
  return sigma2 * std::exp(-distance(a, b) / psi);
}

}  // namespace

int thread_count() {
#ifdef STBHM_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_count(int n) {
  if (n < 1) throw UsageError("thread count must be at least 1");
#ifdef STBHM_HAVE_OPENMP
  omp_set_num_threads(n);
#endif
}

void evaluate_basis(std::span<const Location> locations, const BasisSystem& system, Matrix& out) {
  out.resize(static_cast<Eigen::Index>(locations.size()), static_cast<Eigen::Index>(system.r()));
  const auto n = static_cast<std::ptrdiff_t>(locations.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    basis_row(locations[static_cast<std::size_t>(i)], system, out, i);
  }
}

double bernoulli_loglik(std::span<const double> y, std::span<const std::uint8_t> z) {
  std::vector<double> terms(y.size());
  const auto n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    terms[k] = bernoulli_logpmf(z[k], y[k]);
  }
  return pairwise_sum(terms);
}

std::size_t xi_sweep(const XiSweepArgs& args) {
  const auto n = static_cast<std::ptrdiff_t>(args.xi.size());
  std::size_t accepted = 0;
#pragma omp parallel for schedule(static) reduction(+ : accepted)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    accepted += xi_step(args, static_cast<std::size_t>(i)) ? 1 : 0;
  }
  return accepted;
}

Matrix exp_cov_times(std::span<const Location> locations, double sigma2, double psi,
                     const Matrix& s) {
  const auto n = static_cast<Eigen::Index>(locations.size());
  Matrix out = Matrix::Zero(n, s.cols());
#pragma omp parallel
  {
    Vector row(n);
#pragma omp for schedule(dynamic, 16)
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = exp_cov_entry(locations[static_cast<std::size_t>(i)],
                               locations[static_cast<std::size_t>(j)], sigma2, psi);
      }
      out.row(i) = row.transpose() * s;
    }
  }
  return out;
}

namespace reference {

void evaluate_basis(std::span<const Location> locations, const BasisSystem& system, Matrix& out) {
  out.resize(static_cast<Eigen::Index>(locations.size()), static_cast<Eigen::Index>(system.r()));
  for (std::size_t i = 0; i < locations.size(); ++i) {
    basis_row(locations[i], system, out, static_cast<Eigen::Index>(i));
  }
}

double bernoulli_loglik(std::span<const double> y, std::span<const std::uint8_t> z) {
  std::vector<double> terms(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) terms[i] = bernoulli_logpmf(z[i], y[i]);
  return pairwise_sum(terms);
}

std::size_t xi_sweep(const XiSweepArgs& args) {
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < args.xi.size(); ++i) accepted += xi_step(args, i) ? 1 : 0;
  return accepted;
}

Matrix exp_cov_times(std::span<const Location> locations, double sigma2, double psi,
                     const Matrix& s) {
  const auto n = static_cast<Eigen::Index>(locations.size());
  Matrix out = Matrix::Zero(n, s.cols());
  Vector row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      row(j) = exp_cov_entry(locations[static_cast<std::size_t>(i)],
                             locations[static_cast<std::size_t>(j)], sigma2, psi);
    }
    out.row(i) = row.transpose() * s;
  }
  return out;
}

}  // namespace reference
}  // namespace stbhm::kernels
