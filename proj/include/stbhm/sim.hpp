#pragma once

#include "stbhm/common.hpp"
#include "stbhm/geometry.hpp"
#include "stbhm/model.hpp"

#include <array>
#include <cstdint>
#include <span>

namespace stbhm {

/// Simulation-study settings. Defaults reproduce the 100 x 100, T = 6 design
/// with a 2x2 + 6x6 bisquare basis.
struct SimConfig {
  int grid_nx = 100;
  int grid_ny = 100;
  std::size_t T = 6;
  std::vector<double> beta{5.0, -15.0};
  double sigma2 = 1.0;  // target exponential covariance
  double psi = 0.2;
  std::array<double, 3> lambda{0.4, 0.4, 0.035};
  double sigma2_xi = 0.05;
  double small_scale_fraction = 0.95;
  Rectangle mbd{0.7, 1.0, 0.8, 1.0};
  std::size_t mar_count = 600;
  std::uint64_t seed = 1;
  std::vector<GridCount> basis_counts{{2, 2}, {6, 6}};
  bool boundary_extension = true;
  std::size_t adjacency_k = 4;
};

void validate_sim_config(const SimConfig& cfg);

/// Everything fixed before any randomness: grid, basis, covariates and the
/// true parameters.
struct SimDesign {
  std::vector<Location> locations;  // N grid cell centers
  BasisSystem basis;
  Matrix S;  // N x r, standardized over the grid
  Matrix X;  // N x 2: intercept, distance to (0.5, 0.5)
  ModelParams truth;
};

struct SimOutput {
  StDataset data;  // every grid location at every time
  std::vector<Vector> y;
  std::vector<Vector> p;
  LatentState latent;
};

struct HoldoutPartition {
  std::vector<IndexVector> training;  // times 1..T-1
  std::vector<IndexVector> mbd;
  std::vector<IndexVector> mar;
  IndexVector forecast;  // all locations at time T
};

Matrix exponential_cov_matrix(std::span<const Location> locations, double sigma2, double psi);

/// argmin_K ||S K S' - Sigma0||_F = (S'S)^-1 S' Sigma0 S (S'S)^-1, symmetrized.
/// Throws NumericalError with the numerical rank when S is rank deficient.
Matrix frobenius_fit_K(const Matrix& s, const Matrix& sigma0);

/// Same minimizer with Sigma0 from the exponential covariance, streamed so the
/// N x N matrix is never stored.
Matrix frobenius_fit_K_exponential(const Matrix& s, std::span<const Location> locations,
                                   double sigma2, double psi);

struct ScaledK {
  Matrix K;
  double sigma2_xi = 0.0;
};

/// K = f K0 / (trace(S K0 S') / N), sigma2_xi = total - f.
ScaledK scale_K(const Matrix& k0, const Matrix& s, double small_scale_fraction,
                double total_variance = 1.0);

SimDesign build_sim_design(const SimConfig& cfg);

/// Forward simulation from a design. K and U may be positive semidefinite
/// (including zero) here; eta_1 ~ N(0, K), eta_t = H eta_{t-1} + N(0, U).
SimOutput simulate_from_design(const SimDesign& design, std::size_t T, std::uint64_t seed);

SimOutput simulate_dataset(const SimConfig& cfg);

HoldoutPartition partition_holdout(const StDataset& data, const SimConfig& cfg);

double rmspe(std::span<const double> predictions, std::span<const double> truth);

}  // namespace stbhm
