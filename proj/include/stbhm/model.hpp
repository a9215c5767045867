#pragma once

#include "stbhm/common.hpp"
#include "stbhm/geometry.hpp"

#include <array>
#include <cstdint>
#include <span>

namespace stbhm {

/// Observations at one time point.
struct TimeSlice {
  std::vector<Location> locations;
  std::vector<std::uint8_t> z;  // 0 = water, 1 = ice
  Matrix X;                     // N_t x p covariates
  std::size_t size() const { return locations.size(); }
};

/// Binary spatio-temporal observations, times 1..T stored at index 0..T-1.
struct StDataset {
  std::vector<TimeSlice> slices;

  std::size_t T() const { return slices.size(); }
  std::size_t p() const;
  std::size_t total_observations() const;
  /// All observed locations stacked in time order.
  std::vector<Location> stacked_locations() const;
};

/// Throws UsageError if z is not binary, X rows differ from the location
/// count, or p varies across time.
void validate_dataset(const StDataset& data);

/// Block-lower-triangular propagator [[l1 I, 0], [l3 R, l2 I]].
struct Propagator {
  std::array<double, 3> lambda{0.0, 0.0, 0.0};
  Matrix adjacency;  // r2 x r1
  Matrix H;
};

Propagator build_propagator(double lambda1, double lambda2, double lambda3,
                            const Matrix& adjacency);

struct StationarityReport {
  double radius = 0.0;
  bool stable = true;
};

/// Spectral radius of the block-triangular propagator, max(|l1|, |l2|).
StationarityReport spectral_stationarity(const Propagator& h);

struct ModelParams {
  Vector beta;
  Matrix K;
  Propagator H;
  Matrix U;
  double sigma2_xi = 0.0;
};

struct LatentState {
  std::vector<Vector> eta;  // T vectors of length r
  std::vector<Vector> xi;   // per time, one value per observed location
};

/// U = K - H K H'. Throws NumericalError carrying the smallest eigenvalue when
/// the result is not positive definite.
Matrix innovation_matrix(const Matrix& k, const Propagator& h);

/// Initial K for the next fitting period: H K H' + U.
Matrix propagate_covariance(const Matrix& k, const Propagator& h, const Matrix& u);

double logit(double p);
double inv_logit(double y);

/// x'beta + S eta_t + xi_t at every observed location of one time point.
Vector linear_predictor(const Matrix& x, const Vector& beta, const Matrix& s, const Vector& eta,
                        const Vector& xi);

/// log p(Z, eta, xi | theta): Bernoulli terms, eta_1 ~ N(0, K),
/// eta_t | eta_{t-1} ~ N(H eta_{t-1}, U), xi ~ N(0, sigma2_xi).
double complete_data_loglik(const StDataset& data, const LatentState& state,
                            const ModelParams& params, std::span<const Matrix> basis);

/// Fields behind the nine-column Arctic mean function, per time point.
/// Any empty vector is treated as missing.
struct ArcticTimeInputs {
  std::vector<double> summer_anomaly;  // previous-year JJA anomaly at each location (K)
  std::vector<double> winter_anomaly;  // previous-year DJF anomaly (K)
  std::vector<double> pole_distance;   // km
  std::vector<double> coast_distance;  // km
  std::vector<double> longitude;       // degrees
};

inline constexpr double kCoastCutoffKm = 50.0;

/// Columns: 1, mean summer, mean winter, centered summer, centered winter,
/// cos(lon), sin(lon), pole distance, pole distance * I(coast < 50 km).
std::vector<Matrix> build_arctic_covariates(std::span<const ArcticTimeInputs> inputs);

}  // namespace stbhm
