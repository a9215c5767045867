#pragma once

// Functionals of predictive fields: latitude bands, Hovmoller matrices,
// temporal semivariograms, classification accuracy and ice/water transitions.

#include "stbhm/common.hpp"
#include "stbhm/geometry.hpp"

#include <optional>
#include <span>
#include <vector>

namespace stbhm {

/// Type-7 (linear interpolation) sample quantile, q in [0, 1].
double quantile_type7(std::span<const double> values, double q);
/// Same, for values already sorted ascending.
double quantile_type7_sorted(std::span<const double> sorted, double q);

struct FiveNumber {
  std::size_t count = 0;  // 0 marks an empty set; the statistics are then NaN
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double mean = 0.0;
  bool empty() const { return count == 0; }
};

FiveNumber five_number(std::span<const double> values);

struct BandSpec {
  double lat0 = 0.0;
  double half_width = 0.5;  // degrees
};

/// Indices of locations with coord2 strictly inside (lat0 - w, lat0 + w).
IndexVector band_members(std::span<const Location> locations, const BandSpec& band);

/// Five-number summary plus mean of `field` over the band. An empty band
/// gives count = 0.
FiveNumber band_stats(std::span<const double> field, std::span<const Location> locations,
                      const BandSpec& band);

struct HovmollerSpec {
  Location reference;
  double half_bandwidth = 37.5;
  std::vector<double> bins;  // ascending bin centers
  std::optional<IndexVector> mask;
  std::vector<double> levels;  // crossing levels, e.g. {0.9, 0.5}; empty for none
};

struct HovmollerResult {
  Matrix values;  // bins x T, NaN where a bin has no locations
  std::vector<std::vector<std::optional<double>>> crossings;  // [level][t]
};

/// Leftmost distance at which the binned profile crosses `level`, by linear
/// interpolation between adjacent non-missing bins with distinct values.
std::optional<double> leftmost_crossing(std::span<const double> bins,
                                        std::span<const double> profile, double level);

/// fields[t] holds one value per location.
HovmollerResult hovmoller(std::span<const Vector> fields, std::span<const Location> locations,
                          const HovmollerSpec& spec);

/// ceil((T - 1) / 2).
std::size_t semivariogram_max_lag(std::size_t T);

/// One draw: fields is T x n (time by location). Returns gamma(h), h = 1..M,
/// averaged over band members and all t with t + h inside the window.
std::vector<double> temporal_semivariogram(const Matrix& fields, const IndexVector& members);

struct SemivariogramSummary {
  std::vector<std::vector<double>> per_draw;  // [draw][h-1]
  std::vector<FiveNumber> by_lag;             // across draws
};

SemivariogramSummary temporal_semivariogram_draws(std::span<const Matrix> draws,
                                                  std::span<const Location> locations,
                                                  const BandSpec& band);

/// Fraction of locations where (mean_p > cutoff) agrees with z.
double classification_accuracy(std::span<const double> mean_p, std::span<const std::uint8_t> z,
                               double cutoff = 0.15);

struct TransitionFields {
  std::vector<double> ice_to_water;  // NaN where undefined
  std::vector<double> water_to_ice;
  std::vector<std::uint8_t> ice_to_water_defined;
  std::vector<std::uint8_t> water_to_ice_defined;
};

/// p_t, p_next: draws x locations of p-scale predictive draws.
TransitionFields transition_probabilities(const Matrix& p_t, const Matrix& p_next,
                                          double cutoff = 0.15);

struct TransitionRates {
  std::optional<double> ice_to_water;
  std::optional<double> water_to_ice;
  std::size_t ice_to_water_count = 0;  // observed transitions
  std::size_t water_to_ice_count = 0;
};

/// Share of observed transitions whose probability exceeds the threshold;
/// undefined probabilities never count as detections.
TransitionRates transition_classification_rates(const TransitionFields& fields,
                                                std::span<const std::uint8_t> z_t,
                                                std::span<const std::uint8_t> z_next,
                                                double threshold = 0.5);

}  // namespace stbhm
