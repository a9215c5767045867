#pragma once

#include "stbhm/common.hpp"

#include <filesystem>
#include <span>
#include <string_view>

namespace stbhm {

/// Earth radius used for every great-circle distance, in km.
inline constexpr double kEarthRadiusKm = 6371.0;

enum class Metric { planar, great_circle };

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);

/// A point in the study domain. For the great-circle metric coord1 is
/// longitude and coord2 latitude, both in degrees.
struct Location {
  double coord1 = 0.0;
  double coord2 = 0.0;
  Metric metric = Metric::planar;

  friend bool operator==(const Location&, const Location&) = default;
};

/// Throws UsageError when the coordinates are not valid for the metric.
void validate_location(const Location& loc);

/// Planar Euclidean or haversine great-circle distance (km).
double distance(const Location& a, const Location& b);

/// Bisquare kernel as a function of distance: (1 - (d/phi)^2)^2 on d < phi.
inline double bisquare_at_distance(double d, double aperture) {
  if (d >= aperture) return 0.0;
  const double u = d / aperture;
  const double v = 1.0 - u * u;
  return v * v;
}

double bisquare(const Location& s, const Location& center, double aperture);

struct BasisResolution {
  std::vector<Location> centers;
  double aperture = 1.0;
};

/// 1.5 times the minimum pairwise distance between the centers.
double default_aperture(std::span<const Location> centers);

struct Rectangle {
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;
};

struct GridCount {
  int nx = 1;
  int ny = 1;
};

/// Regular planar grids of centers, one per resolution, coarse first.
///
/// Without extension, an nx-by-ny resolution puts one center in the middle of
/// each of nx*ny equal cells of the domain. With `boundary_extension`, every
/// resolution after the first instead places (nx-2)*(ny-2) cell-centered
/// interior centers and adds a ring one spacing outside the domain, so the
/// requested count is the total count including the exterior ring.
std::vector<BasisResolution> planar_grid_centers(std::span<const GridCount> counts,
                                                 const Rectangle& domain,
                                                 bool boundary_extension);

/// Multi-resolution bisquare basis with frozen column standardization and the
/// coarse-to-fine adjacency used by the propagator.
struct BasisSystem {
  std::vector<BasisResolution> resolutions;
  Metric metric = Metric::planar;
  Vector col_means;  // empty until standardization is fitted
  Vector col_sds;
  Matrix adjacency;  // r2 x r1, entries in {0,1}

  std::size_t r1() const;
  std::size_t r2() const;
  std::size_t r() const { return r1() + r2(); }
  bool standardized() const { return col_sds.size() > 0; }

  /// Center and aperture of basis column j.
  std::pair<Location, double> column(std::size_t j) const;
};

/// Assemble a system from resolutions. Adjacency is built between the first
/// resolution and the concatenation of all later ones with `adjacency_k`
/// nearest neighbors; pass 0 to skip it.
BasisSystem make_basis_system(std::vector<BasisResolution> resolutions, Metric metric,
                              std::size_t adjacency_k);

/// Computes and stores column means and sample sds on the reference set.
/// Throws NumericalError naming the first column with zero sample sd.
void fit_standardization(BasisSystem& system, std::span<const Location> reference);

/// N x r matrix of basis values; standardized with the stored statistics when
/// `standardize` is set.
Matrix build_basis_matrix(std::span<const Location> locations, const BasisSystem& system,
                          bool standardize);

/// R(i,j) = 1 iff fine center i is among the k nearest fine centers of coarse
/// center j; ties go to the lower fine index.
Matrix build_adjacency(const BasisResolution& coarse, const BasisResolution& fine, std::size_t k,
                       Metric metric);

/// Reads `res,coord1,coord2` rows (res is 1-based). Apertures default to
/// 1.5 x minimum spacing unless `aperture_overrides` supplies one per
/// resolution.
std::vector<BasisResolution> read_centers_csv(const std::filesystem::path& path, Metric metric,
                                              std::span<const double> aperture_overrides = {});

void write_centers_csv(const std::filesystem::path& path,
                       std::span<const BasisResolution> resolutions);

}  // namespace stbhm
