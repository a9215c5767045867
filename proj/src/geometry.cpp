#include "stbhm/geometry.hpp"

#include "stbhm/csv.hpp"
#include "stbhm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

namespace stbhm {

std::string_view to_string(Metric m) {
  return m == Metric::planar ? "planar" : "great_circle";
}

Metric metric_from_string(std::string_view s) {
  if (s == "planar") return Metric::planar;
  if (s == "great_circle") return Metric::great_circle;
  throw UsageError("unknown metric '" + std::string(s) + "' (expected planar or great_circle)");
}

void validate_location(const Location& loc) {
  if (!std::isfinite(loc.coord1) || !std::isfinite(loc.coord2)) {
    throw UsageError("non-finite coordinates");
  }
  if (loc.metric == Metric::great_circle && (loc.coord2 < -90.0 || loc.coord2 > 90.0)) {
    throw UsageError("latitude outside [-90, 90]");
  }
}

double distance(const Location& a, const Location& b) {
  if (a.metric != b.metric) throw UsageError("distance between locations with different metrics");
  if (a.metric == Metric::planar) return std::hypot(a.coord1 - b.coord1, a.coord2 - b.coord2);
  constexpr double deg = std::numbers::pi / 180.0;
  const double lat1 = a.coord2 * deg;
  const double lat2 = b.coord2 * deg;
  const double dlat = lat2 - lat1;
  const double dlon = (b.coord1 - a.coord1) * deg;
  const double s1 = std::sin(0.5 * dlat);
  const double s2 = std::sin(0.5 * dlon);
  const double h = std::clamp(s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

double bisquare(const Location& s, const Location& center, double aperture) {
  if (!(aperture > 0.0)) throw DomainError("bisquare aperture must be positive");
  return bisquare_at_distance(distance(s, center), aperture);
}

double default_aperture(std::span<const Location> centers) {
  if (centers.size() < 2) {
    throw UsageError("default aperture needs at least two centers; supply an aperture override");
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      best = std::min(best, distance(centers[i], centers[j]));
    }
  }
  if (!(best > 0.0)) throw UsageError("duplicate basis-function centers");
  return 1.5 * best;
}

std::vector<BasisResolution> planar_grid_centers(std::span<const GridCount> counts,
                                                 const Rectangle& domain,
                                                 bool boundary_extension) {
  const double width = domain.x_max - domain.x_min;
  const double height = domain.y_max - domain.y_min;
  if (!(width > 0.0) || !(height > 0.0)) throw UsageError("degenerate domain rectangle");

  std::vector<BasisResolution> out;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const auto [nx, ny] = counts[k];
    if (nx < 1 || ny < 1) throw UsageError("grid counts must be at least 1 per axis");
    const bool extend = boundary_extension && k > 0;
    if (extend && (nx < 3 || ny < 3)) {
      throw UsageError("boundary extension needs at least 3 centers per axis");
    }
    const int interior_x = extend ? nx - 2 : nx;
    const int interior_y = extend ? ny - 2 : ny;
    const double dx = width / interior_x;
    const double dy = height / interior_y;
    const double shift = extend ? -0.5 : 0.5;

    BasisResolution res;
    res.centers.reserve(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
    for (int iy = 0; iy < ny; ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        res.centers.push_back({domain.x_min + (ix + shift) * dx, domain.y_min + (iy + shift) * dy,
                               Metric::planar});
      }
    }
    res.aperture = 1.5 * std::min(dx, dy);
    out.push_back(std::move(res));
  }
  return out;
}

std::size_t BasisSystem::r1() const {
  return resolutions.empty() ? 0 : resolutions.front().centers.size();
}

std::size_t BasisSystem::r2() const {
  std::size_t n = 0;
  for (std::size_t k = 1; k < resolutions.size(); ++k) n += resolutions[k].centers.size();
  return n;
}

std::pair<Location, double> BasisSystem::column(std::size_t j) const {
  for (const auto& res : resolutions) {
    if (j < res.centers.size()) return {res.centers[j], res.aperture};
    j -= res.centers.size();
  }
  throw UsageError("basis column index out of range");
}

BasisSystem make_basis_system(std::vector<BasisResolution> resolutions, Metric metric,
                              std::size_t adjacency_k) {
  if (resolutions.empty()) throw UsageError("basis system needs at least one resolution");
  for (const auto& res : resolutions) {
    if (res.centers.empty()) throw UsageError("basis resolution with no centers");
    if (!(res.aperture > 0.0)) throw UsageError("basis aperture must be positive");
    for (const auto& c : res.centers) {
      if (c.metric != metric) throw UsageError("center metric does not match the basis metric");
      validate_location(c);
    }
  }
  BasisSystem sys;
  sys.metric = metric;
  sys.resolutions = std::move(resolutions);
  if (sys.resolutions.size() > 1 && adjacency_k > 0) {
    BasisResolution fine;
    for (std::size_t k = 1; k < sys.resolutions.size(); ++k) {
      const auto& c = sys.resolutions[k].centers;
      fine.centers.insert(fine.centers.end(), c.begin(), c.end());
    }
    sys.adjacency = build_adjacency(sys.resolutions.front(), fine, adjacency_k, metric);
  } else {
    sys.adjacency = Matrix::Zero(static_cast<Eigen::Index>(sys.r2()),
                                 static_cast<Eigen::Index>(sys.r1()));
  }
  return sys;
}

void fit_standardization(BasisSystem& system, std::span<const Location> reference) {
  if (reference.size() < 2) throw UsageError("standardization needs at least two locations");
  Matrix raw;
  kernels::evaluate_basis(reference, system, raw);
  const double n = static_cast<double>(raw.rows());
  Vector means = raw.colwise().mean().transpose();
  Vector sds(raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const double ss = (raw.col(j).array() - means(j)).square().sum();
    sds(j) = std::sqrt(ss / (n - 1.0));
    if (!(sds(j) > 0.0)) {
      throw NumericalError("basis function " + std::to_string(j) +
                           " has zero sample standard deviation on the reference locations");
    }
  }
  system.col_means = std::move(means);
  system.col_sds = std::move(sds);
}

Matrix build_basis_matrix(std::span<const Location> locations, const BasisSystem& system,
                          bool standardize) {
  Matrix out;
  kernels::evaluate_basis(locations, system, out);
  if (standardize) {
    if (!system.standardized()) {
      throw UsageError("basis system has no standardization statistics");
    }
    out.rowwise() -= system.col_means.transpose();
    out.array().rowwise() /= system.col_sds.transpose().array();
  }
  return out;
}

Matrix build_adjacency(const BasisResolution& coarse, const BasisResolution& fine, std::size_t k,
                       Metric metric) {
  const std::size_t r1 = coarse.centers.size();
  const std::size_t r2 = fine.centers.size();
  if (k < 1 || k > r2) throw UsageError("adjacency neighbor count must be in [1, r2]");
  Matrix adj = Matrix::Zero(static_cast<Eigen::Index>(r2), static_cast<Eigen::Index>(r1));
  std::vector<std::size_t> order(r2);
  std::vector<double> dist(r2);
  for (std::size_t j = 0; j < r1; ++j) {
    Location c = coarse.centers[j];
    c.metric = metric;
    for (std::size_t i = 0; i < r2; ++i) {
      Location f = fine.centers[i];
      f.metric = metric;
      dist[i] = distance(c, f);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    for (std::size_t m = 0; m < k; ++m) {
      adj(static_cast<Eigen::Index>(order[m]), static_cast<Eigen::Index>(j)) = 1.0;
    }
  }
  return adj;
}

std::vector<BasisResolution> read_centers_csv(const std::filesystem::path& path, Metric metric,
                                              std::span<const double> aperture_overrides) {
  const auto table = csv::read(path);
  const auto c_res = table.column("res");
  const auto c_1 = table.column("coord1");
  const auto c_2 = table.column("coord2");
  std::map<long long, BasisResolution> by_res;
  for (const auto& row : table.rows) {
    const auto res = csv::parse_int(row.fields[c_res], row.line, "res");
    if (res < 1) throw UsageError("line " + std::to_string(row.line) + ": res must be >= 1");
    Location loc{csv::parse_double(row.fields[c_1], row.line, "coord1"),
                 csv::parse_double(row.fields[c_2], row.line, "coord2"), metric};
    validate_location(loc);
    by_res[res].centers.push_back(loc);
  }
  if (by_res.empty()) throw UsageError(path.string() + ": no centers");
  if (!aperture_overrides.empty() && aperture_overrides.size() != by_res.size()) {
    throw UsageError("aperture overrides must give one value per resolution");
  }
  std::vector<BasisResolution> out;
  std::size_t k = 0;
  for (auto& [res, r] : by_res) {
    r.aperture = aperture_overrides.empty() ? default_aperture(r.centers) : aperture_overrides[k];
    if (!(r.aperture > 0.0)) throw UsageError("aperture override must be positive");
    out.push_back(std::move(r));
    ++k;
  }
  return out;
}

void write_centers_csv(const std::filesystem::path& path,
                       std::span<const BasisResolution> resolutions) {
  auto out = csv::open_output(path);
  out << "res,coord1,coord2\n";
  for (std::size_t k = 0; k < resolutions.size(); ++k) {
    for (const auto& c : resolutions[k].centers) {
      out << (k + 1) << ',' << csv::format_double(c.coord1) << ',' << csv::format_double(c.coord2)
          << '\n';
    }
  }
}

}  // namespace stbhm
