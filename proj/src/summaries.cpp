#include "stbhm/summaries.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stbhm {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

double quantile_type7_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw UsageError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw UsageError("quantile level must lie in [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile_type7(std::span<const double> values, double q) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return quantile_type7_sorted(v, q);
}

FiveNumber five_number(std::span<const double> values) {
  FiveNumber f;
  f.count = values.size();
  if (values.empty()) {
    f.min = f.q1 = f.median = f.q3 = f.max = f.mean = kNaN;
    return f;
  }
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  f.min = v.front();
  f.max = v.back();
  f.q1 = quantile_type7_sorted(v, 0.25);
  f.median = quantile_type7_sorted(v, 0.5);
  f.q3 = quantile_type7_sorted(v, 0.75);
  double s = 0.0;
  for (double x : values) s += x;
  f.mean = s / static_cast<double>(values.size());
  return f;
}

IndexVector band_members(std::span<const Location> locations, const BandSpec& band) {
  if (!(band.half_width > 0.0)) throw UsageError("band half-width must be positive");
  IndexVector out;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    const double lat = locations[i].coord2;
    if (lat > band.lat0 - band.half_width && lat < band.lat0 + band.half_width) out.push_back(i);
  }
  return out;
}

FiveNumber band_stats(std::span<const double> field, std::span<const Location> locations,
                      const BandSpec& band) {
  if (field.size() != locations.size()) throw UsageError("field and locations differ in length");
  std::vector<double> v;
  for (auto i : band_members(locations, band)) v.push_back(field[i]);
  return five_number(v);
}

std::optional<double> leftmost_crossing(std::span<const double> bins,
                                        std::span<const double> profile, double level) {
  for (std::size_t k = 0; k + 1 < bins.size(); ++k) {
    const double a = profile[k];
    const double b = profile[k + 1];
    if (std::isnan(a) || std::isnan(b) || a == b) continue;
    if ((a - level) * (b - level) <= 0.0) {
      return bins[k] + (level - a) * (bins[k + 1] - bins[k]) / (b - a);
    }
  }
  return std::nullopt;
}

HovmollerResult hovmoller(std::span<const Vector> fields, std::span<const Location> locations,
                          const HovmollerSpec& spec) {
  if (!(spec.half_bandwidth > 0.0)) throw UsageError("Hovmoller bandwidth must be positive");
  if (!std::is_sorted(spec.bins.begin(), spec.bins.end())) {
    throw UsageError("Hovmoller bins must be ascending");
  }
  const auto T = fields.size();
  const auto nb = spec.bins.size();
  IndexVector include;
  if (spec.mask) {
    include = *spec.mask;
    for (auto i : include) {
      if (i >= locations.size()) throw UsageError("mask index out of range");
    }
  } else {
    include.resize(locations.size());
    for (std::size_t i = 0; i < include.size(); ++i) include[i] = i;
  }
  std::vector<double> dist(locations.size());
  for (auto i : include) dist[i] = distance(locations[i], spec.reference);

  HovmollerResult res;
  res.values = Matrix::Constant(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(T), kNaN);
  for (std::size_t b = 0; b < nb; ++b) {
    IndexVector members;
    for (auto i : include) {
      if (dist[i] > spec.bins[b] - spec.half_bandwidth &&
          dist[i] < spec.bins[b] + spec.half_bandwidth) {
        members.push_back(i);
      }
    }
    if (members.empty()) continue;
    for (std::size_t t = 0; t < T; ++t) {
      if (static_cast<std::size_t>(fields[t].size()) != locations.size()) {
        throw UsageError("field length differs from location count");
      }
      double s = 0.0;
      for (auto i : members) s += fields[t](static_cast<Eigen::Index>(i));
      res.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(t)) =
          s / static_cast<double>(members.size());
    }
  }
  for (double level : spec.levels) {
    std::vector<std::optional<double>> row;
    for (std::size_t t = 0; t < T; ++t) {
      const Vector col = res.values.col(static_cast<Eigen::Index>(t));
      row.push_back(leftmost_crossing(spec.bins, {col.data(), nb}, level));
    }
    res.crossings.push_back(std::move(row));
  }
  return res;
}

std::size_t semivariogram_max_lag(std::size_t T) {
  if (T < 2) throw UsageError("semivariogram needs a window of at least two times");
  return T / 2;  // ceil((T-1)/2)
}

std::vector<double> temporal_semivariogram(const Matrix& fields, const IndexVector& members) {
  const auto T = static_cast<std::size_t>(fields.rows());
  const std::size_t M = semivariogram_max_lag(T);
  if (members.empty()) throw UsageError("semivariogram band has no locations");
  std::vector<double> gamma(M);
  for (std::size_t h = 1; h <= M; ++h) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t + h < T; ++t) {
      for (auto i : members) {
        const double d = fields(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) -
                         fields(static_cast<Eigen::Index>(t + h), static_cast<Eigen::Index>(i));
        s += d * d;
        ++n;
      }
    }
    gamma[h - 1] = 0.5 * s / static_cast<double>(n);
  }
  return gamma;
}

SemivariogramSummary temporal_semivariogram_draws(std::span<const Matrix> draws,
                                                  std::span<const Location> locations,
                                                  const BandSpec& band) {
  if (draws.empty()) throw UsageError("semivariogram needs at least one draw");
  const auto members = band_members(locations, band);
  SemivariogramSummary out;
  for (const auto& d : draws) {
    if (static_cast<std::size_t>(d.cols()) != locations.size()) {
      throw UsageError("draw width differs from location count");
    }
    out.per_draw.push_back(temporal_semivariogram(d, members));
  }
  const std::size_t M = out.per_draw[0].size();
  for (std::size_t h = 0; h < M; ++h) {
    std::vector<double> v;
    for (const auto& g : out.per_draw) v.push_back(g[h]);
    out.by_lag.push_back(five_number(v));
  }
  return out;
}

double classification_accuracy(std::span<const double> mean_p, std::span<const std::uint8_t> z,
                               double cutoff) {
  if (mean_p.size() != z.size()) throw UsageError("accuracy inputs differ in length");
  if (z.empty()) throw UsageError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const bool ice = mean_p[i] > cutoff;
    if (ice == (z[i] == 1)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(z.size());
}

TransitionFields transition_probabilities(const Matrix& p_t, const Matrix& p_next,
                                          double cutoff) {
  if (p_t.rows() != p_next.rows() || p_t.cols() != p_next.cols()) {
    throw UsageError("transition inputs must have the same draws and locations");
  }
  const auto n = static_cast<std::size_t>(p_t.cols());
  TransitionFields f;
  f.ice_to_water.assign(n, kNaN);
  f.water_to_ice.assign(n, kNaN);
  f.ice_to_water_defined.assign(n, 0);
  f.water_to_ice_defined.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    std::size_t ice = 0, ice_water = 0, water = 0, water_ice = 0;
    for (Eigen::Index d = 0; d < p_t.rows(); ++d) {
      const bool now_ice = p_t(d, c) >= cutoff;
      const bool next_ice = p_next(d, c) >= cutoff;
      if (now_ice) {
        ++ice;
        if (!next_ice) ++ice_water;
      } else {
        ++water;
        if (next_ice) ++water_ice;
      }
    }
    if (ice > 0) {
      f.ice_to_water[i] = static_cast<double>(ice_water) / static_cast<double>(ice);
      f.ice_to_water_defined[i] = 1;
    }
    if (water > 0) {
      f.water_to_ice[i] = static_cast<double>(water_ice) / static_cast<double>(water);
      f.water_to_ice_defined[i] = 1;
    }
  }
  return f;
}

TransitionRates transition_classification_rates(const TransitionFields& fields,
                                                std::span<const std::uint8_t> z_t,
                                                std::span<const std::uint8_t> z_next,
                                                double threshold) {
  const auto n = fields.ice_to_water.size();
  if (z_t.size() != n || z_next.size() != n) throw UsageError("transition rate inputs misaligned");
  TransitionRates r;
  std::size_t iw_hit = 0, wi_hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (z_t[i] == 1 && z_next[i] == 0) {
      ++r.ice_to_water_count;
      if (fields.ice_to_water_defined[i] && fields.ice_to_water[i] > threshold) ++iw_hit;
    } else if (z_t[i] == 0 && z_next[i] == 1) {
      ++r.water_to_ice_count;
      if (fields.water_to_ice_defined[i] && fields.water_to_ice[i] > threshold) ++wi_hit;
    }
  }
  if (r.ice_to_water_count) {
    r.ice_to_water = static_cast<double>(iw_hit) / static_cast<double>(r.ice_to_water_count);
  }
  if (r.water_to_ice_count) {
    r.water_to_ice = static_cast<double>(wi_hit) / static_cast<double>(r.water_to_ice_count);
  }
  return r;
}

}  // namespace stbhm
