// Writes a small synthetic polar-cap dataset on a latitude/longitude ring grid
// with the nine-column Arctic mean function and a two-resolution basis.

#include "stbhm/csv.hpp"
#include "stbhm/geometry.hpp"
#include "stbhm/io.hpp"
#include "stbhm/linalg.hpp"
#include "stbhm/model.hpp"
#include "stbhm/rng.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <numbers>

using namespace stbhm;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::vector<Location> ring_grid() {
  std::vector<Location> out;
  for (double lat = 70.5; lat < 90.0; lat += 1.0) {
    for (int k = 0; k < 24; ++k) out.push_back({-180.0 + 15.0 * k + 7.5, lat, Metric::great_circle});
  }
  return out;
}

std::vector<BasisResolution> polar_centers() {
  BasisResolution coarse, fine;
  coarse.centers.push_back({0.0, 90.0, Metric::great_circle});
  for (int k = 0; k < 4; ++k) coarse.centers.push_back({-135.0 + 90.0 * k, 78.0, Metric::great_circle});
  coarse.aperture = 1500.0;
  for (int k = 0; k < 8; ++k) fine.centers.push_back({-157.5 + 45.0 * k, 73.0, Metric::great_circle});
  for (int k = 0; k < 6; ++k) fine.centers.push_back({-150.0 + 60.0 * k, 80.5, Metric::great_circle});
  for (int k = 0; k < 3; ++k) fine.centers.push_back({-120.0 + 120.0 * k, 86.5, Metric::great_circle});
  fine.aperture = 800.0;
  return {coarse, fine};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic polar-cap fixture"};
  std::string out;
  std::uint64_t seed = 2024;
  std::size_t T = 4;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--T", T, "Number of time points")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(out);
  const fs::path dir(out);
  const auto locs = ring_grid();
  const auto n = locs.size();
  const Location pole{0.0, 90.0, Metric::great_circle};
  Rng rng(seed);

  // Covariate inputs for T + 1 times; the last one backs the forecast targets.
  std::vector<ArcticTimeInputs> inputs(T + 1);
  for (std::size_t t = 0; t <= T; ++t) {
    auto& in = inputs[t];
    const double su_level = 0.4 * rng.normal();
    const double wi_level = 0.4 * rng.normal();
    const double phase = 2.0 * std::numbers::pi * rng.uniform();
    for (const auto& l : locs) {
      const double ramp = (90.0 - l.coord2) / 20.0;
      in.summer_anomaly.push_back(su_level + 0.8 * ramp * std::cos(l.coord1 * kDeg + phase));
      in.winter_anomaly.push_back(wi_level - 0.5 * ramp * std::sin(2.0 * l.coord1 * kDeg - phase));
      in.pole_distance.push_back(distance(l, pole));
      in.coast_distance.push_back(45.0 * (l.coord2 - 70.5) + 15.0 * std::abs(std::sin(2.0 * l.coord1 * kDeg)));
      in.longitude.push_back(l.coord1);
    }
  }
  const auto covs = build_arctic_covariates(inputs);

  auto basis = make_basis_system(polar_centers(), Metric::great_circle, 3);
  fit_standardization(basis, locs);
  const Matrix S = build_basis_matrix(locs, basis, true);
  const auto r = static_cast<Eigen::Index>(basis.r());

  Vector beta(9);
  beta << 45.0, 0.0, 0.0, -0.8, -0.5, 0.6, 0.4, -0.03, 0.006;
  const double sigma_xi = std::sqrt(0.05);
  const Matrix K = Matrix::Identity(r, r) * 0.15;
  const auto H = build_propagator(0.5, 0.5, 0.05, basis.adjacency);
  const Matrix U = innovation_matrix(K, H);
  const Eigen::LLT<Matrix> k_chol(K), u_chol(U);

  StDataset data;
  data.slices.resize(T);
  Vector eta(r);
  for (Eigen::Index i = 0; i < r; ++i) eta(i) = rng.normal();
  eta = k_chol.matrixL() * eta;
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      Vector e(r);
      for (Eigen::Index i = 0; i < r; ++i) e(i) = rng.normal();
      eta = H.H * eta + u_chol.matrixL() * e;
    }
    auto& s = data.slices[t];
    s.locations = locs;
    s.X = covs[t];
    const Vector y = s.X * beta + S * eta;
    for (std::size_t i = 0; i < n; ++i) {
      const double yi = y(static_cast<Eigen::Index>(i)) + sigma_xi * rng.normal();
      s.z.push_back(rng.bernoulli(inv_logit(yi)) ? 1 : 0);
    }
  }
  save_dataset(dir / "dataset.csv", data);
  write_centers_csv(dir / "centers.csv", basis.resolutions);

  {
    auto f = csv::open_output(dir / "inputs.csv");
    f << "t,coord1,coord2,x_su,x_wi,x_pl,d_cs\n";
    for (std::size_t t = 0; t <= T; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        f << t + 1 << ',' << csv::format_double(locs[i].coord1) << ',' << csv::format_double(locs[i].coord2)
          << ',' << csv::format_double(inputs[t].summer_anomaly[i]) << ','
          << csv::format_double(inputs[t].winter_anomaly[i]) << ','
          << csv::format_double(inputs[t].pole_distance[i]) << ','
          << csv::format_double(inputs[t].coast_distance[i]) << '\n';
      }
    }
  }
  auto write_targets = [&](const fs::path& p, std::size_t t0, std::size_t t1) {
    auto f = csv::open_output(p);
    f << "t,coord1,coord2";
    for (int j = 1; j <= 9; ++j) f << ",cov" << j;
    f << '\n';
    for (std::size_t t = t0; t < t1; ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        f << t + 1 << ',' << csv::format_double(locs[i].coord1) << ',' << csv::format_double(locs[i].coord2);
        for (Eigen::Index j = 0; j < 9; ++j) f << ',' << csv::format_double(covs[t](static_cast<Eigen::Index>(i), j));
        f << '\n';
      }
    }
  };
  write_targets(dir / "targets.csv", 0, T);
  write_targets(dir / "forecast_targets.csv", T, T + 1);
  {
    auto f = csv::open_output(dir / "mask.csv");
    f << "index\n";
    for (std::size_t i = 0; i < n; ++i) {
      if (locs[i].coord1 >= 0.0) f << i << '\n';
    }
  }
  write_json(dir / "config.json",
             Json{{"metric", "great_circle"},
                  {"basis", {{"apertures", {1500.0, 800.0}}, {"adjacency_k", 3}}},
                  {"plugin", {{"latent_variance", 0.15 * static_cast<double>(r)}, {"lambda", {0.5, 0.5, 0.05}}}},
                  {"sigma2_xi", 0.05},
                  {"chain", {{"iterations", 3000}, {"burn_in", 1000}, {"thin", 2}, {"seed", 11}}}});
  std::cout << "wrote " << n * T << " observations over " << T << " times, r = " << r << '\n';
  return 0;
}
