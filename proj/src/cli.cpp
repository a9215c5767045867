#include "stbhm/cli.hpp"

#include "stbhm/csv.hpp"
#include "stbhm/diagnostics.hpp"
#include "stbhm/io.hpp"
#include "stbhm/kernels.hpp"
#include "stbhm/predictor.hpp"
#include "stbhm/sim.hpp"
#include "stbhm/summaries.hpp"
#include "stbhm/validate.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <future>
#include <iostream>
#include <map>
#include <optional>

namespace stbhm {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kChainSeedStream = 0x5345454443;  // "SEEDC"

using CoordKey = std::pair<double, double>;

std::map<CoordKey, std::size_t> coordinate_index(std::span<const Location> locs) {
  std::map<CoordKey, std::size_t> m;
  for (std::size_t i = 0; i < locs.size(); ++i) m.emplace(CoordKey{locs[i].coord1, locs[i].coord2}, i);
  return m;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& f : csv::split(text)) out.push_back(csv::parse_double(f, 0, "list entry"));
  return out;
}

std::vector<double> parse_bins(const std::string& text) {
  std::vector<double> parts;
  std::string cur;
  for (char c : text + ":") {
    if (c == ':') {
      parts.push_back(csv::parse_double(cur, 0, "bins"));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
    throw UsageError("--bins expects start:stop:step with step > 0");
  }
  std::vector<double> bins;
  const auto n = static_cast<std::size_t>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
  for (std::size_t k = 0; k <= n; ++k) bins.push_back(parts[0] + static_cast<double>(k) * parts[2]);
  return bins;
}

IndexVector read_mask(const fs::path& path) {
  const auto t = csv::read(path);
  const auto c = t.column("index");
  IndexVector out;
  for (const auto& row : t.rows) {
    const auto v = csv::parse_int(row.fields[c], row.line, "index");
    if (v < 0) throw UsageError("line " + std::to_string(row.line) + ": mask index must be >= 0");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<std::size_t> apply_mask(std::size_t n, const std::optional<IndexVector>& mask) {
  if (!mask) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  IndexVector out;
  for (auto i : *mask) {
    if (i < n) out.push_back(i);
  }
  return out;
}

void write_metadata(std::ostream& out, const std::string& report, const Json& options) {
  out << "# stbhm " << kVersion << '\n';
  out << "# report=" << report << '\n';
  out << "# config_hash=" << config_hash(options) << '\n';
  out << "# options=" << options.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Prediction CSV written by `predict`, read back by the summaries.

struct FieldRow {
  std::size_t t = 0;  // 1-based
  Location loc;
  double mean = 0.0;
};

std::map<std::size_t, std::vector<FieldRow>> read_field(const fs::path& path, Metric metric) {
  const auto table = csv::read(path);
  const auto ct = table.column("t");
  const auto c1 = table.column("coord1");
  const auto c2 = table.column("coord2");
  const auto cm = table.column("mean");
  std::map<std::size_t, std::vector<FieldRow>> out;
  for (const auto& row : table.rows) {
    FieldRow f;
    f.t = static_cast<std::size_t>(csv::parse_int(row.fields[ct], row.line, "t"));
    f.loc = {csv::parse_double(row.fields[c1], row.line, "coord1"),
             csv::parse_double(row.fields[c2], row.line, "coord2"), metric};
    f.mean = csv::parse_double(row.fields[cm], row.line, "mean");
    out[f.t].push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
  std::string out;
  std::uint64_t seed = 1;
  int grid = 100;
  std::size_t T = 6;
  std::optional<std::size_t> mar_count;
  double sigma2_xi = 0.05;
  std::string config;
};

SimConfig sim_config_from(const SimulateOpts& o, Json& record) {
  SimConfig c;
  if (!o.config.empty()) {
    const auto j = read_json(o.config);
    c.grid_nx = j.value("grid_nx", c.grid_nx);
    c.grid_ny = j.value("grid_ny", c.grid_ny);
    c.T = j.value("T", c.T);
    if (j.contains("beta")) c.beta = j["beta"].get<std::vector<double>>();
    c.sigma2 = j.value("sigma2", c.sigma2);
    c.psi = j.value("psi", c.psi);
    if (j.contains("lambda")) c.lambda = j["lambda"].get<std::array<double, 3>>();
    c.sigma2_xi = j.value("sigma2_xi", c.sigma2_xi);
    c.small_scale_fraction = j.value("small_scale_fraction", c.small_scale_fraction);
    c.mar_count = j.value("mar_count", c.mar_count);
    c.adjacency_k = j.value("adjacency_k", c.adjacency_k);
  } else {
    c.grid_nx = c.grid_ny = o.grid;
    c.T = o.T;
    c.sigma2_xi = o.sigma2_xi;
    c.small_scale_fraction = 1.0 - o.sigma2_xi;
    // Keep the 6% hold-out share of the full-size design.
    c.mar_count = o.mar_count.value_or(static_cast<std::size_t>(
        std::llround(600.0 * c.grid_nx * c.grid_ny / 10000.0)));
  }
  c.seed = o.seed;
  validate_sim_config(c);
  record = {{"grid_nx", c.grid_nx},
            {"grid_ny", c.grid_ny},
            {"T", c.T},
            {"beta", c.beta},
            {"sigma2", c.sigma2},
            {"psi", c.psi},
            {"lambda", c.lambda},
            {"sigma2_xi", c.sigma2_xi},
            {"small_scale_fraction", c.small_scale_fraction},
            {"mar_count", c.mar_count},
            {"adjacency_k", c.adjacency_k},
            {"seed", c.seed}};
  return c;
}

void run_simulate(const SimulateOpts& o) {
  Json record;
  const auto cfg = sim_config_from(o, record);
  const auto design = build_sim_design(cfg);
  const auto sim = simulate_from_design(design, cfg.T, cfg.seed);
  const auto part = partition_holdout(sim.data, cfg);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  save_dataset(dir / "dataset.csv", sim.data);
  write_centers_csv(dir / "centers.csv", design.basis.resolutions);
  write_json(dir / "params.json", params_to_json(design.truth));
  {
    auto out = csv::open_output(dir / "truth.csv");
    out << "t,coord1,coord2,y,p\n";
    for (std::size_t t = 0; t < cfg.T; ++t) {
      for (std::size_t i = 0; i < design.locations.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        out << t + 1 << ',' << csv::format_double(design.locations[i].coord1) << ','
            << csv::format_double(design.locations[i].coord2) << ','
            << csv::format_double(sim.y[t](ii)) << ',' << csv::format_double(sim.p[t](ii))
            << '\n';
      }
    }
  }
  {
    auto out = csv::open_output(dir / "partition.csv");
    out << "t,index,role\n";
    for (std::size_t t = 0; t < part.training.size(); ++t) {
      for (auto i : part.training[t]) out << t + 1 << ',' << i << ",train\n";
      for (auto i : part.mbd[t]) out << t + 1 << ',' << i << ",mbd\n";
      for (auto i : part.mar[t]) out << t + 1 << ',' << i << ",mar\n";
    }
    for (auto i : part.forecast) out << cfg.T << ',' << i << ",forecast\n";
  }
  write_json(dir / "manifest.json", {{"version", kVersion},
                                     {"command", "simulate"},
                                     {"seed", cfg.seed},
                                     {"config", record},
                                     {"config_hash", config_hash(record)},
                                     {"basis", basis_to_json(design.basis)}});
}

// ---------------------------------------------------------------------------
// fit

struct FitOpts {
  std::string data, centers, config, out, fixed_params, init_from, plugin, metric;
  std::optional<std::size_t> iterations, burn_in, thin;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma_xi;
  std::size_t chains = 1;
  bool no_xi = false;
};

BasisSystem fit_basis(const FitOpts& o, const Json& cfg, Metric metric, const StDataset& data) {
  std::vector<double> apertures;
  const Json basis = cfg.value("basis", Json::object());
  if (basis.contains("apertures")) apertures = basis["apertures"].get<std::vector<double>>();
  std::vector<BasisResolution> res;
  if (!o.centers.empty()) {
    res = read_centers_csv(o.centers, metric, apertures);
  } else if (basis.contains("counts")) {
    if (metric != Metric::planar) throw UsageError("grid basis counts need the planar metric; pass --centers");
    std::vector<GridCount> counts;
    for (const auto& c : basis["counts"]) counts.push_back({c[0].get<int>(), c[1].get<int>()});
    Rectangle dom;
    if (basis.contains("domain")) {
      const auto d = basis["domain"].get<std::vector<double>>();
      if (d.size() != 4) throw UsageError("basis.domain must be [x_min, x_max, y_min, y_max]");
      dom = {d[0], d[1], d[2], d[3]};
    }
    res = planar_grid_centers(counts, dom, basis.value("boundary_extension", true));
    for (std::size_t k = 0; k < res.size() && k < apertures.size(); ++k) res[k].aperture = apertures[k];
  } else {
    throw UsageError("fit needs --centers or basis.counts in --config");
  }
  const std::size_t k = basis.value("adjacency_k", std::size_t{4});
  auto sys = make_basis_system(std::move(res), metric, k);
  // Standardize over the distinct observed locations.
  std::vector<Location> ref;
  std::map<CoordKey, bool> seen;
  for (const auto& s : data.slices) {
    for (const auto& l : s.locations) {
      if (seen.emplace(CoordKey{l.coord1, l.coord2}, true).second) ref.push_back(l);
    }
  }
  fit_standardization(sys, ref);
  return sys;
}

struct FitSetup {
  PriorSpec priors;
  ChainConfig chain;
  Json record;
};

FitSetup fit_setup(const FitOpts& o, const Json& cfg, const BasisSystem& basis) {
  FitSetup s;
  const auto r = static_cast<Eigen::Index>(basis.r());
  const Json jchain = cfg.value("chain", Json::object());
  auto& c = s.chain;
  c.iterations = o.iterations.value_or(jchain.value("iterations", c.iterations));
  c.burn_in = o.burn_in.value_or(jchain.value("burn_in", c.burn_in));
  c.thin = o.thin.value_or(jchain.value("thin", c.thin));
  c.seed = o.seed.value_or(jchain.value("seed", c.seed));
  c.adapt = jchain.value("adapt", c.adapt);
  c.target_acceptance = jchain.value("target_acceptance", c.target_acceptance);
  c.store_xi = !o.no_xi && jchain.value("store_xi", true);

  // Plug-in matrices for the inverse-Wishart scales.
  Matrix k_plug, u_plug;
  std::optional<double> plug_sigma;
  std::string plug_source;
  if (!o.plugin.empty()) {
    const auto p = load_params(o.plugin, basis.adjacency);
    k_plug = p.K;
    u_plug = p.U;
    plug_sigma = p.sigma2_xi;
    plug_source = "file";
  } else if (!o.init_from.empty()) {
    const auto prev = read_archive(o.init_from);
    if (prev.samples.r != basis.r()) throw UsageError("--init-from archive has a different basis size");
    const auto lam = prev.samples.lambda_mean();
    const auto h = build_propagator(lam[0], lam[1], lam[2], basis.adjacency);
    u_plug = prev.samples.U_mean();
    k_plug = propagate_covariance(prev.samples.K_mean(), h, u_plug);
    plug_sigma = prev.samples.sigma2_xi;
    plug_source = "previous period";
  } else {
    const Json jp = cfg.value("plugin", Json::object());
    const double v = jp.value("latent_variance", 1.0);
    if (!(v > 0.0)) throw UsageError("plugin.latent_variance must be positive");
    const auto lam = jp.value("lambda", std::array<double, 3>{0.0, 0.0, 0.0});
    k_plug = Matrix::Identity(r, r) * (v / static_cast<double>(r));
    u_plug = innovation_matrix(k_plug, build_propagator(lam[0], lam[1], lam[2], basis.adjacency));
    plug_source = "default";
  }
  const double sigma2 = o.sigma_xi.value_or(cfg.value("sigma2_xi", plug_sigma.value_or(0.05)));
  if (!(sigma2 >= 0.0)) throw UsageError("sigma2_xi must be nonnegative");
  s.priors = default_priors(k_plug, u_plug, sigma2);
  const Json jpri = cfg.value("priors", Json::object());
  const double rd = static_cast<double>(r);
  if (jpri.contains("phi_scale")) {
    const double f = jpri["phi_scale"].get<double>() / (3.0 * rd + 1.0);
    s.priors.Phi_K *= f;
    s.priors.Phi_U *= f;
  }
  s.priors.nu_K = jpri.value("nu_K", s.priors.nu_K);
  s.priors.nu_U = jpri.value("nu_U", s.priors.nu_U);
  if (jpri.contains("beta_prior_sd")) s.priors.beta_prior_sd = jpri["beta_prior_sd"].get<double>();
  validate_priors(s.priors, basis.r());

  if (!o.fixed_params.empty()) {
    c.fixed_parameter_mode = true;
    c.fixed_params = load_params(o.fixed_params, basis.adjacency);
    c.fixed_params->sigma2_xi = sigma2;
  }
  validate_chain_config(c);
  s.record = {{"iterations", c.iterations},
              {"burn_in", c.burn_in},
              {"thin", c.thin},
              {"seed", c.seed},
              {"adapt", c.adapt},
              {"target_acceptance", c.target_acceptance},
              {"store_xi", c.store_xi},
              {"fixed_parameter_mode", c.fixed_parameter_mode},
              {"plugin_source", plug_source},
              {"chains", o.chains},
              {"data", o.data},
              {"config", cfg}};
  return s;
}

void run_fit(const FitOpts& o) {
  if (o.chains < 1) throw UsageError("--chains must be at least 1");
  const Json cfg = o.config.empty() ? Json::object() : read_json(o.config);
  const Metric metric =
      metric_from_string(!o.metric.empty() ? o.metric : cfg.value("metric", std::string("planar")));
  const auto data = load_dataset(o.data, metric);
  const auto basis = fit_basis(o, cfg, metric, data);
  const auto setup = fit_setup(o, cfg, basis);
  if (static_cast<std::size_t>(data.p()) != 0 && setup.chain.fixed_params &&
      static_cast<std::size_t>(setup.chain.fixed_params->beta.size()) != data.p()) {
    throw UsageError("fixed beta length differs from the covariate count");
  }
  const auto mats = basis_per_time(data, basis);
  const auto init = init_state(data, basis, mats, setup.priors, setup.chain);

  std::vector<std::future<PosteriorSamples>> jobs;
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < o.chains; ++k) {
    ChainConfig c = setup.chain;
    c.seed = k == 0 ? setup.chain.seed : stream_key(setup.chain.seed, kChainSeedStream, k);
    seeds.push_back(c.seed);
    jobs.push_back(std::async(std::launch::async, [&, c] {
      return run_chain_from(data, basis, mats, setup.priors, c, init);
    }));
  }
  std::vector<PosteriorSamples> chains;
  for (auto& j : jobs) chains.push_back(j.get());

  const fs::path dir = o.out;
  for (std::size_t k = 0; k < chains.size(); ++k) {
    const fs::path cdir = o.chains == 1 ? dir : dir / ("chain_" + std::to_string(k + 1));
    Json info{{"command", "fit"},
              {"seed", seeds[k]},
              {"config", setup.record},
              {"config_hash", config_hash(setup.record)},
              {"priors", priors_to_json(setup.priors)},
              {"initialization",
               {{"newton_iterations", init.newton_iterations},
                {"gradient_norm", init.gradient_norm},
                {"log_posterior", init.log_posterior}}}};
    write_archive(cdir, chains[k], basis, data, info);
    write_trace_csv(cdir / "trace.csv", chains[k]);
  }
  if (chains[0].draws >= 2) write_diagnostics_csv(dir / "diagnostics.csv", diagnose(chains));
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
  std::string archive, targets, out, scale = "y";
  bool forecast = false;
  std::optional<std::uint64_t> seed;
};

struct Targets {
  std::vector<std::size_t> t;  // 1-based
  std::vector<Location> loc;
  Matrix X;
};

Targets read_targets(const fs::path& path, Metric metric, std::size_t p) {
  const auto table = csv::read(path);
  if (table.header.size() < 3 || table.header[0] != "t" || table.header[1] != "coord1" ||
      table.header[2] != "coord2") {
    throw UsageError(path.string() + ": header must start with t,coord1,coord2");
  }
  if (table.header.size() - 3 != p) {
    throw UsageError(path.string() + ": expected " + std::to_string(p) + " covariate columns, found " +
                     std::to_string(table.header.size() - 3));
  }
  Targets tg;
  tg.X.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(p));
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const auto& row = table.rows[k];
    const auto t = csv::parse_int(row.fields[0], row.line, "t");
    if (t < 1) throw UsageError("line " + std::to_string(row.line) + ": t must be >= 1");
    tg.t.push_back(static_cast<std::size_t>(t));
    Location l{csv::parse_double(row.fields[1], row.line, "coord1"),
               csv::parse_double(row.fields[2], row.line, "coord2"), metric};
    validate_location(l);
    tg.loc.push_back(l);
    for (std::size_t j = 0; j < p; ++j) {
      tg.X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
          csv::parse_double(row.fields[3 + j], row.line, table.header[3 + j]);
    }
  }
  return tg;
}

// y-scale draws for every target, columns in target order. Closed-form
// moments are used for fresh-xi targets and draw moments elsewhere.
PredictiveDraws predict_targets(const ChainArchive& a, const Targets& tg, bool forecast,
                                std::uint64_t seed) {
  const auto& s = a.samples;
  const auto m = static_cast<Eigen::Index>(tg.loc.size());
  PredictiveDraws all;
  all.draws.resize(static_cast<Eigen::Index>(s.draws), m);
  all.mean.resize(m);
  all.variance.resize(m);
  std::map<std::size_t, IndexVector> by_time;
  for (std::size_t k = 0; k < tg.t.size(); ++k) by_time[tg.t[k]].push_back(k);

  auto scatter = [&](const PredictiveDraws& part, const IndexVector& cols) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(cols[k]);
      const auto kk = static_cast<Eigen::Index>(k);
      all.draws.col(c) = part.draws.col(kk);
      all.mean(c) = part.mean(kk);
      all.variance(c) = part.variance(kk);
    }
  };
  auto subset = [&](const IndexVector& cols, Matrix& x, Matrix& b) {
    std::vector<Location> locs;
    x.resize(static_cast<Eigen::Index>(cols.size()), tg.X.cols());
    for (std::size_t k = 0; k < cols.size(); ++k) {
      x.row(static_cast<Eigen::Index>(k)) = tg.X.row(static_cast<Eigen::Index>(cols[k]));
      locs.push_back(tg.loc[cols[k]]);
    }
    b = build_basis_matrix(locs, a.basis, true);
  };

  for (const auto& [t, cols] : by_time) {
    Matrix x, b;
    if (forecast) {
      if (t != s.T + 1) {
        throw UsageError("forecast targets must have t = " + std::to_string(s.T + 1));
      }
      subset(cols, x, b);
      scatter(forecast_one_step(s, x, b, seed), cols);
      continue;
    }
    if (t > s.T) {
      throw UsageError("target time " + std::to_string(t) + " is beyond the fitted period; use --forecast");
    }
    const auto index = coordinate_index(a.observed[t - 1]);
    IndexVector seen_cols, seen_idx, new_cols;
    for (auto k : cols) {
      auto it = index.find({tg.loc[k].coord1, tg.loc[k].coord2});
      if (it != index.end() && s.has_xi) {
        seen_cols.push_back(k);
        seen_idx.push_back(it->second);
      } else {
        new_cols.push_back(k);
      }
    }
    if (!seen_cols.empty()) {
      subset(seen_cols, x, b);
      scatter(predict_observed(s, t - 1, x, b, seen_idx), seen_cols);
    }
    if (!new_cols.empty()) {
      subset(new_cols, x, b);
      scatter(predict_new(s, t - 1, x, b, stream_key(seed, t)), new_cols);
    }
  }
  return all;
}

void run_predict(const PredictOpts& o) {
  const auto scale = scale_from_string(o.scale);
  const auto a = read_archive(o.archive);
  const std::uint64_t seed = o.seed.value_or(a.manifest.value("seed", std::uint64_t{1}));
  const auto tg = read_targets(o.targets, a.basis.metric, a.samples.p);
  const auto y = predict_targets(a, tg, o.forecast, seed);
  PredictiveDraws out;
  switch (scale) {
    case Scale::y: out = y; break;
    case Scale::p: out = to_probability(y.draws); break;
    case Scale::z: out = predict_z(y.draws, stream_key(seed, 0x5a)); break;
  }
  const auto sum = summarize_targets(out);
  auto f = csv::open_output(o.out);
  f << "t,coord1,coord2,mean,sd,q05,q50,q95\n";
  for (std::size_t k = 0; k < tg.loc.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    f << tg.t[k] << ',' << csv::format_double(tg.loc[k].coord1) << ','
      << csv::format_double(tg.loc[k].coord2) << ',' << csv::format_double(sum.mean(kk)) << ','
      << csv::format_double(sum.sd(kk)) << ',' << csv::format_double(sum.q05(kk)) << ','
      << csv::format_double(sum.q50(kk)) << ',' << csv::format_double(sum.q95(kk)) << '\n';
  }
  const Json opts{{"archive", o.archive}, {"targets", o.targets}, {"scale", o.scale},
                  {"forecast", o.forecast}, {"seed", seed}};
  write_json(o.out + ".manifest.json", {{"version", kVersion},
                                        {"command", "predict"},
                                        {"seed", seed},
                                        {"options", opts},
                                        {"config_hash", config_hash(opts)}});
}

// ---------------------------------------------------------------------------
// summarize

struct SummarizeOpts {
  std::string input, archive, data, out, mask, metric = "great_circle", ref, bins, levels, window;
  std::vector<double> lat0;
  double half_width = 0.5;
  double bandwidth = 37.5;
  double cutoff = 0.15;
  double threshold = 0.5;
  std::size_t t = 1;
  std::optional<std::uint64_t> seed;
};

std::optional<IndexVector> load_mask(const SummarizeOpts& o) {
  if (o.mask.empty()) return std::nullopt;
  return read_mask(o.mask);
}

void summarize_bands(const SummarizeOpts& o) {
  if (o.lat0.empty()) throw UsageError("bands needs at least one --lat0");
  const auto field = read_field(o.input, metric_from_string(o.metric));
  const auto mask = load_mask(o);
  const Json opts{{"input", o.input}, {"lat0", o.lat0}, {"half_width", o.half_width}, {"mask", o.mask}};
  auto out = csv::open_output(o.out);
  write_metadata(out, "bands", opts);
  out << "t,lat0,count,min,q1,median,q3,max,mean\n";
  for (const auto& [t, rows] : field) {
    std::vector<Location> locs;
    std::vector<double> vals;
    for (auto i : apply_mask(rows.size(), mask)) {
      locs.push_back(rows[i].loc);
      vals.push_back(rows[i].mean);
    }
    for (double lat0 : o.lat0) {
      const auto f = band_stats(vals, locs, {lat0, o.half_width});
      out << t << ',' << csv::format_double(lat0) << ',' << f.count;
      for (double v : {f.min, f.q1, f.median, f.q3, f.max, f.mean}) out << ',' << csv::format_double(v);
      out << '\n';
    }
  }
}

void summarize_hovmoller(const SummarizeOpts& o) {
  const Metric metric = metric_from_string(o.metric);
  const auto field = read_field(o.input, metric);
  HovmollerSpec spec;
  if (o.ref.empty()) {
    if (metric != Metric::great_circle) throw UsageError("planar Hovmoller needs --ref x,y");
    spec.reference = {0.0, 90.0, metric};
  } else {
    const auto r = parse_list(o.ref);
    if (r.size() != 2) throw UsageError("--ref expects two coordinates");
    spec.reference = {r[0], r[1], metric};
  }
  if (o.bins.empty()) throw UsageError("hovmoller needs --bins start:stop:step");
  spec.bins = parse_bins(o.bins);
  spec.half_bandwidth = o.bandwidth;
  if (!o.levels.empty()) spec.levels = parse_list(o.levels);
  spec.mask = load_mask(o);

  std::vector<std::size_t> times;
  Matrix values(static_cast<Eigen::Index>(spec.bins.size()), static_cast<Eigen::Index>(field.size()));
  std::vector<std::vector<std::optional<double>>> crossings(spec.levels.size());
  Eigen::Index col = 0;
  for (const auto& [t, rows] : field) {
    std::vector<Location> locs;
    Vector v(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      locs.push_back(rows[i].loc);
      v(static_cast<Eigen::Index>(i)) = rows[i].mean;
    }
    const std::vector<Vector> one{v};
    const auto res = hovmoller(one, locs, spec);
    values.col(col++) = res.values.col(0);
    for (std::size_t l = 0; l < spec.levels.size(); ++l) crossings[l].push_back(res.crossings[l][0]);
    times.push_back(t);
  }
  const Json opts{{"input", o.input}, {"ref", {spec.reference.coord1, spec.reference.coord2}},
                  {"bins", o.bins}, {"half_bandwidth", o.bandwidth}, {"levels", spec.levels},
                  {"mask", o.mask}, {"metric", o.metric}};
  auto out = csv::open_output(o.out);
  write_metadata(out, "hovmoller", opts);
  out << "distance";
  for (auto t : times) out << ",t" << t;
  out << '\n';
  for (std::size_t b = 0; b < spec.bins.size(); ++b) {
    out << csv::format_double(spec.bins[b]);
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      out << ',' << csv::format_double(values(static_cast<Eigen::Index>(b), c));
    }
    out << '\n';
  }
  if (!spec.levels.empty()) {
    auto cx = csv::open_output(o.out + ".crossings.csv");
    write_metadata(cx, "hovmoller_crossings", opts);
    cx << "t";
    for (double l : spec.levels) cx << ",level_" << csv::format_double(l);
    cx << '\n';
    for (std::size_t k = 0; k < times.size(); ++k) {
      cx << times[k];
      for (std::size_t l = 0; l < spec.levels.size(); ++l) {
        cx << ',' << csv::format_double(crossings[l][k].value_or(std::nan("")));
      }
      cx << '\n';
    }
  }
}

// Locations present at every listed time, as per-time observed indices.
std::vector<IndexVector> common_locations(const ChainArchive& a, std::span<const std::size_t> times,
                                          std::vector<Location>& locs) {
  const auto& first = a.observed[times[0]];
  std::vector<std::map<CoordKey, std::size_t>> idx;
  for (auto t : times) idx.push_back(coordinate_index(a.observed[t]));
  std::vector<IndexVector> out(times.size());
  for (const auto& l : first) {
    std::vector<std::size_t> hit;
    for (const auto& m : idx) {
      auto it = m.find({l.coord1, l.coord2});
      if (it == m.end()) break;
      hit.push_back(it->second);
    }
    if (hit.size() != times.size()) continue;
    locs.push_back(l);
    for (std::size_t k = 0; k < times.size(); ++k) out[k].push_back(hit[k]);
  }
  return out;
}

void summarize_semivariogram(const SummarizeOpts& o) {
  if (o.lat0.size() != 1) throw UsageError("semivariogram needs exactly one --lat0");
  const auto a = read_archive(o.archive);
  const auto& s = a.samples;
  std::size_t t0 = 1, t1 = s.T;
  if (!o.window.empty()) {
    const auto pos = o.window.find(':');
    if (pos == std::string::npos) throw UsageError("--window expects a:b");
    t0 = static_cast<std::size_t>(csv::parse_int(o.window.substr(0, pos), 0, "window"));
    t1 = static_cast<std::size_t>(csv::parse_int(o.window.substr(pos + 1), 0, "window"));
  }
  if (t0 < 1 || t1 > s.T || t1 <= t0) throw UsageError("--window must satisfy 1 <= a < b <= T");
  std::vector<std::size_t> times;
  for (std::size_t t = t0; t <= t1; ++t) times.push_back(t - 1);
  std::vector<Location> locs;
  const auto idx = common_locations(a, times, locs);
  const auto mask = load_mask(o);
  const auto keep = apply_mask(locs.size(), mask);
  std::vector<Location> kept;
  for (auto i : keep) kept.push_back(locs[i]);
  const Matrix b = build_basis_matrix(kept, a.basis, true);
  std::vector<Matrix> draws;
  for (std::size_t d = 0; d < s.draws; ++d) {
    Matrix f(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t k = 0; k < times.size(); ++k) {
      Vector row = b * s.eta_draw(d, times[k]);
      if (s.has_xi) {
        const auto xi = s.xi_draw(d, times[k]);
        for (std::size_t i = 0; i < keep.size(); ++i) {
          row(static_cast<Eigen::Index>(i)) += xi(static_cast<Eigen::Index>(idx[k][keep[i]]));
        }
      }
      f.row(static_cast<Eigen::Index>(k)) = row.transpose();
    }
    draws.push_back(std::move(f));
  }
  const auto sv = temporal_semivariogram_draws(draws, kept, {o.lat0[0], o.half_width});
  const Json opts{{"archive", o.archive}, {"lat0", o.lat0[0]}, {"half_width", o.half_width},
                  {"window", {t0, t1}}, {"mask", o.mask}, {"includes_xi", s.has_xi}};
  auto out = csv::open_output(o.out);
  write_metadata(out, "semivariogram", opts);
  out << "lag,min,q1,median,q3,max,mean\n";
  for (std::size_t h = 0; h < sv.by_lag.size(); ++h) {
    const auto& f = sv.by_lag[h];
    out << h + 1;
    for (double v : {f.min, f.q1, f.median, f.q3, f.max, f.mean}) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

void summarize_accuracy(const SummarizeOpts& o) {
  const Metric metric = metric_from_string(o.metric);
  const auto field = read_field(o.input, metric);
  const auto data = load_dataset(o.data, metric);
  const auto mask = load_mask(o);
  const Json opts{{"input", o.input}, {"data", o.data}, {"cutoff", o.cutoff}, {"mask", o.mask}};
  auto out = csv::open_output(o.out);
  write_metadata(out, "accuracy", opts);
  out << "t,count,accuracy\n";
  for (const auto& [t, rows] : field) {
    if (t < 1 || t > data.T()) continue;
    const auto& slice = data.slices[t - 1];
    const auto index = coordinate_index(slice.locations);
    std::vector<double> p;
    std::vector<std::uint8_t> z;
    for (auto i : apply_mask(rows.size(), mask)) {
      auto it = index.find({rows[i].loc.coord1, rows[i].loc.coord2});
      if (it == index.end()) continue;
      p.push_back(rows[i].mean);
      z.push_back(slice.z[it->second]);
    }
    out << t << ',' << z.size() << ','
        << csv::format_double(z.empty() ? std::nan("") : classification_accuracy(p, z, o.cutoff))
        << '\n';
  }
}

void summarize_transitions(const SummarizeOpts& o) {
  const auto a = read_archive(o.archive);
  const auto& s = a.samples;
  if (o.t < 1 || o.t + 1 > s.T) throw UsageError("--t must satisfy 1 <= t < T");
  const auto data = load_dataset(o.data, a.basis.metric);
  const std::vector<std::size_t> times{o.t - 1, o.t};
  std::vector<Location> locs;
  const auto idx = common_locations(a, times, locs);
  const auto keep = apply_mask(locs.size(), load_mask(o));
  std::vector<Location> kept;
  for (auto i : keep) kept.push_back(locs[i]);
  const Matrix b = build_basis_matrix(kept, a.basis, true);
  const std::uint64_t seed = o.seed.value_or(a.manifest.value("seed", std::uint64_t{1}));

  std::array<Matrix, 2> p;
  std::array<std::vector<std::uint8_t>, 2> z;
  for (std::size_t k = 0; k < 2; ++k) {
    const auto t = times[k];
    const auto& slice = data.slices.at(t);
    const auto didx = coordinate_index(slice.locations);
    Matrix x(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(s.p));
    IndexVector obs;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      auto it = didx.find({kept[i].coord1, kept[i].coord2});
      if (it == didx.end()) throw UsageError("--data does not match the archive's observed locations");
      x.row(static_cast<Eigen::Index>(i)) = slice.X.row(static_cast<Eigen::Index>(it->second));
      z[k].push_back(slice.z[it->second]);
      obs.push_back(idx[k][keep[i]]);
    }
    const auto y = s.has_xi ? predict_observed(s, t, x, b, obs) : predict_new(s, t, x, b, stream_key(seed, t));
    p[k] = to_probability(y.draws).draws;
  }
  const auto fields = transition_probabilities(p[0], p[1], o.cutoff);
  const auto rates = transition_classification_rates(fields, z[0], z[1], o.threshold);
  const Json opts{{"archive", o.archive}, {"data", o.data}, {"t", o.t}, {"cutoff", o.cutoff},
                  {"threshold", o.threshold}, {"mask", o.mask}};
  auto out = csv::open_output(o.out);
  write_metadata(out, "transitions", opts);
  out << "# ice_to_water_rate=" << csv::format_double(rates.ice_to_water.value_or(std::nan("")))
      << " count=" << rates.ice_to_water_count << '\n';
  out << "# water_to_ice_rate=" << csv::format_double(rates.water_to_ice.value_or(std::nan("")))
      << " count=" << rates.water_to_ice_count << '\n';
  out << "coord1,coord2,pi_ice_to_water,pi_water_to_ice\n";
  for (std::size_t i = 0; i < kept.size(); ++i) {
    out << csv::format_double(kept[i].coord1) << ',' << csv::format_double(kept[i].coord2) << ','
        << csv::format_double(fields.ice_to_water[i]) << ','
        << csv::format_double(fields.water_to_ice[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// validate

struct ValidateOpts {
  std::string out;
  std::uint64_t seed = 1;
  int grid = 100;
  std::size_t T = 6;
  std::optional<std::size_t> mar_count;
  std::size_t iterations = 14000, burn_in = 2000, thin = 3;
  std::optional<double> sigma_xi, phi_scale;
  bool fixed_true = false;
  bool sweep = false;
  std::string sweep_values;
};

void run_validate_cmd(const ValidateOpts& o) {
  ValidateConfig vc;
  vc.sim.grid_nx = vc.sim.grid_ny = o.grid;
  vc.sim.T = o.T;
  vc.sim.seed = o.seed;
  vc.sim.mar_count = o.mar_count.value_or(
      static_cast<std::size_t>(std::llround(600.0 * o.grid * o.grid / 10000.0)));
  vc.chain.iterations = o.iterations;
  vc.chain.burn_in = o.burn_in;
  vc.chain.thin = o.thin;
  vc.chain.seed = o.seed;
  vc.chain.store_xi = false;
  vc.sigma2_xi_plugin = o.sigma_xi;
  vc.phi_scale = o.phi_scale;
  vc.fixed_true = o.fixed_true;
  if (!o.sweep_values.empty()) vc.sweep = parse_list(o.sweep_values);
  else if (o.sweep) vc.sweep = kDefaultSweep;
  validate_sim_config(vc.sim);
  validate_chain_config(vc.chain);

  const auto rep = run_validation(vc);
  write_validation_report(o.out, rep);
  const Json record{{"grid", o.grid}, {"T", o.T}, {"mar_count", vc.sim.mar_count},
                    {"iterations", o.iterations}, {"burn_in", o.burn_in}, {"thin", o.thin},
                    {"sigma2_xi_plugin", vc.sigma2_xi_plugin.value_or(vc.sim.sigma2_xi)},
                    {"phi_scale", o.phi_scale ? Json(*o.phi_scale) : Json(nullptr)},
                    {"fixed_true", o.fixed_true}, {"sweep", vc.sweep}};
  write_json(fs::path(o.out) / "manifest.json", {{"version", kVersion},
                                                 {"command", "validate"},
                                                 {"seed", o.seed},
                                                 {"config", record},
                                                 {"config_hash", config_hash(record)}});
  for (const auto& row : rep.rows) {
    std::cout << row.method;
    for (std::size_t k = 0; k < row.values.size(); ++k) {
      std::cout << ' ' << kRmspeColumns[k] << '=' << csv::format_double(row.values[k]);
    }
    std::cout << '\n';
  }
}

void apply_thread_env() {
  if (const char* v = std::getenv(kThreadsEnv)) {
    const auto n = csv::parse_int(v, 0, kThreadsEnv);
    kernels::set_thread_count(static_cast<int>(n));
  }
}

}  // namespace

int cli_entry(int argc, char** argv) {
  CLI::App app{"Bayesian spatio-temporal model for binary gridded data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SimulateOpts so;
  auto* sim = app.add_subcommand("simulate", "Simulate the gridded study design with hold-out sets");
  sim->add_option("--out", so.out, "Output directory")->required();
  sim->add_option("--seed", so.seed, "Random seed")->capture_default_str();
  sim->add_option("--grid", so.grid, "Grid cells per side")->capture_default_str()->check(CLI::PositiveNumber);
  sim->add_option("--T", so.T, "Number of time points")->capture_default_str();
  sim->add_option("--mar-count", so.mar_count, "Random hold-out count per time (default 6% of the grid)");
  sim->add_option("--sigma-xi", so.sigma2_xi, "Fine-scale variance")->capture_default_str();
  sim->add_option("--config", so.config, "JSON simulation settings (overrides the grid flags)")
      ->check(CLI::ExistingFile);

  FitOpts fo;
  auto* fit = app.add_subcommand("fit", "Run the sampler on a dataset");
  fit->add_option("--data", fo.data, "Dataset CSV: t,coord1,coord2,z,cov1..covp")->required()->check(CLI::ExistingFile);
  fit->add_option("--centers", fo.centers, "Basis centers CSV: res,coord1,coord2")->check(CLI::ExistingFile);
  fit->add_option("--config", fo.config, "JSON run configuration")->check(CLI::ExistingFile);
  fit->add_option("--out", fo.out, "Archive directory")->required();
  fit->add_option("--metric", fo.metric, "planar or great_circle (default from config, else planar)");
  fit->add_option("--iterations", fo.iterations, "Total iterations (default 14000)");
  fit->add_option("--burn-in", fo.burn_in, "Burn-in iterations (default 2000)");
  fit->add_option("--thin", fo.thin, "Keep every n-th iteration (default 3)");
  fit->add_option("--seed", fo.seed, "Random seed (default 1)");
  fit->add_option("--sigma-xi", fo.sigma_xi, "Plug-in fine-scale variance");
  fit->add_option("--fixed-params", fo.fixed_params, "Pin all parameters from this JSON file")->check(CLI::ExistingFile);
  fit->add_option("--plugin", fo.plugin, "Parameter JSON whose K and U center the priors")->check(CLI::ExistingFile);
  fit->add_option("--chains", fo.chains, "Independent chains")->capture_default_str();
  fit->add_option("--init-from", fo.init_from, "Previous-period archive for the prior plug-ins")->check(CLI::ExistingDirectory);
  fit->add_flag("--no-xi", fo.no_xi, "Do not store fine-scale draws");

  PredictOpts po;
  auto* pred = app.add_subcommand("predict", "Predictive summaries at target locations");
  pred->add_option("--archive", po.archive, "Chain archive directory")->required()->check(CLI::ExistingDirectory);
  pred->add_option("--targets", po.targets, "Targets CSV: t,coord1,coord2,cov1..covp")->required()->check(CLI::ExistingFile);
  pred->add_option("--out", po.out, "Output CSV")->required();
  pred->add_option("--scale", po.scale, "y, p or z")->capture_default_str();
  pred->add_flag("--forecast", po.forecast, "One-step-ahead forecast at t = T + 1");
  pred->add_option("--seed", po.seed, "Random seed (default: the archive seed)");

  SummarizeOpts mo;
  auto* summ = app.add_subcommand("summarize", "Summary reports from predictions or archives");
  summ->require_subcommand(1);
  auto common = [&](CLI::App* c) {
    c->add_option("--out", mo.out, "Output CSV")->required();
    c->add_option("--mask", mo.mask, "CSV with an `index` column of included locations")->check(CLI::ExistingFile);
  };
  auto* bands = summ->add_subcommand("bands", "Latitude-band five-number summaries");
  bands->add_option("--input", mo.input, "Prediction CSV")->required()->check(CLI::ExistingFile);
  bands->add_option("--lat0", mo.lat0, "Band center latitude (repeatable)")->required();
  bands->add_option("--half-width", mo.half_width, "Band half-width in degrees")->capture_default_str();
  bands->add_option("--metric", mo.metric, "Location metric")->capture_default_str();
  common(bands);
  auto* hov = summ->add_subcommand("hovmoller", "Distance-by-time averages");
  hov->add_option("--input", mo.input, "Prediction CSV")->required()->check(CLI::ExistingFile);
  hov->add_option("--ref", mo.ref, "Reference point coord1,coord2 (default: North Pole)");
  hov->add_option("--bins", mo.bins, "Bin centers start:stop:step")->required();
  hov->add_option("--bandwidth", mo.bandwidth, "Distance half-bandwidth")->capture_default_str();
  hov->add_option("--levels", mo.levels, "Crossing levels, e.g. 0.9,0.5");
  hov->add_option("--metric", mo.metric, "Location metric")->capture_default_str();
  common(hov);
  auto* semi = summ->add_subcommand("semivariogram", "Temporal semivariogram of the detrended process");
  semi->add_option("--archive", mo.archive, "Chain archive directory")->required()->check(CLI::ExistingDirectory);
  semi->add_option("--lat0", mo.lat0, "Band center latitude")->required();
  semi->add_option("--half-width", mo.half_width, "Band half-width")->capture_default_str();
  semi->add_option("--window", mo.window, "Time window a:b (1-based, inclusive)");
  common(semi);
  auto* acc = summ->add_subcommand("accuracy", "Classification accuracy per time");
  acc->add_option("--input", mo.input, "p-scale prediction CSV")->required()->check(CLI::ExistingFile);
  acc->add_option("--data", mo.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  acc->add_option("--cutoff", mo.cutoff, "Ice cutoff")->capture_default_str();
  acc->add_option("--metric", mo.metric, "Location metric")->capture_default_str();
  common(acc);
  auto* tr = summ->add_subcommand("transitions", "Ice/water transition probabilities and rates");
  tr->add_option("--archive", mo.archive, "Chain archive directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--data", mo.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  tr->add_option("--t", mo.t, "Transition from t to t + 1 (1-based)")->required();
  tr->add_option("--cutoff", mo.cutoff, "Ice cutoff")->capture_default_str();
  tr->add_option("--threshold", mo.threshold, "Detection threshold")->capture_default_str();
  tr->add_option("--seed", mo.seed, "Seed for fresh fine-scale draws");
  common(tr);

  ValidateOpts vo;
  auto* val = app.add_subcommand("validate", "Simulation study: simulate, fit, predict, score");
  val->add_option("--out", vo.out, "Output directory")->required();
  val->add_option("--seed", vo.seed, "Random seed")->capture_default_str();
  val->add_option("--grid", vo.grid, "Grid cells per side")->capture_default_str()->check(CLI::PositiveNumber);
  val->add_option("--T", vo.T, "Number of time points")->capture_default_str();
  val->add_option("--mar-count", vo.mar_count, "Random hold-out count per time (default 6% of the grid)");
  val->add_option("--iterations", vo.iterations, "Total iterations")->capture_default_str();
  val->add_option("--burn-in", vo.burn_in, "Burn-in iterations")->capture_default_str();
  val->add_option("--thin", vo.thin, "Thinning interval")->capture_default_str();
  val->add_option("--sigma-xi", vo.sigma_xi, "Plug-in fine-scale variance (default: simulated value)");
  val->add_option("--phi-scale", vo.phi_scale, "Prior scale multiplier (default 3r + 1)");
  val->add_flag("--fixed-true", vo.fixed_true, "Add the fixed-true-parameter row");
  val->add_flag("--sweep", vo.sweep, "Add the plug-in sweep over 0.025, 0.05, 0.075, 0.1");
  val->add_option("--sweep-values", vo.sweep_values, "Comma-separated plug-in values for the sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    apply_thread_env();
    if (sim->parsed()) run_simulate(so);
    else if (fit->parsed()) run_fit(fo);
    else if (pred->parsed()) run_predict(po);
    else if (bands->parsed()) summarize_bands(mo);
    else if (hov->parsed()) summarize_hovmoller(mo);
    else if (semi->parsed()) summarize_semivariogram(mo);
    else if (acc->parsed()) summarize_accuracy(mo);
    else if (tr->parsed()) summarize_transitions(mo);
    else if (val->parsed()) run_validate_cmd(vo);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int cli_entry(const std::vector<std::string>& args) {
  std::vector<std::string> copy = args;
  std::vector<char*> argv;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  return cli_entry(static_cast<int>(copy.size()), argv.data());
}

}  // namespace stbhm
