#include "stbhm/validate.hpp"

#include "stbhm/csv.hpp"
#include "stbhm/predictor.hpp"
#include "stbhm/summaries.hpp"

#include <functional>

namespace stbhm {

namespace {

constexpr std::uint64_t kValidateStream = 0x56414c;  // "VAL"

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(name) + ": " + e.what());
  } catch (const DomainError& e) {
    throw DomainError(std::string(name) + ": " + e.what());
  } catch (const UsageError& e) {
    throw UsageError(std::string(name) + ": " + e.what());
  }
}

Matrix rows_of(const Matrix& m, const IndexVector& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(idx[k]));
  }
  return out;
}

struct Scores {
  std::vector<double> pred_y, pred_p, true_y, true_p;
  void add(const PredictiveDraws& y, const Vector& ty, const Vector& tp, const IndexVector& idx) {
    const auto p = to_probability(y.draws);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      pred_y.push_back(y.mean(kk));
      pred_p.push_back(p.mean(kk));
      true_y.push_back(ty(static_cast<Eigen::Index>(idx[k])));
      true_p.push_back(tp(static_cast<Eigen::Index>(idx[k])));
    }
  }
};

RmspeRow score(const std::string& method, const PosteriorSamples& samples, const SimDesign& design,
               const SimOutput& sim, const HoldoutPartition& part, std::uint64_t seed) {
  Scores mbd, mar, fc;
  const std::size_t T = sim.data.T();
  for (std::size_t t = 0; t + 1 < T; ++t) {
    for (auto [set, idx] : {std::pair{&mbd, &part.mbd[t]}, std::pair{&mar, &part.mar[t]}}) {
      if (idx->empty()) continue;
      const auto y = predict_new(samples, t, rows_of(design.X, *idx), rows_of(design.S, *idx),
                                 stream_key(seed, kValidateStream, t, set == &mbd ? 0 : 1));
      set->add(y, sim.y[t], sim.p[t], *idx);
    }
  }
  const auto y = forecast_one_step(samples, rows_of(design.X, part.forecast),
                                   rows_of(design.S, part.forecast),
                                   stream_key(seed, kValidateStream, T));
  fc.add(y, sim.y[T - 1], sim.p[T - 1], part.forecast);

  auto safe = [](const std::vector<double>& a, const std::vector<double>& b) {
    return a.empty() ? std::nan("") : rmspe(a, b);
  };
  RmspeRow row;
  row.method = method;
  row.values = {safe(mbd.pred_y, mbd.true_y), safe(mar.pred_y, mar.true_y),
                safe(mbd.pred_p, mbd.true_p), safe(mar.pred_p, mar.true_p),
                safe(fc.pred_y, fc.true_y),   safe(fc.pred_p, fc.true_p)};
  return row;
}

PriorSpec validation_priors(const ValidateConfig& cfg, const SimDesign& design, double sigma2) {
  PriorSpec pri = default_priors(design.truth.K, design.truth.U, sigma2);
  if (cfg.phi_scale) {
    const double r = static_cast<double>(design.truth.K.rows());
    pri.Phi_K *= *cfg.phi_scale / (3.0 * r + 1.0);
    pri.Phi_U *= *cfg.phi_scale / (3.0 * r + 1.0);
  }
  return pri;
}

}  // namespace

StDataset training_subset(const StDataset& full, const HoldoutPartition& part) {
  StDataset out;
  for (std::size_t t = 0; t < part.training.size(); ++t) {
    const auto& f = full.slices[t];
    const auto& idx = part.training[t];
    TimeSlice s;
    s.X = rows_of(f.X, idx);
    for (auto i : idx) {
      s.locations.push_back(f.locations[i]);
      s.z.push_back(f.z[i]);
    }
    out.slices.push_back(std::move(s));
  }
  return out;
}

ValidationReport run_validation(const ValidateConfig& cfg) {
  const auto design = stage("simulate", [&] { return build_sim_design(cfg.sim); });
  const auto sim = stage("simulate", [&] { return simulate_from_design(design, cfg.sim.T, cfg.sim.seed); });
  const auto part = stage("partition", [&] { return partition_holdout(sim.data, cfg.sim); });
  const auto train = training_subset(sim.data, part);
  const auto mats = basis_per_time(train, design.basis);
  const double plugin = cfg.sigma2_xi_plugin.value_or(cfg.sim.sigma2_xi);

  auto fit_bhm = [&](double sigma2) {
    return stage("fit", [&] {
      const auto pri = validation_priors(cfg, design, sigma2);
      ChainConfig cc = cfg.chain;
      cc.fixed_parameter_mode = false;
      const auto init = init_state(train, design.basis, mats, pri, cc);
      return run_chain_from(train, design.basis, mats, pri, cc, init);
    });
  };

  ValidationReport rep;
  {
    const auto samples = fit_bhm(plugin);
    rep.rows.push_back(stage("predict", [&] {
      return score("BHM", samples, design, sim, part, cfg.chain.seed);
    }));
    rep.acceptance = samples.post_burn_in;
    auto param = [&](std::string name, double truth, std::function<double(std::size_t)> get) {
      std::vector<double> v(samples.draws);
      for (std::size_t d = 0; d < samples.draws; ++d) v[d] = get(d);
      const auto f = five_number(v);
      rep.params.push_back({std::move(name), truth, f.mean, quantile_type7(v, 0.025),
                            quantile_type7(v, 0.975)});
    };
    for (std::size_t k = 0; k < samples.p; ++k) {
      param("beta_" + std::to_string(k), design.truth.beta(static_cast<Eigen::Index>(k)),
            [&](std::size_t d) { return samples.beta_draw(d)(static_cast<Eigen::Index>(k)); });
    }
    for (std::size_t j = 0; j < 3; ++j) {
      param("lambda_" + std::to_string(j + 1), cfg.sim.lambda[j],
            [&](std::size_t d) { return samples.lambda[d * 3 + j]; });
    }
  }
  if (cfg.fixed_true) {
    const auto samples = stage("fit", [&] {
      ChainConfig cc = cfg.chain;
      cc.fixed_parameter_mode = true;
      cc.fixed_params = design.truth;
      auto pri = validation_priors(cfg, design, design.truth.sigma2_xi);
      const auto init = init_state(train, design.basis, mats, pri, cc);
      return run_chain_from(train, design.basis, mats, pri, cc, init);
    });
    rep.rows.push_back(stage("predict", [&] {
      return score("FIXED-TRUE", samples, design, sim, part, cfg.chain.seed);
    }));
  }
  for (double s2 : cfg.sweep) {
    const auto samples = fit_bhm(s2);
    rep.sweep.emplace_back(s2, stage("predict", [&] {
      return score("BHM", samples, design, sim, part, cfg.chain.seed);
    }));
  }
  return rep;
}

void write_validation_report(const std::filesystem::path& dir, const ValidationReport& rep) {
  std::filesystem::create_directories(dir);
  {
    auto out = csv::open_output(dir / "rmspe.csv");
    out << "method";
    for (auto c : kRmspeColumns) out << ',' << c;
    out << '\n';
    for (const auto& row : rep.rows) {
      out << row.method;
      for (double v : row.values) out << ',' << csv::format_double(v);
      out << '\n';
    }
  }
  {
    auto out = csv::open_output(dir / "parameters.csv");
    out << "parameter,truth,mean,q025,q975\n";
    for (const auto& p : rep.params) {
      out << p.name << ',' << csv::format_double(p.truth) << ',' << csv::format_double(p.mean)
          << ',' << csv::format_double(p.q025) << ',' << csv::format_double(p.q975) << '\n';
    }
  }
  {
    auto out = csv::open_output(dir / "acceptance.csv");
    out << "parameter,accepted,proposed,rate\n";
    const auto& a = rep.acceptance;
    for (std::size_t t = 0; t < a.eta.size(); ++t) {
      out << "eta_" << t + 1 << ',' << a.eta[t].accepted << ',' << a.eta[t].proposed << ','
          << csv::format_double(a.eta[t].rate()) << '\n';
    }
    for (int j = 0; j < 3; ++j) {
      out << "lambda_" << j + 1 << ',' << a.lambda[j].accepted << ',' << a.lambda[j].proposed
          << ',' << csv::format_double(a.lambda[j].rate()) << '\n';
    }
    out << "beta," << a.beta.accepted << ',' << a.beta.proposed << ','
        << csv::format_double(a.beta.rate()) << '\n';
    out << "xi," << a.xi.accepted << ',' << a.xi.proposed << ',' << csv::format_double(a.xi.rate())
        << '\n';
  }
  if (!rep.sweep.empty()) {
    auto out = csv::open_output(dir / "sweep.csv");
    out << "sigma2_xi";
    for (auto c : kRmspeColumns) out << ',' << c;
    out << '\n';
    for (const auto& [s2, row] : rep.sweep) {
      out << csv::format_double(s2);
      for (double v : row.values) out << ',' << csv::format_double(v);
      out << '\n';
    }
  }
}

}  // namespace stbhm
