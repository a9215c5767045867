#include "stbhm/diagnostics.hpp"

#include "stbhm/csv.hpp"

#include <cmath>
#include <numeric>

namespace stbhm {

namespace {

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

}  // namespace

EssResult effective_sample_size(std::span<const double> draws) {
  const std::size_t n = draws.size();
  if (n < 2) throw UsageError("ESS needs at least two draws");
  const double m = mean_of(draws);
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = draws[i] - m;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
    return s / static_cast<double>(n);
  };
  const double gamma0 = autocov(0);
  EssResult out;
  if (!(gamma0 > 0.0) || gamma0 < 1e-300) {
    out.degenerate = true;
    return out;
  }
  // Sum pairs Gamma_k = rho_{2k} + rho_{2k+1} while positive.
  double sum = 0.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / gamma0;
    if (pair <= 0.0) break;
    sum += pair;
  }
  const double tau = std::max(2.0 * sum - 1.0, 1.0 / static_cast<double>(n));
  out.ess = static_cast<double>(n) / tau;
  return out;
}

double potential_scale_reduction(std::span<const std::vector<double>> chains, bool split) {
  if (chains.size() < 2) throw UsageError("scale reduction needs at least two chains");
  std::vector<std::span<const double>> parts;
  for (const auto& ch : chains) {
    if (ch.size() != chains[0].size()) throw UsageError("chains must have equal length");
    if (split) {
      const std::size_t h = ch.size() / 2;
      parts.emplace_back(ch.data(), h);
      parts.emplace_back(ch.data() + ch.size() - h, h);
    } else {
      parts.emplace_back(ch.data(), ch.size());
    }
  }
  const std::size_t n = parts[0].size();
  if (n < 2) throw UsageError("chains are too short for scale reduction");
  const double m = static_cast<double>(parts.size());
  std::vector<double> means;
  double w = 0.0;
  for (auto p : parts) {
    means.push_back(mean_of(p));
    w += sample_variance(p);
  }
  w /= m;
  const double b = static_cast<double>(n) * sample_variance(means);
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double nn = static_cast<double>(n);
  const double var_plus = (nn - 1.0) / nn * w + b / nn;
  return std::sqrt(var_plus / w);
}

std::vector<std::pair<std::string, std::vector<double>>> scalar_traces(const PosteriorSamples& s) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (std::size_t k = 0; k < s.p; ++k) {
    std::vector<double> v(s.draws);
    for (std::size_t d = 0; d < s.draws; ++d) v[d] = s.beta[d * s.p + k];
    out.emplace_back("beta_" + std::to_string(k), std::move(v));
  }
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> v(s.draws);
    for (std::size_t d = 0; d < s.draws; ++d) v[d] = s.lambda[d * 3 + j];
    out.emplace_back("lambda_" + std::to_string(j + 1), std::move(v));
  }
  std::vector<double> tk(s.draws), tu(s.draws);
  for (std::size_t d = 0; d < s.draws; ++d) {
    tk[d] = s.K_draw(d).trace();
    tu[d] = s.U_draw(d).trace();
  }
  out.emplace_back("trace_K", std::move(tk));
  out.emplace_back("trace_U", std::move(tu));
  return out;
}

DiagnosticsReport diagnose(std::span<const PosteriorSamples> chains) {
  if (chains.empty() || chains[0].draws < 2) {
    throw UsageError("diagnostics need at least two retained draws");
  }
  DiagnosticsReport rep;
  std::vector<std::vector<std::pair<std::string, std::vector<double>>>> traces;
  for (const auto& c : chains) traces.push_back(scalar_traces(c));
  for (std::size_t k = 0; k < traces[0].size(); ++k) {
    ScalarDiagnostic sd;
    sd.name = traces[0][k].first;
    const auto& x = traces[0][k].second;
    sd.mean = mean_of(x);
    sd.sd = std::sqrt(sample_variance(x));
    sd.ess = effective_sample_size(x);
    if (chains.size() >= 2) {
      std::vector<std::vector<double>> per_chain;
      for (const auto& t : traces) per_chain.push_back(t[k].second);
      sd.rhat = potential_scale_reduction(per_chain, true);
    }
    rep.scalars.push_back(std::move(sd));
  }
  const auto& a = chains[0].post_burn_in;
  for (std::size_t t = 0; t < a.eta.size(); ++t) {
    rep.acceptance.emplace_back("eta_" + std::to_string(t + 1), a.eta[t].rate());
  }
  for (std::size_t j = 0; j < 3; ++j) {
    rep.acceptance.emplace_back("lambda_" + std::to_string(j + 1), a.lambda[j].rate());
  }
  rep.acceptance.emplace_back("beta", a.beta.rate());
  rep.acceptance.emplace_back("xi", a.xi.rate());
  return rep;
}

void write_trace_csv(const std::filesystem::path& path, const PosteriorSamples& s) {
  auto out = csv::open_output(path);
  const auto traces = scalar_traces(s);
  out << "iteration";
  for (const auto& [name, v] : traces) out << ',' << name;
  out << '\n';
  for (std::size_t d = 0; d < s.draws; ++d) {
    out << s.iteration[d];
    for (const auto& [name, v] : traces) out << ',' << csv::format_double(v[d]);
    out << '\n';
  }
}

void write_diagnostics_csv(const std::filesystem::path& path, const DiagnosticsReport& report) {
  auto out = csv::open_output(path);
  out << "name,mean,sd,ess,degenerate,rhat\n";
  for (const auto& s : report.scalars) {
    out << s.name << ',' << csv::format_double(s.mean) << ',' << csv::format_double(s.sd) << ','
        << csv::format_double(s.ess.degenerate ? std::nan("") : s.ess.ess) << ','
        << (s.ess.degenerate ? 1 : 0) << ','
        << csv::format_double(s.rhat ? *s.rhat : std::nan("")) << '\n';
  }
  out << "\nparameter,acceptance_rate\n";
  for (const auto& [name, rate] : report.acceptance) {
    out << name << ',' << csv::format_double(rate) << '\n';
  }
}

}  // namespace stbhm
