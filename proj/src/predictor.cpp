#include "stbhm/predictor.hpp"

#include "stbhm/linalg.hpp"
#include "stbhm/summaries.hpp"

#include <algorithm>
#include <cmath>

namespace stbhm {

namespace {

constexpr std::uint64_t kPredictStream = 0x50524544;   // "PRED"
constexpr std::uint64_t kForecastStream = 0x46434153;  // "FCAS"
constexpr std::uint64_t kBinaryStream = 0x42494e;      // "BIN"

void check_shapes(const PosteriorSamples& s, const Matrix& x, const Matrix& b) {
  if (s.draws == 0) throw UsageError("no posterior draws to predict from");
  if (x.rows() != b.rows()) throw UsageError("covariate and basis rows differ");
  if (static_cast<std::size_t>(x.cols()) != s.p) throw UsageError("covariate width differs from p");
  if (static_cast<std::size_t>(b.cols()) != s.r) throw UsageError("basis width differs from r");
}

void draw_moments(PredictiveDraws& out) {
  const auto n = static_cast<double>(out.draws.rows());
  out.mean = out.draws.colwise().mean().transpose();
  if (out.draws.rows() < 2) {
    out.variance = Vector::Zero(out.draws.cols());
    return;
  }
  const Matrix c = out.draws.rowwise() - out.mean.transpose();
  out.variance = c.cwiseProduct(c).colwise().sum().transpose() / (n - 1.0);
}

// Fill draws with X beta_d + S eta_d and set mean/variance of that part.
void latent_part(const PosteriorSamples& s, const Matrix& x, const Matrix& b,
                 const std::vector<Vector>& eta, PredictiveDraws& out) {
  out.draws.resize(static_cast<Eigen::Index>(s.draws), x.rows());
  for (std::size_t d = 0; d < s.draws; ++d) {
    out.draws.row(static_cast<Eigen::Index>(d)) = (x * s.beta_draw(d) + b * eta[d]).transpose();
  }
  draw_moments(out);
}

void add_fresh_xi(const PosteriorSamples& s, std::uint64_t seed, std::uint64_t stream,
                  PredictiveDraws& out) {
  const double sd = std::sqrt(s.sigma2_xi);
  if (sd > 0.0) {
    for (Eigen::Index d = 0; d < out.draws.rows(); ++d) {
      for (Eigen::Index i = 0; i < out.draws.cols(); ++i) {
        Rng rng(stream_key(seed, stream, static_cast<std::uint64_t>(d),
                           static_cast<std::uint64_t>(i)));
        out.draws(d, i) += sd * rng.normal();
      }
    }
  }
  out.variance.array() += s.sigma2_xi;
}

}  // namespace

Scale scale_from_string(std::string_view s) {
  if (s == "y") return Scale::y;
  if (s == "p") return Scale::p;
  if (s == "z") return Scale::z;
  throw UsageError("unknown scale '" + std::string(s) + "' (expected y, p or z)");
}

std::string_view to_string(Scale s) {
  switch (s) {
    case Scale::y: return "y";
    case Scale::p: return "p";
    case Scale::z: return "z";
  }
  return "?";
}

PredictiveDraws predict_observed(const PosteriorSamples& samples, std::size_t t, const Matrix& x,
                                 const Matrix& s, const IndexVector& observed_index) {
  check_shapes(samples, x, s);
  if (t >= samples.T) throw UsageError("prediction time is outside the fitted period");
  if (!samples.has_xi) throw UsageError("samples carry no xi draws; use predict_new");
  if (observed_index.size() != static_cast<std::size_t>(x.rows())) {
    throw UsageError("overlap map length differs from the target count");
  }
  for (auto i : observed_index) {
    if (i >= samples.n_per_time[t]) {
      throw UsageError("target does not overlap an observed location; use predict_new");
    }
  }
  PredictiveDraws out;
  out.draws.resize(static_cast<Eigen::Index>(samples.draws), x.rows());
  for (std::size_t d = 0; d < samples.draws; ++d) {
    const auto xi = samples.xi_draw(d, t);
    Vector y = x * samples.beta_draw(d) + s * samples.eta_draw(d, t);
    for (std::size_t k = 0; k < observed_index.size(); ++k) {
      y(static_cast<Eigen::Index>(k)) += xi(static_cast<Eigen::Index>(observed_index[k]));
    }
    out.draws.row(static_cast<Eigen::Index>(d)) = y.transpose();
  }
  draw_moments(out);
  return out;
}

PredictiveDraws predict_new(const PosteriorSamples& samples, std::size_t t, const Matrix& x,
                            const Matrix& s, std::uint64_t seed) {
  check_shapes(samples, x, s);
  if (t >= samples.T) throw UsageError("prediction time is outside the fitted period");
  std::vector<Vector> eta;
  eta.reserve(samples.draws);
  for (std::size_t d = 0; d < samples.draws; ++d) eta.emplace_back(samples.eta_draw(d, t));
  PredictiveDraws out;
  latent_part(samples, x, s, eta, out);
  add_fresh_xi(samples, seed, stream_key(kPredictStream, t), out);
  return out;
}

PredictiveDraws forecast_one_step(const PosteriorSamples& samples, const Matrix& x,
                                  const Matrix& s, std::uint64_t seed,
                                  std::size_t* unstable_draws) {
  check_shapes(samples, x, s);
  std::size_t unstable = 0;
  std::vector<Vector> carried;
  carried.reserve(samples.draws);
  const auto r = static_cast<Eigen::Index>(samples.r);
  Matrix shocks(static_cast<Eigen::Index>(samples.draws), x.rows());
  Vector shock_var = Vector::Zero(x.rows());
  for (std::size_t d = 0; d < samples.draws; ++d) {
    const auto lam = samples.lambda_draw(d);
    if (std::max(std::abs(lam[0]), std::abs(lam[1])) >= 1.0) ++unstable;
    Rng rng(stream_key(seed, kForecastStream, d));
    Vector z(r);
    for (Eigen::Index i = 0; i < r; ++i) z(i) = rng.normal();
    const Matrix u = samples.U_draw(d);
    auto llt = pd_cholesky(u);
    if (!llt) require_positive_definite(u, "U draw");
    carried.push_back(samples.H_draw(d) * samples.eta_draw(d, samples.T - 1));
    const Matrix sl = s * Matrix(llt->matrixL());
    shocks.row(static_cast<Eigen::Index>(d)) = (sl * z).transpose();
    shock_var += sl.rowwise().squaredNorm();
  }
  if (unstable_draws) *unstable_draws = unstable;
  PredictiveDraws out;
  latent_part(samples, x, s, carried, out);
  out.draws += shocks;
  out.variance += shock_var / static_cast<double>(samples.draws);
  add_fresh_xi(samples, seed, stream_key(kPredictStream, samples.T), out);
  return out;
}

PredictiveDraws to_probability(const Matrix& y_draws) {
  PredictiveDraws out;
  out.draws = y_draws.unaryExpr([](double y) { return inv_logit(y); });
  draw_moments(out);
  return out;
}

PredictiveDraws predict_z(const Matrix& y_draws, std::uint64_t seed) {
  const auto p = to_probability(y_draws);
  PredictiveDraws out;
  out.draws.resize(y_draws.rows(), y_draws.cols());
  for (Eigen::Index d = 0; d < y_draws.rows(); ++d) {
    for (Eigen::Index i = 0; i < y_draws.cols(); ++i) {
      Rng rng(stream_key(seed, kBinaryStream, static_cast<std::uint64_t>(d),
                         static_cast<std::uint64_t>(i)));
      out.draws(d, i) = rng.bernoulli(p.draws(d, i)) ? 1.0 : 0.0;
    }
  }
  const auto n = static_cast<double>(y_draws.rows());
  out.mean = p.mean;
  // var(Z) = E[p(1-p)] + var(p), both from the draws (var with divisor n).
  const Vector within =
      p.draws.unaryExpr([](double v) { return v * (1.0 - v); }).colwise().mean().transpose();
  const Vector between = n > 1.0 ? Vector(p.variance * (n - 1.0) / n) : Vector::Zero(p.mean.size());
  out.variance = within + between;
  return out;
}

TargetSummary summarize_targets(const PredictiveDraws& pred) {
  const auto m = pred.draws.cols();
  TargetSummary s;
  s.mean = pred.mean;
  s.sd = pred.variance.cwiseMax(0.0).cwiseSqrt();
  s.q05.resize(m);
  s.q50.resize(m);
  s.q95.resize(m);
  std::vector<double> col(static_cast<std::size_t>(pred.draws.rows()));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index d = 0; d < pred.draws.rows(); ++d) col[static_cast<std::size_t>(d)] = pred.draws(d, i);
    std::sort(col.begin(), col.end());
    s.q05(i) = quantile_type7_sorted(col, 0.05);
    s.q50(i) = quantile_type7_sorted(col, 0.50);
    s.q95(i) = quantile_type7_sorted(col, 0.95);
  }
  return s;
}

}  // namespace stbhm
