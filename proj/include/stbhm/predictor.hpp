#pragma once

// Predictive draws by composition over retained posterior draws, on the
// linear-predictor (y), probability (p) and binary (z) scales.

#include "stbhm/mcmc.hpp"

#include <cstdint>

namespace stbhm {

enum class Scale { y, p, z };
Scale scale_from_string(std::string_view s);
std::string_view to_string(Scale s);

/// Draws are stored draws x targets.
struct PredictiveDraws {
  Matrix draws;
  Vector mean;      // closed-form where available, else draw mean
  Vector variance;  // closed-form where available, else draw variance
};

/// Targets at an observed time t (0-based): reuse the stored xi at the
/// matching observed index. Throws UsageError when an index is not observed
/// or the samples carry no xi.
PredictiveDraws predict_observed(const PosteriorSamples& samples, std::size_t t, const Matrix& x,
                                 const Matrix& s, const IndexVector& observed_index);

/// Fresh xi ~ N(0, sigma2_xi) per draw and target. The mean is
/// X E(beta) + S E(eta_t); the variance is sigma2_xi + var(X beta + S eta_t).
PredictiveDraws predict_new(const PosteriorSamples& samples, std::size_t t, const Matrix& x,
                            const Matrix& s, std::uint64_t seed);

/// eta_{T+1} = H eta_T + N(0, U) per draw, then as predict_new. The mean is
/// X E(beta) + S E(H eta_T); the variance adds E(diag(S U S')) and sigma2_xi.
/// `unstable_draws` counts draws whose propagator has spectral radius >= 1.
PredictiveDraws forecast_one_step(const PosteriorSamples& samples, const Matrix& x,
                                  const Matrix& s, std::uint64_t seed,
                                  std::size_t* unstable_draws = nullptr);

/// inv_logit of every draw; mean and variance from the transformed draws.
PredictiveDraws to_probability(const Matrix& y_draws);

/// z ~ Bernoulli(inv_logit(y)) per draw. Mean E(inv_logit(Y)); variance
/// E[p(1-p)] + var(p).
PredictiveDraws predict_z(const Matrix& y_draws, std::uint64_t seed);

struct TargetSummary {
  Vector mean;
  Vector sd;
  Vector q05;
  Vector q50;
  Vector q95;
};

/// Per-target mean/sd (from the supplied moments) and type-7 quantiles.
TargetSummary summarize_targets(const PredictiveDraws& pred);

}  // namespace stbhm
