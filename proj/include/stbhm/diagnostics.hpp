#pragma once

// Convergence summaries for retained draws.

#include "stbhm/mcmc.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stbhm {

struct EssResult {
  double ess = 0.0;
  bool degenerate = false;  // zero sample variance; ess is then meaningless
};

/// Effective sample size with Geyer's initial positive sequence truncation.
EssResult effective_sample_size(std::span<const double> draws);

/// Potential scale reduction over >= 2 chains of equal length. With split,
/// every chain is halved first (the odd middle draw is dropped).
double potential_scale_reduction(std::span<const std::vector<double>> chains, bool split = true);

struct ScalarDiagnostic {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  EssResult ess;
  std::optional<double> rhat;
};

struct DiagnosticsReport {
  std::vector<ScalarDiagnostic> scalars;
  std::vector<std::pair<std::string, double>> acceptance;  // post-burn-in rates
};

/// Named scalar traces: beta_k, lambda_j, trace_K, trace_U.
std::vector<std::pair<std::string, std::vector<double>>> scalar_traces(const PosteriorSamples& s);

/// ESS per scalar for the first chain (pooled means), split R-hat when more
/// than one chain is given. Throws UsageError with fewer than two draws.
DiagnosticsReport diagnose(std::span<const PosteriorSamples> chains);

void write_trace_csv(const std::filesystem::path& path, const PosteriorSamples& s);
void write_diagnostics_csv(const std::filesystem::path& path, const DiagnosticsReport& report);

}  // namespace stbhm
