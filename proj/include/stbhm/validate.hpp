#pragma once

// Simulation study: simulate, hold out, fit, predict and score.

#include "stbhm/mcmc.hpp"
#include "stbhm/sim.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>

namespace stbhm {

struct ValidateConfig {
  SimConfig sim;
  ChainConfig chain;
  std::optional<double> sigma2_xi_plugin;  // default: the simulation's sigma2_xi
  std::optional<double> phi_scale;         // default: 3r + 1
  bool fixed_true = true;
  std::vector<double> sweep;  // plug-in values for the sigma2_xi sweep; empty skips it
};

inline const std::vector<double> kDefaultSweep{0.025, 0.050, 0.075, 0.100};

inline constexpr std::array<const char*, 6> kRmspeColumns{"y_MBD", "y_MAR", "p_MBD",
                                                          "p_MAR", "forecast_y", "forecast_p"};

struct RmspeRow {
  std::string method;
  std::array<double, 6> values{};
};

struct ParamRow {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct ValidationReport {
  std::vector<RmspeRow> rows;  // BHM, then FIXED-TRUE when requested
  std::vector<ParamRow> params;
  std::vector<std::pair<double, RmspeRow>> sweep;
  AcceptanceStats acceptance;  // BHM chain, post burn-in
};

/// Training subset of a full simulated dataset for times 1..T-1.
StDataset training_subset(const StDataset& full, const HoldoutPartition& part);

/// Errors are re-raised with the failing stage named.
ValidationReport run_validation(const ValidateConfig& cfg);

void write_validation_report(const std::filesystem::path& dir, const ValidationReport& rep);

}  // namespace stbhm
