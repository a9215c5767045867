#pragma once

// File formats: dataset and covariate-input CSVs, parameter and basis JSON,
// and the chain archive directory.

#include "stbhm/mcmc.hpp"
#include "stbhm/model.hpp"

#include <filesystem>
#include <json.hpp>

namespace stbhm {

using Json = nlohmann::json;

/// `t,coord1,coord2,z,cov1..covp`, t 1-based; times without rows are empty.
StDataset load_dataset(const std::filesystem::path& path, Metric metric);
void save_dataset(const std::filesystem::path& path, const StDataset& data);

/// Per-time Arctic covariate fields from `t,coord1,coord2,x_su,x_wi,x_pl,d_cs`;
/// coord1 is the longitude.
struct ArcticInputFile {
  std::vector<std::vector<Location>> locations;
  std::vector<ArcticTimeInputs> inputs;
};
ArcticInputFile load_arctic_inputs(const std::filesystem::path& path);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

Json basis_to_json(const BasisSystem& basis);
BasisSystem basis_from_json(const Json& j);

/// {beta, lambda, K, U?, sigma2_xi}; U defaults to K - H K H'.
Json params_to_json(const ModelParams& p);
ModelParams params_from_json(const Json& j, const Matrix& adjacency);
ModelParams load_params(const std::filesystem::path& path, const Matrix& adjacency);

Json priors_to_json(const PriorSpec& p);

/// 64-bit FNV-1a of the compact JSON text; identifies a configuration.
std::string config_hash(const Json& config);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

/// Chain archive: manifest.json, scalars.csv, K.bin, U.bin, eta.bin, xi.bin
/// (when stored) and observed.csv. The .bin files hold row-major float64
/// little-endian records, one per retained draw.
struct ChainArchive {
  PosteriorSamples samples;
  BasisSystem basis;
  std::vector<std::vector<Location>> observed;  // per time
  Json manifest;
};

void write_archive(const std::filesystem::path& dir, const PosteriorSamples& samples,
                   const BasisSystem& basis, const StDataset& data, const Json& run_info);
ChainArchive read_archive(const std::filesystem::path& dir);

}  // namespace stbhm
