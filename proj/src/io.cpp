#include "stbhm/io.hpp"

#include "stbhm/csv.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <map>

namespace stbhm {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "archive binaries assume a little-endian host");

StDataset load_dataset(const fs::path& path, Metric metric) {
  const auto table = csv::read(path);
  const std::vector<std::string> lead{"t", "coord1", "coord2", "z"};
  if (table.header.size() < 4 ||
      !std::equal(lead.begin(), lead.end(), table.header.begin())) {
    throw UsageError(path.string() + ": header must start with t,coord1,coord2,z");
  }
  const std::size_t p = table.header.size() - 4;
  std::map<long long, std::vector<const csv::Row*>> by_time;
  long long t_max = 0;
  for (const auto& row : table.rows) {
    const long long t = csv::parse_int(row.fields[0], row.line, "t");
    if (t < 1) throw UsageError("line " + std::to_string(row.line) + ": t must be >= 1");
    by_time[t].push_back(&row);
    t_max = std::max(t_max, t);
  }
  StDataset data;
  data.slices.resize(static_cast<std::size_t>(t_max));
  for (auto& s : data.slices) s.X.resize(0, static_cast<Eigen::Index>(p));
  for (const auto& [t, rows] : by_time) {
    auto& slice = data.slices[static_cast<std::size_t>(t - 1)];
    slice.X.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& row = *rows[k];
      Location loc{csv::parse_double(row.fields[1], row.line, "coord1"),
                   csv::parse_double(row.fields[2], row.line, "coord2"), metric};
      try {
        validate_location(loc);
      } catch (const std::exception& e) {
        throw UsageError("line " + std::to_string(row.line) + ": " + e.what());
      }
      const long long z = csv::parse_int(row.fields[3], row.line, "z");
      if (z != 0 && z != 1) {
        throw UsageError("line " + std::to_string(row.line) + ": z must be 0 or 1, got " +
                         row.fields[3]);
      }
      slice.locations.push_back(loc);
      slice.z.push_back(static_cast<std::uint8_t>(z));
      for (std::size_t j = 0; j < p; ++j) {
        slice.X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
            csv::parse_double(row.fields[4 + j], row.line, table.header[4 + j]);
      }
    }
  }
  validate_dataset(data);
  return data;
}

void save_dataset(const fs::path& path, const StDataset& data) {
  auto out = csv::open_output(path);
  const auto p = data.p();
  out << "t,coord1,coord2,z";
  for (std::size_t j = 0; j < p; ++j) out << ",cov" << j + 1;
  out << '\n';
  for (std::size_t t = 0; t < data.T(); ++t) {
    const auto& s = data.slices[t];
    for (std::size_t i = 0; i < s.size(); ++i) {
      out << t + 1 << ',' << csv::format_double(s.locations[i].coord1) << ','
          << csv::format_double(s.locations[i].coord2) << ',' << int{s.z[i]};
      for (std::size_t j = 0; j < p; ++j) {
        out << ',' << csv::format_double(s.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
      out << '\n';
    }
  }
}

ArcticInputFile load_arctic_inputs(const fs::path& path) {
  const auto table = csv::read(path);
  const auto ct = table.column("t");
  const auto c1 = table.column("coord1");
  const auto c2 = table.column("coord2");
  const auto csu = table.column("x_su");
  const auto cwi = table.column("x_wi");
  const auto cpl = table.column("x_pl");
  const auto ccs = table.column("d_cs");
  ArcticInputFile f;
  for (const auto& row : table.rows) {
    const long long t = csv::parse_int(row.fields[ct], row.line, "t");
    if (t < 1) throw UsageError("line " + std::to_string(row.line) + ": t must be >= 1");
    const auto ti = static_cast<std::size_t>(t - 1);
    if (f.inputs.size() <= ti) {
      f.inputs.resize(ti + 1);
      f.locations.resize(ti + 1);
    }
    Location loc{csv::parse_double(row.fields[c1], row.line, "coord1"),
                 csv::parse_double(row.fields[c2], row.line, "coord2"), Metric::great_circle};
    validate_location(loc);
    f.locations[ti].push_back(loc);
    auto& in = f.inputs[ti];
    in.longitude.push_back(loc.coord1);
    in.summer_anomaly.push_back(csv::parse_double(row.fields[csu], row.line, "x_su"));
    in.winter_anomaly.push_back(csv::parse_double(row.fields[cwi], row.line, "x_wi"));
    in.pole_distance.push_back(csv::parse_double(row.fields[cpl], row.line, "x_pl"));
    in.coast_distance.push_back(csv::parse_double(row.fields[ccs], row.line, "d_cs"));
  }
  return f;
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw UsageError("matrix must be a JSON array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  if (n == 0) return Matrix(0, 0);
  const auto m = static_cast<Eigen::Index>(j[0].size());
  Matrix out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != m) throw UsageError("ragged matrix in JSON");
    for (Eigen::Index k = 0; k < m; ++k) out(i, k) = j[i][k].get<double>();
  }
  return out;
}

Json vector_to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json basis_to_json(const BasisSystem& basis) {
  Json j;
  j["metric"] = std::string(to_string(basis.metric));
  Json res = Json::array();
  for (const auto& r : basis.resolutions) {
    Json c = Json::array();
    for (const auto& l : r.centers) c.push_back({l.coord1, l.coord2});
    res.push_back({{"aperture", r.aperture}, {"centers", c}});
  }
  j["resolutions"] = res;
  j["col_means"] = vector_to_json(basis.col_means);
  j["col_sds"] = vector_to_json(basis.col_sds);
  j["adjacency"] = matrix_to_json(basis.adjacency);
  return j;
}

BasisSystem basis_from_json(const Json& j) {
  BasisSystem b;
  b.metric = metric_from_string(j.at("metric").get<std::string>());
  for (const auto& r : j.at("resolutions")) {
    BasisResolution res;
    res.aperture = r.at("aperture").get<double>();
    for (const auto& c : r.at("centers")) {
      res.centers.push_back({c[0].get<double>(), c[1].get<double>(), b.metric});
    }
    b.resolutions.push_back(std::move(res));
  }
  b.col_means = vector_from_json(j.at("col_means"));
  b.col_sds = vector_from_json(j.at("col_sds"));
  b.adjacency = matrix_from_json(j.at("adjacency"));
  if (b.adjacency.size() == 0) b.adjacency.resize(static_cast<Eigen::Index>(b.r2()), static_cast<Eigen::Index>(b.r1()));
  return b;
}

Json params_to_json(const ModelParams& p) {
  return {{"beta", vector_to_json(p.beta)},
          {"lambda", {p.H.lambda[0], p.H.lambda[1], p.H.lambda[2]}},
          {"K", matrix_to_json(p.K)},
          {"U", matrix_to_json(p.U)},
          {"sigma2_xi", p.sigma2_xi}};
}

ModelParams params_from_json(const Json& j, const Matrix& adjacency) {
  try {
    ModelParams p;
    p.beta = vector_from_json(j.at("beta"));
    const auto lam = j.at("lambda").get<std::vector<double>>();
    if (lam.size() != 3) throw UsageError("lambda must have three entries");
    p.H = build_propagator(lam[0], lam[1], lam[2], adjacency);
    p.K = matrix_from_json(j.at("K"));
    p.U = j.contains("U") ? matrix_from_json(j.at("U")) : innovation_matrix(p.K, p.H);
    p.sigma2_xi = j.value("sigma2_xi", 0.0);
    if (p.K.rows() != p.H.H.rows() || p.U.rows() != p.H.H.rows()) {
      throw UsageError("K and U must be r x r with r = " + std::to_string(p.H.H.rows()));
    }
    return p;
  } catch (const Json::exception& e) {
    throw UsageError(std::string("parameter file: ") + e.what());
  } catch (const DomainError& e) {
    throw UsageError(std::string("parameter file: ") + e.what());
  }
}

ModelParams load_params(const fs::path& path, const Matrix& adjacency) {
  return params_from_json(read_json(path), adjacency);
}

Json priors_to_json(const PriorSpec& p) {
  Json j{{"nu_K", p.nu_K},
         {"nu_U", p.nu_U},
         {"Phi_K", matrix_to_json(p.Phi_K)},
         {"Phi_U", matrix_to_json(p.Phi_U)},
         {"sigma2_xi", p.sigma2_xi}};
  j["beta_prior_sd"] = p.beta_prior_sd ? Json(*p.beta_prior_sd) : Json(nullptr);
  return j;
}

std::string config_hash(const Json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) {
  auto out = csv::open_output(path);
  out << j.dump(2) << '\n';
}

namespace {

void write_bin(const fs::path& path, const std::vector<double>& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_bin(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::vector<double> v(expected);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expected * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(expected * sizeof(double)) ||
      in.peek() != std::char_traits<char>::eof()) {
    throw UsageError(path.string() + ": size does not match the manifest shapes");
  }
  return v;
}

Json acceptance_to_json(const AcceptanceStats& a) {
  auto pair = [](const AcceptanceCounts& c) { return Json{c.accepted, c.proposed}; };
  Json eta = Json::array();
  for (const auto& c : a.eta) eta.push_back(pair(c));
  return {{"eta", eta},
          {"lambda", {pair(a.lambda[0]), pair(a.lambda[1]), pair(a.lambda[2])}},
          {"beta", pair(a.beta)},
          {"xi", pair(a.xi)}};
}

AcceptanceStats acceptance_from_json(const Json& j) {
  auto counts = [](const Json& p) {
    return AcceptanceCounts{p[0].get<std::size_t>(), p[1].get<std::size_t>()};
  };
  AcceptanceStats a;
  for (const auto& e : j.at("eta")) a.eta.push_back(counts(e));
  for (int k = 0; k < 3; ++k) a.lambda[k] = counts(j.at("lambda")[k]);
  a.beta = counts(j.at("beta"));
  a.xi = counts(j.at("xi"));
  return a;
}

}  // namespace

void write_archive(const fs::path& dir, const PosteriorSamples& s, const BasisSystem& basis,
                   const StDataset& data, const Json& run_info) {
  fs::create_directories(dir);
  Json m = run_info;
  m["version"] = kVersion;
  m["basis"] = basis_to_json(basis);
  m["shapes"] = {{"draws", s.draws},
                 {"p", s.p},
                 {"r", s.r},
                 {"T", s.T},
                 {"n_per_time", s.n_per_time},
                 {"K", {s.draws, s.r, s.r}},
                 {"U", {s.draws, s.r, s.r}},
                 {"eta", {s.draws, s.T, s.r}},
                 {"xi", {s.draws, s.has_xi ? s.xi_total() : 0}}};
  m["sigma2_xi"] = s.sigma2_xi;
  m["fixed_parameter_mode"] = s.fixed_parameter_mode;
  m["has_xi"] = s.has_xi;
  m["acceptance"] = {{"burn_in", acceptance_to_json(s.burn_in)},
                     {"post_burn_in", acceptance_to_json(s.post_burn_in)}};
  write_json(dir / "manifest.json", m);

  {
    auto out = csv::open_output(dir / "scalars.csv");
    out << "iteration";
    for (std::size_t k = 0; k < s.p; ++k) out << ",beta_" << k;
    out << ",lambda_1,lambda_2,lambda_3,tau_1,tau_2,tau_3";
    out << ",beta_accepted,lambda_1_accepted,lambda_2_accepted,lambda_3_accepted";
    out << ",eta_blocks_accepted,xi_acceptance\n";
    for (std::size_t d = 0; d < s.draws; ++d) {
      out << s.iteration[d];
      for (std::size_t k = 0; k < s.p; ++k) out << ',' << csv::format_double(s.beta[d * s.p + k]);
      for (int j = 0; j < 3; ++j) out << ',' << csv::format_double(s.lambda[d * 3 + j]);
      for (int j = 0; j < 3; ++j) out << ',' << csv::format_double(s.tau[d * 3 + j]);
      out << ',' << int{s.beta_accepted[d]};
      for (int j = 0; j < 3; ++j) out << ',' << int{s.lambda_accepted[d][j]};
      out << ',' << s.eta_blocks_accepted[d] << ',' << csv::format_double(s.xi_acceptance[d])
          << '\n';
    }
  }
  write_bin(dir / "K.bin", s.K);
  write_bin(dir / "U.bin", s.U);
  write_bin(dir / "eta.bin", s.eta);
  if (s.has_xi) write_bin(dir / "xi.bin", s.xi);

  auto out = csv::open_output(dir / "observed.csv");
  out << "t,coord1,coord2\n";
  for (std::size_t t = 0; t < data.T(); ++t) {
    for (const auto& l : data.slices[t].locations) {
      out << t + 1 << ',' << csv::format_double(l.coord1) << ',' << csv::format_double(l.coord2)
          << '\n';
    }
  }
}

ChainArchive read_archive(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("archive directory not found: " + dir.string());
  ChainArchive a;
  a.manifest = read_json(dir / "manifest.json");
  try {
    a.basis = basis_from_json(a.manifest.at("basis"));
    const auto& sh = a.manifest.at("shapes");
    auto& s = a.samples;
    s.draws = sh.at("draws").get<std::size_t>();
    s.p = sh.at("p").get<std::size_t>();
    s.r = sh.at("r").get<std::size_t>();
    s.T = sh.at("T").get<std::size_t>();
    s.n_per_time = sh.at("n_per_time").get<std::vector<std::size_t>>();
    s.sigma2_xi = a.manifest.at("sigma2_xi").get<double>();
    s.fixed_parameter_mode = a.manifest.at("fixed_parameter_mode").get<bool>();
    s.has_xi = a.manifest.at("has_xi").get<bool>();
    s.burn_in = acceptance_from_json(a.manifest.at("acceptance").at("burn_in"));
    s.post_burn_in = acceptance_from_json(a.manifest.at("acceptance").at("post_burn_in"));
    s.adjacency = a.basis.adjacency;
  } catch (const Json::exception& e) {
    throw UsageError(dir.string() + "/manifest.json: " + e.what());
  }
  auto& s = a.samples;
  const auto table = csv::read(dir / "scalars.csv");
  if (table.rows.size() != s.draws) throw UsageError("scalars.csv row count differs from draws");
  for (const auto& row : table.rows) {
    std::size_t c = 0;
    s.iteration.push_back(static_cast<std::size_t>(csv::parse_int(row.fields[c++], row.line, "iteration")));
    for (std::size_t k = 0; k < s.p; ++k) s.beta.push_back(csv::parse_double(row.fields[c++], row.line, "beta"));
    for (int j = 0; j < 3; ++j) s.lambda.push_back(csv::parse_double(row.fields[c++], row.line, "lambda"));
    for (int j = 0; j < 3; ++j) s.tau.push_back(csv::parse_double(row.fields[c++], row.line, "tau"));
    s.beta_accepted.push_back(static_cast<std::uint8_t>(csv::parse_int(row.fields[c++], row.line, "flag")));
    std::array<std::uint8_t, 3> la{};
    for (int j = 0; j < 3; ++j) la[j] = static_cast<std::uint8_t>(csv::parse_int(row.fields[c++], row.line, "flag"));
    s.lambda_accepted.push_back(la);
    s.eta_blocks_accepted.push_back(static_cast<std::uint32_t>(csv::parse_int(row.fields[c++], row.line, "count")));
    s.xi_acceptance.push_back(csv::parse_double(row.fields[c++], row.line, "xi_acceptance"));
  }
  s.K = read_bin(dir / "K.bin", s.draws * s.r * s.r);
  s.U = read_bin(dir / "U.bin", s.draws * s.r * s.r);
  s.eta = read_bin(dir / "eta.bin", s.draws * s.T * s.r);
  if (s.has_xi) s.xi = read_bin(dir / "xi.bin", s.draws * s.xi_total());

  const auto obs = csv::read(dir / "observed.csv");
  a.observed.resize(s.T);
  for (const auto& row : obs.rows) {
    const auto t = static_cast<std::size_t>(csv::parse_int(row.fields[0], row.line, "t"));
    if (t < 1 || t > s.T) throw UsageError("observed.csv: time out of range");
    a.observed[t - 1].push_back({csv::parse_double(row.fields[1], row.line, "coord1"),
                                 csv::parse_double(row.fields[2], row.line, "coord2"),
                                 a.basis.metric});
  }
  return a;
}

}  // namespace stbhm
