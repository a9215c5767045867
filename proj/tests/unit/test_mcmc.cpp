#include "stbhm/diagnostics.hpp"
#include "stbhm/inverse_wishart.hpp"
#include "stbhm/kernels.hpp"
#include "stbhm/linalg.hpp"
#include "stbhm/mcmc.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace stbhm;

namespace {

struct Tiny {
  StDataset data;
  BasisSystem basis;
  std::vector<Matrix> mats;
  PriorSpec priors;
};

BasisSystem tiny_basis() {
  BasisResolution coarse, fine;
  coarse.centers = {{0.5, 0.5}};
  coarse.aperture = 1.5;
  fine.centers = {{0.25, 0.5}, {0.75, 0.5}};
  fine.aperture = 0.8;
  return make_basis_system({coarse, fine}, Metric::planar, 1);
}

Tiny make_tiny(std::uint64_t seed, std::size_t T = 2, std::size_t n = 20) {
  Tiny k;
  k.basis = tiny_basis();
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Location> locs;
  for (std::size_t i = 0; i < n; ++i) locs.push_back({u(gen), u(gen)});
  fit_standardization(k.basis, locs);
  for (std::size_t t = 0; t < T; ++t) {
    TimeSlice s;
    s.locations = locs;
    s.X.resize(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
      s.X(static_cast<Eigen::Index>(i), 0) = 1.0;
      s.X(static_cast<Eigen::Index>(i), 1) = locs[i].coord1 - 0.5;
      const double p = 1.0 / (1.0 + std::exp(-(0.3 + 2.0 * (locs[i].coord1 - 0.5))));
      s.z.push_back(u(gen) < p ? 1 : 0);
    }
    k.data.slices.push_back(std::move(s));
  }
  k.mats = basis_per_time(k.data, k.basis);
  k.priors = default_priors(0.5 * Matrix::Identity(3, 3), 0.4 * Matrix::Identity(3, 3), 0.2);
  return k;
}

// log of the multivariate gamma function.
double log_mvgamma(double a, int r) {
  double v = 0.25 * r * (r - 1) * std::log(std::numbers::pi);
  for (int j = 0; j < r; ++j) v += std::lgamma(a - 0.5 * j);
  return v;
}

// log of int N(x_1..x_m | 0, S) IW(S | nu, Phi) dS for residual scatter E.
double log_iw_marginal(const Matrix& scatter, double m, double nu, const Matrix& phi) {
  const int r = static_cast<int>(phi.rows());
  return -0.5 * m * r * std::log(std::numbers::pi) + log_mvgamma(0.5 * (nu + m), r) -
         log_mvgamma(0.5 * nu, r) + 0.5 * nu * std::log(phi.determinant()) -
         0.5 * (nu + m) * std::log((phi + scatter).determinant());
}

InitResult manual_init(const StDataset& data, std::size_t r, const ModelParams& params) {
  InitResult init;
  init.params = params;
  init.state.eta.assign(data.T(), Vector::Zero(static_cast<Eigen::Index>(r)));
  for (const auto& s : data.slices) init.state.xi.push_back(Vector::Zero(static_cast<Eigen::Index>(s.size())));
  init.V_beta = Matrix::Identity(params.beta.size(), params.beta.size());
  init.V_eta.assign(data.T(), Matrix::Identity(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)));
  return init;
}

}  // namespace

TEST_CASE("default priors and validation") {
  const Matrix k = 2.0 * Matrix::Identity(4, 4);
  const Matrix u = Matrix::Identity(4, 4);
  const auto p = default_priors(k, u, 0.05);
  CHECK(p.nu_K == 8.0);
  CHECK(p.nu_U == 8.0);
  CHECK(p.Phi_K.isApprox(13.0 * k));
  CHECK(p.Phi_U.isApprox(13.0 * u));
  CHECK(p.sigma2_xi == 0.05);
  CHECK_NOTHROW(validate_priors(p, 4));
  auto bad = p;
  bad.nu_K = 3.0;
  CHECK_THROWS_AS(validate_priors(bad, 4), UsageError);
  bad = p;
  bad.Phi_U(0, 0) = -1.0;
  CHECK_THROWS_AS(validate_priors(bad, 4), UsageError);
  CHECK_THROWS_AS(validate_priors(p, 3), UsageError);
}

TEST_CASE("chain configuration") {
  ChainConfig c;
  CHECK(c.retained_draws() == 4000);
  c.burn_in = c.iterations;
  CHECK_THROWS_AS(validate_chain_config(c), UsageError);
  c = ChainConfig{};
  c.thin = 0;
  CHECK_THROWS_AS(validate_chain_config(c), UsageError);
  c = ChainConfig{};
  c.fixed_parameter_mode = true;
  CHECK_THROWS_AS(validate_chain_config(c), UsageError);
}

TEST_CASE("tau transform") {
  CHECK(lambda_from_tau(0.0) == 0.0);
  CHECK(std::exp(log_jacobian_tau(0.0)) == doctest::Approx(0.5).epsilon(1e-15));
  for (double tau : {-30.0, -3.0, -0.2, 0.7, 4.0, 25.0}) {
    if (std::abs(tau) <= 10.0) CHECK(tau_from_lambda(lambda_from_tau(tau)) == doctest::Approx(tau).epsilon(1e-9));
    const double h = 1e-6;
    const double num = (lambda_from_tau(tau + h) - lambda_from_tau(tau - h)) / (2 * h);
    if (num > 1e-12) CHECK(std::exp(log_jacobian_tau(tau)) == doctest::Approx(num).epsilon(1e-6));
  }
  CHECK(std::isfinite(log_jacobian_tau(800.0)));
  CHECK(std::abs(lambda_from_tau(800.0)) <= 1.0);
  CHECK_THROWS_AS(tau_from_lambda(1.0), DomainError);
  CHECK_THROWS_AS(tau_from_lambda(-1.5), DomainError);
}

TEST_CASE("sample_K conjugacy") {
  PriorSpec pr;
  pr.nu_K = 3.0;
  pr.Phi_K = 2.0 * Matrix::Identity(1, 1);
  Rng rng(1);
  const Vector eta1 = Vector::Ones(1);
  double s = 0.0;
  const int n = 50000;
  for (int k = 0; k < n; ++k) s += sample_K(eta1, pr, rng)(0, 0);
  CHECK(std::abs(s / n - 1.5) / 1.5 < 0.02);

  Rng a(42), b(42);
  CHECK(sample_K(eta1, pr, a) == sample_K(eta1, pr, b));

  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 50; ++rep) {
    const Matrix m = Matrix::NullaryExpr(3, 3, [&] { return nd(gen); });
    PriorSpec q;
    q.nu_K = 2.5 + rep * 0.1;
    q.Phi_K = m * m.transpose() + 0.1 * Matrix::Identity(3, 3);
    const Matrix draw = sample_K(Vector::NullaryExpr(3, [&] { return nd(gen); }), q, rng);
    CHECK((draw - draw.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(is_positive_definite(draw));
  }
}

TEST_CASE("sample_U conjugacy") {
  const Matrix h = 0.5 * Matrix::Identity(3, 3);
  std::vector<Vector> eta{Vector::Constant(3, 1.0)};
  eta.push_back(h * eta[0]);
  eta.push_back(h * eta[1]);
  PriorSpec pr;
  pr.nu_U = 5.0;
  pr.Phi_U = Matrix::Identity(3, 3) * 0.7;
  CHECK(innovation_scatter(eta, h, pr.Phi_U).isApprox(pr.Phi_U, 1e-15));

  // Degrees of freedom grow by T - 1 = 2: mean = scale / (5 + 2 - 3 - 1).
  eta[2](0) += 1.0;
  const Matrix scale = innovation_scatter(eta, h, pr.Phi_U);
  Rng rng(3);
  Matrix acc = Matrix::Zero(3, 3);
  const int n = 50000;
  for (int k = 0; k < n; ++k) acc += sample_U(eta, h, pr, rng);
  const Matrix expected = scale / 3.0;
  CHECK((acc / n - expected).norm() / expected.norm() < 0.02);

  PriorSpec one;
  one.nu_U = 4.0;
  one.Phi_U = Matrix::Identity(1, 1);
  const Matrix h1 = 0.3 * Matrix::Identity(1, 1);
  const std::vector<Vector> e1{Vector::Constant(1, 1.0), Vector::Constant(1, -0.5)};
  const double sc = 1.0 + std::pow(-0.5 - 0.3, 2);
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += sample_U(e1, h1, one, rng)(0, 0);
  CHECK(std::abs(s / n - sc / (4.0 + 1.0 - 2.0)) / (sc / 3.0) < 0.02);

  const std::vector<Vector> single{Vector::Ones(1)};
  CHECK_THROWS_AS(sample_U(single, h1, one, rng), UsageError);
}

TEST_CASE("inverse-Wishart mean helper") {
  const Matrix phi = 2.0 * Matrix::Identity(2, 2);
  CHECK(inverse_wishart_mean(6.0, phi).isApprox(phi / 3.0));
}

TEST_CASE("collapsed target: K marginal against one-dimensional quadrature") {
  // S = 0 so only the integrated K term depends on eta.
  StDataset d;
  TimeSlice s;
  s.locations = {{0, 0}, {1, 1}};
  s.z = {1, 0};
  s.X = Matrix::Ones(2, 1);
  d.slices = {s};
  const std::vector<Matrix> basis{Matrix::Zero(2, 1)};
  PriorSpec pr;
  pr.nu_K = 3.0;
  pr.Phi_K = 1.7 * Matrix::Identity(1, 1);
  pr.nu_U = 3.0;
  pr.Phi_U = Matrix::Identity(1, 1);
  pr.sigma2_xi = 0.3;
  const Vector beta = Vector::Constant(1, 0.2);
  const std::vector<Vector> xi{Vector::Constant(2, 0.1)};
  const Matrix adj = Matrix::Zero(0, 1);

  auto marginal = [&](double eta) {
    // IW(nu, phi) in one dimension is inverse-gamma(nu/2, phi/2).
    const double a = 0.5 * pr.nu_K, b = 0.5 * pr.Phi_K(0, 0);
    auto f = [&](double k) {
      if (k <= 0.0) return 0.0;
      const double lg = -0.5 * std::log(2 * std::numbers::pi * k) - 0.5 * eta * eta / k +
                        a * std::log(b) - std::lgamma(a) - (a + 1) * std::log(k) - b / k;
      return std::exp(lg);
    };
    double err = 0.0;
    return std::log(boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        f, 0.0, std::numeric_limits<double>::infinity(), 25, 1e-14, &err));
  };
  auto target = [&](double eta) {
    const std::vector<Vector> e{Vector::Constant(1, eta)};
    return log_integrated_target(d, basis, e, xi, beta, {0, 0, 0}, adj, pr);
  };
  for (double e : {0.3, 1.1, -2.5, 4.0}) {
    CHECK(target(e) - target(0.0) == doctest::Approx(marginal(e) - marginal(0.0)).epsilon(1e-8));
  }
}

TEST_CASE("collapsed target against the conjugate normalizing-constant identity") {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> nd;
  auto tiny = make_tiny(5, 3);
  auto& pr = tiny.priors;
  const auto& adj = tiny.basis.adjacency;
  auto oracle = [&](const std::vector<Vector>& eta, const std::vector<Vector>& xi, const Vector& beta,
                    const std::array<double, 3>& lam) {
    double f = 0.0;
    for (std::size_t t = 0; t < tiny.data.T(); ++t) {
      const auto& s = tiny.data.slices[t];
      const Vector y = s.X * beta + tiny.mats[t] * eta[t] + xi[t];
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-y(i)));
        f += s.z[static_cast<std::size_t>(i)] ? std::log(p) : std::log1p(-p);
      }
      f -= 0.5 * xi[t].squaredNorm() / pr.sigma2_xi;
    }
    f += log_iw_marginal(eta[0] * eta[0].transpose(), 1.0, pr.nu_K, pr.Phi_K);
    const Matrix h = build_propagator(lam[0], lam[1], lam[2], adj).H;
    Matrix sc = Matrix::Zero(3, 3);
    for (std::size_t t = 1; t < eta.size(); ++t) {
      const Vector e = eta[t] - h * eta[t - 1];
      sc += e * e.transpose();
    }
    f += log_iw_marginal(sc, static_cast<double>(eta.size() - 1), pr.nu_U, pr.Phi_U);
    return f;
  };
  auto random_state = [&] {
    std::vector<Vector> eta, xi;
    for (std::size_t t = 0; t < 3; ++t) {
      eta.push_back(Vector::NullaryExpr(3, [&] { return nd(gen); }));
      xi.push_back(Vector::NullaryExpr(20, [&] { return 0.3 * nd(gen); }));
    }
    const Vector beta = Vector::NullaryExpr(2, [&] { return nd(gen); });
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    return std::tuple{eta, xi, beta, std::array<double, 3>{u(gen), u(gen), u(gen)}};
  };
  const auto [e0, x0, b0, l0] = random_state();
  const double base = log_integrated_target(tiny.data, tiny.mats, e0, x0, b0, l0, adj, pr);
  const double obase = oracle(e0, x0, b0, l0);
  for (int rep = 0; rep < 20; ++rep) {
    const auto [e, x, b, l] = random_state();
    const double got = log_integrated_target(tiny.data, tiny.mats, e, x, b, l, adj, pr) - base;
    const double want = oracle(e, x, b, l) - obase;
    CHECK(std::abs(got - want) < 1e-8);
  }

  std::array<double, 3> outside{0.2, 1.0, 0.0};
  CHECK(log_integrated_target(tiny.data, tiny.mats, e0, x0, b0, outside, adj, pr) ==
        -std::numeric_limits<double>::infinity());
}

TEST_CASE("collapsed target with T = 1 has no U term") {
  auto tiny = make_tiny(6, 1);
  const std::vector<Vector> eta{Vector::Constant(3, 0.4)};
  const std::vector<Vector> xi{Vector::Zero(20)};
  const Vector beta = Vector::Zero(2);
  const auto& adj = tiny.basis.adjacency;
  const double a = log_integrated_target(tiny.data, tiny.mats, eta, xi, beta, {0, 0, 0}, adj, tiny.priors);
  auto other = tiny.priors;
  other.Phi_U *= 50.0;
  other.nu_U += 7.0;
  const double b = log_integrated_target(tiny.data, tiny.mats, eta, xi, beta, {0.5, -0.5, 0.3}, adj, other);
  CHECK(a == b);
}

TEST_CASE("K prior scale shifts the lambda profile by a constant") {
  auto tiny = make_tiny(8, 3);
  std::vector<Vector> eta{Vector::Constant(3, 0.5), Vector::Constant(3, 0.2), Vector::Constant(3, -0.3)};
  std::vector<Vector> xi(3, Vector::Zero(20));
  const Vector beta = Vector::Zero(2);
  auto scaled = tiny.priors;
  scaled.Phi_K *= 4.0;
  std::size_t best_a = 0, best_b = 0;
  double max_a = -1e300, max_b = -1e300;
  std::vector<double> diffs;
  for (std::size_t k = 0; k < 199; ++k) {
    const double l = -0.99 + 0.01 * static_cast<double>(k);
    const std::array<double, 3> lam{l, 0.1, 0.0};
    const double a = log_integrated_target(tiny.data, tiny.mats, eta, xi, beta, lam, tiny.basis.adjacency, tiny.priors);
    const double b = log_integrated_target(tiny.data, tiny.mats, eta, xi, beta, lam, tiny.basis.adjacency, scaled);
    if (a > max_a) { max_a = a; best_a = k; }
    if (b > max_b) { max_b = b; best_b = k; }
    diffs.push_back(a - b);
  }
  CHECK(best_a == best_b);
  for (double d : diffs) CHECK(d == doctest::Approx(diffs[0]).epsilon(1e-12));
}

TEST_CASE("lambda update acceptance against quadrature") {
  // Two basis functions with no cross term: the lambda_1 target is
  // -(nu_U + 1)/2 log(phi + (b - lambda a)^2) plus the tau Jacobian.
  BasisResolution c1, c2;
  c1.centers = {{0, 0}};
  c2.centers = {{1, 1}};
  auto sys = make_basis_system({c1, c2}, Metric::planar, 1);
  sys.adjacency.setZero();
  StDataset d;
  for (int t = 0; t < 2; ++t) {
    TimeSlice s;
    s.X = Matrix::Zero(0, 1);
    d.slices.push_back(s);
  }
  const std::vector<Matrix> mats(2, Matrix::Zero(0, 2));
  PriorSpec pr;
  pr.nu_K = pr.nu_U = 4.0;
  pr.Phi_K = pr.Phi_U = 0.3 * Matrix::Identity(2, 2);
  pr.sigma2_xi = 0.0;
  ModelParams params;
  params.beta = Vector::Zero(1);
  params.K = params.U = Matrix::Identity(2, 2);
  params.H = build_propagator(0, 0, 0, sys.adjacency);
  auto init = manual_init(d, 2, params);
  const double a = 1.0, b = 0.6;
  init.state.eta = {Vector(Eigen::Vector2d(a, 0.0)), Vector(Eigen::Vector2d(b, 0.0))};
  ChainConfig cfg;
  cfg.adapt = false;
  cfg.iterations = 10;
  cfg.burn_in = 5;
  const double step2 = 0.8;
  cfg.a_lambda = {step2, step2, step2};
  cfg.V_lambda = {1.0, 1.0, 1.0};
  Sampler smp(d, mats, sys, pr, cfg, init);
  const int n = 200000;
  for (int k = 0; k < n; ++k) smp.update_lambda();
  const double empirical = smp.acceptance(false).lambda[0].rate();

  const double phi = 0.3, nu = 4.0;
  auto log_pi = [&](double tau) {
    const double l = std::tanh(0.5 * tau);
    return -0.5 * (nu + 1.0) * std::log(phi + (b - l * a) * (b - l * a)) + log_jacobian_tau(tau);
  };
  const double sd = std::sqrt(step2);
  double num = 0.0, den = 0.0;
  const int nt = 4001, nz = 801;
  for (int i = 0; i < nt; ++i) {
    const double tau = -40.0 + 80.0 * i / (nt - 1);
    const double w = std::exp(log_pi(tau));
    double inner = 0.0;
    for (int j = 0; j < nz; ++j) {
      const double z = -8.0 + 16.0 * j / (nz - 1);
      const double phi_z = std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi);
      inner += phi_z * std::min(1.0, std::exp(log_pi(tau + sd * z) - log_pi(tau)));
    }
    num += w * inner * 16.0 / (nz - 1);
    den += w;
  }
  const double expected = num / den;
  CHECK(std::abs(empirical - expected) < 0.03);
  for (double l : smp.state().lambda) CHECK(std::abs(l) < 1.0);

  // Vanishing steps are always accepted.
  cfg.a_lambda = {1e-30, 1e-30, 1e-30};
  Sampler tiny_steps(d, mats, sys, pr, cfg, init);
  for (int k = 0; k < 1000; ++k) tiny_steps.update_lambda();
  for (int j = 0; j < 3; ++j) CHECK(tiny_steps.acceptance(false).lambda[j].rate() == 1.0);
}

TEST_CASE("beta update") {
  auto tiny = make_tiny(9);
  ChainConfig cfg;
  cfg.adapt = false;
  cfg.iterations = 10;
  cfg.burn_in = 5;
  const auto init = init_state(tiny.data, tiny.basis, tiny.mats, tiny.priors, cfg);

  SUBCASE("vanishing step is always accepted") {
    auto c = cfg;
    c.a_beta = 1e-14;
    Sampler s(tiny.data, tiny.mats, tiny.basis, tiny.priors, c, init);
    for (int k = 0; k < 2000; ++k) s.update_beta();
    CHECK(s.acceptance(false).beta.rate() > 0.99);
  }
  SUBCASE("acceptance does not involve the eta prior") {
    auto other = tiny.priors;
    other.Phi_K *= 9.0;
    other.Phi_U *= 0.1;
    other.nu_U += 3.0;
    Sampler a(tiny.data, tiny.mats, tiny.basis, tiny.priors, cfg, init);
    Sampler b(tiny.data, tiny.mats, tiny.basis, other, cfg, init);
    for (int k = 0; k < 500; ++k) {
      a.update_beta();
      b.update_beta();
    }
    CHECK(a.state().beta == b.state().beta);
    CHECK(a.acceptance(false).beta.accepted > 0);
  }
}

TEST_CASE("logistic-regression-only posterior matches the maximum likelihood fit") {
  // S = 0 and no xi: beta sees only the Bernoulli likelihood under a flat prior.
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(-1, 1);
  StDataset d;
  const int n = 300;
  TimeSlice s;
  s.X.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    s.locations.push_back({u(gen), 0.0});
    s.X(i, 0) = 1.0;
    s.X(i, 1) = s.locations.back().coord1;
    const double p = 1.0 / (1.0 + std::exp(-(0.5 - 1.5 * s.X(i, 1))));
    s.z.push_back(std::uniform_real_distribution<double>(0, 1)(gen) < p ? 1 : 0);
  }
  d.slices = {s, s};
  const auto sys = tiny_basis();
  const std::vector<Matrix> mats(2, Matrix::Zero(n, 3));

  // Independent IRLS fit.
  Vector mle = Vector::Zero(2);
  Matrix info;
  for (int it = 0; it < 50; ++it) {
    Vector g = Vector::Zero(2);
    info = Matrix::Zero(2, 2);
    for (const auto& sl : d.slices) {
      for (int i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-sl.X.row(i).dot(mle)));
        g += (sl.z[static_cast<std::size_t>(i)] - p) * sl.X.row(i).transpose();
        info += p * (1 - p) * sl.X.row(i).transpose() * sl.X.row(i);
      }
    }
    mle += info.ldlt().solve(g);
  }
  const Matrix cov = info.inverse();

  PriorSpec pr = default_priors(Matrix::Identity(3, 3), Matrix::Identity(3, 3), 0.0);
  ModelParams params;
  params.beta = mle;
  params.K = params.U = Matrix::Identity(3, 3);
  params.H = build_propagator(0, 0, 0, sys.adjacency);
  auto init = manual_init(d, 3, params);
  init.V_beta = cov;
  ChainConfig cfg;
  cfg.iterations = 12000;
  cfg.burn_in = 2000;
  cfg.thin = 1;
  cfg.seed = 4;
  const auto samples = run_chain_from(d, sys, mats, pr, cfg, init);
  const Vector mean = samples.beta_mean();
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(mean(j) - mle(j)) < std::sqrt(cov(j, j)));
  }
  CHECK(samples.post_burn_in.beta.rate() > 0.2);
}

TEST_CASE("eta block: T = 1 reduces to Bernoulli plus the K prior") {
  auto tiny = make_tiny(10, 1);
  ModelParams fixed;
  fixed.beta = Vector::Constant(2, 0.1);
  fixed.K = Matrix::Identity(3, 3) * 0.8;
  fixed.U = fixed.K;
  fixed.H = build_propagator(0.3, 0.2, 0.1, tiny.basis.adjacency);
  fixed.sigma2_xi = 0.2;
  ChainConfig cfg;
  cfg.fixed_parameter_mode = true;
  cfg.fixed_params = fixed;
  const auto init = manual_init(tiny.data, 3, fixed);
  Sampler s(tiny.data, tiny.mats, tiny.basis, tiny.priors, cfg, init);
  CHECK(s.eta_log_ratio(0, s.state().eta[0]) == 0.0);

  const Vector prop = Vector::Constant(3, 0.7);
  const auto& sl = tiny.data.slices[0];
  auto bern = [&](const Vector& eta) {
    const Vector y = sl.X * fixed.beta + tiny.mats[0] * eta;
    double f = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) f += bernoulli_logpmf(sl.z[static_cast<std::size_t>(i)], y(i));
    return f;
  };
  const double want = bern(prop) - bern(Vector::Zero(3)) - 0.5 * prop.squaredNorm() / 0.8;
  CHECK(s.eta_log_ratio(0, prop) == doctest::Approx(want).epsilon(1e-12));

  // The collapsed target also reduces: only the K marginal term remains.
  ChainConfig collapsed;
  Sampler c(tiny.data, tiny.mats, tiny.basis, tiny.priors, collapsed, init);
  const double nu = tiny.priors.nu_K;
  const Matrix& phi = tiny.priors.Phi_K;
  const double kterm = -0.5 * (nu + 1.0) * (std::log((phi + prop * prop.transpose()).determinant()) -
                                            std::log(phi.determinant()));
  CHECK(c.eta_log_ratio(0, prop) == doctest::Approx(bern(prop) - bern(Vector::Zero(3)) + kterm).epsilon(1e-12));
}

TEST_CASE("eta block with no data samples the Gaussian bridge") {
  auto tiny = make_tiny(11, 3);
  tiny.data.slices[1] = TimeSlice{{}, {}, Matrix::Zero(0, 2)};
  tiny.mats = basis_per_time(tiny.data, tiny.basis);
  ModelParams fixed;
  fixed.beta = Vector::Zero(2);
  fixed.K = Matrix::Identity(3, 3);
  fixed.H = build_propagator(0.6, -0.4, 0.3, tiny.basis.adjacency);
  fixed.U = 0.5 * Matrix::Identity(3, 3);
  fixed.U(0, 1) = fixed.U(1, 0) = 0.1;
  fixed.sigma2_xi = 0.2;
  ChainConfig cfg;
  cfg.fixed_parameter_mode = true;
  cfg.fixed_params = fixed;
  cfg.adapt = false;
  cfg.iterations = 10;
  cfg.burn_in = 5;
  auto init = manual_init(tiny.data, 3, fixed);
  const Vector before(Eigen::Vector3d(0.8, -0.3, 0.5));
  const Vector after(Eigen::Vector3d(0.1, 0.6, -0.7));
  init.state.eta = {before, Vector::Zero(3), after};
  const Matrix ui = fixed.U.inverse();
  const Matrix& h = fixed.H.H;
  const Matrix prec = ui + h.transpose() * ui * h;
  const Matrix cov = prec.inverse();
  const Vector mean = cov * (ui * h * before + h.transpose() * ui * after);
  init.V_eta[1] = cov;

  Sampler s(tiny.data, tiny.mats, tiny.basis, tiny.priors, cfg, init);
  const int n = 200000, batches = 100;
  std::vector<Vector> batch_means(batches, Vector::Zero(3));
  for (int k = 0; k < n; ++k) {
    s.update_eta_block(1);
    batch_means[static_cast<std::size_t>(k / (n / batches))] += s.state().eta[1] / (n / batches);
  }
  Vector grand = Vector::Zero(3);
  for (const auto& b : batch_means) grand += b / batches;
  for (int j = 0; j < 3; ++j) {
    double v = 0.0;
    for (const auto& b : batch_means) v += (b(j) - grand(j)) * (b(j) - grand(j));
    const double se = std::sqrt(v / (batches - 1) / batches);
    CHECK(std::abs(grand(j) - mean(j)) < 4.0 * se);
  }
}

TEST_CASE("xi sweep") {
  SUBCASE("without data the chain samples the prior") {
    const std::size_t n = 4000;
    std::vector<double> offset(n, 0.0), xi(n, 0.0);
    const double sigma2 = 0.3;
    double s2 = 0.0;
    std::size_t count = 0;
    for (std::uint64_t it = 0; it < 400; ++it) {
      kernels::XiSweepArgs a;
      a.offset = offset;
      a.xi = xi;
      a.sigma2 = sigma2;
      a.step_sd = 2.4 * std::sqrt(sigma2);
      a.seed = 77;
      a.iteration = it;
      kernels::xi_sweep(a);
      if (it >= 50) {
        for (double v : xi) s2 += v * v;
        count += n;
      }
    }
    CHECK(std::abs(std::sqrt(s2 / count) / std::sqrt(sigma2) - 1.0) < 0.03);
  }
  SUBCASE("draws shrink with the prior variance") {
    auto run = [](double sigma2) {
      std::vector<double> offset(500, 1.0), xi(500, 0.0);
      std::vector<std::uint8_t> z(500, 1);
      double s2 = 0.0;
      for (std::uint64_t it = 0; it < 200; ++it) {
        kernels::XiSweepArgs a;
        a.offset = offset;
        a.z = z;
        a.xi = xi;
        a.sigma2 = sigma2;
        a.step_sd = 2.4 * std::sqrt(sigma2);
        a.seed = 5;
        a.iteration = it;
        kernels::xi_sweep(a);
        if (it >= 20) for (double v : xi) s2 += v * v;
      }
      return std::sqrt(s2 / (180.0 * 500.0));
    };
    const double big = run(1.0), small = run(1e-4), tiny = run(1e-8);
    CHECK(small < 0.02 * big);
    CHECK(tiny < 2e-4 * big);
  }
  SUBCASE("parallel and serial sweeps agree exactly") {
    std::mt19937_64 gen(1);
    std::normal_distribution<double> nd;
    const std::size_t n = 5000;
    std::vector<double> offset(n), xi_a(n), xi_b(n);
    std::vector<std::uint8_t> z(n);
    for (std::size_t i = 0; i < n; ++i) {
      offset[i] = nd(gen);
      xi_a[i] = xi_b[i] = 0.2 * nd(gen);
      z[i] = static_cast<std::uint8_t>(gen() & 1u);
    }
    for (std::uint64_t it = 0; it < 10; ++it) {
      kernels::XiSweepArgs a;
      a.offset = offset;
      a.z = z;
      a.sigma2 = 0.05;
      a.step_sd = 0.3;
      a.seed = 9;
      a.iteration = it;
      a.time = 2;
      a.xi = xi_a;
      const auto na = kernels::xi_sweep(a);
      a.xi = xi_b;
      const auto nb = kernels::reference::xi_sweep(a);
      CHECK(na == nb);
    }
    CHECK(xi_a == xi_b);
  }
}

TEST_CASE("Newton initialization finds the joint mode") {
  auto tiny = make_tiny(13);
  ChainConfig cfg;
  const auto init = init_state(tiny.data, tiny.basis, tiny.mats, tiny.priors, cfg);
  CHECK(init.gradient_norm < 1e-6);
  CHECK(is_positive_definite(init.V_beta));
  CHECK((init.V_beta - init.V_beta.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  for (const auto& v : init.V_eta) {
    CHECK(is_positive_definite(v));
    CHECK((v - v.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
  for (double v : init.V_lambda) {
    CHECK(v >= 1e-4);
    CHECK(v <= 10.0);
  }

  // Generic maximizer: Newton with central-difference derivatives of the
  // complete-data log-likelihood at the starting covariances.
  ModelParams prm = init.params;
  const Eigen::Index n = 2 + 2 * 3 + 40;
  auto unpack = [&](const Vector& v, Vector& beta, LatentState& st) {
    beta = v.head(2);
    st.eta = {v.segment(2, 3), v.segment(5, 3)};
    st.xi = {v.segment(8, 20), v.segment(28, 20)};
  };
  auto f = [&](const Vector& v) {
    LatentState st;
    unpack(v, prm.beta, st);
    return complete_data_loglik(tiny.data, st, prm, tiny.mats);
  };
  Vector x = Vector::Zero(n);
  const double h = 1e-4;
  for (int it = 0; it < 30; ++it) {
    Vector g(n);
    Matrix hess(n, n);
    const double f0 = f(x);
    for (Eigen::Index i = 0; i < n; ++i) {
      Vector e = Vector::Zero(n);
      e(i) = h;
      const double fp = f(x + e), fm = f(x - e);
      g(i) = (fp - fm) / (2 * h);
      hess(i, i) = (fp - 2 * f0 + fm) / (h * h);
      for (Eigen::Index j = 0; j < i; ++j) {
        Vector e2 = Vector::Zero(n);
        e2(j) = h;
        hess(i, j) = hess(j, i) =
            (f(x + e + e2) - f(x + e - e2) - f(x - e + e2) + f(x - e - e2)) / (4 * h * h);
      }
    }
    const Vector step = hess.ldlt().solve(-g);
    x += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  Vector beta;
  LatentState st;
  unpack(x, beta, st);
  CHECK((beta - init.params.beta).cwiseAbs().maxCoeff() < 1e-5);
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK((st.eta[t] - init.state.eta[t]).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((st.xi[t] - init.state.xi[t]).cwiseAbs().maxCoeff() < 1e-5);
  }

  auto limited = cfg;
  limited.newton_max_iterations = 1;
  limited.newton_tolerance = 1e-300;
  try {
    init_state(tiny.data, tiny.basis, tiny.mats, tiny.priors, limited);
    CHECK(false);
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("gradient") != std::string::npos);
  }
}

TEST_CASE("run_chain bookkeeping and invariants") {
  auto tiny = make_tiny(14);
  ChainConfig cfg;
  cfg.iterations = 1500;
  cfg.burn_in = 500;
  cfg.thin = 4;
  cfg.seed = 21;
  const auto a = run_chain(tiny.data, tiny.basis, tiny.priors, cfg);
  CHECK(a.draws == 250);
  CHECK(a.iteration.front() == 504);
  CHECK(a.iteration.back() == 1500);
  for (std::size_t d = 0; d < a.draws; ++d) {
    for (double l : a.lambda_draw(d)) CHECK(std::abs(l) < 1.0);
    const Matrix k = a.K_draw(d), u = a.U_draw(d);
    CHECK(k == k.transpose());
    CHECK(u == u.transpose());
    CHECK(is_positive_definite(k));
    CHECK(is_positive_definite(u));
  }
  const auto b = run_chain(tiny.data, tiny.basis, tiny.priors, cfg);
  CHECK(a.beta == b.beta);
  CHECK(a.eta == b.eta);
  CHECK(a.xi == b.xi);
  CHECK(a.K == b.K);
  cfg.seed = 22;
  CHECK(run_chain(tiny.data, tiny.basis, tiny.priors, cfg).beta != a.beta);
}

TEST_CASE("fixed-parameter mode keeps every parameter pinned") {
  auto tiny = make_tiny(15);
  ModelParams fixed;
  fixed.beta = Vector(Eigen::Vector2d(0.4, 1.2));
  fixed.K = Matrix::Identity(3, 3) * 0.7;
  fixed.H = build_propagator(0.4, 0.4, 0.035, tiny.basis.adjacency);
  fixed.U = innovation_matrix(fixed.K, fixed.H);
  fixed.sigma2_xi = 0.2;
  ChainConfig cfg;
  cfg.iterations = 600;
  cfg.burn_in = 100;
  cfg.thin = 5;
  cfg.fixed_parameter_mode = true;
  cfg.fixed_params = fixed;
  const auto s = run_chain(tiny.data, tiny.basis, tiny.priors, cfg);
  REQUIRE(s.draws == 100);
  for (std::size_t d = 0; d < s.draws; ++d) {
    CHECK(s.beta_draw(d) == fixed.beta);
    CHECK(s.lambda_draw(d) == fixed.H.lambda);
    CHECK(s.K_draw(d) == fixed.K);
    CHECK(s.U_draw(d) == fixed.U);
  }
  CHECK(s.eta_draw(0, 0) != s.eta_draw(99, 0));
}

TEST_CASE("adaptation stops after burn-in") {
  auto tiny = make_tiny(16);
  ChainConfig cfg;
  cfg.iterations = 400;
  cfg.burn_in = 200;
  const auto init = init_state(tiny.data, tiny.basis, tiny.mats, tiny.priors, cfg);
  Sampler s(tiny.data, tiny.mats, tiny.basis, tiny.priors, cfg, init);
  const double start = s.step_eta(0);
  for (int k = 0; k < 200; ++k) s.iterate();
  CHECK_FALSE(s.adapting());
  const double frozen = s.step_eta(0);
  CHECK(frozen != start);
  for (int k = 0; k < 200; ++k) s.iterate();
  CHECK(s.step_eta(0) == frozen);
  CHECK(s.acceptance(true).eta[0].proposed == 200);
}

TEST_CASE("effective sample size and scale reduction") {
  Rng rng(5);
  std::vector<double> iid(20000);
  for (auto& v : iid) v = rng.normal();
  const auto e = effective_sample_size(iid);
  CHECK_FALSE(e.degenerate);
  CHECK(std::abs(e.ess / 20000.0 - 1.0) < 0.1);

  std::vector<double> ar(20000);
  double x = 0.0;
  for (auto& v : ar) v = x = 0.9 * x + rng.normal();
  const double expected = 20000.0 * (1 - 0.9) / (1 + 0.9);
  CHECK(effective_sample_size(ar).ess == doctest::Approx(expected).epsilon(0.3));

  const std::vector<double> flat(100, 2.5);
  CHECK(effective_sample_size(flat).degenerate);

  const std::vector<std::vector<double>> same{iid, iid};
  const double rhat = potential_scale_reduction(same, false);
  CHECK(std::abs(rhat - 1.0) < 1.0 / static_cast<double>(iid.size()));
  CHECK(std::abs(potential_scale_reduction(same, true) - 1.0) < 2.0 / static_cast<double>(iid.size()));

  std::vector<double> shifted = iid;
  for (auto& v : shifted) v += 3.0;
  const std::vector<std::vector<double>> apart{iid, shifted};
  CHECK(potential_scale_reduction(apart) > 1.5);
}

TEST_CASE("parallel kernels match the serial reference bit for bit") {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u01;
  std::normal_distribution<double> nd;
  std::vector<Location> locs(3000);
  for (auto& l : locs) l = {u01(gen), u01(gen)};
  const auto basis = make_basis_system(
      {{{{0.5, 0.5}}, 1.5}, {{{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}}, 0.6}}, Metric::planar, 2);
  std::vector<double> y(locs.size());
  std::vector<std::uint8_t> z(locs.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 3.0 * nd(gen);
    z[i] = static_cast<std::uint8_t>(gen() & 1u);
  }
  const Matrix s = Matrix::NullaryExpr(300, 4, [&] { return nd(gen); });
  const std::span<const Location> few(locs.data(), 300);

  const int saved = kernels::thread_count();
  for (int threads : {1, 2, 3}) {
    CAPTURE(threads);
    kernels::set_thread_count(threads);
    Matrix a, b;
    kernels::evaluate_basis(locs, basis, a);
    kernels::reference::evaluate_basis(locs, basis, b);
    CHECK(a == b);
    CHECK(kernels::bernoulli_loglik(y, z) == kernels::reference::bernoulli_loglik(y, z));
    CHECK(kernels::exp_cov_times(few, 1.3, 0.2, s) == kernels::reference::exp_cov_times(few, 1.3, 0.2, s));
  }
  kernels::set_thread_count(saved);
}
