#include "stbhm/linalg.hpp"
#include "stbhm/model.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace stbhm;

namespace {

Matrix random_spd(std::mt19937_64& gen, Eigen::Index r) {
  std::normal_distribution<double> n;
  Matrix a(r, r);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(gen);
  return a * a.transpose() + Matrix::Identity(r, r) * static_cast<double>(r);
}

// Multivariate normal density through an explicit inverse and determinant.
double naive_mvn_logpdf(const Vector& x, const Vector& mean, const Matrix& cov) {
  const Vector d = x - mean;
  const double quad = d.dot(cov.inverse() * d);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) +
                 std::log(cov.determinant()) + quad);
}

Matrix s1_like_adjacency() {
  Matrix r = Matrix::Zero(36, 4);
  for (int j = 0; j < 4; ++j) {
    for (int k = 0; k < 4; ++k) r(j * 9 + k, j) = 1.0;
  }
  return r;
}

}  // namespace

TEST_CASE("propagator structure") {
  const Matrix adj = s1_like_adjacency();
  SUBCASE("zero cross block") {
    const auto p = build_propagator(0.3, -0.2, 0.0, adj);
    CHECK(p.H.topLeftCorner(4, 4).isApprox(0.3 * Matrix::Identity(4, 4)));
    CHECK(p.H.bottomRightCorner(36, 36).isApprox(-0.2 * Matrix::Identity(36, 36)));
    CHECK(p.H.bottomLeftCorner(36, 4).isZero());
    CHECK(p.H.topRightCorner(4, 36).isZero());
  }
  SUBCASE("S1 values") {
    const auto p = build_propagator(0.4, 0.4, 0.035, adj);
    CHECK(p.H.bottomLeftCorner(36, 4).isApprox(0.035 * adj));
    long nonzero = (p.H.array() != 0.0).count();
    CHECK(nonzero == 4 + 36 + static_cast<long>(adj.sum()));
    const auto rep = spectral_stationarity(p);
    CHECK(rep.radius == doctest::Approx(0.4));
    CHECK(rep.stable);
  }
  SUBCASE("null dynamics") {
    CHECK(build_propagator(0, 0, 0, adj).H.isZero());
  }
  SUBCASE("radius from the diagonal blocks") {
    const auto p = build_propagator(0.99, -0.5, 0.9, adj);
    CHECK(spectral_stationarity(p).radius == doctest::Approx(0.99));
    CHECK(spectral_stationarity(p).stable);
    Eigen::EigenSolver<Matrix> es(p.H);
    CHECK(es.eigenvalues().cwiseAbs().maxCoeff() == doctest::Approx(0.99));
  }
  SUBCASE("out of range") {
    CHECK_THROWS_AS(build_propagator(1.0, 0.0, 0.0, adj), DomainError);
    CHECK_THROWS_AS(build_propagator(0.0, -1.0, 0.0, adj), DomainError);
    CHECK_THROWS_AS(build_propagator(0.0, 0.0, 1.5, adj), DomainError);
  }
}

TEST_CASE("innovation matrix") {
  const Matrix adj = s1_like_adjacency();
  std::mt19937_64 gen(3);
  SUBCASE("null dynamics gives U = K") {
    const Matrix k = random_spd(gen, 40);
    CHECK(innovation_matrix(k, build_propagator(0, 0, 0, adj)).isApprox(k, 1e-14));
  }
  SUBCASE("scalar AR(1) identity") {
    const Matrix u = innovation_matrix(Matrix::Identity(40, 40), build_propagator(0.6, 0.6, 0, adj));
    CHECK(u.isApprox(0.64 * Matrix::Identity(40, 40), 1e-14));
  }
  SUBCASE("direct evaluation and the stationary fixed point") {
    const Matrix k = random_spd(gen, 40);
    const auto h = build_propagator(0.4, 0.4, 0.035, adj);
    const Matrix u = innovation_matrix(k, h);
    const Matrix direct = k - h.H * k * h.H.transpose();
    CHECK((u - direct).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(is_positive_definite(u));
    CHECK((propagate_covariance(k, h, u) - k).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("non-PD innovation is reported") {
    const Matrix k = Matrix::Identity(40, 40);
    Matrix strong = adj * 30.0;
    const auto h = build_propagator(0.9, 0.9, 0.9, strong);
    CHECK_THROWS_AS(innovation_matrix(k, h), NumericalError);
  }
}

TEST_CASE("logit and inverse") {
  CHECK(logit(0.5) == 0.0);
  CHECK(inv_logit(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(1e-6, 1 - 1e-6);
  for (int k = 0; k < 1000; ++k) {
    const double p = u(gen);
    CHECK(std::abs(inv_logit(logit(p)) - p) < 1e-12);
  }
  CHECK_THROWS_AS(logit(0.0), DomainError);
  CHECK_THROWS_AS(logit(1.0), DomainError);
  CHECK(inv_logit(800.0) == 1.0);
  CHECK(inv_logit(-800.0) == 0.0);
}

TEST_CASE("complete-data log-likelihood") {
  SUBCASE("single observation by hand") {
    StDataset d;
    TimeSlice s;
    s.locations = {{0, 0}};
    s.z = {1};
    s.X = Matrix::Zero(1, 1);
    d.slices = {s};
    LatentState st{{Vector::Zero(1)}, {Vector::Zero(1)}};
    ModelParams p;
    p.beta = Vector::Zero(1);
    p.K = Matrix::Identity(1, 1);
    p.U = Matrix::Identity(1, 1);
    p.sigma2_xi = 1.0;
    p.H = build_propagator(0, 0, 0, Matrix::Zero(0, 1));
    const std::vector<Matrix> basis{Matrix::Ones(1, 1)};
    const double want = -std::log(2.0) - std::log(2.0 * std::numbers::pi);
    CHECK(complete_data_loglik(d, st, p, basis) == doctest::Approx(want).epsilon(1e-14));
    CHECK(want == doctest::Approx(-2.5310).epsilon(1e-4));
  }
  SUBCASE("Bernoulli term symmetry under z -> 1 - z, y -> -y") {
    StDataset d;
    TimeSlice s;
    s.locations = {{0, 0}, {1, 0}};
    s.z = {1, 0};
    s.X = Matrix::Ones(2, 1);
    d.slices = {s};
    LatentState st{{Vector::Zero(1)}, {Vector::Zero(2)}};
    ModelParams p;
    p.beta = Vector::Constant(1, 0.7);
    p.K = Matrix::Identity(1, 1);
    p.U = p.K;
    p.sigma2_xi = 0.3;
    p.H = build_propagator(0, 0, 0, Matrix::Zero(0, 1));
    const std::vector<Matrix> basis{Matrix::Zero(2, 1)};
    const double a = complete_data_loglik(d, st, p, basis);
    d.slices[0].z = {0, 1};
    p.beta(0) = -0.7;
    CHECK(complete_data_loglik(d, st, p, basis) == doctest::Approx(a).epsilon(1e-15));
  }
  SUBCASE("random instances against a naive density sum") {
    std::mt19937_64 gen(21);
    std::normal_distribution<double> n;
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t T = 1 + rep % 4;
      const Eigen::Index r1 = 2, r2 = 3, r = r1 + r2, p = 2;
      Matrix adj = Matrix::Zero(r2, r1);
      adj(0, 0) = adj(1, 1) = adj(2, 0) = 1.0;
      ModelParams prm;
      prm.beta = Vector::NullaryExpr(p, [&] { return n(gen); });
      prm.K = random_spd(gen, r);
      prm.U = random_spd(gen, r);
      prm.H = build_propagator(0.5, -0.3, 0.2, adj);
      prm.sigma2_xi = 0.1 + 0.05 * rep;
      StDataset d;
      LatentState st;
      std::vector<Matrix> basis;
      double oracle = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const Eigen::Index nt = 3 + static_cast<Eigen::Index>(t);
        TimeSlice s;
        s.X = Matrix::NullaryExpr(nt, p, [&] { return n(gen); });
        for (Eigen::Index i = 0; i < nt; ++i) {
          s.locations.push_back({static_cast<double>(i), 0.0});
          s.z.push_back(static_cast<std::uint8_t>(gen() % 2));
        }
        basis.push_back(Matrix::NullaryExpr(nt, r, [&] { return n(gen); }));
        st.eta.push_back(Vector::NullaryExpr(r, [&] { return n(gen); }));
        st.xi.push_back(Vector::NullaryExpr(nt, [&] { return 0.3 * n(gen); }));
        const Vector y = s.X * prm.beta + basis[t] * st.eta[t] + st.xi[t];
        for (Eigen::Index i = 0; i < nt; ++i) {
          const double pi = 1.0 / (1.0 + std::exp(-y(i)));
          oracle += s.z[static_cast<std::size_t>(i)] ? std::log(pi) : std::log(1.0 - pi);
          oracle += -0.5 * std::log(2.0 * std::numbers::pi * prm.sigma2_xi) -
                    st.xi[t](i) * st.xi[t](i) / (2.0 * prm.sigma2_xi);
        }
        if (t == 0) {
          oracle += naive_mvn_logpdf(st.eta[0], Vector::Zero(r), prm.K);
        } else {
          oracle += naive_mvn_logpdf(st.eta[t], prm.H.H * st.eta[t - 1], prm.U);
        }
        d.slices.push_back(std::move(s));
      }
      const double got = complete_data_loglik(d, st, prm, basis);
      CHECK(std::isfinite(got));
      CHECK(std::abs(got - oracle) < 1e-10 * std::max(1.0, std::abs(oracle)));
    }
  }
}

TEST_CASE("dataset validation") {
  StDataset d;
  TimeSlice s;
  s.locations = {{0, 0}, {1, 1}};
  s.z = {0, 2};
  s.X = Matrix::Ones(2, 1);
  d.slices = {s};
  CHECK_THROWS_AS(validate_dataset(d), UsageError);
  d.slices[0].z = {0, 1};
  CHECK_NOTHROW(validate_dataset(d));
  TimeSlice w = d.slices[0];
  w.X = Matrix::Ones(2, 2);
  d.slices.push_back(w);
  CHECK_THROWS_AS(validate_dataset(d), UsageError);
}

TEST_CASE("Arctic covariates") {
  ArcticTimeInputs in;
  in.summer_anomaly = {1.5, 1.5, 1.5};
  in.winter_anomaly = {-0.5, 0.25, 1.0};
  in.pole_distance = {100.0, 200.0, 300.0};
  in.coast_distance = {10.0, 100.0, 49.9};
  in.longitude = {0.0, 90.0, -180.0};
  const std::vector<ArcticTimeInputs> v{in};
  const auto x = build_arctic_covariates(v);
  REQUIRE(x.size() == 1);
  const Matrix& m = x[0];
  REQUIRE(m.cols() == 9);
  CHECK((m.col(0).array() == 1.0).all());
  CHECK((m.col(1).array() == 1.5).all());
  CHECK(m.col(3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(m.col(4).sum()) < 1e-8 * 3);
  CHECK(m.col(2)(0) == doctest::Approx(0.25));
  CHECK(m(0, 5) == 1.0);
  CHECK(m(0, 6) == 0.0);
  CHECK(m(1, 6) == doctest::Approx(1.0));
  CHECK(m(2, 5) == doctest::Approx(-1.0));
  CHECK(m(0, 8) == 100.0);
  CHECK(m(1, 8) == 0.0);
  CHECK(m(2, 8) == 300.0);
  CHECK((m.col(7).array() == Eigen::Array3d(100, 200, 300)).all());

  ArcticTimeInputs bad = in;
  bad.coast_distance.clear();
  const std::vector<ArcticTimeInputs> b{bad};
  CHECK_THROWS_AS(build_arctic_covariates(b), UsageError);
}
