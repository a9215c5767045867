#include "stbhm/model.hpp"
#include "stbhm/predictor.hpp"
#include "stbhm/summaries.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace stbhm;

namespace {

// Hand-built posterior with random draws: p = 2, r = 3, T = 2, 4 locations per time.
PosteriorSamples fake_samples(std::size_t draws, std::uint64_t seed, double sigma2_xi = 0.1) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(-0.8, 0.8);
  PosteriorSamples s;
  s.p = 2;
  s.r = 3;
  s.T = 2;
  s.n_per_time = {4, 4};
  s.draws = draws;
  s.sigma2_xi = sigma2_xi;
  s.has_xi = true;
  s.adjacency = Matrix::Ones(2, 1);
  for (std::size_t d = 0; d < draws; ++d) {
    s.beta.push_back(1.0 + 0.2 * nd(gen));
    s.beta.push_back(-0.5 + 0.1 * nd(gen));
    for (int j = 0; j < 3; ++j) {
      const double l = ud(gen);
      s.lambda.push_back(l);
      s.tau.push_back(std::log((1 + l) / (1 - l)));
    }
    const Matrix a = Matrix::NullaryExpr(3, 3, [&] { return 0.3 * nd(gen); });
    const Matrix k = a * a.transpose() + 0.5 * Matrix::Identity(3, 3);
    const Matrix u = 0.5 * k;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        s.K.push_back(k(i, j));
        s.U.push_back(u(i, j));
      }
    }
    for (int k2 = 0; k2 < 6; ++k2) s.eta.push_back(nd(gen));
    for (int k2 = 0; k2 < 8; ++k2) s.xi.push_back(0.3 * nd(gen));
  }
  s.iteration.resize(draws);
  return s;
}

Matrix design_x(Eigen::Index m) {
  Matrix x(m, 2);
  for (Eigen::Index i = 0; i < m; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = 0.1 * static_cast<double>(i);
  }
  return x;
}

Matrix design_s(Eigen::Index m) {
  Matrix s(m, 3);
  for (Eigen::Index i = 0; i < m; ++i) {
    s(i, 0) = 0.5;
    s(i, 1) = std::sin(static_cast<double>(i));
    s(i, 2) = -0.3 + 0.05 * static_cast<double>(i);
  }
  return s;
}

double sample_var(const Vector& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("scale names") {
  CHECK(scale_from_string("p") == Scale::p);
  CHECK(to_string(Scale::z) == "z");
  CHECK_THROWS_AS(scale_from_string("q"), UsageError);
}

TEST_CASE("observed-location prediction") {
  const Matrix x = design_x(3), s = design_s(3);
  const IndexVector idx{2, 0, 3};

  SUBCASE("one draw returns its plug-in value") {
    const auto one = fake_samples(1, 1);
    const auto pred = predict_observed(one, 1, x, s, idx);
    const Vector xi = one.xi_draw(0, 1);
    for (Eigen::Index k = 0; k < 3; ++k) {
      const double want = x.row(k).dot(one.beta_draw(0)) + s.row(k).dot(one.eta_draw(0, 1)) +
                          xi(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(k)]));
      CHECK(pred.mean(k) == doctest::Approx(want).epsilon(1e-14));
    }
  }
  SUBCASE("beta-only model reproduces X beta exactly") {
    auto smp = fake_samples(50, 2);
    std::fill(smp.xi.begin(), smp.xi.end(), 0.0);
    const auto pred = predict_observed(smp, 0, x, Matrix::Zero(3, 3), idx);
    for (std::size_t d = 0; d < smp.draws; ++d) {
      const Vector xb = x * smp.beta_draw(d);
      CHECK((pred.draws.row(static_cast<Eigen::Index>(d)).transpose() - xb).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("mean equals the moment identity") {
    const auto smp = fake_samples(400, 3);
    const auto pred = predict_observed(smp, 1, x, s, idx);
    Vector eb = Vector::Zero(2), ee = Vector::Zero(3), ex = Vector::Zero(4);
    for (std::size_t d = 0; d < smp.draws; ++d) {
      eb += smp.beta_draw(d) / 400.0;
      ee += smp.eta_draw(d, 1) / 400.0;
      ex += smp.xi_draw(d, 1) / 400.0;
    }
    for (Eigen::Index k = 0; k < 3; ++k) {
      const double want = x.row(k).dot(eb) + s.row(k).dot(ee) +
                          ex(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(k)]));
      CHECK(std::abs(pred.mean(k) - want) < 1e-12);
    }
  }
  SUBCASE("errors") {
    auto smp = fake_samples(5, 4);
    const IndexVector far{0, 1, 9};
    CHECK_THROWS_AS(predict_observed(smp, 0, x, s, far), UsageError);
    smp.has_xi = false;
    CHECK_THROWS_AS(predict_observed(smp, 0, x, s, idx), UsageError);
    CHECK_THROWS_AS(predict_new(smp, 5, x, s, 1), UsageError);
    CHECK_THROWS_AS(predict_new(smp, 0, design_x(3), design_s(4), 1), UsageError);
  }
}

TEST_CASE("new-location prediction") {
  const Matrix x = design_x(5), s = design_s(5);
  SUBCASE("no nugget: variance is that of the latent part") {
    const auto smp = fake_samples(300, 5, 0.0);
    const auto pred = predict_new(smp, 0, x, s, 7);
    for (Eigen::Index k = 0; k < 5; ++k) {
      CHECK(pred.variance(k) == doctest::Approx(sample_var(pred.draws.col(k))).epsilon(1e-12));
    }
  }
  SUBCASE("closed-form variance matches composition draws") {
    const auto smp = fake_samples(20000, 6, 0.4);
    const auto pred = predict_new(smp, 1, x, s, 11);
    for (Eigen::Index k = 0; k < 5; ++k) {
      const Vector c = pred.draws.col(k).array() - pred.draws.col(k).mean();
      const double v = c.squaredNorm() / static_cast<double>(c.size() - 1);
      const double m4 = c.array().pow(4).mean();
      const double se = std::sqrt((m4 - v * v) / static_cast<double>(c.size()));
      CHECK(std::abs(v - pred.variance(k)) < 3.0 * se);
      CHECK(std::abs(pred.draws.col(k).mean() - pred.mean(k)) < 3.0 * std::sqrt(v / 20000.0));
    }
  }
  SUBCASE("reproducible per seed") {
    const auto smp = fake_samples(50, 7);
    CHECK(predict_new(smp, 0, x, s, 3).draws == predict_new(smp, 0, x, s, 3).draws);
    CHECK(predict_new(smp, 0, x, s, 3).draws != predict_new(smp, 0, x, s, 4).draws);
  }
}

TEST_CASE("one-step forecast") {
  const Matrix x = design_x(4), s = design_s(4);
  SUBCASE("null dynamics forget the last state") {
    auto smp = fake_samples(2000, 8, 0.1);
    std::fill(smp.lambda.begin(), smp.lambda.end(), 0.0);
    std::fill(smp.tau.begin(), smp.tau.end(), 0.0);
    const auto pred = forecast_one_step(smp, x, s, 5);
    const Vector eb = x * smp.beta_mean();
    for (Eigen::Index k = 0; k < 4; ++k) CHECK(pred.mean(k) == doctest::Approx(eb(k)).epsilon(1e-12));
    // The spread is U plus the nugget, independent of eta_T.
    Matrix um = Matrix::Zero(3, 3);
    for (std::size_t d = 0; d < smp.draws; ++d) um += smp.U_draw(d) / 2000.0;
    const Matrix su = s * um * s.transpose();
    for (Eigen::Index k = 0; k < 4; ++k) {
      Vector xb(2000);
      for (std::size_t d = 0; d < smp.draws; ++d) xb(static_cast<Eigen::Index>(d)) = x.row(k).dot(smp.beta_draw(d));
      CHECK(pred.variance(k) == doctest::Approx(sample_var(xb) + su(k, k) + 0.1).epsilon(1e-10));
    }
  }
  SUBCASE("closed-form moments match the draws") {
    const auto smp = fake_samples(20000, 9, 0.2);
    std::size_t unstable = 99;
    const auto pred = forecast_one_step(smp, x, s, 6, &unstable);
    CHECK(unstable == 0);
    for (Eigen::Index k = 0; k < 4; ++k) {
      const Vector c = pred.draws.col(k).array() - pred.draws.col(k).mean();
      const double v = c.squaredNorm() / static_cast<double>(c.size() - 1);
      const double m4 = c.array().pow(4).mean();
      CHECK(std::abs(v - pred.variance(k)) < 3.0 * std::sqrt((m4 - v * v) / 20000.0));
      CHECK(std::abs(pred.draws.col(k).mean() - pred.mean(k)) < 3.0 * std::sqrt(v / 20000.0));
    }
  }
}

TEST_CASE("probability and binary scales") {
  SUBCASE("fair coin") {
    const Matrix y = Matrix::Zero(10, 3);
    const auto z = predict_z(y, 1);
    for (Eigen::Index k = 0; k < 3; ++k) {
      CHECK(z.mean(k) == 0.5);
      CHECK(z.variance(k) == 0.25);
    }
  }
  SUBCASE("saturation") {
    const Matrix y = Matrix::Constant(10, 2, 1e6);
    const auto z = predict_z(y, 1);
    CHECK(z.mean(0) == 1.0);
    CHECK(z.variance(0) == 0.0);
    CHECK((z.draws.array() == 1.0).all());
    const auto p = to_probability(-y);
    CHECK(p.mean(1) == 0.0);
  }
  SUBCASE("variance decomposition against the binary draws") {
    Rng rng(4);
    const Eigen::Index n = 40000;
    Matrix y(n, 3);
    for (Eigen::Index d = 0; d < n; ++d) {
      y(d, 0) = 0.5 + rng.normal();
      y(d, 1) = -2.0 + 0.3 * rng.normal();
      y(d, 2) = 3.0 * rng.normal();
    }
    const auto z = predict_z(y, 9);
    for (Eigen::Index k = 0; k < 3; ++k) {
      const double m = z.draws.col(k).mean();
      const double v = m * (1 - m) * static_cast<double>(n) / static_cast<double>(n - 1);
      // Var of the Bernoulli sample variance is about p(1-p)(1-2p)^2 / n.
      const double se = std::sqrt(std::max(m * (1 - m) * (1 - 2 * m) * (1 - 2 * m), 1e-4) / static_cast<double>(n));
      CHECK(std::abs(v - z.variance(k)) < 3.0 * se + 1e-12);
      CHECK(std::abs(m - z.mean(k)) < 3.0 * std::sqrt(z.variance(k) / static_cast<double>(n)));
    }
  }
}

TEST_CASE("summaries of predictive draws") {
  Rng rng(12);
  Matrix y(501, 4);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = 2.0 * rng.normal() + 0.3;
  const auto p = to_probability(y);
  CHECK((p.draws.array() > 0.0).all());
  CHECK((p.draws.array() < 1.0).all());
  const auto sum = summarize_targets(p);
  for (Eigen::Index k = 0; k < 4; ++k) {
    CHECK(sum.q05(k) <= sum.q50(k));
    CHECK(sum.q50(k) <= sum.q95(k));
    std::vector<double> col(p.draws.col(k).data(), p.draws.col(k).data() + 501);
    CHECK(sum.q05(k) == quantile_type7(col, 0.05));
    CHECK(sum.q95(k) == quantile_type7(col, 0.95));
    CHECK(sum.sd(k) == doctest::Approx(std::sqrt(p.variance(k))));
    std::vector<double> ycol(y.col(k).data(), y.col(k).data() + 501);
    const double lo = inv_logit(quantile_type7(ycol, 0.05));
    const double hi = inv_logit(quantile_type7(ycol, 0.95));
    CHECK(p.mean(k) > lo);
    CHECK(p.mean(k) < hi);
  }
  const auto z = predict_z(y, 3);
  CHECK((z.mean.array() >= 0.0).all());
  CHECK((z.mean.array() <= 1.0).all());
}
