#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "loren/verify.hpp"

using namespace loren;
using Catch::Matchers::WithinAbs;

TEST_CASE("dense equivalence oracle passes on the real implementation") {
  const auto report = check_dense_equivalence(60, 8, 8);
  INFO("discrepancy " << report.discrepancy);
  REQUIRE(report.pass);
}

TEST_CASE("dense equivalence oracle rejects the reflected square root") {
  // The reflected coefficient squares to the same matrix but blows up as
  // s -> 0; the oracle's degenerate case and the eigendecomposition
  // comparison both catch it.
  const SqrtApplyFn reflected = [](const CovarianceState& cov,
                                   std::span<const double> u, std::span<double> w) {
    const double rho = cov.rho();
    const double s = cov.squared_norm();
    const double kappa = (std::sqrt(rho) + std::sqrt(rho + s)) /
                         (s * std::sqrt(rho + s));
    const auto& a = cov.factor();
    const std::size_t n = cov.block_size();
    for (std::size_t b = 0; b < cov.block_count(); ++b) {
      double au = 0.0;
      for (std::size_t i = 0; i < n; ++i) au += a[i] * u[b * n + i];
      for (std::size_t i = 0; i < n; ++i) {
        w[b * n + i] = (u[b * n + i] - kappa * au * a[i]) / std::sqrt(rho);
      }
    }
  };
  const auto report = check_dense_equivalence(60, 8, 8, 2024, reflected);
  REQUIRE_FALSE(report.pass);
}

TEST_CASE("score gradient oracle passes and catches a planted sign flip") {
  const auto good = check_score_gradient(60);
  INFO("discrepancy " << good.discrepancy);
  REQUIRE(good.pass);

  const ScoreGradFn flipped = [](const CovarianceState& cov,
                                 std::span<const double> w) {
    auto g = cov.log_density_grad_a(w);
    for (double& v : g) v = -v;
    return g;
  };
  const auto bad = check_score_gradient(60, 7, flipped);
  REQUIRE_FALSE(bad.pass);
}

TEST_CASE("score gradient oracle: a = 0 gives a zero gradient") {
  CovarianceState cov(2, 3, 0.5, {0.0, 0.0, 0.0});
  const auto g = cov.log_density_grad_a(std::vector<double>{1, -1, 2, 0.5, 0.25, -2});
  for (double v : g) REQUIRE(v == 0.0);
}

TEST_CASE("fourth-moment oracle: identity covariance worked value") {
  // Sigma = I_2, v = e1: tr(Sigma) v'Sigma v + 2 v'Sigma^2 v = 2 + 2 = 4
  CovarianceState cov(2, 1, 1.0, std::vector<double>{0.0});
  const std::vector<double> e1{1.0, 0.0};
  double analytic = 0.0;
  const auto report = check_fourth_moment(500'000, cov, 11, e1, &analytic);
  REQUIRE_THAT(analytic, WithinAbs(4.0, 1e-14));
  INFO("discrepancy(se units) " << report.discrepancy);
  REQUIRE(report.pass);
}

TEST_CASE("fourth-moment oracle: zero direction is exactly zero") {
  CovarianceState cov(2, 1, 1.0, std::vector<double>{0.0});
  const std::vector<double> zero{0.0, 0.0};
  double analytic = 1.0;
  check_fourth_moment(100, cov, 11, zero, &analytic);
  REQUIRE(analytic == 0.0);
}

TEST_CASE("fourth-moment oracle on a rank-1 covariance") {
  std::mt19937_64 rng(5);
  CovarianceState cov = verify_detail::random_cov(rng, 4, 4, 0.1);
  const auto report = check_fourth_moment(1'000'000, cov);
  INFO("discrepancy(se units) " << report.discrepancy);
  REQUIRE(report.pass);
}

TEST_CASE("rloo unbiasedness oracle on a linear objective") {
  // f = g.x: the smoothed gradient is exactly g and the MC mean must match
  // Sigma g within noise allowance
  DiagQuadratic linear({0.0, 0.0, 0.0}, {1.0, -2.0, 0.5});
  CovarianceState cov(1, 3, 0.2, {0.5, 0.1, -0.3});
  const std::vector<double> x0{0.3, 0.3, 0.3};
  const auto report = check_rloo_unbiased(60'000, linear, cov, x0, 1e-3, 4);
  INFO("discrepancy " << report.discrepancy);
  REQUIRE(report.pass);
}

TEST_CASE("rloo estimates on a constant objective are exactly zero") {
  DiagQuadratic constant({0.0, 0.0}, {0.0, 0.0});
  CovarianceState cov(1, 2, 0.2, {0.5, 0.1});
  const std::vector<double> x0{1.0, 1.0};
  std::vector<double> mean, se;
  check_rloo_unbiased(100, constant, cov, x0, 1e-3, 4, 13, &mean, &se);
  for (double m : mean) REQUIRE(m == 0.0);
}

TEST_CASE("rloo K-consistency oracle") {
  DiagQuadratic quad({1.0, 4.0}, {0.1, -0.1});
  CovarianceState cov(1, 2, 0.1, {0.7, -0.2});
  const std::vector<double> x0{1.0, -0.5};
  const auto report = check_rloo_k_consistency(80'000, quad, cov, x0, 1e-3, 2, 6);
  INFO("discrepancy " << report.discrepancy);
  REQUIRE(report.pass);
}

TEST_CASE("oracle reports flag failure iff discrepancy exceeds tolerance") {
  const auto r1 = OracleReport::make("x", 0.5, 1.0);
  REQUIRE(r1.pass);
  const auto r2 = OracleReport::make("x", 1.5, 1.0);
  REQUIRE_FALSE(r2.pass);
}
