#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "loren/estimators.hpp"
#include "loren/verify.hpp"

using namespace loren;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("spsa_central on the sphere") {
  SECTION("equal evaluations give the zero vector") {
    const auto g = spsa_central(3.5, 3.5, 1e-2, std::vector<double>{1.0, -2.0});
    REQUIRE(g == std::vector<double>{0.0, 0.0});
  }
  SECTION("central difference is exact on quadratics") {
    // f = |x|^2 at x = (1,0): f(x + eps u) - f(x - eps u) = 4 eps (x.u)
    const double eps = 0.37;
    const auto fx = [](double x0, double x1) { return x0 * x0 + x1 * x1; };
    {
      const std::vector<double> u{1.0, 0.0};
      const auto g = spsa_central(fx(1 + eps, 0), fx(1 - eps, 0), eps, u);
      REQUIRE_THAT(g[0], WithinAbs(2.0, 1e-12));
      REQUIRE_THAT(g[1], WithinAbs(0.0, 1e-12));
    }
    {
      const std::vector<double> u{0.0, 1.0};
      const auto g = spsa_central(fx(1, eps), fx(1, -eps), eps, u);
      REQUIRE_THAT(g[0], WithinAbs(0.0, 1e-12));
      REQUIRE_THAT(g[1], WithinAbs(0.0, 1e-12));
    }
  }
  SECTION("non-positive epsilon is rejected") {
    REQUIRE_THROWS_AS(spsa_central(1, 0, 0.0, std::vector<double>{1.0}), ConfigError);
  }
}

TEST_CASE("smoothed_grad_sample") {
  SECTION("identity covariance reduces to spsa_central") {
    CovarianceState iso(1, 3, 1.0, {0.0, 0.0, 0.0});
    const std::vector<double> u{0.3, -1.2, 0.7};
    const auto a = smoothed_grad_sample(2.0, 1.0, 1e-3, u, iso);
    const auto b = spsa_central(2.0, 1.0, 1e-3, u);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE_THAT(a[i], WithinRel(b[i], 1e-14));
  }

  SECTION("Monte Carlo mean recovers the quadratic gradient") {
    // f = 1/2 x^T diag(1,4) x at x = (1,1); central differences are exact on
    // quadratics, so the MC mean must hit grad f = (1,4) within noise.
    CovarianceState cov(1, 2, 0.5, {0.6, -0.3});
    const double eps = 1e-2;
    const auto f = [](double y0, double y1) {
      return 0.5 * (y0 * y0 + 4.0 * y1 * y1);
    };
    constexpr std::size_t n = 200'000;
    long double sum[2] = {0.0L, 0.0L};
    long double sum_sq[2] = {0.0L, 0.0L};
    std::vector<double> z(2), u(2);
    for (std::size_t i = 0; i < n; ++i) {
      gaussian_block(StreamCoord{77, i, 1, 0, 0}, z);
      cov.apply_sqrt(z, u);  // u ~ N(0, Sigma)
      const double fp = f(1.0 + eps * u[0], 1.0 + eps * u[1]);
      const double fm = f(1.0 - eps * u[0], 1.0 - eps * u[1]);
      const auto g = smoothed_grad_sample(fp, fm, eps, u, cov);
      for (int j = 0; j < 2; ++j) {
        sum[j] += g[j];
        sum_sq[j] += static_cast<long double>(g[j]) * g[j];
      }
    }
    const double target[2] = {1.0, 4.0};
    for (int j = 0; j < 2; ++j) {
      const double mean = static_cast<double>(sum[j] / n);
      const double var = static_cast<double>(sum_sq[j] / n) - mean * mean;
      const double se = std::sqrt(var / n);
      REQUIRE(std::abs(mean - target[j]) < 3.0 * se);
    }
  }

  SECTION("smoothing bias on a cubic shrinks as eps^2") {
    // f = x^3 at x = 1 with common random numbers: the per-sample bias
    // against the exact directional term 3 u^2 is eps^2 u^4, so bias ratios
    // across eps are eps ratios squared.
    CovarianceState iso(1, 1, 1.0, {0.0});
    const double eps_values[3] = {1e-1, 1e-2, 1e-3};
    double bias[3] = {0, 0, 0};
    constexpr std::size_t n = 100'000;
    std::vector<double> u(1);
    for (std::size_t i = 0; i < n; ++i) {
      gaussian_block(StreamCoord{501, i, 1, 0, 0}, u);
      const double exact = 3.0 * u[0] * u[0];
      for (int e = 0; e < 3; ++e) {
        const double eps = eps_values[e];
        const double fp = std::pow(1.0 + eps * u[0], 3);
        const double fm = std::pow(1.0 - eps * u[0], 3);
        const auto g = smoothed_grad_sample(fp, fm, eps, u, iso);
        bias[e] += (g[0] - exact) / static_cast<double>(n);
      }
    }
    REQUIRE(bias[0] / bias[1] > 95.0);
    REQUIRE(bias[0] / bias[1] < 105.0);
    REQUIRE(bias[1] / bias[2] > 90.0);
    REQUIRE(bias[1] / bias[2] < 110.0);
  }
}

TEST_CASE("rloo_weights") {
  SECTION("constant values give zero weights") {
    const auto c = rloo_weights(std::vector<double>{1, 1, 1, 1});
    for (double v : c) REQUIRE(v == 0.0);
  }
  SECTION("hand arithmetic for K = 2") {
    const auto c = rloo_weights(std::vector<double>{2.0, 0.0});
    REQUIRE_THAT(c[0], WithinAbs(1.0, 1e-15));
    REQUIRE_THAT(c[1], WithinAbs(-1.0, 1e-15));
  }
  SECTION("equals the leave-one-out form and sums to zero") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(5.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> f(6);
      for (double& v : f) v = normal(rng);
      const auto c = rloo_weights(f);
      double csum = 0.0;
      for (std::size_t k = 0; k < 6; ++k) {
        double others = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
          if (j != k) others += f[j];
        }
        const double loo = (f[k] - others / 5.0) / 6.0;
        REQUIRE_THAT(c[k], WithinAbs(loo, 1e-14));
        csum += c[k];
      }
      REQUIRE(std::abs(csum) < 6.0 * 1e-16 * 10.0);
    }
  }
  SECTION("K < 2 is rejected") {
    REQUIRE_THROWS_AS(rloo_weights(std::vector<double>{1.0}), ConfigError);
  }
}

namespace {

EvalBundle make_bundle(std::span<const double> f, double eps, std::uint64_t seed,
                       std::uint64_t step) {
  EvalBundle b;
  b.f_values.assign(f.begin(), f.end());
  b.epsilon = eps;
  for (std::size_t k = 0; k < f.size(); ++k) {
    b.perturbations.push_back(
        PerturbationHandle{seed, step, static_cast<std::uint32_t>(k + 1)});
  }
  return b;
}

}  // namespace

TEST_CASE("loren_grad_x") {
  const std::vector<LayerShape> shapes{LayerShape::vector(3)};
  const std::vector<CovarianceState> covs{CovarianceState(1, 3, 0.5, {0.4, -0.2, 0.1})};

  SECTION("equal losses give the zero estimate") {
    const auto bundle = make_bundle(std::vector<double>{2, 2, 2, 2}, 1e-3, 9, 0);
    const auto g = loren_grad_x(bundle, covs, shapes);
    for (double v : g[0]) REQUIRE(v == 0.0);
  }

  SECTION("matches the formula (1/eps) sum_k c_k w_k") {
    const auto bundle = make_bundle(std::vector<double>{1.0, 3.0, -2.0}, 1e-2, 9, 5);
    const auto g = loren_grad_x(bundle, covs, shapes);
    const auto c = rloo_weights(bundle.f_values);
    std::vector<double> expect(3, 0.0), u(3), w(3);
    for (std::size_t k = 0; k < 3; ++k) {
      gaussian_block(bundle.perturbations[k].coord(0, 0), u);
      covs[0].apply_sqrt(u, w);
      for (std::size_t i = 0; i < 3; ++i) expect[i] += c[k] / 1e-2 * w[i];
    }
    for (std::size_t i = 0; i < 3; ++i) REQUIRE_THAT(g[0][i], WithinRel(expect[i], 1e-12));
  }

  SECTION("single-sample hand value on f(x) = x^2") {
    // d=1, rho=1, a=0, x=1, eps=1e-3, K=2, u = (+1, -1):
    // f1 = (1+eps)^2, f2 = (1-eps)^2, c = (2 eps, -2 eps)/... -> g = 4
    const double eps = 1e-3;
    const double f1 = (1.0 + eps) * (1.0 + eps);
    const double f2 = (1.0 - eps) * (1.0 - eps);
    const auto c = rloo_weights(std::vector<double>{f1, f2});
    const double g = (c[0] * 1.0 + c[1] * -1.0) / eps;
    REQUIRE_THAT(g, WithinRel(4.0, 1e-9));
  }

  SECTION("translation invariance in the function values") {
    const auto b1 = make_bundle(std::vector<double>{1.0, 3.0, -2.0, 0.5}, 1e-3, 4, 2);
    auto shifted = b1.f_values;
    for (double& v : shifted) v += 1e6;
    const auto b2 = make_bundle(shifted, 1e-3, 4, 2);
    const auto g1 = loren_grad_x(b1, covs, shapes);
    const auto g2 = loren_grad_x(b2, covs, shapes);
    for (std::size_t i = 0; i < 3; ++i) {
      REQUIRE_THAT(g2[0][i], WithinRel(g1[0][i], 1e-9));
    }
  }
}

TEST_CASE("loren_grad_a") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(2, 2)};
  const std::vector<CovarianceState> covs{CovarianceState(2, 2, 0.5, {0.8, -0.5})};

  SECTION("equal losses give zero") {
    const auto bundle = make_bundle(std::vector<double>{1, 1}, 1e-3, 21, 0);
    const auto g = loren_grad_a(bundle, covs, shapes);
    for (double v : g[0]) REQUIRE(v == 0.0);
  }

  SECTION("K = 2 weight algebra: difference of score gradients") {
    const auto bundle = make_bundle(std::vector<double>{2.0, 0.0}, 1e-3, 21, 3);
    const auto g = loren_grad_a(bundle, covs, shapes);
    std::vector<double> u(4), w1(4), w2(4);
    gaussian_block(bundle.perturbations[0].coord(0, 0), u);
    covs[0].apply_sqrt(u, w1);
    gaussian_block(bundle.perturbations[1].coord(0, 0), u);
    covs[0].apply_sqrt(u, w2);
    const auto s1 = covs[0].log_density_grad_a(w1);
    const auto s2 = covs[0].log_density_grad_a(w2);
    for (std::size_t i = 0; i < 2; ++i) {
      REQUIRE_THAT(g[0][i], WithinAbs(s1[i] - s2[i], 1e-10 * (1.0 + std::abs(s1[i]))));
    }
  }
}

TEST_CASE("RLOO mean agrees with the no-baseline forward estimator") {
  // Both estimators target Sigma grad f; their MC means must agree within
  // combined standard errors (the baseline shifts variance, not the mean).
  const std::vector<double> h{1.0, 4.0};
  const std::vector<double> b{0.0, 0.0};
  DiagQuadratic quad(h, b);
  const std::vector<LayerShape> shapes{LayerShape::vector(2)};
  const std::vector<CovarianceState> covs{CovarianceState(1, 2, 1.0, {0.0, 0.0})};
  ParameterSet params(shapes);
  params.layer(0)[0] = 1.0;
  params.layer(0)[1] = 1.0;

  const double eps = 1e-3;
  constexpr std::size_t samples = 100'000;
  constexpr std::size_t k_count = 4;

  long double rloo_sum[2] = {0, 0}, rloo_sq[2] = {0, 0};
  long double van_sum[2] = {0, 0}, van_sq[2] = {0, 0};

  PlainSource plain(params);
  const double f_base = quad.evaluate(plain, BatchSpec::full());

  EvalBundle bundle;
  bundle.epsilon = eps;
  bundle.f_values.resize(k_count);
  bundle.perturbations.resize(k_count);
  std::vector<double> u(2), w(2);
  for (std::size_t s = 0; s < samples; ++s) {
    double van[2] = {0, 0};
    for (std::size_t k = 0; k < k_count; ++k) {
      bundle.perturbations[k] =
          PerturbationHandle{888, s, static_cast<std::uint32_t>(k + 1)};
      PerturbedSource src(params, covs, bundle.perturbations[k], eps);
      bundle.f_values[k] = quad.evaluate(src, BatchSpec::full());

      gaussian_block(bundle.perturbations[k].coord(0, 0), u);
      covs[0].apply_sqrt(u, w);
      const double coeff = (bundle.f_values[k] - f_base) /
                           (eps * static_cast<double>(k_count));
      for (int i = 0; i < 2; ++i) van[i] += coeff * w[i];
    }
    const auto g = loren_grad_x(bundle, covs, shapes);
    for (int i = 0; i < 2; ++i) {
      rloo_sum[i] += g[0][i];
      rloo_sq[i] += static_cast<long double>(g[0][i]) * g[0][i];
      van_sum[i] += van[i];
      van_sq[i] += static_cast<long double>(van[i]) * van[i];
    }
  }

  for (int i = 0; i < 2; ++i) {
    const double mr = static_cast<double>(rloo_sum[i] / samples);
    const double vr = static_cast<double>(rloo_sq[i] / samples) - mr * mr;
    const double mv = static_cast<double>(van_sum[i] / samples);
    const double vv = static_cast<double>(van_sq[i] / samples) - mv * mv;
    const double combined = std::sqrt(vr / samples + vv / samples);
    REQUIRE(std::abs(mr - mv) < 3.0 * combined);
  }
}

TEST_CASE("preconditioning identity: MC mean converges to Sigma grad f") {
  const std::vector<double> h{1.0, 4.0, 2.0, 0.5};
  const std::vector<double> b{0.3, -0.2, 0.1, 0.4};
  DiagQuadratic quad(h, b);
  CovarianceState cov(2, 2, 0.1, {0.8, -0.5});
  const std::vector<double> x0{1.0, 1.0, -0.5, 0.25};
  const auto report = check_rloo_unbiased(150'000, quad, cov, x0, 1e-3, 6, 99);
  INFO(report.identity << " discrepancy " << report.discrepancy);
  REQUIRE(report.pass);
}
