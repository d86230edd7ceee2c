#pragma once

// Independent oracles for the closed-form identities the fast paths rely on.
// Everything here goes through dense linear algebra (Eigen), finite
// differences, or Monte Carlo — never through the blockwise operators being
// checked — so agreement is evidence rather than tautology. Monte Carlo
// oracles report standard errors and run on fixed seeds.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "loren/covariance.hpp"
#include "loren/estimators.hpp"
#include "loren/objectives.hpp"
#include "loren/perturb.hpp"
#include "loren/shapes.hpp"

namespace loren {

struct OracleReport {
  std::string identity;
  double discrepancy = 0.0;  // measured, in the units of `tolerance`
  double tolerance = 0.0;
  std::uint64_t samples = 0;  // Monte Carlo sample count; 0 for exact oracles
  bool pass = false;

  static OracleReport make(std::string name, double discrepancy,
                           double tolerance, std::uint64_t samples = 0) {
    OracleReport r;
    r.identity = std::move(name);
    r.discrepancy = discrepancy;
    r.tolerance = tolerance;
    r.samples = samples;
    r.pass = discrepancy <= tolerance;
    return r;
  }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Hooks so mutation tests can plant a wrong implementation and watch the
// oracle catch it.
using SqrtApplyFn = std::function<void(const CovarianceState&,
                                       std::span<const double>, std::span<double>)>;
using ScoreGradFn = std::function<std::vector<double>(const CovarianceState&,
                                                      std::span<const double>)>;

inline void default_sqrt_apply(const CovarianceState& cov,
                               std::span<const double> u, std::span<double> w) {
  cov.apply_sqrt(u, w);
}

inline std::vector<double> default_score_grad(const CovarianceState& cov,
                                              std::span<const double> w) {
  return cov.log_density_grad_a(w);
}

namespace verify_detail {

inline Eigen::Map<const RowMatrix> as_matrix(const std::vector<double>& data,
                                             std::size_t dim) {
  return Eigen::Map<const RowMatrix>(data.data(), dim, dim);
}

inline CovarianceState random_cov(std::mt19937_64& rng, std::size_t m,
                                  std::size_t n, double rho, double a_scale = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(n);
  for (double& v : a) v = a_scale * normal(rng);
  return CovarianceState(m, n, rho, std::move(a));
}

inline Eigen::VectorXd random_vec(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(d);
  for (std::size_t i = 0; i < d; ++i) v[static_cast<Eigen::Index>(i)] = normal(rng);
  return v;
}

}  // namespace verify_detail

// Blockwise operators vs dense Kronecker constructions: matrix-vector
// agreement for H, S and S^{1/2}, the identities H S = I and S^{1/2}
// (S^{1/2})^T = S, agreement of apply_sqrt with the eigendecomposition-based
// positive-definite root, spectrum containment, the trace formula, and
// finiteness of the square root as s -> 0.
inline OracleReport check_dense_equivalence(std::size_t trials,
                                            std::size_t max_m, std::size_t max_n,
                                            std::uint64_t seed = 2024,
                                            const SqrtApplyFn& sqrt_apply = default_sqrt_apply) {
  if (max_m * max_n > 4096) throw ConfigError("dense oracle size guard exceeded");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_m(1, max_m);
  std::uniform_int_distribution<std::size_t> pick_n(1, max_n);
  const double rhos[] = {0.01, 0.1, 1.0};

  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t m = pick_m(rng);
    const std::size_t n = pick_n(rng);
    const double rho = rhos[trial % 3];
    // every third case exercises a = 0; one case drives s toward zero
    double a_scale = 1.0;
    if (trial % 3 == 0) a_scale = 0.0;
    CovarianceState cov = verify_detail::random_cov(rng, m, n, rho, a_scale);
    if (trial == trials / 2) {
      std::vector<double> tiny(n, 0.0);
      tiny[0] = 1e-8;  // s = 1e-16
      cov = CovarianceState(m, n, rho, std::move(tiny));
    }
    const std::size_t d = m * n;

    const DenseCovariance dense = dense_materialize(cov);
    const auto sigma = verify_detail::as_matrix(dense.sigma, d);
    const auto sqrt_sigma = verify_detail::as_matrix(dense.sqrt_sigma, d);
    const auto precision = verify_detail::as_matrix(dense.precision, d);

    const Eigen::VectorXd v = verify_detail::random_vec(rng, d);
    std::vector<double> in(v.data(), v.data() + d);
    std::vector<double> out(d);

    cov.apply_precision(in, out);
    Eigen::Map<Eigen::VectorXd> out_map(out.data(), static_cast<Eigen::Index>(d));
    worst = std::max(worst, (out_map - precision * v).cwiseAbs().maxCoeff());

    cov.apply_sigma(in, out);
    worst = std::max(worst, (out_map - sigma * v).cwiseAbs().maxCoeff());

    sqrt_apply(cov, in, out);
    if (!out_map.allFinite()) {
      return OracleReport::make("dense_equivalence", std::numeric_limits<double>::infinity(),
                                1e-10);
    }
    worst = std::max(worst, (out_map - sqrt_sigma * v).cwiseAbs().maxCoeff());

    worst = std::max(worst, (precision * sigma - RowMatrix::Identity(d, d)).cwiseAbs().maxCoeff());
    worst = std::max(worst, (sqrt_sigma * sqrt_sigma.transpose() - sigma).cwiseAbs().maxCoeff());

    // principal root via eigendecomposition of the dense covariance
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
    const Eigen::MatrixXd psd_root = eig.eigenvectors() *
                                     eig.eigenvalues().cwiseSqrt().asDiagonal() *
                                     eig.eigenvectors().transpose();
    sqrt_apply(cov, in, out);
    worst = std::max(worst, (out_map - psd_root * v).cwiseAbs().maxCoeff());

    // spectrum containment and the trace formula
    const auto [alpha_min, alpha_max] = cov.eig_bounds();
    worst = std::max(worst, eig.eigenvalues().minCoeff() < alpha_min - 1e-12
                                ? alpha_min - eig.eigenvalues().minCoeff()
                                : 0.0);
    worst = std::max(worst, eig.eigenvalues().maxCoeff() > alpha_max + 1e-12
                                ? eig.eigenvalues().maxCoeff() - alpha_max
                                : 0.0);
    const double trace_rel = std::abs(cov.trace_sigma() - sigma.trace()) /
                             std::abs(sigma.trace());
    if (trace_rel > 1e-12) worst = std::max(worst, trace_rel);
  }
  return OracleReport::make("dense_equivalence", worst, 1e-10);
}

// Score gradient vs central finite differences of the exact Gaussian log
// density. The dense evaluation uses the structured determinant
// log det S = -m log(rho^{n-1} (rho+s)), cross-checked against a generic
// dense determinant, and the dense precision matrix for the quadratic form.
inline OracleReport check_score_gradient(std::size_t trials,
                                         std::uint64_t seed = 7,
                                         const ScoreGradFn& score_grad = default_score_grad) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(1, 6);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double rhos[] = {0.01, 0.1, 1.0};
  const double h = 1e-5;

  const auto log_density = [](const CovarianceState& cov,
                              std::span<const double> w) {
    const std::size_t d = cov.flat_size();
    const DenseCovariance dense = dense_materialize(cov);
    const auto precision = verify_detail::as_matrix(dense.precision, d);
    const auto sigma = verify_detail::as_matrix(dense.sigma, d);
    const double structured = cov.log_det_sigma();
    const double generic = std::log(sigma.determinant());
    if (std::abs(structured - generic) >
        1e-8 * std::max(1.0, std::abs(structured))) {
      throw std::runtime_error("structured log-determinant mismatch");
    }
    Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(d));
    return -0.5 * structured - 0.5 * wv.dot(precision * wv);
  };

  double worst = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t m = pick(rng);
    const std::size_t n = pick(rng);
    const double rho = rhos[trial % 3];
    const double a_scale = (trial % 5 == 0) ? 0.0 : 1.0;
    CovarianceState cov = verify_detail::random_cov(rng, m, n, rho, a_scale);

    std::vector<double> w(m * n);
    for (double& v : w) v = normal(rng);

    const std::vector<double> grad = score_grad(cov, w);
    std::vector<double> a = cov.factor();
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> ap = a;
      ap[i] += h;
      CovarianceState cov_p(m, n, rho, ap);
      ap[i] -= 2.0 * h;
      CovarianceState cov_m(m, n, rho, ap);
      const double fd = (log_density(cov_p, w) - log_density(cov_m, w)) / (2.0 * h);
      const double rel = std::abs(grad[i] - fd) / std::max(std::abs(fd), 1e-3);
      worst = std::max(worst, rel);
    }
  }

  // 1-D closed form: a = 1, rho = 1, z = x  =>  grad = a / (rho + a^2) = 1/2
  {
    CovarianceState cov(1, 1, 1.0, std::vector<double>{1.0});
    std::vector<double> w{0.0};
    const std::vector<double> grad = score_grad(cov, w);
    worst = std::max(worst, std::abs(grad[0] - 0.5) / 0.5);
  }
  return OracleReport::make("score_gradient_fd", worst, 1e-5);
}

// Gaussian fourth-moment identity:
//   E[(u^T S^{1/2} v)^2 u^T S u] = tr(S) v^T S v + 2 v^T S^2 v,
// estimated by Monte Carlo over u ~ N(0, I). Discrepancy is reported in
// standard-error units.
inline OracleReport check_fourth_moment(std::uint64_t samples, const CovarianceState& cov,
                                 std::uint64_t seed = 11,
                                 std::span<const double> v_fixed = {},
                                 double* analytic_out = nullptr) {
  const std::size_t d = cov.flat_size();
  if (d > 64) throw ConfigError("check_fourth_moment: d must be <= 64");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const DenseCovariance dense = dense_materialize(cov);
  const auto sigma = verify_detail::as_matrix(dense.sigma, d);
  const auto root = verify_detail::as_matrix(dense.sqrt_sigma, d);

  Eigen::VectorXd v = verify_detail::random_vec(rng, d);
  if (!v_fixed.empty()) {
    for (std::size_t i = 0; i < d; ++i) v[static_cast<Eigen::Index>(i)] = v_fixed[i];
  }
  const Eigen::VectorXd q = root * v;
  const double analytic = sigma.trace() * v.dot(sigma * v) + 2.0 * v.dot(sigma * sigma * v);
  if (analytic_out) *analytic_out = analytic;

  long double sum = 0.0L;
  long double sum_sq = 0.0L;
  Eigen::VectorXd u(static_cast<Eigen::Index>(d));
  for (std::uint64_t i = 0; i < samples; ++i) {
    for (std::size_t j = 0; j < d; ++j) u[static_cast<Eigen::Index>(j)] = normal(rng);
    const double dot_q = u.dot(q);
    const double x = dot_q * dot_q * u.dot(sigma * u);
    sum += x;
    sum_sq += static_cast<long double>(x) * x;
  }
  const double mean = static_cast<double>(sum / samples);
  const double var = static_cast<double>(sum_sq / samples) - mean * mean;
  const double se = std::sqrt(std::max(var, 0.0) / static_cast<double>(samples));
  const double discrepancy = std::abs(mean - analytic) / std::max(se, 1e-300);
  return OracleReport::make("gaussian_fourth_moment", discrepancy, 4.0, samples);
}

// Test-support diagonal quadratic f(y) = 1/2 sum h_i y_i^2 + b^T y.
class DiagQuadratic final : public detail::VectorObjective {
 public:
  DiagQuadratic(std::vector<double> h, std::vector<double> b)
      : VectorObjective(h.size()), h_(std::move(h)), b_(std::move(b)) {}
  std::string name() const override { return "diag_quadratic"; }

  double value(std::span<const double> x) const override {
    double f = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      f += 0.5 * h_[i] * x[i] * x[i] + b_[i] * x[i];
    }
    return f;
  }
  void gradient(std::span<const double> x, std::span<double> g) const override {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = h_[i] * x[i] + b_[i];
  }

 private:
  std::vector<double> h_;
  std::vector<double> b_;
};

// Monte Carlo mean of the RLOO x-estimator on a quadratic against the dense
// preconditioned gradient S grad f(x). Per-coordinate errors are normalised
// by max(3 SE, 2% |target|); the report's discrepancy is the worst ratio and
// the pass threshold is 1.
inline OracleReport check_rloo_unbiased(std::uint64_t samples,
                                        const DiagQuadratic& objective,
                                        const CovarianceState& cov,
                                        std::span<const double> x0,
                                        double epsilon, std::size_t k_passes,
                                        std::uint64_t seed = 13,
                                        std::vector<double>* mean_out = nullptr,
                                        std::vector<double>* se_out = nullptr) {
  const std::size_t d = cov.flat_size();
  const std::vector<LayerShape> shapes{cov.block_count() > 1
                                           ? LayerShape::matrix(cov.block_count(), cov.block_size())
                                           : LayerShape::vector(d)};
  ParameterSet params(shapes);
  auto layer = params.layer(0);
  for (std::size_t i = 0; i < d; ++i) layer[i] = x0[i];
  std::vector<CovarianceState> covs{cov};

  // dense target: S * grad f(x0)
  const DenseCovariance dense = dense_materialize(cov);
  const auto sigma = verify_detail::as_matrix(dense.sigma, d);
  PlainSource plain(params);
  const std::vector<double> grad = objective.analytic_gradient(plain, BatchSpec::full());
  Eigen::Map<const Eigen::VectorXd> grad_map(grad.data(), static_cast<Eigen::Index>(d));
  const Eigen::VectorXd target = sigma * grad_map;

  std::vector<long double> sum(d, 0.0L), sum_sq(d, 0.0L);
  EvalBundle bundle;
  bundle.epsilon = epsilon;
  bundle.f_values.resize(k_passes);
  bundle.perturbations.resize(k_passes);
  for (std::uint64_t s = 0; s < samples; ++s) {
    for (std::size_t k = 0; k < k_passes; ++k) {
      bundle.perturbations[k] =
          PerturbationHandle{seed, s, static_cast<std::uint32_t>(k + 1)};
      PerturbedSource src(params, covs, bundle.perturbations[k], epsilon);
      bundle.f_values[k] = objective.evaluate(src, BatchSpec::full());
    }
    const auto g = loren_grad_x(bundle, covs, shapes);
    for (std::size_t i = 0; i < d; ++i) {
      sum[i] += g[0][i];
      sum_sq[i] += static_cast<long double>(g[0][i]) * g[0][i];
    }
  }

  double worst = 0.0;
  if (mean_out) mean_out->assign(d, 0.0);
  if (se_out) se_out->assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double mean = static_cast<double>(sum[i] / samples);
    const double var = static_cast<double>(sum_sq[i] / samples) - mean * mean;
    const double se = std::sqrt(std::max(var, 0.0) / static_cast<double>(samples));
    const double allowance =
        std::max(3.0 * se, 0.02 * std::abs(target[static_cast<Eigen::Index>(i)]));
    worst = std::max(worst, std::abs(mean - target[static_cast<Eigen::Index>(i)]) /
                                std::max(allowance, 1e-300));
    if (mean_out) (*mean_out)[i] = mean;
    if (se_out) (*se_out)[i] = se;
  }
  return OracleReport::make("rloo_unbiasedness", worst, 1.0, samples);
}

// The RLOO baseline must not shift the estimator mean: compare the MC means
// for two pass counts within 3 combined standard errors per coordinate.
inline OracleReport check_rloo_k_consistency(std::uint64_t samples,
                                             const DiagQuadratic& objective,
                                             const CovarianceState& cov,
                                             std::span<const double> x0,
                                             double epsilon, std::size_t k_a,
                                             std::size_t k_b,
                                             std::uint64_t seed = 17) {
  std::vector<double> mean_a, se_a, mean_b, se_b;
  check_rloo_unbiased(samples, objective, cov, x0, epsilon, k_a, seed, &mean_a, &se_a);
  check_rloo_unbiased(samples, objective, cov, x0, epsilon, k_b, seed + 1, &mean_b, &se_b);
  double worst = 0.0;
  for (std::size_t i = 0; i < mean_a.size(); ++i) {
    const double combined = std::sqrt(se_a[i] * se_a[i] + se_b[i] * se_b[i]);
    worst = std::max(worst, std::abs(mean_a[i] - mean_b[i]) /
                                std::max(3.0 * combined, 1e-300));
  }
  return OracleReport::make("rloo_k_consistency", worst, 1.0, 2 * samples);
}

}  // namespace loren
