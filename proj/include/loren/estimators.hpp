#pragma once

// Gradient estimators: two-point SPSA, the anisotropic smoothed-gradient
// sample, RLOO coefficients, and the variance-reduced directions for the
// parameter update and the covariance-factor update.
//
// Conventions: perturbations are applied as eps * S^{1/2} u with S the
// rho-damped covariance (no epsilon folded into S). With coefficients
// c_k = (f^k - mean_j f^j) / (K - 1) the estimators are
//
//   g(x) = (1/eps) sum_k c_k S^{1/2} u_k
//   g(a) = sum_k c_k grad_a log p(z_k),  z_k = x + eps S^{1/2} u_k
//
// Reductions run over blocks in layer order with k ascending inside each
// block, so results do not depend on how the K forward passes were
// scheduled.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "loren/covariance.hpp"
#include "loren/perturb.hpp"
#include "loren/shapes.hpp"

namespace loren {

// One step's forward-pass results plus the coordinates needed to regenerate
// the perturbations that produced them.
struct EvalBundle {
  std::vector<double> f_values;                  // f^k, k = 1..K
  double epsilon = 0.0;                          // smoothing scale
  std::vector<PerturbationHandle> perturbations; // one handle per pass

  std::size_t passes() const { return f_values.size(); }
};

struct GradientEstimate {
  std::vector<std::vector<double>> x_direction;  // per layer, flat
  std::vector<std::vector<double>> a_direction;  // per layer, length n
  std::vector<double> coefficients;              // the K RLOO weights c_k
};

// c_k = (f^k - (1/K) sum_j f^j) / (K-1); equals the leave-one-out form
// (f^k - mean of the others) / K. Accumulated in extended precision so that
// sum_k c_k stays near zero even when |f| is large.
inline std::vector<double> rloo_weights(std::span<const double> f_values) {
  const std::size_t k = f_values.size();
  if (k < 2) throw ConfigError("rloo_weights requires K >= 2");
  long double sum = 0.0L;
  for (double f : f_values) sum += f;
  const long double mean = sum / static_cast<long double>(k);
  std::vector<double> c(k);
  for (std::size_t i = 0; i < k; ++i) {
    c[i] = static_cast<double>((static_cast<long double>(f_values[i]) - mean) /
                               static_cast<long double>(k - 1));
  }
  return c;
}

// Two-point SPSA sample: ((f+ - f-) / 2 eps) u.
inline std::vector<double> spsa_central(double f_plus, double f_minus,
                                        double epsilon,
                                        std::span<const double> u) {
  if (!(epsilon > 0.0)) throw ConfigError("spsa_central requires epsilon > 0");
  const double scale = (f_plus - f_minus) / (2.0 * epsilon);
  std::vector<double> g(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) g[i] = scale * u[i];
  return g;
}

// Smoothed-gradient sample for u ~ N(0, S): ((f+ - f-) / 2 eps) H u, where
// H = S^{-1} is the precision. Reduces to spsa_central when S = I.
inline std::vector<double> smoothed_grad_sample(double f_plus, double f_minus,
                                                double epsilon,
                                                std::span<const double> u,
                                                const CovarianceState& cov) {
  if (!(epsilon > 0.0)) throw ConfigError("smoothed_grad_sample requires epsilon > 0");
  const double scale = (f_plus - f_minus) / (2.0 * epsilon);
  std::vector<double> g(u.size());
  cov.apply_precision(u, g);
  for (double& v : g) v *= scale;
  return g;
}

// Reusable per-layer scratch; everything is sized by the largest block.
struct EstimatorScratch {
  std::vector<double> u;        // regenerated standard normals
  std::vector<double> w;        // S^{1/2} u
  std::vector<double> x_block;  // accumulated x-direction for one block
  std::vector<double> a_acc;    // sum_k c_k (a^T w_k,i) w_k,i over blocks

  void reserve(std::size_t n) {
    if (u.size() < n) {
      u.resize(n);
      w.resize(n);
      x_block.resize(n);
      a_acc.resize(n);
    }
  }
  std::size_t reals() const {
    return u.capacity() + w.capacity() + x_block.capacity() + a_acc.capacity();
  }
};

// Fused per-layer reduction. For every block b the x-direction
// sum_k coeff_x[k] * w_{k,b} is formed in scratch and handed to x_sink;
// when coeff_a is non-empty the score-gradient accumulation runs alongside
// and a_dir receives sum_k coeff_a[k] * grad_a log p(z_k). With cov ==
// nullptr the perturbations are isotropic (w = u) and coeff_a must be empty.
template <typename XSink>
void accumulate_directions(std::span<const PerturbationHandle> handles,
                           std::span<const double> coeff_x,
                           std::span<const double> coeff_a, std::size_t layer,
                           const LayerShape& shape, const CovarianceState* cov,
                           EstimatorScratch& scratch, XSink&& x_sink,
                           std::span<double> a_dir) {
  const std::size_t k_count = handles.size();
  const std::size_t blocks = shape.block_count();
  const std::size_t n = shape.block_size();
  const bool want_a = !coeff_a.empty();
  if (want_a && cov == nullptr) {
    throw ConfigError("a-direction requested without a covariance");
  }
  scratch.reserve(n);

  std::span<double> u(scratch.u.data(), n);
  std::span<double> w(scratch.w.data(), n);
  std::span<double> xb(scratch.x_block.data(), n);
  std::span<double> a_acc(scratch.a_acc.data(), n);
  if (want_a) {
    for (std::size_t i = 0; i < n; ++i) a_acc[i] = 0.0;
  }

  const std::vector<double>* factor = cov ? &cov->factor() : nullptr;

  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t i = 0; i < n; ++i) xb[i] = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      std::span<const double> dir;
      if (cov) {
        regenerate_w_block(handles[k], layer, b, *cov, u, w);
        dir = w;
      } else {
        gaussian_block(handles[k].coord(static_cast<std::uint32_t>(layer), b * n), u);
        dir = u;
      }
      const double cx = coeff_x[k];
      for (std::size_t i = 0; i < n; ++i) xb[i] += cx * dir[i];
      if (want_a) {
        double aw = 0.0;
        for (std::size_t i = 0; i < n; ++i) aw += (*factor)[i] * dir[i];
        const double ca = coeff_a[k] * aw;
        for (std::size_t i = 0; i < n; ++i) a_acc[i] += ca * dir[i];
      }
    }
    x_sink(b, std::span<const double>(xb.data(), n));
  }

  if (want_a) {
    // grad_a log p = m a / (rho + s) - sum_i (a^T w_i) w_i per pass; the
    // leading term enters with the summed coefficients.
    long double csum = 0.0L;
    for (double c : coeff_a) csum += c;
    const double lead = static_cast<double>(csum) *
                        static_cast<double>(cov->block_count()) /
                        (cov->rho() + cov->squared_norm());
    for (std::size_t i = 0; i < n; ++i) {
      a_dir[i] = lead * (*factor)[i] - a_acc[i];
    }
  }
}

// g(x) per layer: (1/eps) sum_k c_k S^{1/2} u_k.
inline std::vector<std::vector<double>> loren_grad_x(
    const EvalBundle& bundle, const std::vector<CovarianceState>& covs,
    const std::vector<LayerShape>& shapes) {
  if (bundle.passes() < 2) throw ConfigError("loren_grad_x requires K >= 2");
  if (bundle.perturbations.size() != bundle.passes()) {
    throw ConfigError("loren_grad_x: missing perturbation handles");
  }
  for (double f : bundle.f_values) {
    if (!std::isfinite(f)) throw ConfigError("loren_grad_x: non-finite loss");
  }
  const std::vector<double> c = rloo_weights(bundle.f_values);
  std::vector<double> coeff_x(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) coeff_x[k] = c[k] / bundle.epsilon;

  std::vector<std::vector<double>> out(shapes.size());
  EstimatorScratch scratch;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    out[l].assign(shapes[l].flat_size(), 0.0);
    const std::size_t n = shapes[l].block_size();
    double* dst = out[l].data();
    accumulate_directions(
        bundle.perturbations, coeff_x, {}, l, shapes[l], &covs[l], scratch,
        [&](std::size_t b, std::span<const double> xb) {
          for (std::size_t i = 0; i < n; ++i) dst[b * n + i] = xb[i];
        },
        {});
  }
  return out;
}

// g(a) per layer: sum_k c_k grad_a log p(z_k); no 1/eps factor.
inline std::vector<std::vector<double>> loren_grad_a(
    const EvalBundle& bundle, const std::vector<CovarianceState>& covs,
    const std::vector<LayerShape>& shapes) {
  if (bundle.passes() < 2) throw ConfigError("loren_grad_a requires K >= 2");
  for (double f : bundle.f_values) {
    if (!std::isfinite(f)) throw ConfigError("loren_grad_a: non-finite loss");
  }
  const std::vector<double> c = rloo_weights(bundle.f_values);
  std::vector<double> coeff_x(c.size(), 0.0);  // x-part discarded

  std::vector<std::vector<double>> out(shapes.size());
  EstimatorScratch scratch;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    out[l].assign(shapes[l].block_size(), 0.0);
    accumulate_directions(
        bundle.perturbations, coeff_x, c, l, shapes[l], &covs[l], scratch,
        [](std::size_t, std::span<const double>) {}, out[l]);
  }
  return out;
}

inline GradientEstimate loren_gradients(const EvalBundle& bundle,
                                        const std::vector<CovarianceState>& covs,
                                        const std::vector<LayerShape>& shapes) {
  GradientEstimate est;
  est.coefficients = rloo_weights(bundle.f_values);
  est.x_direction = loren_grad_x(bundle, covs, shapes);
  est.a_direction = loren_grad_a(bundle, covs, shapes);
  return est;
}

}  // namespace loren
