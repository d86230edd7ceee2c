#pragma once

// Damped rank-1 Kronecker-factored covariance for one layer:
//
//   precision  H = I_m (x) (rho I_n + a a^T)
//   covariance S = I_m (x) (1/rho) (I_n - a a^T / (rho + s)),   s = ||a||^2
//
// together with the principal square root and the score gradient with
// respect to the factor a. Every operator application is blockwise and
// touches each element O(1) times, so a layer of size m*n costs O(m*n) time
// and O(n) persistent state.
//
// Square-root coefficient: we use
//
//   S^{1/2} = I_m (x) (1/sqrt(rho)) (I_n - kp a a^T),
//   kp = 1 / (sqrt(rho+s) * (sqrt(rho) + sqrt(rho+s))),
//
// the positive-definite root. Its eigenvalue along a is +1/sqrt(rho+s) and
// kp -> 1/(2 rho) smoothly as a -> 0. The alternative coefficient
// (sqrt(rho)+sqrt(rho+s)) / (s sqrt(rho+s)) squares to the same matrix but is
// a reflected root (eigenvalue -1/sqrt(rho+s) along a) and is singular at
// s = 0, so it is not used.
//
// Score gradient of the Gaussian log density at displacement w (blocks w_i):
//
//   grad_a log p = m a / (rho + s) - sum_i (a^T w_i) w_i
//
// obtained by differentiating -1/2 log det S - 1/2 w^T H w with
// log det S = -m log(rho^{n-1} (rho + s)).

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "loren/shapes.hpp"
#include "loren/stream.hpp"

namespace loren {

class CovarianceState {
 public:
  CovarianceState() = default;

  // a = init_scale * N(0, I_n) drawn from the given stream coordinates;
  // init_scale = 0 gives the isotropic S = (1/rho) I.
  CovarianceState(const LayerShape& shape, double rho, double init_scale,
                  const StreamCoord& coord)
      : rho_(rho), m_(shape.block_count()), n_(shape.block_size()) {
    if (!(rho > 0.0)) throw ConfigError("covariance damping rho must be > 0");
    if (init_scale < 0.0) throw ConfigError("init_scale must be >= 0");
    a_ = gaussian_vector(coord, n_);
    for (double& v : a_) v *= init_scale;
    refresh_norm();
  }

  CovarianceState(std::size_t m, std::size_t n, double rho, std::vector<double> a)
      : a_(std::move(a)), rho_(rho), m_(m), n_(n) {
    if (!(rho > 0.0)) throw ConfigError("covariance damping rho must be > 0");
    if (a_.size() != n_) throw ShapeError("covariance factor length != n");
    refresh_norm();
  }

  std::size_t block_count() const { return m_; }
  std::size_t block_size() const { return n_; }
  std::size_t flat_size() const { return m_ * n_; }
  double rho() const { return rho_; }
  double squared_norm() const { return s_; }
  const std::vector<double>& factor() const { return a_; }

  void set_factor(std::span<const double> a) {
    if (a.size() != n_) throw ShapeError("covariance factor length != n");
    a_.assign(a.begin(), a.end());
    refresh_norm();
  }

  // a <- a - coeff * g, then rescale so that ||a||^2 stays below s_cap.
  void apply_update(double coeff, std::span<const double> g,
                    double s_cap = 1e12) {
    if (g.size() != n_) throw ShapeError("factor update length != n");
    for (std::size_t i = 0; i < n_; ++i) a_[i] -= coeff * g[i];
    refresh_norm();
    if (s_ > s_cap) {
      const double scale = std::sqrt(s_cap / s_);
      for (double& v : a_) v *= scale;
      refresh_norm();
    }
  }

  // w_i = rho v_i + (a^T v_i) a  (application of H)
  void precision_block(std::span<const double> v, std::span<double> w) const {
    const double av = dot_a(v);
    for (std::size_t i = 0; i < n_; ++i) w[i] = rho_ * v[i] + av * a_[i];
  }

  // w_i = (1/rho) (v_i - (a^T v_i) / (rho + s) a)  (application of S)
  void sigma_block(std::span<const double> v, std::span<double> w) const {
    const double c = dot_a(v) / (rho_ + s_);
    const double inv_rho = 1.0 / rho_;
    for (std::size_t i = 0; i < n_; ++i) w[i] = inv_rho * (v[i] - c * a_[i]);
  }

  // w_i = (1/sqrt(rho)) (u_i - kp (a^T u_i) a)  (principal S^{1/2})
  void sqrt_block(std::span<const double> u, std::span<double> w) const {
    const double c = kappa_prime() * dot_a(u);
    const double inv_sqrt_rho = 1.0 / std::sqrt(rho_);
    for (std::size_t i = 0; i < n_; ++i) w[i] = inv_sqrt_rho * (u[i] - c * a_[i]);
  }

  double kappa_prime() const {
    const double rps = std::sqrt(rho_ + s_);
    return 1.0 / (rps * (std::sqrt(rho_) + rps));
  }

  void apply_precision(std::span<const double> v, std::span<double> w) const {
    check_flat(v.size());
    check_flat(w.size());
    for (std::size_t b = 0; b < m_; ++b) {
      precision_block(v.subspan(b * n_, n_), w.subspan(b * n_, n_));
    }
  }

  void apply_sigma(std::span<const double> v, std::span<double> w) const {
    check_flat(v.size());
    check_flat(w.size());
    for (std::size_t b = 0; b < m_; ++b) {
      sigma_block(v.subspan(b * n_, n_), w.subspan(b * n_, n_));
    }
  }

  void apply_sqrt(std::span<const double> u, std::span<double> w) const {
    check_flat(u.size());
    check_flat(w.size());
    for (std::size_t b = 0; b < m_; ++b) {
      sqrt_block(u.subspan(b * n_, n_), w.subspan(b * n_, n_));
    }
  }

  // grad_a log p at displacement w = z - x, streamed one block at a time.
  class ScoreAccumulator {
   public:
    explicit ScoreAccumulator(const CovarianceState& cov)
        : cov_(&cov), acc_(cov.block_size(), 0.0) {}

    void add_block(std::span<const double> w) {
      const double aw = cov_->dot_a(w);
      for (std::size_t i = 0; i < acc_.size(); ++i) acc_[i] += aw * w[i];
    }

    // grad = m a / (rho + s) - sum_i (a^T w_i) w_i
    void finish(std::span<double> grad) const {
      const CovarianceState& c = *cov_;
      const double lead = static_cast<double>(c.m_) / (c.rho_ + c.s_);
      for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] = lead * c.a_[i] - acc_[i];
      }
    }

   private:
    const CovarianceState* cov_;
    std::vector<double> acc_;
  };

  std::vector<double> log_density_grad_a(std::span<const double> w) const {
    check_flat(w.size());
    ScoreAccumulator acc(*this);
    for (std::size_t b = 0; b < m_; ++b) acc.add_block(w.subspan(b * n_, n_));
    std::vector<double> grad(n_);
    acc.finish(grad);
    return grad;
  }

  // tr(S) = (m/rho) (n - s / (rho + s))
  double trace_sigma() const {
    return static_cast<double>(m_) / rho_ *
           (static_cast<double>(n_) - s_ / (rho_ + s_));
  }

  // Eigenvalues of S lie in [1/(rho+s), 1/rho].
  std::pair<double, double> eig_bounds() const {
    return {1.0 / (rho_ + s_), 1.0 / rho_};
  }

  // Exact log det S = -m log(rho^{n-1} (rho + s)).
  double log_det_sigma() const {
    return -static_cast<double>(m_) *
           ((static_cast<double>(n_) - 1.0) * std::log(rho_) + std::log(rho_ + s_));
  }

 private:
  double dot_a(std::span<const double> v) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < n_; ++i) acc += a_[i] * v[i];
    return acc;
  }

  void refresh_norm() {
    double acc = 0.0;
    for (double v : a_) acc += v * v;
    s_ = acc;
  }

  void check_flat(std::size_t len) const {
    if (len != m_ * n_) throw ShapeError("flat vector length != m*n");
  }

  std::vector<double> a_;
  double rho_ = 1.0;
  std::size_t m_ = 0;
  std::size_t n_ = 0;
  double s_ = 0.0;  // ||a||^2, recomputed eagerly on every factor change
};

inline CovarianceState new_covariance(const LayerShape& shape, double rho,
                                      double init_scale, const StreamCoord& coord) {
  return CovarianceState(shape, rho, init_scale, coord);
}

// Explicit mn x mn matrices for desk-scale oracles, row-major. Built directly
// from the closed-form definitions via Kronecker expansion.
struct DenseCovariance {
  std::size_t dim = 0;
  std::vector<double> sigma;      // S
  std::vector<double> sqrt_sigma; // principal S^{1/2}
  std::vector<double> precision;  // H
};

inline DenseCovariance dense_materialize(const CovarianceState& cov) {
  const std::size_t m = cov.block_count();
  const std::size_t n = cov.block_size();
  const std::size_t d = m * n;
  if (d > 4096) throw ConfigError("dense_materialize: m*n exceeds 4096 guard");

  const auto& a = cov.factor();
  const double rho = cov.rho();
  const double s = cov.squared_norm();
  const double kp = cov.kappa_prime();
  const double inv_sqrt_rho = 1.0 / std::sqrt(rho);

  DenseCovariance out;
  out.dim = d;
  out.sigma.assign(d * d, 0.0);
  out.sqrt_sigma.assign(d * d, 0.0);
  out.precision.assign(d * d, 0.0);

  for (std::size_t b = 0; b < m; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t r = b * n + i;
        const std::size_t c = b * n + j;
        const double eye = (i == j) ? 1.0 : 0.0;
        out.precision[r * d + c] = rho * eye + a[i] * a[j];
        out.sigma[r * d + c] = (eye - a[i] * a[j] / (rho + s)) / rho;
        out.sqrt_sigma[r * d + c] = inv_sqrt_rho * (eye - kp * a[i] * a[j]);
      }
    }
  }
  return out;
}

}  // namespace loren
