#pragma once

// Optimisation loops. The main loop draws K perturbations per step from the
// stream coordinates (master_seed, t, k), evaluates the objective at
// x + eps * S^{1/2} u_k on one shared minibatch, forms the RLOO directions
// for x and for the covariance factor a, and applies
//
//   v <- beta v + g(x),  x <- x - eta_int v,  a <- a - nu_int g(a)
//
// with decoupled damping eta_int = eta sqrt(rho), nu_int = nu sqrt(rho): the
// user-facing rates are the effective ones and do not have to be retuned
// when rho changes. Perturbed evaluations never mutate the base parameters
// (they stream x + eps w block-by-block), so the K passes can run
// concurrently and per-layer transient storage stays at a few blocks.
//
// Baselines: ZO-SGD (isotropic central SPSA, or RLOO forward differences
// when use_rloo is set), ZO-Adam (the same estimate fed through Adam
// moments), and first-order SGD on objectives with an analytic gradient.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include "loren/covariance.hpp"
#include "loren/estimators.hpp"
#include "loren/objectives.hpp"
#include "loren/perturb.hpp"
#include "loren/shapes.hpp"
#include "loren/stream.hpp"

namespace loren {

struct LorenConfig {
  double eta = 1e-2;          // effective learning rate for x (eta')
  double nu = 1e-3;           // effective learning rate for a (nu')
  double epsilon = 1e-3;      // smoothing scale
  double rho = 0.1;           // damping
  std::size_t k_passes = 6;   // forward passes per step
  double momentum_beta = 0.9; // heavyball beta; 0 disables the buffer
  std::size_t steps = 1000;
  double init_scale = 1.0;    // scale of a_0 ~ N(0, I_n)
  std::uint64_t master_seed = 42;
  std::size_t threads = 1;
  std::size_t batch_size = 64;

  bool use_rloo = false;      // ZO-SGD / ZO-Adam estimator flavour
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double s_cap = 1e12;        // safeguard on ||a||^2

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (!(rho > 0.0)) throw ConfigError("rho must be > 0");
    if (eta < 0.0 || nu < 0.0) throw ConfigError("learning rates must be >= 0");
    if (momentum_beta < 0.0 || momentum_beta >= 1.0) {
      throw ConfigError("momentum_beta must lie in [0, 1)");
    }
    if (k_passes < 1) throw ConfigError("k_passes must be >= 1");
  }
};

struct RunRecord {
  std::uint64_t step = 0;
  double mean_loss = 0.0;       // mean f over the step's forward passes
  double x_update_norm = 0.0;   // Euclidean norm of the applied x change
  double a_update_norm = 0.0;
  double elapsed_ms = 0.0;
  std::uint64_t forward_passes = 0;  // cumulative
  bool ok = true;               // false: non-finite loss, state unchanged
};

struct OptimizerState {
  ParameterSet params;
  std::vector<CovarianceState> covariances;
  std::vector<std::vector<double>> momentum;  // per layer; empty when unused
  std::vector<std::vector<double>> adam_m;    // ZO-Adam first moments
  std::vector<std::vector<double>> adam_v;    // ZO-Adam second moments
  std::uint64_t t = 0;
  std::uint64_t adam_t = 0;
  std::uint64_t forward_passes = 0;

  // Persistent optimizer storage beyond the parameters themselves, in
  // doubles, for the memory audit.
  std::size_t persistent_reals() const {
    std::size_t total = 0;
    for (const auto& c : covariances) total += c.factor().capacity();
    for (const auto& m : momentum) total += m.capacity();
    for (const auto& m : adam_m) total += m.capacity();
    for (const auto& v : adam_v) total += v.capacity();
    return total;
  }
};

// Step-local scratch, reusable across steps; sized by the largest block.
struct StepWorkspace {
  EstimatorScratch scratch;
  std::vector<double> a_dir;
  std::vector<double> f_values;
  std::vector<double> coeff_x;
  std::vector<double> coeff_a;

  std::size_t transient_reals() const {
    return scratch.reals() + a_dir.capacity() + f_values.capacity() +
           coeff_x.capacity() + coeff_a.capacity();
  }
};

inline OptimizerState make_state(const Objective& objective,
                                 const LorenConfig& config) {
  config.validate();
  OptimizerState st;
  st.params = objective.initial_params(config.master_seed);
  const auto& shapes = objective.shapes();
  st.covariances.reserve(shapes.size());
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    // pass 0 is reserved for initialisation streams; evaluations use k >= 1
    StreamCoord c{config.master_seed, 0, 0, static_cast<std::uint32_t>(l), 0};
    st.covariances.emplace_back(shapes[l], config.rho, config.init_scale, c);
  }
  if (config.momentum_beta > 0.0) {
    st.momentum.resize(shapes.size());
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      st.momentum[l].assign(shapes[l].flat_size(), 0.0);
    }
  }
  return st;
}

// Uniform minibatch without replacement; full batch for batchless objectives.
inline BatchSpec sample_batch(std::uint64_t master_seed, std::uint64_t step,
                              std::size_t dataset, std::size_t batch) {
  if (dataset == 0 || batch == 0 || batch >= dataset) return BatchSpec::full();
  std::vector<std::uint32_t> idx(dataset);
  std::iota(idx.begin(), idx.end(), 0u);
  const StreamCoord c{master_seed, step, 0, kBatchStreamLayer, 0};
  for (std::size_t i = 0; i < batch; ++i) {
    const std::uint64_t j =
        i + uniform_below(c, i, static_cast<std::uint64_t>(dataset - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(batch);
  return BatchSpec{std::move(idx)};
}

namespace detail {

// Runs eval(k) for k in [0, k_count) on up to `threads` threads. Each k is
// independent and writes only its own slot, so the schedule cannot change
// the results.
template <typename Fn>
void run_passes(std::size_t k_count, std::size_t threads, Fn&& eval) {
  threads = std::min(std::max<std::size_t>(threads, 1), k_count);
  if (threads <= 1) {
    for (std::size_t k = 0; k < k_count; ++k) eval(k);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (k_count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(begin + chunk, k_count);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &eval] {
      for (std::size_t k = begin; k < end; ++k) eval(k);
    });
  }
  for (auto& th : pool) th.join();
}

// One Adam coordinate update; returns the applied displacement. bc1/bc2 are
// the step's bias corrections 1 - beta^t.
inline double adam_apply(double& m, double& v, double g, double bc1, double bc2,
                         double beta1, double beta2, double eps, double lr) {
  m = beta1 * m + (1.0 - beta1) * g;
  v = beta2 * v + (1.0 - beta2) * g * g;
  return lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline double mean_of(std::span<const double> v) {
  long double acc = 0.0L;
  for (double x : v) acc += x;
  return static_cast<double>(acc / static_cast<long double>(v.size()));
}

}  // namespace detail

// One iteration of the main loop. On a non-finite loss the step reports
// ok = false and leaves the state untouched.
inline RunRecord loren_step(OptimizerState& state, const Objective& objective,
                            const BatchSpec& batch, const LorenConfig& config,
                            StepWorkspace* workspace = nullptr) {
  config.validate();
  if (config.k_passes < 2) throw ConfigError("loren_step requires K >= 2");
  const auto start = std::chrono::steady_clock::now();

  StepWorkspace local;
  StepWorkspace& ws = workspace ? *workspace : local;
  const std::size_t k_count = config.k_passes;
  const auto& shapes = objective.shapes();

  std::vector<PerturbationHandle> handles(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    handles[k] = PerturbationHandle{config.master_seed, state.t,
                                    static_cast<std::uint32_t>(k + 1)};
  }

  ws.f_values.assign(k_count, 0.0);
  detail::run_passes(k_count, config.threads, [&](std::size_t k) {
    PerturbedSource src(state.params, state.covariances, handles[k],
                        config.epsilon);
    ws.f_values[k] = objective.evaluate(src, batch);
  });

  RunRecord rec;
  rec.step = state.t;
  rec.mean_loss = detail::mean_of(ws.f_values);
  if (!detail::all_finite(ws.f_values)) {
    rec.ok = false;
    rec.forward_passes = state.forward_passes + k_count;
    state.forward_passes += k_count;
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    return rec;
  }

  const std::vector<double> c = rloo_weights(ws.f_values);
  ws.coeff_x.assign(k_count, 0.0);
  ws.coeff_a.assign(k_count, 0.0);
  for (std::size_t k = 0; k < k_count; ++k) {
    ws.coeff_x[k] = c[k] / config.epsilon;
    ws.coeff_a[k] = c[k];
  }

  const double eta_int = config.eta * std::sqrt(config.rho);
  const double nu_int = config.nu * std::sqrt(config.rho);
  const bool heavyball = config.momentum_beta > 0.0;
  const bool update_a = config.nu > 0.0;

  double x_norm_sq = 0.0;
  double a_norm_sq = 0.0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const std::size_t n = shapes[l].block_size();
    ws.a_dir.assign(n, 0.0);
    auto x = state.params.layer(l);
    double* v = heavyball ? state.momentum[l].data() : nullptr;

    accumulate_directions(
        handles, ws.coeff_x, update_a ? std::span<const double>(ws.coeff_a)
                                      : std::span<const double>(),
        l, shapes[l], &state.covariances[l], ws.scratch,
        [&](std::size_t b, std::span<const double> xb) {
          double* xp = x.data() + b * n;
          if (heavyball) {
            double* vp = v + b * n;
            for (std::size_t i = 0; i < n; ++i) {
              vp[i] = config.momentum_beta * vp[i] + xb[i];
              const double delta = eta_int * vp[i];
              xp[i] -= delta;
              x_norm_sq += delta * delta;
            }
          } else {
            for (std::size_t i = 0; i < n; ++i) {
              const double delta = eta_int * xb[i];
              xp[i] -= delta;
              x_norm_sq += delta * delta;
            }
          }
        },
        update_a ? std::span<double>(ws.a_dir) : std::span<double>());

    if (update_a) {
      for (double g : ws.a_dir) a_norm_sq += (nu_int * g) * (nu_int * g);
      state.covariances[l].apply_update(nu_int, ws.a_dir, config.s_cap);
    }
  }

  state.t += 1;
  state.forward_passes += k_count;
  rec.x_update_norm = std::sqrt(x_norm_sq);
  rec.a_update_norm = std::sqrt(a_norm_sq);
  rec.forward_passes = state.forward_passes;
  rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return rec;
}

// Isotropic ZO-SGD. Central differences by default (two passes per
// direction); RLOO forward differences when config.use_rloo is set.
inline RunRecord zosgd_step(OptimizerState& state, const Objective& objective,
                            const BatchSpec& batch, const LorenConfig& config,
                            StepWorkspace* workspace = nullptr) {
  config.validate();
  if (config.use_rloo && config.k_passes < 2) {
    throw ConfigError("zosgd_step with RLOO requires K >= 2");
  }
  const auto start = std::chrono::steady_clock::now();

  StepWorkspace local;
  StepWorkspace& ws = workspace ? *workspace : local;
  const std::size_t k_count = config.k_passes;
  const auto& shapes = objective.shapes();
  static const std::vector<CovarianceState> no_covs;

  std::vector<PerturbationHandle> handles(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    handles[k] = PerturbationHandle{config.master_seed, state.t,
                                    static_cast<std::uint32_t>(k + 1)};
  }

  const std::size_t evals = config.use_rloo ? k_count : 2 * k_count;
  ws.f_values.assign(evals, 0.0);
  detail::run_passes(k_count, config.threads, [&](std::size_t k) {
    if (config.use_rloo) {
      PerturbedSource src(state.params, no_covs, handles[k], config.epsilon,
                          1.0, /*isotropic=*/true);
      ws.f_values[k] = objective.evaluate(src, batch);
    } else {
      PerturbedSource plus(state.params, no_covs, handles[k], config.epsilon,
                           1.0, true);
      PerturbedSource minus(state.params, no_covs, handles[k], config.epsilon,
                            -1.0, true);
      ws.f_values[2 * k] = objective.evaluate(plus, batch);
      ws.f_values[2 * k + 1] = objective.evaluate(minus, batch);
    }
  });

  RunRecord rec;
  rec.step = state.t;
  rec.mean_loss = detail::mean_of(ws.f_values);
  if (!detail::all_finite(ws.f_values)) {
    rec.ok = false;
    state.forward_passes += evals;
    rec.forward_passes = state.forward_passes;
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    return rec;
  }

  ws.coeff_x.assign(k_count, 0.0);
  if (config.use_rloo) {
    const std::vector<double> c = rloo_weights(ws.f_values);
    for (std::size_t k = 0; k < k_count; ++k) ws.coeff_x[k] = c[k] / config.epsilon;
  } else {
    for (std::size_t k = 0; k < k_count; ++k) {
      ws.coeff_x[k] = (ws.f_values[2 * k] - ws.f_values[2 * k + 1]) /
                      (2.0 * config.epsilon * static_cast<double>(k_count));
    }
  }

  double x_norm_sq = 0.0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const std::size_t n = shapes[l].block_size();
    auto x = state.params.layer(l);
    accumulate_directions(
        handles, ws.coeff_x, {}, l, shapes[l], nullptr, ws.scratch,
        [&](std::size_t b, std::span<const double> xb) {
          double* xp = x.data() + b * n;
          for (std::size_t i = 0; i < n; ++i) {
            const double delta = config.eta * xb[i];
            xp[i] -= delta;
            x_norm_sq += delta * delta;
          }
        },
        {});
  }

  state.t += 1;
  state.forward_passes += evals;
  rec.x_update_norm = std::sqrt(x_norm_sq);
  rec.forward_passes = state.forward_passes;
  rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return rec;
}

// ZO-Adam: the zosgd gradient estimate fed through Adam moments with bias
// correction.
inline RunRecord zoadam_step(OptimizerState& state, const Objective& objective,
                             const BatchSpec& batch, const LorenConfig& config,
                             StepWorkspace* workspace = nullptr) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();

  StepWorkspace local;
  StepWorkspace& ws = workspace ? *workspace : local;
  const std::size_t k_count = config.k_passes;
  const auto& shapes = objective.shapes();
  static const std::vector<CovarianceState> no_covs;

  if (state.adam_m.empty()) {
    state.adam_m.resize(shapes.size());
    state.adam_v.resize(shapes.size());
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      state.adam_m[l].assign(shapes[l].flat_size(), 0.0);
      state.adam_v[l].assign(shapes[l].flat_size(), 0.0);
    }
  }

  std::vector<PerturbationHandle> handles(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    handles[k] = PerturbationHandle{config.master_seed, state.t,
                                    static_cast<std::uint32_t>(k + 1)};
  }

  const std::size_t evals = config.use_rloo ? k_count : 2 * k_count;
  ws.f_values.assign(evals, 0.0);
  detail::run_passes(k_count, config.threads, [&](std::size_t k) {
    if (config.use_rloo) {
      PerturbedSource src(state.params, no_covs, handles[k], config.epsilon,
                          1.0, true);
      ws.f_values[k] = objective.evaluate(src, batch);
    } else {
      PerturbedSource plus(state.params, no_covs, handles[k], config.epsilon,
                           1.0, true);
      PerturbedSource minus(state.params, no_covs, handles[k], config.epsilon,
                            -1.0, true);
      ws.f_values[2 * k] = objective.evaluate(plus, batch);
      ws.f_values[2 * k + 1] = objective.evaluate(minus, batch);
    }
  });

  RunRecord rec;
  rec.step = state.t;
  rec.mean_loss = detail::mean_of(ws.f_values);
  if (!detail::all_finite(ws.f_values)) {
    rec.ok = false;
    state.forward_passes += evals;
    rec.forward_passes = state.forward_passes;
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    return rec;
  }

  ws.coeff_x.assign(k_count, 0.0);
  if (config.use_rloo) {
    const std::vector<double> c = rloo_weights(ws.f_values);
    for (std::size_t k = 0; k < k_count; ++k) ws.coeff_x[k] = c[k] / config.epsilon;
  } else {
    for (std::size_t k = 0; k < k_count; ++k) {
      ws.coeff_x[k] = (ws.f_values[2 * k] - ws.f_values[2 * k + 1]) /
                      (2.0 * config.epsilon * static_cast<double>(k_count));
    }
  }

  state.adam_t += 1;
  const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(state.adam_t));
  const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(state.adam_t));

  double x_norm_sq = 0.0;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const std::size_t n = shapes[l].block_size();
    auto x = state.params.layer(l);
    double* m = state.adam_m[l].data();
    double* v = state.adam_v[l].data();
    accumulate_directions(
        handles, ws.coeff_x, {}, l, shapes[l], nullptr, ws.scratch,
        [&](std::size_t b, std::span<const double> gb) {
          double* xp = x.data() + b * n;
          double* mp = m + b * n;
          double* vp = v + b * n;
          for (std::size_t i = 0; i < n; ++i) {
            const double delta = detail::adam_apply(
                mp[i], vp[i], gb[i], bc1, bc2, config.adam_beta1,
                config.adam_beta2, config.adam_eps, config.eta);
            xp[i] -= delta;
            x_norm_sq += delta * delta;
          }
        },
        {});
  }

  state.t += 1;
  state.forward_passes += evals;
  rec.x_update_norm = std::sqrt(x_norm_sq);
  rec.forward_passes = state.forward_passes;
  rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return rec;
}

// First-order reference: x <- x - eta grad f(x).
inline RunRecord fosgd_step(OptimizerState& state, const Objective& objective,
                            const BatchSpec& batch, const LorenConfig& config) {
  config.validate();
  if (!objective.has_analytic_gradient()) {
    throw ConfigError("fosgd_step requires an analytic gradient");
  }
  const auto start = std::chrono::steady_clock::now();

  PlainSource src(state.params);
  const double loss = objective.evaluate(src, batch);
  const std::vector<double> grad = objective.analytic_gradient(src, batch);

  RunRecord rec;
  rec.step = state.t;
  rec.mean_loss = loss;
  if (!std::isfinite(loss) || !detail::all_finite(grad)) {
    rec.ok = false;
    state.forward_passes += 1;
    rec.forward_passes = state.forward_passes;
    return rec;
  }

  double x_norm_sq = 0.0;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < objective.shapes().size(); ++l) {
    auto x = state.params.layer(l);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double delta = config.eta * grad[offset + i];
      x[i] -= delta;
      x_norm_sq += delta * delta;
    }
    offset += x.size();
  }

  state.t += 1;
  state.forward_passes += 1;
  rec.x_update_norm = std::sqrt(x_norm_sq);
  rec.forward_passes = state.forward_passes;
  rec.elapsed_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return rec;
}

// Step size from the convergence analysis, plus the shape-only upper bound
// eta <= rho / (8 sqrt(T) L (m(n-1) + 2)) that follows from
// tr(S) >= m(n-1)/rho.
struct TheoryStepSize {
  double eta = 0.0;
  double upper_bound = 0.0;
};

inline double theory_eta(double smoothness, double horizon, double max_trace,
                         double rho) {
  if (!(smoothness > 0.0) || !(horizon > 0.0) || !(max_trace > 0.0) ||
      !(rho > 0.0)) {
    throw ConfigError("theory_step_size requires positive inputs");
  }
  return 1.0 / (8.0 * std::sqrt(horizon) * smoothness * (max_trace + 2.0 / rho));
}

inline TheoryStepSize theory_step_size(double smoothness, double horizon,
                                       double max_trace, double rho,
                                       std::size_t m = 0, std::size_t n = 0) {
  TheoryStepSize out;
  out.eta = theory_eta(smoothness, horizon, max_trace, rho);
  if (m > 0 && n > 0) {
    out.upper_bound = rho / (8.0 * std::sqrt(horizon) * smoothness *
                             (static_cast<double>(m) * (static_cast<double>(n) - 1.0) + 2.0));
  }
  return out;
}

}  // namespace loren
