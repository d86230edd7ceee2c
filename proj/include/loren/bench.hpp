#pragma once

// Experiment runners behind the loren-bench CLI: the estimator MSE study,
// monkey-saddle trajectories, training runs with per-step telemetry, and the
// oracle suite. All runs are pure functions of their config, so reruns (and
// different --threads values) produce byte-identical CSV files.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "loren/csv.hpp"
#include "loren/estimators.hpp"
#include "loren/objectives.hpp"
#include "loren/optimizers.hpp"
#include "loren/verify.hpp"

namespace loren::bench {

inline constexpr const char* kToolVersion = "loren-bench 0.1.0";

inline constexpr std::size_t kUnset = static_cast<std::size_t>(-1);

struct ExperimentConfig {
  std::string kind;                 // mse | saddle | train | verify
  std::string function;            // mse: empty = sphere,rastrigin,rosenbrock
  std::string objective = "sphere";
  std::string optimizer;           // saddle: empty = all four
  std::size_t dim = 1000;
  std::size_t steps = kUnset;      // unset = per-kind default
  std::size_t trials = 5000;
  std::size_t seeds = kUnset;      // unset = per-kind default
  std::size_t k = kUnset;          // unset = per-kind default
  double eps = 1e-3;
  double eta = -1.0;               // < 0 = per-optimizer default
  double nu = 1e-3;
  double rho = 0.1;
  double momentum = -1.0;          // < 0 = per-kind default
  double init_scale = -1.0;        // < 0 = per-kind default
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  std::size_t batch = 64;
  std::string out = "out.csv";
  bool timing = false;             // write measured wall-clock per row
  std::string vanilla_mode = "central";  // or "forward"

  std::size_t resolved_steps() const {
    if (steps != kUnset) return steps;
    if (kind == "saddle") return 2000;
    if (kind == "train") return objective == "mlp" ? 3000 : 1000;
    return 0;
  }
  std::size_t resolved_seeds() const {
    if (seeds != kUnset) return seeds;
    if (kind == "saddle") return 10;
    return 1;
  }
  std::size_t resolved_k() const {
    if (k != kUnset) return k;
    return kind == "mse" ? 4 : 6;
  }
  // The saddle comparison runs the plain (no momentum, isotropic start)
  // variant: heavyball and a random initial factor both push the cubic
  // runaway past double range inside the 2000-step budget.
  double resolved_momentum() const {
    if (momentum >= 0.0) return momentum;
    return kind == "saddle" ? 0.0 : 0.9;
  }
  double resolved_init_scale() const {
    if (init_scale >= 0.0) return init_scale;
    return kind == "saddle" ? 0.0 : 1.0;
  }

  void validate() const {
    if (!(eps > 0.0)) throw ConfigError("--eps must be > 0");
    if (!(rho > 0.0)) throw ConfigError("--rho must be > 0");
    if (nu < 0.0) throw ConfigError("--nu must be >= 0");
    if (resolved_momentum() >= 1.0) throw ConfigError("--momentum must lie in [0,1)");
    if (dim == 0) throw ConfigError("--dim must be >= 1");
    if (threads == 0) throw ConfigError("--threads must be >= 1");
    if (kind == "mse") {
      if (resolved_k() < 2) throw ConfigError("mse requires --k >= 2");
      if (vanilla_mode != "central" && vanilla_mode != "forward") {
        throw ConfigError("--vanilla-mode must be central or forward");
      }
      if (vanilla_mode == "central" && resolved_k() % 2 != 0) {
        throw ConfigError("central comparator requires an even --k");
      }
      if (!function.empty() && function != "sphere" && function != "rastrigin" &&
          function != "rosenbrock") {
        throw ConfigError("mse supports sphere, rastrigin, rosenbrock");
      }
      if (trials == 0) throw ConfigError("--trials must be >= 1");
    }
    if (kind == "saddle" && !optimizer.empty() && optimizer != "loren" &&
        optimizer != "zosgd" && optimizer != "zoadam" && optimizer != "fosgd") {
      throw ConfigError("unknown optimizer: " + optimizer);
    }
  }

  std::string echo() const;
};

// Desk-scale defaults per optimizer, chosen by grid search (see README for
// the sweeps). The saddle rate is shared across optimizers: it is the
// largest grid value at which every ZO trajectory stays within double range
// for the full 2000-step budget, so final values compare descent rather
// than overflow sign.
inline double default_eta(const std::string& kind, const std::string& optimizer,
                          const std::string& objective, std::size_t dim) {
  if (kind == "saddle") return 1e-4;
  if (objective == "mlp") {
    if (optimizer == "fosgd") return 5e-1;
    if (optimizer == "zoadam") return 1e-3;
    return 1e-2;
  }
  // Estimator noise on the test functions grows with dim/K, so stable SGD
  // rates shrink accordingly; Adam's normalised steps do not need this.
  const double d = static_cast<double>(std::max<std::size_t>(dim, 1));
  if (optimizer == "zoadam") return 1e-2;
  if (optimizer == "fosgd") return 1e-1;
  if (optimizer == "zosgd") return std::min(1e-2, 1.0 / d);
  return std::min(1e-2, 0.1 / d);  // loren (heavyball amplifies the noise)
}

inline std::string ExperimentConfig::echo() const {
  std::ostringstream os;
  os << kToolVersion << " | kind=" << kind;
  if (!function.empty()) os << " function=" << function;
  os << " objective=" << objective
     << " optimizer=" << (optimizer.empty() ? std::string("all") : optimizer)
     << " dim=" << dim << " steps=" << resolved_steps() << " trials=" << trials
     << " seeds=" << resolved_seeds() << " k=" << resolved_k()
     << " eps=" << csv_double(eps);
  if (eta >= 0.0) {
    os << " eta=" << csv_double(eta);
  } else if (!optimizer.empty()) {
    os << " eta=" << csv_double(default_eta(kind, optimizer, objective, dim));
  } else {
    os << " eta=auto";
    for (const char* name : {"loren", "zosgd", "zoadam", "fosgd"}) {
      os << "," << name << "=" << csv_double(default_eta(kind, name, objective, dim));
    }
  }
  os << " nu=" << csv_double(nu) << " rho=" << csv_double(rho)
     << " momentum=" << csv_double(resolved_momentum())
     << " init_scale=" << csv_double(resolved_init_scale()) << " seed=" << seed
     << " batch=" << batch << " vanilla_mode=" << vanilla_mode
     << " timing=" << (timing ? 1 : 0);
  // threads omitted: results are thread-count invariant
  return os.str();
}

inline LorenConfig to_loren_config(const ExperimentConfig& cfg,
                                   const std::string& optimizer,
                                   std::uint64_t master_seed) {
  LorenConfig lc;
  lc.eta = cfg.eta >= 0.0 ? cfg.eta
                          : default_eta(cfg.kind, optimizer, cfg.objective, cfg.dim);
  lc.nu = cfg.nu;
  lc.epsilon = cfg.eps;
  lc.rho = cfg.rho;
  lc.k_passes = cfg.resolved_k();
  lc.momentum_beta = optimizer == "loren" ? cfg.resolved_momentum() : 0.0;
  lc.steps = cfg.resolved_steps();
  lc.init_scale = cfg.resolved_init_scale();
  lc.master_seed = master_seed;
  lc.threads = cfg.threads;
  lc.batch_size = cfg.batch;
  return lc;
}

// ---------------------------------------------------------------------------
// MSE study: RLOO vs no-baseline estimates at a fixed point, isotropic
// perturbations, matched forward-pass budget. The no-baseline comparator is
// central SPSA with k/2 direction pairs by default; "forward" uses k
// one-sided estimators sharing a single f(x) evaluation.
// ---------------------------------------------------------------------------

struct MseSummary {
  double rloo_mean = 0.0;
  double vanilla_mean = 0.0;
};

namespace detail {

// Squared error of the accumulated estimate against the true gradient,
// streamed block by block.
inline double estimate_sq_error(std::span<const PerturbationHandle> handles,
                                std::span<const double> coeff,
                                const LayerShape& shape,
                                std::span<const double> grad,
                                EstimatorScratch& scratch) {
  const std::size_t n = shape.block_size();
  double err = 0.0;
  accumulate_directions(
      handles, coeff, {}, 0, shape, nullptr, scratch,
      [&](std::size_t b, std::span<const double> xb) {
        const double* g = grad.data() + b * n;
        for (std::size_t i = 0; i < n; ++i) {
          const double e = xb[i] - g[i];
          err += e * e;
        }
      },
      {});
  return err;
}

}  // namespace detail

inline MseSummary run_mse_function(const ExperimentConfig& cfg,
                                   const std::string& fname, CsvWriter* csv) {
  const std::size_t d = cfg.dim;
  const std::size_t k = cfg.resolved_k();
  auto objective = make_objective(fname, d, cfg.seed);
  const LayerShape shape = objective->shapes()[0];

  // fixed benchmark point 0.5 * (1, ..., 1)
  ParameterSet params(objective->shapes());
  for (double& v : params.layer(0)) v = 0.5;
  PlainSource plain(params);
  const std::vector<double> grad =
      objective->analytic_gradient(plain, BatchSpec::full());
  const double f_base = objective->evaluate(plain, BatchSpec::full());

  static const std::vector<CovarianceState> no_covs;
  EstimatorScratch scratch;
  std::vector<PerturbationHandle> handles(k);
  std::vector<double> f_values(k);
  std::vector<double> coeff(k);

  long double rloo_sum = 0.0L;
  long double vanilla_sum = 0.0L;
  const double inv_d = 1.0 / static_cast<double>(d);

  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    // RLOO: k one-sided passes, leave-one-out baseline.
    for (std::size_t j = 0; j < k; ++j) {
      handles[j] = PerturbationHandle{cfg.seed, trial, static_cast<std::uint32_t>(j + 1)};
      PerturbedSource src(params, no_covs, handles[j], cfg.eps, 1.0, true);
      f_values[j] = objective->evaluate(src, BatchSpec::full());
    }
    const std::vector<double> c = rloo_weights(f_values);
    for (std::size_t j = 0; j < k; ++j) coeff[j] = c[j] / cfg.eps;
    const double mse_rloo =
        detail::estimate_sq_error(handles, coeff, shape, grad, scratch) * inv_d;
    rloo_sum += mse_rloo;

    // No-baseline comparator on a fresh stream (pass indices above 100).
    double mse_vanilla = 0.0;
    if (cfg.vanilla_mode == "central") {
      const std::size_t pairs = k / 2;
      std::vector<PerturbationHandle> vh(pairs);
      std::vector<double> vc(pairs);
      for (std::size_t p = 0; p < pairs; ++p) {
        vh[p] = PerturbationHandle{cfg.seed, trial, static_cast<std::uint32_t>(101 + p)};
        PerturbedSource plus(params, no_covs, vh[p], cfg.eps, 1.0, true);
        PerturbedSource minus(params, no_covs, vh[p], cfg.eps, -1.0, true);
        const double fp = objective->evaluate(plus, BatchSpec::full());
        const double fm = objective->evaluate(minus, BatchSpec::full());
        vc[p] = (fp - fm) / (2.0 * cfg.eps * static_cast<double>(pairs));
      }
      mse_vanilla = detail::estimate_sq_error(vh, vc, shape, grad, scratch) * inv_d;
    } else {
      std::vector<PerturbationHandle> vh(k);
      std::vector<double> vc(k);
      for (std::size_t j = 0; j < k; ++j) {
        vh[j] = PerturbationHandle{cfg.seed, trial, static_cast<std::uint32_t>(101 + j)};
        PerturbedSource src(params, no_covs, vh[j], cfg.eps, 1.0, true);
        const double f = objective->evaluate(src, BatchSpec::full());
        vc[j] = (f - f_base) / (cfg.eps * static_cast<double>(k));
      }
      mse_vanilla = detail::estimate_sq_error(vh, vc, shape, grad, scratch) * inv_d;
    }
    vanilla_sum += mse_vanilla;

    if (csv) {
      csv->row({fname, std::string("rloo"),
                static_cast<unsigned long long>(trial), mse_rloo});
      csv->row({fname, std::string("vanilla"),
                static_cast<unsigned long long>(trial), mse_vanilla});
    }
  }

  MseSummary summary;
  summary.rloo_mean = static_cast<double>(rloo_sum / cfg.trials);
  summary.vanilla_mean = static_cast<double>(vanilla_sum / cfg.trials);
  if (csv) {
    csv->row({fname, std::string("rloo"), std::string("mean"), summary.rloo_mean});
    csv->row({fname, std::string("vanilla"), std::string("mean"), summary.vanilla_mean});
  }
  return summary;
}

inline std::map<std::string, MseSummary> run_mse(const ExperimentConfig& cfg) {
  cfg.validate();
  CsvWriter csv(cfg.out);
  csv.comment(cfg.echo());
  csv.header({"function", "method", "trial", "mse"});
  std::vector<std::string> functions;
  if (cfg.function.empty()) {
    functions = {"sphere", "rastrigin", "rosenbrock"};
  } else {
    functions = {cfg.function};
  }
  std::map<std::string, MseSummary> out;
  for (const auto& f : functions) out[f] = run_mse_function(cfg, f, &csv);
  return out;
}

// ---------------------------------------------------------------------------
// Saddle trajectories.
// ---------------------------------------------------------------------------

struct SaddleSummary {
  std::map<std::string, std::vector<double>> final_f;  // per optimizer, per seed
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline SaddleSummary run_saddle(const ExperimentConfig& cfg) {
  cfg.validate();
  CsvWriter csv(cfg.out);
  csv.comment(cfg.echo());
  csv.header({"method", "seed", "step", "x", "y", "f"});

  std::vector<std::string> optimizers;
  if (cfg.optimizer.empty()) {
    optimizers = {"loren", "zosgd", "zoadam", "fosgd"};
  } else {
    optimizers = {cfg.optimizer};
  }

  MonkeySaddle saddle;
  const BatchSpec batch = BatchSpec::full();
  const std::size_t steps = cfg.resolved_steps();
  const std::size_t seeds = cfg.resolved_seeds();

  SaddleSummary summary;
  for (const auto& name : optimizers) {
    for (std::size_t s = 0; s < seeds; ++s) {
      LorenConfig lc = to_loren_config(cfg, name, cfg.seed + s);
      if (name == "zosgd" || name == "zoadam") {
        // central pairs: k/2 directions match the per-step pass budget
        lc.k_passes = std::max<std::size_t>(1, lc.k_passes / 2);
      }
      OptimizerState state = make_state(saddle, lc);
      StepWorkspace ws;

      const auto emit = [&](std::size_t step_index) {
        PlainSource src(state.params);
        const double f = saddle.evaluate(src, batch);
        csv.row({name, static_cast<unsigned long long>(s),
                 static_cast<unsigned long long>(step_index),
                 state.params.layer(0)[0], state.params.layer(0)[1], f});
        return f;
      };

      emit(0);
      double final_f = 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        if (name == "loren") {
          loren_step(state, saddle, batch, lc, &ws);
        } else if (name == "zosgd") {
          zosgd_step(state, saddle, batch, lc, &ws);
        } else if (name == "zoadam") {
          zoadam_step(state, saddle, batch, lc, &ws);
        } else {
          fosgd_step(state, saddle, batch, lc);
        }
        final_f = emit(t + 1);
      }
      summary.final_f[name].push_back(final_f);
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Training runs with cumulative forward-pass accounting.
// ---------------------------------------------------------------------------

struct TrainSummary {
  // per seed: (forward_passes, loss) per step, in step order
  std::vector<std::vector<RunRecord>> records;
};

inline TrainSummary run_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::string optimizer = cfg.optimizer.empty() ? "loren" : cfg.optimizer;
  CsvWriter csv(cfg.out);
  csv.comment(cfg.echo());
  csv.header({"optimizer", "seed", "step", "forward_passes", "loss", "elapsed_ms"});

  auto objective = make_objective(cfg.objective, cfg.dim, cfg.seed);
  const std::size_t steps = cfg.resolved_steps();
  const std::size_t seeds = cfg.resolved_seeds();

  TrainSummary summary;
  summary.records.resize(seeds);
  for (std::size_t s = 0; s < seeds; ++s) {
    const LorenConfig lc = to_loren_config(cfg, optimizer, cfg.seed + s);
    OptimizerState state = make_state(*objective, lc);
    StepWorkspace ws;
    for (std::size_t t = 0; t < steps; ++t) {
      const BatchSpec batch = sample_batch(lc.master_seed, state.t,
                                           objective->dataset_size(), lc.batch_size);
      RunRecord rec;
      if (optimizer == "loren") {
        rec = loren_step(state, *objective, batch, lc, &ws);
      } else if (optimizer == "zosgd") {
        rec = zosgd_step(state, *objective, batch, lc, &ws);
      } else if (optimizer == "zoadam") {
        rec = zoadam_step(state, *objective, batch, lc, &ws);
      } else if (optimizer == "fosgd") {
        rec = fosgd_step(state, *objective, batch, lc);
      } else {
        throw ConfigError("unknown optimizer: " + optimizer);
      }
      csv.row({optimizer, static_cast<unsigned long long>(s),
               static_cast<unsigned long long>(rec.step),
               static_cast<unsigned long long>(rec.forward_passes), rec.mean_loss,
               cfg.timing ? rec.elapsed_ms : 0.0});
      summary.records[s].push_back(rec);
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Oracle suite.
// ---------------------------------------------------------------------------

inline void print_report(std::ostream& os, const OracleReport& r) {
  os << (r.pass ? "PASS" : "FAIL") << "  " << r.identity
     << "  discrepancy=" << r.discrepancy << " tolerance=" << r.tolerance;
  if (r.samples > 0) os << " samples=" << r.samples;
  os << "\n";
}

inline bool run_verify(std::ostream& os) {
  std::vector<OracleReport> reports;
  reports.push_back(check_dense_equivalence(100, 8, 8));
  reports.push_back(check_score_gradient(200));

  {
    CovarianceState identity_cov(2, 1, 1.0, std::vector<double>{0.0});
    reports.push_back(check_fourth_moment(2'000'000, identity_cov));
    reports.back().identity += "_identity_d2";
  }
  {
    std::mt19937_64 rng(5);
    CovarianceState cov = verify_detail::random_cov(rng, 4, 4, 0.1);
    reports.push_back(check_fourth_moment(4'000'000, cov));
    reports.back().identity += "_rank1_d16";
  }
  {
    std::vector<double> h{1.0, 4.0, 2.0, 0.5};
    std::vector<double> b{0.3, -0.2, 0.1, 0.4};
    DiagQuadratic quad(h, b);
    CovarianceState cov(2, 2, 0.1, std::vector<double>{0.8, -0.5});
    std::vector<double> x0{1.0, 1.0, -0.5, 0.25};
    reports.push_back(check_rloo_unbiased(200'000, quad, cov, x0, 1e-3, 6));
    reports.push_back(check_rloo_k_consistency(200'000, quad, cov, x0, 1e-3, 2, 6));
  }

  bool all_pass = true;
  for (const auto& r : reports) {
    print_report(os, r);
    all_pass = all_pass && r.pass;
  }
  os << (all_pass ? "all oracles passed" : "ORACLE FAILURES PRESENT") << "\n";
  return all_pass;
}

}  // namespace loren::bench
