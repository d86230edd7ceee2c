#pragma once

// Objective abstraction and the benchmark surfaces: Sphere, Rastrigin,
// Rosenbrock, the monkey saddle z = x^3 - 3 x y^2, and a toy two-layer
// perceptron on synthetic Gaussian blobs. Test functions use the canonical
// definitions:
//
//   sphere     f(x) = sum x_i^2
//   rastrigin  f(x) = 10 d + sum (x_i^2 - 10 cos(2 pi x_i))
//   rosenbrock f(x) = sum_{i<d} 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2
//
// evaluate() is pure: identical inputs give identical bits, and instances are
// immutable after construction, so evaluations may run concurrently.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "loren/perturb.hpp"
#include "loren/shapes.hpp"
#include "loren/stream.hpp"

namespace loren {

// Minibatch selection; test functions ignore it (full-batch sentinel).
struct BatchSpec {
  std::vector<std::uint32_t> indices;  // empty = full batch

  static BatchSpec full() { return {}; }
  bool is_full() const { return indices.empty(); }
};

class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::string name() const = 0;
  virtual const std::vector<LayerShape>& shapes() const = 0;
  virtual double evaluate(const ParamSource& params, const BatchSpec& batch) const = 0;

  virtual bool has_analytic_gradient() const { return false; }
  // Gradient of evaluate() at the given parameters, flat per layer,
  // concatenated in layer order. Only meaningful when
  // has_analytic_gradient().
  virtual std::vector<double> analytic_gradient(const ParamSource& params,
                                                const BatchSpec& batch) const {
    (void)params;
    (void)batch;
    throw ConfigError("objective '" + name() + "' has no analytic gradient");
  }

  virtual std::size_t dataset_size() const { return 0; }  // 0 = batchless

  // Starting parameters for optimisation runs.
  virtual ParameterSet initial_params(std::uint64_t /*master_seed*/) const {
    return ParameterSet(shapes());
  }
};

namespace detail {

// Single flat vector layer; loads the whole layer into scratch once.
class VectorObjective : public Objective {
 public:
  explicit VectorObjective(std::size_t dim)
      : shapes_{LayerShape::vector(dim)} {}

  const std::vector<LayerShape>& shapes() const override { return shapes_; }
  bool has_analytic_gradient() const override { return true; }

  double evaluate(const ParamSource& params, const BatchSpec&) const override {
    std::vector<double> x(shapes_[0].flat_size());
    params.load_layer(0, x);
    return value(x);
  }

  std::vector<double> analytic_gradient(const ParamSource& params,
                                        const BatchSpec&) const override {
    std::vector<double> x(shapes_[0].flat_size());
    params.load_layer(0, x);
    std::vector<double> g(x.size());
    gradient(x, g);
    return g;
  }

  virtual double value(std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> g) const = 0;

 private:
  std::vector<LayerShape> shapes_;
};

}  // namespace detail

class Sphere final : public detail::VectorObjective {
 public:
  explicit Sphere(std::size_t dim) : VectorObjective(dim) {}
  std::string name() const override { return "sphere"; }

  double value(std::span<const double> x) const override {
    double f = 0.0;
    for (double v : x) f += v * v;
    return f;
  }
  void gradient(std::span<const double> x, std::span<double> g) const override {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = 2.0 * x[i];
  }

  ParameterSet initial_params(std::uint64_t) const override {
    ParameterSet p(shapes());
    for (double& v : p.layer(0)) v = 1.0;
    return p;
  }
};

class Rastrigin final : public detail::VectorObjective {
 public:
  explicit Rastrigin(std::size_t dim) : VectorObjective(dim) {}
  std::string name() const override { return "rastrigin"; }

  double value(std::span<const double> x) const override {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double f = 10.0 * static_cast<double>(x.size());
    for (double v : x) f += v * v - 10.0 * std::cos(two_pi * v);
    return f;
  }
  void gradient(std::span<const double> x, std::span<double> g) const override {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t i = 0; i < x.size(); ++i) {
      g[i] = 2.0 * x[i] + 10.0 * two_pi * std::sin(two_pi * x[i]);
    }
  }

  ParameterSet initial_params(std::uint64_t) const override {
    ParameterSet p(shapes());
    for (double& v : p.layer(0)) v = 0.5;
    return p;
  }
};

class Rosenbrock final : public detail::VectorObjective {
 public:
  explicit Rosenbrock(std::size_t dim) : VectorObjective(dim) {
    if (dim < 2) throw ConfigError("rosenbrock requires dim >= 2");
  }
  std::string name() const override { return "rosenbrock"; }

  double value(std::span<const double> x) const override {
    double f = 0.0;
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
      const double t = x[i + 1] - x[i] * x[i];
      const double u = 1.0 - x[i];
      f += 100.0 * t * t + u * u;
    }
    return f;
  }
  void gradient(std::span<const double> x, std::span<double> g) const override {
    const std::size_t d = x.size();
    for (std::size_t i = 0; i < d; ++i) {
      double gi = 0.0;
      if (i + 1 < d) {
        const double t = x[i + 1] - x[i] * x[i];
        gi += -400.0 * x[i] * t - 2.0 * (1.0 - x[i]);
      }
      if (i > 0) {
        gi += 200.0 * (x[i] - x[i - 1] * x[i - 1]);
      }
      g[i] = gi;
    }
  }

  ParameterSet initial_params(std::uint64_t) const override {
    ParameterSet p(shapes());
    auto x = p.layer(0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (i % 2 == 0) ? -1.2 : 1.0;
    return p;
  }
};

// Degenerate saddle: gradient and Hessian both vanish at the origin.
class MonkeySaddle final : public detail::VectorObjective {
 public:
  MonkeySaddle() : VectorObjective(2) {}
  std::string name() const override { return "monkey_saddle"; }

  double value(std::span<const double> x) const override {
    return x[0] * x[0] * x[0] - 3.0 * x[0] * x[1] * x[1];
  }
  void gradient(std::span<const double> x, std::span<double> g) const override {
    g[0] = 3.0 * x[0] * x[0] - 3.0 * x[1] * x[1];
    g[1] = -6.0 * x[0] * x[1];
  }

  ParameterSet initial_params(std::uint64_t) const override {
    ParameterSet p(shapes());
    p.layer(0)[0] = 2.9;
    p.layer(0)[1] = -0.01;
    return p;
  }
};

// Two-layer perceptron 16 -> 32 -> 2, tanh hidden, softmax cross-entropy, on
// a synthetic two-class Gaussian blob dataset of 512 samples. Layer order:
// W1 (32x16), b1 (32), W2 (2x32), b2 (2). Dataset and parameter init are
// pure functions of the construction seed.
class MlpToy final : public Objective {
 public:
  static constexpr std::size_t kInputDim = 16;
  static constexpr std::size_t kHiddenDim = 32;
  static constexpr std::size_t kClasses = 2;
  static constexpr std::size_t kSamples = 512;

  explicit MlpToy(std::uint64_t seed) : seed_(seed) {
    shapes_ = {LayerShape::matrix(kHiddenDim, kInputDim),
               LayerShape::vector(kHiddenDim),
               LayerShape::matrix(kClasses, kHiddenDim),
               LayerShape::vector(kClasses)};
    build_dataset();
  }

  std::string name() const override { return "mlp"; }
  const std::vector<LayerShape>& shapes() const override { return shapes_; }
  std::size_t dataset_size() const override { return kSamples; }
  bool has_analytic_gradient() const override { return true; }

  double evaluate(const ParamSource& params, const BatchSpec& batch) const override {
    Forward fwd;
    return forward(params, batch, fwd);
  }

  std::vector<double> analytic_gradient(const ParamSource& params,
                                        const BatchSpec& batch) const override;

  // The dataset is fixed by the construction seed; the weight init follows
  // the run's master seed so independent runs start from independent weights.
  ParameterSet initial_params(std::uint64_t master_seed) const override {
    ParameterSet p(shapes_);
    auto w1 = p.layer(0);
    StreamCoord c{master_seed, 1, 0, kInitStreamLayer, 0};
    gaussian_block(c, w1);
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(kInputDim));
    for (double& v : w1) v *= w1_scale;

    auto w2 = p.layer(2);
    c.step = 2;
    gaussian_block(c, w2);
    const double w2_scale = 0.1 / std::sqrt(static_cast<double>(kHiddenDim));
    for (double& v : w2) v *= w2_scale;
    // biases stay zero
    return p;
  }

  std::uint8_t label(std::size_t i) const { return labels_[i]; }

 private:
  struct Forward {
    std::vector<double> hidden;  // batch x kHiddenDim (pre-activation then tanh)
    std::vector<double> probs;   // batch x kClasses
    std::vector<std::uint32_t> idx;
  };

  double forward(const ParamSource& params, const BatchSpec& batch,
                 Forward& fwd) const;
  void build_dataset();

  std::uint64_t seed_;
  std::vector<LayerShape> shapes_;
  std::vector<double> inputs_;        // kSamples x kInputDim
  std::vector<std::uint8_t> labels_;  // kSamples
};

inline void MlpToy::build_dataset() {
  inputs_.resize(kSamples * kInputDim);
  labels_.resize(kSamples);

  // Two unit-norm class centres at +/- mu, separation 2*||mu|| = 4.
  std::vector<double> mu(kInputDim);
  gaussian_block(StreamCoord{seed_, 0, 0, kInitStreamLayer, 0}, mu);
  double norm = 0.0;
  for (double v : mu) norm += v * v;
  norm = std::sqrt(norm);
  for (double& v : mu) v *= 2.0 / norm;

  for (std::size_t i = 0; i < kSamples; ++i) {
    labels_[i] = static_cast<std::uint8_t>(i % 2);
    const double sign = labels_[i] == 0 ? 1.0 : -1.0;
    std::span<double> row(inputs_.data() + i * kInputDim, kInputDim);
    gaussian_block(StreamCoord{seed_, 0, 1, kInitStreamLayer, i * kInputDim}, row);
    for (std::size_t j = 0; j < kInputDim; ++j) row[j] += sign * mu[j];
  }
}

inline double MlpToy::forward(const ParamSource& params, const BatchSpec& batch,
                              Forward& fwd) const {
  fwd.idx.clear();
  if (batch.is_full()) {
    fwd.idx.resize(kSamples);
    for (std::size_t i = 0; i < kSamples; ++i) fwd.idx[i] = static_cast<std::uint32_t>(i);
  } else {
    fwd.idx = batch.indices;
  }
  const std::size_t bsz = fwd.idx.size();

  fwd.hidden.assign(bsz * kHiddenDim, 0.0);
  fwd.probs.assign(bsz * kClasses, 0.0);

  // Hidden layer: one perturbed W1 row at a time, applied to every sample.
  std::vector<double> row(kInputDim);
  std::vector<double> bias1(kHiddenDim);
  params.load_layer(1, bias1);
  for (std::size_t h = 0; h < kHiddenDim; ++h) {
    params.load_block(0, h, row);
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* in = inputs_.data() + fwd.idx[b] * kInputDim;
      double acc = bias1[h];
      for (std::size_t j = 0; j < kInputDim; ++j) acc += row[j] * in[j];
      fwd.hidden[b * kHiddenDim + h] = std::tanh(acc);
    }
  }

  std::vector<double> row2(kHiddenDim);
  std::vector<double> bias2(kClasses);
  params.load_layer(3, bias2);
  std::vector<double> logits(bsz * kClasses, 0.0);
  for (std::size_t c = 0; c < kClasses; ++c) {
    params.load_block(2, c, row2);
    for (std::size_t b = 0; b < bsz; ++b) {
      const double* hid = fwd.hidden.data() + b * kHiddenDim;
      double acc = bias2[c];
      for (std::size_t j = 0; j < kHiddenDim; ++j) acc += row2[j] * hid[j];
      logits[b * kClasses + c] = acc;
    }
  }

  double loss = 0.0;
  for (std::size_t b = 0; b < bsz; ++b) {
    const double l0 = logits[b * kClasses];
    const double l1 = logits[b * kClasses + 1];
    const double mx = std::max(l0, l1);
    const double e0 = std::exp(l0 - mx);
    const double e1 = std::exp(l1 - mx);
    const double z = e0 + e1;
    fwd.probs[b * kClasses] = e0 / z;
    fwd.probs[b * kClasses + 1] = e1 / z;
    const double p_true = fwd.probs[b * kClasses + labels_[fwd.idx[b]]];
    loss -= std::log(p_true);
  }
  return loss / static_cast<double>(bsz);
}

inline std::vector<double> MlpToy::analytic_gradient(const ParamSource& params,
                                                     const BatchSpec& batch) const {
  Forward fwd;
  forward(params, batch, fwd);
  const std::size_t bsz = fwd.idx.size();
  const double inv_b = 1.0 / static_cast<double>(bsz);

  std::vector<double> w2(kClasses * kHiddenDim);
  params.load_layer(2, w2);

  std::vector<double> g(kHiddenDim * kInputDim + kHiddenDim +
                        kClasses * kHiddenDim + kClasses, 0.0);
  double* g_w1 = g.data();
  double* g_b1 = g_w1 + kHiddenDim * kInputDim;
  double* g_w2 = g_b1 + kHiddenDim;
  double* g_b2 = g_w2 + kClasses * kHiddenDim;

  std::vector<double> dhid(kHiddenDim);
  for (std::size_t b = 0; b < bsz; ++b) {
    const std::uint32_t sample = fwd.idx[b];
    const double* in = inputs_.data() + sample * kInputDim;
    const double* hid = fwd.hidden.data() + b * kHiddenDim;

    double dlogit[kClasses];
    for (std::size_t c = 0; c < kClasses; ++c) {
      dlogit[c] = fwd.probs[b * kClasses + c] -
                  (labels_[sample] == c ? 1.0 : 0.0);
    }

    for (std::size_t c = 0; c < kClasses; ++c) {
      g_b2[c] += inv_b * dlogit[c];
      for (std::size_t j = 0; j < kHiddenDim; ++j) {
        g_w2[c * kHiddenDim + j] += inv_b * dlogit[c] * hid[j];
      }
    }

    for (std::size_t j = 0; j < kHiddenDim; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < kClasses; ++c) acc += dlogit[c] * w2[c * kHiddenDim + j];
      dhid[j] = acc * (1.0 - hid[j] * hid[j]);  // tanh'
    }
    for (std::size_t j = 0; j < kHiddenDim; ++j) {
      g_b1[j] += inv_b * dhid[j];
      for (std::size_t i2 = 0; i2 < kInputDim; ++i2) {
        g_w1[j * kInputDim + i2] += inv_b * dhid[j] * in[i2];
      }
    }
  }
  return g;
}

inline std::unique_ptr<Objective> make_objective(const std::string& name,
                                                 std::size_t dim,
                                                 std::uint64_t seed) {
  if (name == "sphere") return std::make_unique<Sphere>(dim);
  if (name == "rastrigin") return std::make_unique<Rastrigin>(dim);
  if (name == "rosenbrock") return std::make_unique<Rosenbrock>(dim);
  if (name == "monkey_saddle" || name == "saddle") return std::make_unique<MonkeySaddle>();
  if (name == "mlp") return std::make_unique<MlpToy>(seed);
  throw ConfigError("unknown objective: " + name);
}

inline std::unique_ptr<Objective> mlp_toy(std::uint64_t seed) {
  return std::make_unique<MlpToy>(seed);
}

}  // namespace loren
