#pragma once

// Parameter access during forward evaluation. Objectives read parameters one
// block at a time through a ParamSource; the perturbed source materialises
// x + eps * S^{1/2} u block-by-block from the stream coordinates, so the base
// parameters stay immutable (K passes can evaluate concurrently) and the
// transient footprint per evaluation is one block, not one layer set.

#include <cstdint>
#include <span>
#include <vector>

#include "loren/covariance.hpp"
#include "loren/shapes.hpp"
#include "loren/stream.hpp"

namespace loren {

// Identifies one perturbation draw: pass k of step t under a master seed.
// The Gaussian blocks it denotes are regenerated on demand.
struct PerturbationHandle {
  std::uint64_t master_seed = 0;
  std::uint64_t step = 0;
  std::uint32_t pass = 0;

  StreamCoord coord(std::uint32_t layer, std::uint64_t block_offset = 0) const {
    return StreamCoord{master_seed, step, pass, layer, block_offset};
  }
};

class ParamSource {
 public:
  virtual ~ParamSource() = default;
  virtual std::size_t layer_count() const = 0;
  virtual const LayerShape& shape(std::size_t layer) const = 0;
  // Writes block b of the given layer into out (out.size() == block_size).
  virtual void load_block(std::size_t layer, std::size_t block,
                          std::span<double> out) const = 0;

  void load_layer(std::size_t layer, std::span<double> out) const {
    const LayerShape& s = shape(layer);
    const std::size_t n = s.block_size();
    for (std::size_t b = 0; b < s.block_count(); ++b) {
      load_block(layer, b, out.subspan(b * n, n));
    }
  }
};

class PlainSource final : public ParamSource {
 public:
  explicit PlainSource(const ParameterSet& params) : params_(&params) {}

  std::size_t layer_count() const override { return params_->layer_count(); }
  const LayerShape& shape(std::size_t layer) const override {
    return params_->shape(layer);
  }
  void load_block(std::size_t layer, std::size_t block,
                  std::span<double> out) const override {
    auto src = params_->block(layer, block);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i];
  }

 private:
  const ParameterSet* params_;
};

// Regenerates u for (layer, block) from the handle's stream and writes
// w = S^{1/2} u. scratch must hold block_size elements.
inline void regenerate_w_block(const PerturbationHandle& h, std::size_t layer,
                               std::size_t block, const CovarianceState& cov,
                               std::span<double> scratch_u, std::span<double> w) {
  const std::size_t n = cov.block_size();
  gaussian_block(h.coord(static_cast<std::uint32_t>(layer), block * n),
                 scratch_u.subspan(0, n));
  cov.sqrt_block(scratch_u.subspan(0, n), w);
}

// x + sign * eps * S^{1/2} u for the handle's (step, pass). With isotropic =
// true the covariance is skipped and the raw Gaussian u is used (Sigma = I,
// the ZO-SGD baselines).
class PerturbedSource final : public ParamSource {
 public:
  PerturbedSource(const ParameterSet& params,
                  const std::vector<CovarianceState>& covs,
                  PerturbationHandle handle, double epsilon, double sign = 1.0,
                  bool isotropic = false)
      : params_(&params),
        covs_(&covs),
        handle_(handle),
        epsilon_(epsilon),
        sign_(sign),
        isotropic_(isotropic),
        scratch_u_(params.max_block_size()),
        scratch_w_(params.max_block_size()) {}

  std::size_t layer_count() const override { return params_->layer_count(); }
  const LayerShape& shape(std::size_t layer) const override {
    return params_->shape(layer);
  }

  void load_block(std::size_t layer, std::size_t block,
                  std::span<double> out) const override {
    auto base = params_->block(layer, block);
    const std::size_t n = base.size();
    std::span<double> u(scratch_u_.data(), n);
    std::span<double> w(scratch_w_.data(), n);
    if (isotropic_) {
      gaussian_block(handle_.coord(static_cast<std::uint32_t>(layer), block * n), u);
      w = u;
    } else {
      regenerate_w_block(handle_, layer, block, (*covs_)[layer], u, w);
    }
    const double step = sign_ * epsilon_;
    for (std::size_t i = 0; i < n; ++i) out[i] = base[i] + step * w[i];
  }

 private:
  const ParameterSet* params_;
  const std::vector<CovarianceState>* covs_;
  PerturbationHandle handle_;
  double epsilon_;
  double sign_;
  bool isotropic_;
  mutable std::vector<double> scratch_u_;
  mutable std::vector<double> scratch_w_;
};

}  // namespace loren
