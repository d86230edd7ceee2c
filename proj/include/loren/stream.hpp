#pragma once

// Counter-based Gaussian streams. Every sample is a pure function of its
// coordinates, so perturbation vectors can be regenerated on demand instead
// of stored, and any evaluation order (or thread schedule) produces the same
// bits.
//
// Mixing function (fixed; ports must reproduce it bit-for-bit):
//   mix(z) = splitmix64 finalizer:
//     z += 0x9e3779b97f4a7c15
//     z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//     z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//     z ^= z >> 31
//   word(coord, i) = mix(mix(mix(mix(mix(seed) ^ step) ^ pass) ^ layer)
//                        ^ (block_offset + i))
//
// Gaussians come from Box-Muller over consecutive word pairs: the pair for
// absolute sample index j is (word(2*(j/2)), word(2*(j/2)+1)); even j takes
// the cosine branch, odd j the sine branch. Both halves of a pair are used,
// so gaussian index space and word index space coincide.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace loren {

struct StreamCoord {
  std::uint64_t master_seed = 0;
  std::uint64_t step = 0;   // iteration index t
  std::uint32_t pass = 0;   // forward-pass index k
  std::uint32_t layer = 0;  // layer index within the parameter set
  std::uint64_t block_offset = 0;  // element offset in the layer's flat storage
};

// Reserved layer id for streams that are not tied to a parameter layer
// (minibatch sampling, covariance-factor initialisation).
inline constexpr std::uint32_t kBatchStreamLayer = 0xffffffffu;
inline constexpr std::uint32_t kInitStreamLayer = 0xfffffffeu;

inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t uniform64(const StreamCoord& c,
                                         std::uint64_t index) noexcept {
  std::uint64_t h = mix64(c.master_seed);
  h = mix64(h ^ c.step);
  h = mix64(h ^ c.pass);
  h = mix64(h ^ c.layer);
  h = mix64(h ^ (c.block_offset + index));
  return h;
}

namespace detail {

// Top 53 bits -> (0, 1]; the +1 keeps log() finite.
inline double unit_open(std::uint64_t w) noexcept {
  return static_cast<double>((w >> 11) + 1) * 0x1.0p-53;
}

// Top 53 bits -> [0, 1).
inline double unit_half_open(std::uint64_t w) noexcept {
  return static_cast<double>(w >> 11) * 0x1.0p-53;
}

// Box-Muller pair for absolute sample indices (2p, 2p+1). The coord's own
// block_offset must already be folded into p by the caller.
inline void gaussian_pair(const StreamCoord& base, std::uint64_t p,
                          double& z_even, double& z_odd) noexcept {
  const double u1 = unit_open(uniform64(base, 2 * p));
  const double u2 = unit_half_open(uniform64(base, 2 * p + 1));
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  z_even = r * std::cos(theta);
  z_odd = r * std::sin(theta);
}

}  // namespace detail

// Standard-normal sample at absolute index (coord.block_offset + i).
inline double gaussian_at(const StreamCoord& c, std::uint64_t i) noexcept {
  StreamCoord base = c;
  const std::uint64_t j = base.block_offset + i;
  base.block_offset = 0;
  double z0, z1;
  detail::gaussian_pair(base, j / 2, z0, z1);
  return (j % 2 == 0) ? z0 : z1;
}

// Fills out[0..len) with i.i.d. N(0,1) samples at absolute indices
// coord.block_offset .. coord.block_offset + len - 1.
inline void gaussian_block(const StreamCoord& c, std::span<double> out) noexcept {
  StreamCoord base = c;
  const std::uint64_t start = base.block_offset;
  base.block_offset = 0;

  std::size_t i = 0;
  const std::size_t len = out.size();
  double z0, z1;

  if (len > 0 && (start % 2) != 0) {  // leading odd sample uses the sine half
    detail::gaussian_pair(base, start / 2, z0, z1);
    out[i++] = z1;
  }
  while (i + 1 < len) {
    detail::gaussian_pair(base, (start + i) / 2, z0, z1);
    out[i++] = z0;
    out[i++] = z1;
  }
  if (i < len) {
    detail::gaussian_pair(base, (start + i) / 2, z0, z1);
    out[i++] = z0;
  }
}

inline std::vector<double> gaussian_vector(const StreamCoord& c, std::size_t len) {
  std::vector<double> v(len);
  gaussian_block(c, v);
  return v;
}

// Uniform draw in [0, bound); the modulo bias is O(bound / 2^64).
inline std::uint64_t uniform_below(const StreamCoord& c, std::uint64_t index,
                                   std::uint64_t bound) noexcept {
  return uniform64(c, index) % bound;
}

}  // namespace loren
