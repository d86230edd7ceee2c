#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <bit>
#include <cmath>

#include "loren/stream.hpp"

using namespace loren;

TEST_CASE("identical coordinates reproduce identical gaussian blocks") {
  const StreamCoord c{1234567, 17, 3, 2, 40};
  const auto a = gaussian_vector(c, 257);
  const auto b = gaussian_vector(c, 257);
  REQUIRE(a == b);
}

TEST_CASE("block sample i equals sample 0 of the offset-shifted coordinate") {
  const StreamCoord c{99, 5, 2, 1, 13};
  const auto block = gaussian_vector(c, 64);
  for (std::uint64_t i = 0; i < 64; ++i) {
    StreamCoord shifted = c;
    shifted.block_offset = c.block_offset + i;
    REQUIRE(block[i] == gaussian_at(shifted, 0));
    REQUIRE(block[i] == gaussian_at(c, i));
  }
}

TEST_CASE("concatenated sub-blocks equal one contiguous block") {
  const StreamCoord c{7, 0, 1, 0, 0};
  const auto whole = gaussian_vector(c, 100);
  std::vector<double> parts;
  for (std::uint64_t off = 0; off < 100; off += 7) {
    StreamCoord sub = c;
    sub.block_offset = off;
    const auto piece = gaussian_vector(sub, std::min<std::uint64_t>(7, 100 - off));
    parts.insert(parts.end(), piece.begin(), piece.end());
  }
  REQUIRE(whole == parts);
}

TEST_CASE("stream moments: mean and variance of one million samples") {
  const StreamCoord c{2024, 0, 1, 0, 0};
  constexpr std::size_t n = 1'000'000;
  std::vector<double> samples(n);
  gaussian_block(c, samples);
  long double sum = 0.0L, sum_sq = 0.0L;
  for (double x : samples) {
    sum += x;
    sum_sq += static_cast<long double>(x) * x;
  }
  const double mean = static_cast<double>(sum / n);
  const double var = static_cast<double>(sum_sq / n) - mean * mean;
  REQUIRE(std::abs(mean) < 4e-3);          // 4 sigma of 1/sqrt(n)
  REQUIRE(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("streams differing only in pass are uncorrelated") {
  StreamCoord a{555, 9, 1, 0, 0};
  StreamCoord b = a;
  b.pass = 2;
  constexpr std::size_t n = 1'000'000;
  std::vector<double> xa(n), xb(n);
  gaussian_block(a, xa);
  gaussian_block(b, xb);
  long double dot = 0.0L;
  for (std::size_t i = 0; i < n; ++i) dot += xa[i] * xb[i];
  const double corr = static_cast<double>(dot / n);
  REQUIRE(std::abs(corr) < 4.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("uniform64 is a pure function of its coordinates") {
  const StreamCoord c{42, 3, 1, 7, 100};
  REQUIRE(uniform64(c, 0) == uniform64(c, 0));
  REQUIRE(uniform64(c, 0) != uniform64(c, 1));
  StreamCoord shifted = c;
  shifted.block_offset += 5;
  REQUIRE(uniform64(c, 5) == uniform64(shifted, 0));
}

TEST_CASE("uniform64 monobit frequency per bit position") {
  const StreamCoord c{31337, 0, 0, 0, 0};
  constexpr std::size_t n = 1'000'000;
  std::array<std::size_t, 64> ones{};
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t w = uniform64(c, i);
    for (int b = 0; b < 64; ++b) ones[b] += (w >> b) & 1u;
  }
  const double sigma = 0.5 * std::sqrt(static_cast<double>(n));
  for (int b = 0; b < 64; ++b) {
    REQUIRE(std::abs(static_cast<double>(ones[b]) - 0.5 * n) < 4.0 * sigma);
  }
}

TEST_CASE("flipping one master_seed bit flips about half the output bits") {
  constexpr std::size_t trials = 10'000;
  std::size_t flipped = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const StreamCoord base{t * 0x9e3779b9ull + 1, 2, 1, 0, 0};
    StreamCoord twiddled = base;
    twiddled.master_seed ^= 1ull << (t % 64);
    flipped += std::popcount(uniform64(base, 0) ^ uniform64(twiddled, 0));
  }
  const double avg = static_cast<double>(flipped) / trials;
  REQUIRE(avg >= 0.45 * 64.0);
  REQUIRE(avg <= 0.55 * 64.0);
}
