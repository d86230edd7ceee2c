#pragma once

// Layer shapes and flat parameter storage. A matrix layer of shape m x n is
// stored row-major and partitioned into m contiguous blocks of size n (the
// rows); a vector layer of length L is a single block of size L.

#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace loren {

struct LayerShape {
  enum class Kind { matrix, vector };
  Kind kind = Kind::vector;
  std::size_t rows = 0;  // m for matrix layers
  std::size_t cols = 0;  // n for matrix layers; unused for vector layers
  std::size_t length = 0;  // L for vector layers

  static LayerShape matrix(std::size_t m, std::size_t n) {
    return {Kind::matrix, m, n, 0};
  }
  static LayerShape vector(std::size_t len) {
    return {Kind::vector, 0, 0, len};
  }

  std::size_t flat_size() const {
    return kind == Kind::matrix ? rows * cols : length;
  }
  // Block partition used by the covariance: rows for matrices, the whole
  // vector as one block otherwise.
  std::size_t block_count() const {
    return kind == Kind::matrix ? rows : 1;
  }
  std::size_t block_size() const {
    return kind == Kind::matrix ? cols : length;
  }
};

// Ordered list of layer tensors with flat per-layer storage.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<LayerShape> shapes) : shapes_(std::move(shapes)) {
    data_.resize(shapes_.size());
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
      data_[l].assign(shapes_[l].flat_size(), 0.0);
    }
  }

  std::size_t layer_count() const { return shapes_.size(); }
  const std::vector<LayerShape>& shapes() const { return shapes_; }
  const LayerShape& shape(std::size_t l) const { return shapes_[l]; }

  std::span<double> layer(std::size_t l) { return data_[l]; }
  std::span<const double> layer(std::size_t l) const { return data_[l]; }

  std::span<double> block(std::size_t l, std::size_t b) {
    const std::size_t n = shapes_[l].block_size();
    return std::span<double>(data_[l]).subspan(b * n, n);
  }
  std::span<const double> block(std::size_t l, std::size_t b) const {
    const std::size_t n = shapes_[l].block_size();
    return std::span<const double>(data_[l]).subspan(b * n, n);
  }

  std::size_t total_size() const {
    std::size_t total = 0;
    for (const auto& s : shapes_) total += s.flat_size();
    return total;
  }

  std::size_t max_block_size() const {
    std::size_t n = 0;
    for (const auto& s : shapes_) n = std::max(n, s.block_size());
    return n;
  }

 private:
  std::vector<LayerShape> shapes_;
  std::vector<std::vector<double>> data_;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace loren
