#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eflic/common.hpp"
#include "eflic/random.hpp"

namespace eflic {

/// Real-valued C x h x w tensor, channel-major then row then column.
class LatentGrid {
 public:
  LatentGrid() = default;

  LatentGrid(std::size_t channels, std::size_t height, std::size_t width)
      : LatentGrid(channels, height, width, std::vector<double>(channels * height * width, 0.0)) {}

  LatentGrid(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data)
      : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    detail::require(channels > 0 && height > 0 && width > 0, "latent dimensions must be positive");
    detail::require(data_.size() == channels * height * width,
                    "latent data length " + std::to_string(data_.size()) + " != C*h*w = " +
                        std::to_string(channels * height * width));
    for (double v : data_) detail::require(std::isfinite(v), "latent contains a non-finite value");
  }

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t positions() const { return height_ * width_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t c, std::size_t i, std::size_t j) { return data_[(c * height_ + i) * width_ + j]; }
  double at(std::size_t c, std::size_t i, std::size_t j) const { return data_[(c * height_ + i) * width_ + j]; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool same_shape(const LatentGrid& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const LatentGrid&, const LatentGrid&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

/// n vectors of a common dimension, stored contiguously.
struct VectorSet {
  std::size_t dim = 0;
  std::vector<double> values;

  VectorSet() = default;
  VectorSet(std::size_t d, std::size_t count) : dim(d), values(d * count, 0.0) {}
  VectorSet(std::size_t d, std::vector<double> v) : dim(d), values(std::move(v)) {
    detail::require(d > 0 && values.size() % d == 0, "vector set length is not a multiple of its dimension");
  }

  std::size_t count() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> operator[](std::size_t k) const { return {values.data() + k * dim, dim}; }
  std::span<double> operator[](std::size_t k) { return {values.data() + k * dim, dim}; }

  void append(const VectorSet& o) {
    detail::require(dim == 0 || o.dim == dim, "vector dimension mismatch in append");
    dim = o.dim;
    values.insert(values.end(), o.values.begin(), o.values.end());
  }

  friend bool operator==(const VectorSet&, const VectorSet&) = default;
};

// One C-dimensional vector per spatial position, positions in row-major order.
inline VectorSet to_vectors(const LatentGrid& g) {
  VectorSet v(g.channels(), g.positions());
  for (std::size_t c = 0; c < g.channels(); ++c)
    for (std::size_t p = 0; p < g.positions(); ++p) v.values[p * g.channels() + c] = g.data()[c * g.positions() + p];
  return v;
}

inline LatentGrid from_vectors(const VectorSet& v, std::size_t height, std::size_t width) {
  detail::require(v.count() == height * width, "vector count does not match grid positions");
  LatentGrid g(v.dim, height, width);
  for (std::size_t c = 0; c < v.dim; ++c)
    for (std::size_t p = 0; p < height * width; ++p) g.data()[c * height * width + p] = v.values[p * v.dim + c];
  return g;
}

struct Shape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
};

inline constexpr std::size_t kGroupCount = 4;

// Spatial phase (row parity, column parity) of each quadtree group, in coding order.
inline constexpr std::array<std::pair<std::size_t, std::size_t>, kGroupCount> kGroupPhase = {
    {{0, 0}, {0, 1}, {1, 0}, {1, 1}}};

struct GroupedLatent {
  std::array<LatentGrid, kGroupCount> groups;
  Shape origin;
};

inline GroupedLatent partition_quadtree(const LatentGrid& latent) {
  if (latent.height() % 2 != 0 || latent.width() % 2 != 0) {
    throw InvalidArgument("quadtree partition needs even dimensions, got " + std::to_string(latent.height()) + "x" +
                          std::to_string(latent.width()));
  }
  const std::size_t gh = latent.height() / 2, gw = latent.width() / 2;
  GroupedLatent out;
  out.origin = {latent.channels(), latent.height(), latent.width()};
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const auto [di, dj] = kGroupPhase[g];
    LatentGrid grid(latent.channels(), gh, gw);
    for (std::size_t c = 0; c < latent.channels(); ++c)
      for (std::size_t i = 0; i < gh; ++i)
        for (std::size_t j = 0; j < gw; ++j) grid.at(c, i, j) = latent.at(c, 2 * i + di, 2 * j + dj);
    out.groups[g] = std::move(grid);
  }
  return out;
}

inline LatentGrid merge_groups(const GroupedLatent& grouped) {
  const Shape& s = grouped.origin;
  detail::require(s.height % 2 == 0 && s.width % 2 == 0, "origin shape must have even dimensions");
  for (const auto& g : grouped.groups) {
    if (g.channels() != s.channels || g.height() != s.height / 2 || g.width() != s.width / 2) {
      throw InvalidArgument("group shape does not match origin " + std::to_string(s.channels) + "x" +
                            std::to_string(s.height) + "x" + std::to_string(s.width));
    }
  }
  LatentGrid out(s.channels, s.height, s.width);
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const auto [di, dj] = kGroupPhase[g];
    const auto& grid = grouped.groups[g];
    for (std::size_t c = 0; c < s.channels; ++c)
      for (std::size_t i = 0; i < grid.height(); ++i)
        for (std::size_t j = 0; j < grid.width(); ++j) out.at(c, 2 * i + di, 2 * j + dj) = grid.at(c, i, j);
  }
  return out;
}

struct SourceConfig {
  Shape shape;
  double rho = 0.0;
  double variance = 1.0;
  std::uint64_t seed = 0;
};

// Separable first-order Gauss-Markov field, one independent field per channel:
//   x[i,j] = rho x[i,j-1] + rho x[i-1,j] - rho^2 x[i-1,j-1] + e[i,j]
// First row and column are stationary AR(1) chains, so every entry has the
// target marginal variance and correlation rho^|di| * rho^|dj|.
inline LatentGrid gauss_markov_sample(const SourceConfig& config) {
  if (!(std::abs(config.rho) < 1.0)) {
    throw InvalidArgument("correlation rho must satisfy |rho| < 1, got " + std::to_string(config.rho));
  }
  detail::require(config.variance > 0.0, "marginal variance must be positive");
  const Shape& s = config.shape;
  LatentGrid out(s.channels, s.height, s.width);
  CounterRng rng(config.seed);
  const double rho = config.rho;
  const double sd = std::sqrt(config.variance);
  const double edge = std::sqrt(1.0 - rho * rho);
  const double interior = 1.0 - rho * rho;
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t i = 0; i < s.height; ++i) {
      for (std::size_t j = 0; j < s.width; ++j) {
        const double e = rng.normal() * sd;
        double v;
        if (i == 0 && j == 0) {
          v = e;
        } else if (i == 0) {
          v = rho * out.at(c, 0, j - 1) + edge * e;
        } else if (j == 0) {
          v = rho * out.at(c, i - 1, 0) + edge * e;
        } else {
          v = rho * out.at(c, i, j - 1) + rho * out.at(c, i - 1, j) - rho * rho * out.at(c, i - 1, j - 1) +
              interior * e;
        }
        out.at(c, i, j) = v;
      }
    }
  }
  return out;
}

// Replicates the last row and column until both dimensions are multiples of `multiple`.
inline LatentGrid pad_replicate(const LatentGrid& g, std::size_t multiple) {
  detail::require(multiple > 0, "padding multiple must be positive");
  const std::size_t h = (g.height() + multiple - 1) / multiple * multiple;
  const std::size_t w = (g.width() + multiple - 1) / multiple * multiple;
  if (h == g.height() && w == g.width()) return g;
  LatentGrid out(g.channels(), h, w);
  for (std::size_t c = 0; c < g.channels(); ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        out.at(c, i, j) = g.at(c, std::min(i, g.height() - 1), std::min(j, g.width() - 1));
  return out;
}

inline LatentGrid crop(const LatentGrid& g, std::size_t height, std::size_t width) {
  detail::require(height <= g.height() && width <= g.width(), "crop larger than the grid");
  if (height == g.height() && width == g.width()) return g;
  LatentGrid out(g.channels(), height, width);
  for (std::size_t c = 0; c < g.channels(); ++c)
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) out.at(c, i, j) = g.at(c, i, j);
  return out;
}

inline double mean_squared_error(const LatentGrid& a, const LatentGrid& b) {
  detail::require(a.same_shape(b), "MSE between grids of different shape");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a.data()[k] - b.data()[k];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace eflic
