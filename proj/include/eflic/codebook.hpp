#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eflic/common.hpp"
#include "eflic/latent.hpp"

namespace eflic {

/// K codewords of dimension C. Indices are 0-based.
struct Codebook {
  std::size_t dim = 0;
  VectorSet codewords;
  // EMA usage counters; only meaningful during training.
  std::vector<double> counts;

  Codebook() = default;
  explicit Codebook(VectorSet words) : dim(words.dim), codewords(std::move(words)) {
    detail::require(dim > 0 && codewords.count() > 0, "codebook needs at least one codeword of positive dimension");
    for (double v : codewords.values) detail::require(std::isfinite(v), "codeword is not finite");
    counts.assign(size(), 0.0);
  }

  std::size_t size() const { return codewords.count(); }

  unsigned index_bits() const { return detail::log2_exact(size()); }

  bool operator==(const Codebook& o) const { return dim == o.dim && codewords == o.codewords; }
};

using IndexArray = std::vector<std::uint32_t>;

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double t = a[d] - b[d];
    acc += t * t;
  }
  return acc;
}

// Index of the nearest codeword; ties go to the lowest index.
inline std::uint32_t nearest_codeword(const Codebook& cb, std::span<const double> v, double* best_distance = nullptr) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cb.size(); ++k) {
    // Partial distance search: abandoning once d >= best_d never changes the argmin.
    auto c = cb.codewords[k];
    double d = 0.0;
    for (std::size_t i = 0; i < v.size() && d < best_d; ++i) {
      const double t = v[i] - c[i];
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(k);
    }
  }
  if (best_distance) *best_distance = best_d;
  return best;
}

/// Nearest-codeword search; scalar codebooks use a sorted copy and return
/// exactly what the exhaustive scan returns, ties included.
class NearestSearch {
 public:
  explicit NearestSearch(const Codebook& cb) : cb_(&cb) {
    if (cb.dim != 1) return;
    sorted_.resize(cb.size());
    for (std::size_t k = 0; k < cb.size(); ++k) sorted_[k] = {cb.codewords.values[k], static_cast<std::uint32_t>(k)};
    std::sort(sorted_.begin(), sorted_.end());
  }

  std::uint32_t operator()(std::span<const double> v, double* best_distance = nullptr) const {
    if (sorted_.empty()) return nearest_codeword(*cb_, v, best_distance);
    const double x = v[0];
    const std::size_t K = sorted_.size();
    auto dist = [&](std::size_t s) {
      const double t = x - sorted_[s].first;
      return t * t;
    };
    const std::size_t pos = static_cast<std::size_t>(
        std::lower_bound(sorted_.begin(), sorted_.end(), std::pair{x, std::uint32_t{0}}) - sorted_.begin());
    double best = std::numeric_limits<double>::infinity();
    if (pos < K) best = dist(pos);
    if (pos > 0) best = std::min(best, dist(pos - 1));
    // Rounding can tie non-adjacent entries, so walk outward over every entry at the best distance.
    std::uint32_t idx = std::numeric_limits<std::uint32_t>::max();
    for (std::size_t s = pos; s < K && dist(s) <= best; ++s) idx = std::min(idx, sorted_[s].second);
    for (std::size_t s = pos; s > 0 && dist(s - 1) <= best; --s) idx = std::min(idx, sorted_[s - 1].second);
    if (best_distance) *best_distance = best;
    return idx;
  }

 private:
  const Codebook* cb_;
  std::vector<std::pair<double, std::uint32_t>> sorted_;
};

inline IndexArray nn_quantize(const Codebook& cb, const VectorSet& vectors) {
  if (vectors.count() > 0 && vectors.dim != cb.dim) {
    throw InvalidArgument("vector dimension " + std::to_string(vectors.dim) + " != codebook dimension " +
                          std::to_string(cb.dim));
  }
  IndexArray out(vectors.count());
  const NearestSearch search(cb);
  for (std::size_t n = 0; n < vectors.count(); ++n) out[n] = search(vectors[n]);
  return out;
}

inline VectorSet dequantize(const Codebook& cb, const IndexArray& indices) {
  VectorSet out(cb.dim, indices.size());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    if (indices[n] >= cb.size()) {
      throw InvalidArgument("index " + std::to_string(indices[n]) + " out of range for codebook of size " +
                            std::to_string(cb.size()));
    }
    auto src = cb.codewords[indices[n]];
    std::copy(src.begin(), src.end(), out[n].begin());
  }
  return out;
}

/// Per-stage index arrays produced by residual quantization; stages.size() is m.
struct IndexStack {
  std::vector<IndexArray> stages;

  std::size_t m() const { return stages.size(); }
  std::size_t positions() const { return stages.empty() ? 0 : stages.front().size(); }

  friend bool operator==(const IndexStack&, const IndexStack&) = default;
};

/// Cascade of codebooks; the first m stages define operating point m.
struct ResidualVQ {
  std::vector<Codebook> stages;

  std::size_t max_stages() const { return stages.size(); }
  std::size_t dim() const { return stages.empty() ? 0 : stages.front().dim; }

  void validate() const {
    detail::require(!stages.empty(), "residual VQ needs at least one stage");
    for (const auto& s : stages) detail::require(s.dim == stages.front().dim, "RVQ stages disagree on dimension");
  }

  bool operator==(const ResidualVQ& o) const { return stages == o.stages; }
};

struct RvqResult {
  IndexStack indices;
  VectorSet reconstruction;
};

inline void check_stage_count(const ResidualVQ& rvq, std::size_t m) {
  if (m < 1 || m > rvq.max_stages()) {
    throw InvalidArgument("stage count m=" + std::to_string(m) + " outside [1, " + std::to_string(rvq.max_stages()) +
                          "]");
  }
}

// Stage t quantizes v - (c_1 + ... + c_{t-1}). The reconstruction accumulates
// stage codewords from zero in stage order, exactly as rvq_dequantize does.
inline RvqResult rvq_quantize(const ResidualVQ& rvq, const VectorSet& vectors, std::size_t m) {
  check_stage_count(rvq, m);
  if (vectors.count() > 0 && vectors.dim != rvq.dim()) {
    throw InvalidArgument("vector dimension " + std::to_string(vectors.dim) + " != RVQ dimension " +
                          std::to_string(rvq.dim()));
  }
  const std::size_t n = vectors.count(), dim = rvq.dim();
  RvqResult out;
  out.indices.stages.assign(m, IndexArray(n));
  out.reconstruction = VectorSet(dim, n);
  std::vector<double> residual(dim);
  std::vector<NearestSearch> search;
  for (std::size_t t = 0; t < m; ++t) search.emplace_back(rvq.stages[t]);
  for (std::size_t p = 0; p < n; ++p) {
    auto v = vectors[p];
    auto rec = out.reconstruction[p];
    for (std::size_t t = 0; t < m; ++t) {
      for (std::size_t d = 0; d < dim; ++d) residual[d] = v[d] - rec[d];
      const std::uint32_t k = search[t](residual);
      out.indices.stages[t][p] = k;
      auto c = rvq.stages[t].codewords[k];
      for (std::size_t d = 0; d < dim; ++d) rec[d] += c[d];
    }
  }
  return out;
}

inline VectorSet rvq_dequantize(const ResidualVQ& rvq, const IndexStack& stack) {
  check_stage_count(rvq, stack.m());
  const std::size_t n = stack.positions(), dim = rvq.dim();
  VectorSet out(dim, n);
  for (std::size_t t = 0; t < stack.m(); ++t) {
    const auto& cb = rvq.stages[t];
    detail::require(stack.stages[t].size() == n, "index stack stages have different lengths");
    for (std::size_t p = 0; p < n; ++p) {
      const std::uint32_t k = stack.stages[t][p];
      if (k >= cb.size()) {
        throw InvalidArgument("stage " + std::to_string(t) + " index " + std::to_string(k) + " >= K=" +
                              std::to_string(cb.size()));
      }
      auto c = cb.codewords[k];
      auto rec = out[p];
      for (std::size_t d = 0; d < dim; ++d) rec[d] += c[d];
    }
  }
  return out;
}

/// Quantizers Q_1..Q_4 for the groups plus the optional hyperprior quantizer Q_z.
struct QuantizerSet {
  std::array<ResidualVQ, kGroupCount> groups;
  std::optional<ResidualVQ> hyper;

  std::size_t max_stages() const { return groups[0].max_stages(); }
  std::size_t dim() const { return groups[0].dim(); }

  void validate() const {
    for (const auto& g : groups) {
      g.validate();
      detail::require(g.max_stages() == max_stages(), "all RVQs in a quantizer set must share the stage count");
      detail::require(g.dim() == dim(), "all group RVQs must share the dimension");
    }
    if (hyper) {
      hyper->validate();
      detail::require(hyper->max_stages() == max_stages(), "hyper RVQ stage count differs from the group RVQs");
      detail::require(hyper->dim() == dim(), "hyper RVQ dimension differs from the group RVQs");
    }
  }

  bool operator==(const QuantizerSet& o) const = default;
};

// Fixed-length cost of an index stack in bits: positions * sum over stages of log2 K.
inline double fixed_length_bits(const ResidualVQ& rvq, std::size_t positions, std::size_t m) {
  check_stage_count(rvq, m);
  double bits = 0.0;
  for (std::size_t t = 0; t < m; ++t) bits += static_cast<double>(positions) * rvq.stages[t].index_bits();
  return bits;
}

}  // namespace eflic
