#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "eflic/codebook.hpp"
#include "eflic/common.hpp"
#include "eflic/random.hpp"

namespace eflic {

enum class CodebookInit {
  kmeans_plus_plus,
  // K distinct training samples drawn uniformly.
  random_samples,
};

struct CodebookTraining {
  std::size_t iterations = 50;
  std::uint64_t seed = 0;
  // Decay of the per-codeword usage counters that drive dead-codeword reseeding.
  double ema_decay = 0.99;
  CodebookInit init = CodebookInit::kmeans_plus_plus;
  // Pin codeword 0 to the zero vector (never moved, never reseeded).
  bool reserve_zero = false;
};

struct TrainedCodebook {
  Codebook codebook;
  double mse = 0.0;  // per-sample squared error of the final codebook
  // MSE under the assignment of every Lloyd pass, plus the final codebook.
  std::vector<double> mse_history;
  std::size_t reseeded = 0;
};

inline constexpr double kDeadCodewordFraction = 1e-3;

namespace detail {

inline double assign_all(const Codebook& cb, const VectorSet& samples, IndexArray& idx) {
  double total = 0.0;
  const NearestSearch search(cb);
  for (std::size_t n = 0; n < samples.count(); ++n) {
    double d = 0.0;
    idx[n] = search(samples[n], &d);
    total += d;
  }
  return total / static_cast<double>(samples.count());
}

// Greedy k-means++: each new codeword is the best of 2 + ln K candidates drawn
// with probability proportional to the squared distance to the chosen set.
inline VectorSet init_kmeans_pp(const VectorSet& samples, std::size_t K, bool reserve_zero, CounterRng& rng) {
  const std::size_t n = samples.count(), dim = samples.dim;
  VectorSet words(dim, K);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  auto absorb = [&](std::span<const double> c) {
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(samples[i], c));
  };
  auto draw = [&](double total) {
    const double target = rng.uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      last_positive = i;
      if (acc > target) return i;
    }
    return last_positive;
  };
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(K)));
  std::size_t start = 0;
  if (reserve_zero) {
    absorb(words[0]);  // already zero
    start = 1;
  }
  for (std::size_t k = start; k < K; ++k) {
    std::size_t pick = 0;
    const double total = k > 0 ? std::accumulate(d2.begin(), d2.end(), 0.0) : 0.0;
    if (k == 0 || !(total > 0.0)) {
      pick = static_cast<std::size_t>(rng.below(n));
    } else {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t cand = draw(total);
        double potential = 0.0;
        for (std::size_t i = 0; i < n; ++i) potential += std::min(d2[i], squared_distance(samples[i], samples[cand]));
        if (potential < best) {
          best = potential;
          pick = cand;
        }
      }
    }
    auto src = samples[pick];
    std::copy(src.begin(), src.end(), words[k].begin());
    absorb(words[k]);
  }
  return words;
}

inline VectorSet init_random_samples(const VectorSet& samples, std::size_t K, bool reserve_zero, CounterRng& rng) {
  const std::size_t n = samples.count();
  VectorSet words(samples.dim, K);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t start = reserve_zero ? 1 : 0;
  for (std::size_t k = start; k < K; ++k) {
    const std::size_t slot = k - start;
    const std::size_t j = slot + static_cast<std::size_t>(rng.below(n - slot));
    std::swap(order[slot], order[j]);
    auto src = samples[order[slot]];
    std::copy(src.begin(), src.end(), words[k].begin());
  }
  return words;
}

}  // namespace detail

// Seeded Lloyd iterations. Each pass assigns every sample to its nearest
// codeword, moves codewords to the centroid of their cells, then reseeds
// codewords that received no samples and whose usage counter fell below
// kDeadCodewordFraction * n / K. None of these steps can increase the
// training MSE, so mse_history is non-increasing up to rounding.
inline TrainedCodebook train_codebook(const VectorSet& samples, std::size_t K, const CodebookTraining& opts = {}) {
  const std::size_t n = samples.count();
  detail::require(K >= 1, "codebook size must be at least 1");
  if (n < K) {
    throw InvalidArgument("codebook training needs at least K samples: n=" + std::to_string(n) +
                          " < K=" + std::to_string(K));
  }
  detail::require(opts.iterations >= 1, "codebook training needs at least one iteration");
  detail::require(opts.ema_decay >= 0.0 && opts.ema_decay < 1.0, "EMA decay must lie in [0, 1)");

  const std::size_t dim = samples.dim;
  CounterRng rng(opts.seed);
  VectorSet words = opts.init == CodebookInit::kmeans_plus_plus
                        ? detail::init_kmeans_pp(samples, K, opts.reserve_zero, rng)
                        : detail::init_random_samples(samples, K, opts.reserve_zero, rng);
  TrainedCodebook out;
  out.codebook = Codebook(std::move(words));
  Codebook& cb = out.codebook;

  const double dead_threshold = kDeadCodewordFraction * static_cast<double>(n) / static_cast<double>(K);
  const std::size_t first_free = opts.reserve_zero ? 1 : 0;
  IndexArray idx(n);
  std::vector<double> sums(K * dim);
  std::vector<std::size_t> hits(K);

  for (std::size_t it = 0; it < opts.iterations; ++it) {
    out.mse_history.push_back(detail::assign_all(cb, samples, idx));

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(hits.begin(), hits.end(), std::size_t{0});
    for (std::size_t s = 0; s < n; ++s) {
      auto v = samples[s];
      double* acc = sums.data() + idx[s] * dim;
      for (std::size_t d = 0; d < dim; ++d) acc[d] += v[d];
      ++hits[idx[s]];
    }

    bool changed = false;
    for (std::size_t k = first_free; k < K; ++k) {
      if (hits[k] == 0) continue;
      auto c = cb.codewords[k];
      for (std::size_t d = 0; d < dim; ++d) {
        const double centroid = sums[k * dim + d] / static_cast<double>(hits[k]);
        if (centroid != c[d]) changed = true;
        c[d] = centroid;
      }
    }
    for (std::size_t k = 0; k < K; ++k) {
      cb.counts[k] = opts.ema_decay * cb.counts[k] + (1.0 - opts.ema_decay) * static_cast<double>(hits[k]);
    }
    for (std::size_t k = first_free; k < K; ++k) {
      if (hits[k] == 0 && cb.counts[k] < dead_threshold) {
        auto src = samples[rng.below(n)];
        std::copy(src.begin(), src.end(), cb.codewords[k].begin());
        ++out.reseeded;
        changed = true;
      }
    }
    // A pass that moves nothing is a fixed point; later passes would repeat it.
    if (!changed) break;
  }
  out.mse = detail::assign_all(cb, samples, idx);
  out.mse_history.push_back(out.mse);
  return out;
}

// Stage t is trained on the residual left by stages 1..t-1; every stage keeps
// the zero vector at index 0 so adding a stage never increases any vector's error.
inline ResidualVQ train_rvq(const VectorSet& samples, std::span<const std::size_t> stage_sizes,
                            const CodebookTraining& opts = {}) {
  detail::require(!stage_sizes.empty(), "residual VQ needs at least one stage");
  ResidualVQ rvq;
  VectorSet residual = samples;
  for (std::size_t t = 0; t < stage_sizes.size(); ++t) {
    CodebookTraining stage_opts = opts;
    stage_opts.reserve_zero = true;
    stage_opts.seed = CounterRng::derive(opts.seed, t);
    TrainedCodebook trained = train_codebook(residual, stage_sizes[t], stage_opts);
    const IndexArray idx = nn_quantize(trained.codebook, residual);
    for (std::size_t p = 0; p < residual.count(); ++p) {
      auto c = trained.codebook.codewords[idx[p]];
      auto r = residual[p];
      for (std::size_t d = 0; d < residual.dim; ++d) r[d] -= c[d];
    }
    rvq.stages.push_back(std::move(trained.codebook));
  }
  return rvq;
}

struct CodebookReport {
  double quantization_mse = 0.0;
  // Equal to quantization_mse under hard assignment; kept separate to mirror
  // the commitment and codebook-update terms of the VQ training loss.
  double commitment_mse = 0.0;
  double utilization = 0.0;
  double index_entropy_bits = 0.0;
  std::vector<std::uint64_t> histogram;
};

inline CodebookReport codebook_report(const Codebook& cb, const VectorSet& samples) {
  if (samples.count() == 0) throw InvalidArgument("codebook report needs at least one sample");
  detail::require(samples.dim == cb.dim, "sample dimension does not match the codebook");
  CodebookReport r;
  r.histogram.assign(cb.size(), 0);
  double total = 0.0;
  const NearestSearch search(cb);
  for (std::size_t n = 0; n < samples.count(); ++n) {
    double d = 0.0;
    ++r.histogram[search(samples[n], &d)];
    total += d;
  }
  r.quantization_mse = total / static_cast<double>(samples.count());
  r.commitment_mse = r.quantization_mse;
  const auto used = std::count_if(r.histogram.begin(), r.histogram.end(), [](auto c) { return c > 0; });
  r.utilization = static_cast<double>(used) / static_cast<double>(cb.size());
  r.index_entropy_bits = entropy_bits(std::span<const std::uint64_t>(r.histogram));
  return r;
}

}  // namespace eflic
