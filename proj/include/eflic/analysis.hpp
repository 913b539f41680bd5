#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eflic/codebook.hpp"
#include "eflic/common.hpp"

namespace eflic {

/// Empirical law of one index stream.
struct IndexHistogram {
  std::vector<std::uint64_t> counts;

  IndexHistogram() = default;
  explicit IndexHistogram(std::size_t K) : counts(K, 0) {}
  IndexHistogram(std::size_t K, std::span<const std::uint32_t> indices) : counts(K, 0) {
    for (std::uint32_t j : indices) {
      if (j >= K) throw InvalidArgument("index " + std::to_string(j) + " outside alphabet of size " + std::to_string(K));
      ++counts[j];
    }
  }

  std::size_t K() const { return counts.size(); }
  std::uint64_t n() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }
  double entropy_bits() const { return eflic::entropy_bits(std::span<const std::uint64_t>(counts)); }
};

// Fraction of the n log2 K budget not carried by the i.i.d. plug-in entropy
// n H(marginal); n cancels.
inline double entropy_gap(const IndexHistogram& hist) {
  detail::require(hist.K() >= 2, "entropy gap needs an alphabet of at least 2");
  if (hist.n() == 0) throw InvalidArgument("entropy gap of an empty histogram");
  const double budget = std::log2(static_cast<double>(hist.K()));
  return std::clamp((budget - hist.entropy_bits()) / budget, 0.0, 1.0);
}

/// One index stream with a discrete context label per index.
struct LabeledStream {
  std::string name;
  std::size_t K = 0;
  std::vector<std::uint32_t> indices;
  std::vector<std::uint32_t> labels;  // empty: unconditional
};

struct ConditionalGapReport {
  double delta_h_bar = 0.0;
  double budget_bits = 0.0;
  double conditional_entropy_bits = 0.0;
  std::vector<double> unconditional_gap;  // per stream
  std::vector<double> conditional_gap;    // per stream
  // Some stream has more (label, index) cells than a tenth of its samples.
  bool unreliable = false;
};

// Plug-in estimate of H(J | L) in bits per symbol: H(L, J) - H(L).
inline double conditional_entropy_bits(std::span<const std::uint32_t> indices, std::span<const std::uint32_t> labels) {
  detail::require(indices.size() == labels.size(), "one context label per index is required");
  if (indices.empty()) return 0.0;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> joint;
  std::map<std::uint32_t, std::uint64_t> marginal;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    ++joint[{labels[k], indices[k]}];
    ++marginal[labels[k]];
  }
  std::vector<std::uint64_t> jc, mc;
  for (const auto& [key, c] : joint) jc.push_back(c);
  for (const auto& [key, c] : marginal) mc.push_back(c);
  return std::max(0.0, entropy_bits(std::span<const std::uint64_t>(jc)) - entropy_bits(std::span<const std::uint64_t>(mc)));
}

inline ConditionalGapReport conditional_entropy_gap(std::span<const LabeledStream> streams) {
  detail::require(!streams.empty(), "conditional entropy gap needs at least one stream");
  ConditionalGapReport r;
  for (const auto& s : streams) {
    detail::require(s.K >= 2, "stream " + s.name + " has an alphabet below 2");
    if (s.indices.empty()) throw InvalidArgument("stream " + s.name + " is empty");
    const double n = static_cast<double>(s.indices.size());
    const double bits = std::log2(static_cast<double>(s.K));
    const IndexHistogram hist(s.K, s.indices);
    double h = hist.entropy_bits();
    std::size_t cardinality = 1;
    if (!s.labels.empty()) {
      h = conditional_entropy_bits(s.indices, s.labels);
      std::vector<std::uint32_t> distinct(s.labels);
      std::sort(distinct.begin(), distinct.end());
      cardinality = static_cast<std::size_t>(std::unique(distinct.begin(), distinct.end()) - distinct.begin());
    }
    if (static_cast<double>(cardinality * s.K) > n / 10.0) r.unreliable = true;
    r.budget_bits += n * bits;
    r.conditional_entropy_bits += n * h;
    r.unconditional_gap.push_back(entropy_gap(hist));
    r.conditional_gap.push_back(std::clamp((bits - h) / bits, 0.0, 1.0));
  }
  r.delta_h_bar = (r.budget_bits - r.conditional_entropy_bits) / r.budget_bits;
  return r;
}

struct PredictedPmf {
  std::vector<double> pmf;
  double delta_h = 0.0;
};

// High-rate law: p(j) proportional to p_Y(c_j)^(2 / (C + 2)).
inline PredictedPmf high_rate_predicted_pmf(const Codebook& cb, const std::function<double(std::span<const double>)>& log_density,
                                            std::size_t C) {
  detail::require(C >= 1, "dimension must be positive");
  const double expo = 2.0 / (static_cast<double>(C) + 2.0);
  std::vector<double> logw(cb.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cb.size(); ++j) {
    logw[j] = expo * log_density(cb.codewords[j]);
    if (std::isnan(logw[j])) throw InvalidArgument("log density is NaN at codeword " + std::to_string(j));
    top = std::max(top, logw[j]);
  }
  if (!std::isfinite(top)) throw InvalidArgument("density is zero at every codeword");
  PredictedPmf out;
  out.pmf.resize(cb.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < cb.size(); ++j) sum += out.pmf[j] = std::exp(logw[j] - top);
  double h = 0.0;
  for (double& p : out.pmf) {
    p /= sum;
    if (p > 0.0) h -= p * std::log2(p);
  }
  const double budget = std::log2(static_cast<double>(cb.size()));
  out.delta_h = budget > 0.0 ? std::clamp((budget - h) / budget, 0.0, 1.0) : 0.0;
  return out;
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  detail::require(p.size() == q.size(), "distributions over different alphabets");
  double tv = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) tv += std::abs(p[k] - q[k]);
  return 0.5 * tv;
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes,
/// three-point shape-preserving end conditions).
class Pchip {
 public:
  Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    detail::require(x_.size() == y_.size(), "PCHIP needs as many values as knots");
    detail::require(x_.size() >= 2, "PCHIP needs at least two knots");
    for (std::size_t k = 0; k < x_.size(); ++k) {
      detail::require(std::isfinite(x_[k]) && std::isfinite(y_[k]), "PCHIP knots must be finite");
      if (k > 0 && !(x_[k] > x_[k - 1])) throw InvalidArgument("PCHIP knots must be strictly increasing");
    }
    const std::size_t n = x_.size();
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      h[k] = x_[k + 1] - x_[k];
      delta[k] = (y_[k + 1] - y_[k]) / h[k];
    }
    d_.assign(n, 0.0);
    if (n == 2) {
      d_[0] = d_[1] = delta[0];
      return;
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
      if (delta[k - 1] * delta[k] <= 0.0) continue;
      const double w1 = 2.0 * h[k] + h[k - 1], w2 = h[k] + 2.0 * h[k - 1];
      d_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
    d_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }

  double operator()(double q) const {
    if (!(q >= x_.front() && q <= x_.back())) {
      throw InvalidArgument("PCHIP query " + std::to_string(q) + " outside [" + std::to_string(x_.front()) + ", " +
                            std::to_string(x_.back()) + "]");
    }
    std::size_t k = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), q) - x_.begin());
    k = std::clamp<std::size_t>(k, 1, x_.size() - 1) - 1;
    if (q == x_[k]) return y_[k];
    if (q == x_[k + 1]) return y_[k + 1];
    const double h = x_[k + 1] - x_[k], t = (q - x_[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[k] + (t3 - 2 * t2 + t) * h * d_[k] + (-2 * t3 + 3 * t2) * y_[k + 1] +
           (t3 - t2) * h * d_[k + 1];
  }

  double x_min() const { return x_.front(); }
  double x_max() const { return x_.back(); }

 private:
  static double end_slope(double h0, double h1, double m0, double m1) {
    auto sgn = [](double v) { return (v > 0.0) - (v < 0.0); };
    double d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if (sgn(d) != sgn(m0)) {
      d = 0.0;
    } else if (sgn(m0) != sgn(m1) && std::abs(d) > 3.0 * std::abs(m0)) {
      d = 3.0 * m0;
    }
    return d;
  }

  std::vector<double> x_, y_, d_;
};

inline std::vector<double> pchip_interpolate(std::span<const double> x, std::span<const double> y,
                                             std::span<const double> queries) {
  const Pchip p(std::vector<double>(x.begin(), x.end()), std::vector<double>(y.begin(), y.end()));
  std::vector<double> out;
  out.reserve(queries.size());
  for (double q : queries) out.push_back(p(q));
  return out;
}

struct RDPoint {
  double rate = 0.0;        // bits per element, or BPP
  double distortion = 0.0;  // MSE
  std::string label;        // operating point, e.g. "m=2" or "delta=0.5"
};

struct RDCurve {
  std::string scheme;
  std::vector<RDPoint> points;
};

inline constexpr std::size_t kSimpsonIntervals = 1000;

// Mean of log2 R_test - log2 R_anchor over the shared distortion range.
inline double bd_log_rate(const RDCurve& anchor, const RDCurve& test, std::size_t intervals = kSimpsonIntervals) {
  detail::require(intervals >= 2 && intervals % 2 == 0, "Simpson integration needs an even interval count");
  auto fit = [](const RDCurve& c) {
    detail::require(c.points.size() >= 2, "curve " + c.scheme + " needs at least two points");
    std::vector<RDPoint> pts = c.points;
    std::sort(pts.begin(), pts.end(), [](const RDPoint& a, const RDPoint& b) { return a.distortion < b.distortion; });
    std::vector<double> d, lr;
    for (const auto& p : pts) {
      if (!(p.rate > 0.0)) throw InvalidArgument("curve " + c.scheme + " has a non-positive rate");
      d.push_back(p.distortion);
      lr.push_back(std::log2(p.rate));
    }
    return Pchip(std::move(d), std::move(lr));
  };
  const Pchip a = fit(anchor), t = fit(test);
  const double lo = std::max(a.x_min(), t.x_min()), hi = std::min(a.x_max(), t.x_max());
  if (!(hi > lo)) throw InvalidArgument("curves " + anchor.scheme + " and " + test.scheme + " do not overlap in distortion");
  const double step = (hi - lo) / static_cast<double>(intervals);
  double acc = 0.0;
  for (std::size_t k = 0; k <= intervals; ++k) {
    const double x = k == intervals ? hi : lo + step * static_cast<double>(k);
    const double w = (k == 0 || k == intervals) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    acc += w * (t(x) - a(x));
  }
  return acc * step / 3.0 / (hi - lo);
}

inline double bd_rate(const RDCurve& anchor, const RDCurve& test, std::size_t intervals = kSimpsonIntervals) {
  return 100.0 * (std::exp2(bd_log_rate(anchor, test, intervals)) - 1.0);
}

}  // namespace eflic
