#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eflic/common.hpp"
#include "eflic/hyper.hpp"
#include "eflic/latent.hpp"
#include "eflic/rans.hpp"

namespace eflic {

inline constexpr double kDefaultRidge = 1e-3;
inline constexpr std::size_t kSigmaBuckets = 16;
inline constexpr double kActivityEpsilon = 1e-3;

// Context entries for group g (0-based): all channels of every earlier group
// at the same position, then all channels of phi when the hyperprior is on.
inline std::size_t context_size(std::size_t group, std::size_t channels, bool hyper) {
  return group * channels + (hyper ? channels : 0);
}

inline void gather_context(std::span<const LatentGrid> decoded, const LatentGrid* phi, std::size_t group,
                           std::size_t i, std::size_t j, std::span<double> out) {
  std::size_t k = 0;
  for (std::size_t g = 0; g < group; ++g) {
    const LatentGrid& src = decoded[g];
    for (std::size_t c = 0; c < src.channels(); ++c) out[k++] = src.at(c, i, j);
  }
  if (phi) {
    for (std::size_t c = 0; c < phi->channels(); ++c) out[k++] = upsampled_phi(*phi, c, i, j);
  }
}

// log of the spread of the context entries; drives the sigma head.
inline double context_activity(std::span<const double> ctx) {
  double sd = 0.0;
  if (ctx.size() >= 2) {
    const double mean = std::accumulate(ctx.begin(), ctx.end(), 0.0) / static_cast<double>(ctx.size());
    double ss = 0.0;
    for (double v : ctx) ss += (v - mean) * (v - mean);
    sd = std::sqrt(ss / static_cast<double>(ctx.size()));
  }
  return std::log(sd + kActivityEpsilon);
}

/// Linear mean head and log-linear scale head for one group.
struct GroupPredictor {
  std::size_t channels = 0;
  std::size_t inputs = 0;
  // channels x (inputs + 1), row-major, bias in the last column.
  std::vector<double> weights;
  // Per channel: log sigma = base + slope * clamp(activity, lo, hi).
  std::vector<double> log_sigma_base;
  std::vector<double> log_sigma_slope;
  double activity_lo = 0.0;
  double activity_hi = 0.0;

  std::size_t parameter_count() const { return channels * (inputs + 1) + 2 * channels; }

  void predict(std::span<const double> ctx, std::span<double> mu, std::span<double> sigma, double sigma_min) const {
    const double* w = weights.data();
    for (std::size_t c = 0; c < channels; ++c, w += inputs + 1) {
      double acc = 0.0;
      for (std::size_t f = 0; f < inputs; ++f) acc += w[f] * ctx[f];
      mu[c] = acc + w[inputs];
    }
    const double a = std::clamp(context_activity(ctx), activity_lo, activity_hi);
    for (std::size_t c = 0; c < channels; ++c) {
      sigma[c] = std::max(sigma_min, std::exp(log_sigma_base[c] + log_sigma_slope[c] * a));
    }
  }

  friend bool operator==(const GroupPredictor&, const GroupPredictor&) = default;
};

/// f_i for the four groups. Group 1 sees only phi (or nothing).
struct ContextPredictor {
  std::array<GroupPredictor, kGroupCount> groups;
  bool hyper = false;
  double sigma_min = kSigmaFloor;

  std::size_t channels() const { return groups[0].channels; }

  // mu = 0, sigma = 1 everywhere: turns the RD scheme into independent quantization.
  static ContextPredictor identity(std::size_t channels, bool hyper) {
    ContextPredictor p;
    p.hyper = hyper;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      GroupPredictor& gp = p.groups[g];
      gp.channels = channels;
      gp.inputs = context_size(g, channels, hyper);
      gp.weights.assign(channels * (gp.inputs + 1), 0.0);
      gp.log_sigma_base.assign(channels, 0.0);
      gp.log_sigma_slope.assign(channels, 0.0);
    }
    return p;
  }

  void validate() const {
    detail::require(sigma_min > 0.0, "sigma floor must be positive");
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      const GroupPredictor& gp = groups[g];
      detail::require(gp.channels == channels() && gp.channels > 0, "predictor groups disagree on channel count");
      detail::require(gp.inputs == context_size(g, gp.channels, hyper),
                      "predictor group " + std::to_string(g + 1) + " has the wrong context size");
      detail::require(gp.weights.size() == gp.channels * (gp.inputs + 1) &&
                          gp.log_sigma_base.size() == gp.channels && gp.log_sigma_slope.size() == gp.channels,
                      "predictor group " + std::to_string(g + 1) + " has inconsistent parameter sizes");
      detail::require(gp.activity_lo <= gp.activity_hi, "predictor activity range is inverted");
    }
  }

  friend bool operator==(const ContextPredictor&, const ContextPredictor&) = default;
};

/// Rows of (context, target) pairs for one group.
struct RegressionData {
  std::size_t inputs = 0;
  std::size_t channels = 0;
  std::vector<double> x;  // rows x inputs
  std::vector<double> y;  // rows x channels

  std::size_t rows() const { return channels == 0 ? 0 : y.size() / channels; }

  void add(std::span<const double> ctx, std::span<const double> target) {
    x.insert(x.end(), ctx.begin(), ctx.end());
    y.insert(y.end(), target.begin(), target.end());
  }
};

namespace detail {

inline void fit_sigma_head(GroupPredictor& gp, const std::vector<double>& activity, const std::vector<double>& resid,
                           double sigma_min) {
  const std::size_t n = activity.size(), C = gp.channels;
  gp.log_sigma_base.assign(C, 0.0);
  gp.log_sigma_slope.assign(C, 0.0);
  const auto [lo, hi] = std::minmax_element(activity.begin(), activity.end());
  gp.activity_lo = *lo;
  gp.activity_hi = *hi;
  auto log_rms = [&](std::size_t c, std::span<const std::size_t> rows) {
    double ss = 0.0;
    for (std::size_t r : rows) ss += resid[r * C + c] * resid[r * C + c];
    return std::log(std::max(std::sqrt(ss / static_cast<double>(rows.size())), sigma_min));
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool degenerate = !(gp.activity_hi - gp.activity_lo > 1e-12 * std::max(1.0, std::abs(gp.activity_hi)));
  if (degenerate || n < kSigmaBuckets) {
    for (std::size_t c = 0; c < C; ++c) gp.log_sigma_base[c] = log_rms(c, order);
    return;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return activity[a] < activity[b]; });
  std::vector<double> centre(kSigmaBuckets), weight(kSigmaBuckets);
  std::vector<std::span<const std::size_t>> bucket(kSigmaBuckets);
  for (std::size_t b = 0; b < kSigmaBuckets; ++b) {
    const std::size_t first = b * n / kSigmaBuckets, last = (b + 1) * n / kSigmaBuckets;
    bucket[b] = std::span<const std::size_t>(order).subspan(first, last - first);
    double acc = 0.0;
    for (std::size_t r : bucket[b]) acc += activity[r];
    centre[b] = acc / static_cast<double>(bucket[b].size());
    weight[b] = static_cast<double>(bucket[b].size());
  }
  const double wsum = std::accumulate(weight.begin(), weight.end(), 0.0);
  double cbar = 0.0;
  for (std::size_t b = 0; b < kSigmaBuckets; ++b) cbar += weight[b] * centre[b];
  cbar /= wsum;
  double sxx = 0.0;
  for (std::size_t b = 0; b < kSigmaBuckets; ++b) sxx += weight[b] * (centre[b] - cbar) * (centre[b] - cbar);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> t(kSigmaBuckets);
    double tbar = 0.0;
    for (std::size_t b = 0; b < kSigmaBuckets; ++b) {
      t[b] = log_rms(c, bucket[b]);
      tbar += weight[b] * t[b];
    }
    tbar /= wsum;
    double sxy = 0.0;
    for (std::size_t b = 0; b < kSigmaBuckets; ++b) sxy += weight[b] * (centre[b] - cbar) * (t[b] - tbar);
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    gp.log_sigma_slope[c] = slope;
    gp.log_sigma_base[c] = tbar - slope * cbar;
  }
}

}  // namespace detail

// Ridge least squares for the mean head (bias unpenalized), then the scale
// head from the RMS of the residuals in 16 equal-count activity buckets.
inline GroupPredictor fit_group_predictor(const RegressionData& data, double ridge = kDefaultRidge,
                                          double sigma_min = kSigmaFloor) {
  const std::size_t n = data.rows(), F = data.inputs, C = data.channels;
  detail::require(C > 0, "regression data has no target channels");
  detail::require(data.x.size() == n * F, "regression context matrix has the wrong size");
  detail::require(ridge > 0.0, "ridge penalty must be positive");
  GroupPredictor gp;
  gp.channels = C;
  gp.inputs = F;
  if (n < 10 * gp.parameter_count()) {
    throw InvalidArgument("insufficient training data: " + std::to_string(n) + " positions for " +
                          std::to_string(gp.parameter_count()) + " parameters (need 10x)");
  }

  std::vector<double> xbar(F, 0.0), ybar(C, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < F; ++f) xbar[f] += data.x[r * F + f];
    for (std::size_t c = 0; c < C; ++c) ybar[c] += data.y[r * C + c];
  }
  for (double& v : xbar) v /= static_cast<double>(n);
  for (double& v : ybar) v /= static_cast<double>(n);

  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(C));
  if (F > 0) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(F));
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(C));
    std::vector<double> xc(F);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t f = 0; f < F; ++f) xc[f] = data.x[r * F + f] - xbar[f];
      for (std::size_t a = 0; a < F; ++a) {
        for (std::size_t b = 0; b <= a; ++b) A(a, b) += xc[a] * xc[b];
        for (std::size_t c = 0; c < C; ++c) B(a, c) += xc[a] * (data.y[r * C + c] - ybar[c]);
      }
    }
    for (std::size_t a = 0; a < F; ++a) {
      A(a, a) += ridge;
      for (std::size_t b = 0; b < a; ++b) A(b, a) = A(a, b);
    }
    W = A.ldlt().solve(B);
  }
  gp.weights.assign(C * (F + 1), 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double bias = ybar[c];
    for (std::size_t f = 0; f < F; ++f) {
      gp.weights[c * (F + 1) + f] = W(f, c);
      bias -= W(f, c) * xbar[f];
    }
    gp.weights[c * (F + 1) + F] = bias;
  }

  std::vector<double> activity(n), resid(n * C);
  for (std::size_t r = 0; r < n; ++r) {
    std::span<const double> ctx(data.x.data() + r * F, F);
    activity[r] = context_activity(ctx);
    for (std::size_t c = 0; c < C; ++c) {
      const double* w = gp.weights.data() + c * (F + 1);
      double acc = 0.0;
      for (std::size_t f = 0; f < F; ++f) acc += w[f] * ctx[f];
      resid[r * C + c] = data.y[r * C + c] - (acc + w[F]);
    }
  }
  detail::fit_sigma_head(gp, activity, resid, sigma_min);
  return gp;
}

}  // namespace eflic
