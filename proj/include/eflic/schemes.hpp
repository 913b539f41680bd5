#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eflic/codebook.hpp"
#include "eflic/common.hpp"
#include "eflic/hyper.hpp"
#include "eflic/latent.hpp"
#include "eflic/predictor.hpp"
#include "eflic/rans.hpp"
#include "eflic/training.hpp"

namespace eflic {

enum class Scheme { rd, iq, cm };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::rd:
      return "rd";
    case Scheme::iq:
      return "iq";
    case Scheme::cm:
      return "cm";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "rd") return Scheme::rd;
  if (s == "iq") return Scheme::iq;
  if (s == "cm") return Scheme::cm;
  throw InvalidArgument("unknown scheme '" + s + "', expected rd, iq or cm");
}

inline constexpr unsigned kDefaultCmPrecision = 14;
inline constexpr std::int32_t kCmRadius = 255;
// CM scale tables are built on a log2 grid of sigma/delta with this many steps per octave.
inline constexpr int kScaleStepsPerOctave = 16;

struct SchemeConfig {
  Scheme scheme = Scheme::rd;
  std::size_t m = 1;
  double delta = 1.0;
  unsigned precision = kDefaultCmPrecision;
  bool hyper = false;

  void validate(std::size_t max_stages) const {
    if (scheme == Scheme::cm) {
      detail::require(delta > 0.0 && std::isfinite(delta), "CM needs a positive step delta");
      detail::require(precision >= kMinPrecision && precision <= kMaxPrecision, "rANS precision must lie in [8, 16]");
    }
    if (scheme != Scheme::cm || hyper) {
      if (m < 1 || m > max_stages) {
        throw InvalidArgument("stage count m=" + std::to_string(m) + " outside [1, " + std::to_string(max_stages) +
                              "]");
      }
    }
  }
};

/// Wall-clock time per coding phase, in milliseconds.
struct PhaseTimings {
  double quantize_ms = 0.0;
  double autoregressive_ms = 0.0;
  double pack_ms = 0.0;
  double entropy_code_ms = 0.0;
  double total_ms = 0.0;

  PhaseTimings& operator+=(const PhaseTimings& o) {
    quantize_ms += o.quantize_ms;
    autoregressive_ms += o.autoregressive_ms;
    pack_ms += o.pack_ms;
    entropy_code_ms += o.entropy_code_ms;
    total_ms += o.total_ms;
    return *this;
  }
};

class ScopedTimer {
 public:
  explicit ScopedTimer(double* sink) : sink_(sink), start_(std::chrono::steady_clock::now()) {}
  ~ScopedTimer() {
    if (sink_) *sink_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  double* sink_;
  std::chrono::steady_clock::time_point start_;
};

struct CodedLatent {
  Scheme scheme = Scheme::rd;
  Shape shape;
  std::size_t m = 0;
  // RD / IQ
  std::array<IndexStack, kGroupCount> groups;
  std::optional<IndexStack> hyper;
  // CM
  double delta = 0.0;
  unsigned precision = 0;
  std::array<RansStream, kGroupCount> streams;
  std::size_t clamped = 0;

  LatentGrid reconstruction;
  double rate_bits = 0.0;
};

namespace detail {

inline double* phase(PhaseTimings* t, double PhaseTimings::*field) { return t ? &(t->*field) : nullptr; }

inline void check_geometry(const LatentGrid& y) {
  if (y.height() % 2 != 0 || y.width() % 2 != 0) {
    throw InvalidArgument("latent " + std::to_string(y.height()) + "x" + std::to_string(y.width()) +
                          " must have even dimensions");
  }
}

inline std::size_t hyper_extent(std::size_t latent_extent) { return (latent_extent + kHyperBlock - 1) / kHyperBlock; }

// Block means over the latent replicate-padded to a multiple of 4, so a
// partial block at the border still yields one hyper position.
inline HyperContext encode_hyper(const LatentGrid& y, const ResidualVQ* q, std::size_t m) {
  return extract_hyper_context(pad_replicate(y, kHyperBlock), q, m);
}

inline void check_predictor(const ContextPredictor& p, std::size_t channels) {
  p.validate();
  if (p.channels() != channels) {
    throw InvalidArgument("predictor has " + std::to_string(p.channels()) + " channels, latent has " +
                          std::to_string(channels));
  }
}

inline void check_quantizers(const QuantizerSet& q, std::size_t channels) {
  q.validate();
  if (q.dim() != channels) {
    throw InvalidArgument("quantizer dimension " + std::to_string(q.dim()) + " != latent channels " +
                          std::to_string(channels));
  }
}

// mu and sigma (positions x channels) for one group given what is decoded so far.
inline void predict_group(const ContextPredictor& pred, std::span<const LatentGrid> decoded, const LatentGrid* phi,
                          std::size_t g, std::size_t gh, std::size_t gw, VectorSet& mu, VectorSet& sigma) {
  const GroupPredictor& gp = pred.groups[g];
  mu = VectorSet(gp.channels, gh * gw);
  sigma = VectorSet(gp.channels, gh * gw);
  std::vector<double> ctx(gp.inputs);
  for (std::size_t i = 0; i < gh; ++i)
    for (std::size_t j = 0; j < gw; ++j) {
      gather_context(decoded, phi, g, i, j, ctx);
      gp.predict(ctx, mu[i * gw + j], sigma[i * gw + j], pred.sigma_min);
    }
}

inline VectorSet standardize(const VectorSet& y, const VectorSet& mu, const VectorSet& sigma) {
  VectorSet out(y.dim, y.count());
  for (std::size_t k = 0; k < y.values.size(); ++k) out.values[k] = (y.values[k] - mu.values[k]) / sigma.values[k];
  return out;
}

inline VectorSet destandardize(const VectorSet& z, const VectorSet& mu, const VectorSet& sigma) {
  VectorSet out(z.dim, z.count());
  for (std::size_t k = 0; k < z.values.size(); ++k) out.values[k] = sigma.values[k] * z.values[k] + mu.values[k];
  return out;
}

inline double hyper_bits(const std::optional<ResidualVQ>& hyper, const std::optional<IndexStack>& stack) {
  if (!hyper || !stack) return 0.0;
  return fixed_length_bits(*hyper, stack->positions(), stack->m());
}

}  // namespace detail

// Sequential RD coding: each group is standardized by the prediction from the
// already decoded groups and phi, quantized, then mapped back.
inline CodedLatent rd_encode(const LatentGrid& y, const ContextPredictor& pred, const QuantizerSet& q, std::size_t m,
                             PhaseTimings* timings = nullptr) {
  ScopedTimer total(detail::phase(timings, &PhaseTimings::total_ms));
  detail::check_quantizers(q, y.channels());
  detail::check_predictor(pred, y.channels());
  if (pred.hyper != q.hyper.has_value()) throw InvalidArgument("predictor and quantizers disagree on the hyperprior");
  check_stage_count(q.groups[0], m);
  detail::check_geometry(y);

  CodedLatent out;
  out.scheme = Scheme::rd;
  out.shape = {y.channels(), y.height(), y.width()};
  out.m = m;
  const GroupedLatent grouped = partition_quadtree(y);
  const std::size_t gh = y.height() / 2, gw = y.width() / 2;

  std::optional<HyperContext> hc;
  if (pred.hyper) {
    ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
    hc = detail::encode_hyper(y, &*q.hyper, m);
    out.hyper = hc->indices;
  }
  const LatentGrid* phi = hc ? &hc->phi : nullptr;

  std::array<LatentGrid, kGroupCount> decoded;
  VectorSet mu, sigma;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    {
      ScopedTimer t(detail::phase(timings, &PhaseTimings::autoregressive_ms));
      detail::predict_group(pred, std::span<const LatentGrid>(decoded.data(), g), phi, g, gh, gw, mu, sigma);
    }
    ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
    RvqResult r = rvq_quantize(q.groups[g], detail::standardize(to_vectors(grouped.groups[g]), mu, sigma), m);
    decoded[g] = from_vectors(detail::destandardize(r.reconstruction, mu, sigma), gh, gw);
    out.groups[g] = std::move(r.indices);
  }
  out.reconstruction = merge_groups({decoded, {y.channels(), y.height(), y.width()}});
  for (std::size_t g = 0; g < kGroupCount; ++g) out.rate_bits += fixed_length_bits(q.groups[g], gh * gw, m);
  out.rate_bits += detail::hyper_bits(q.hyper, out.hyper);
  return out;
}

namespace detail {

inline void check_stacks(const CodedLatent& coded, const QuantizerSet& q, bool hyper) {
  const std::size_t n = (coded.shape.height / 2) * (coded.shape.width / 2);
  check_stage_count(q.groups[0], coded.m);
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const IndexStack& s = coded.groups[g];
    if (s.m() != coded.m) {
      throw InvalidArgument("group " + std::to_string(g + 1) + " carries " + std::to_string(s.m()) +
                            " stages, stream declares m=" + std::to_string(coded.m));
    }
    for (const auto& stage : s.stages) {
      if (stage.size() != n) throw InvalidArgument("group " + std::to_string(g + 1) + " index count mismatch");
    }
  }
  if (hyper) {
    if (!coded.hyper) throw InvalidArgument("stream has no hyperprior indices but the model expects them");
    if (coded.hyper->m() != coded.m) throw InvalidArgument("hyperprior stage count differs from m");
  }
}

}  // namespace detail

inline LatentGrid rd_decode(const CodedLatent& coded, const ContextPredictor& pred, const QuantizerSet& q,
                            PhaseTimings* timings = nullptr) {
  ScopedTimer total(detail::phase(timings, &PhaseTimings::total_ms));
  detail::require(coded.scheme == Scheme::rd, "rd_decode given a " + to_string(coded.scheme) + " stream");
  const Shape& s = coded.shape;
  detail::check_quantizers(q, s.channels);
  detail::check_predictor(pred, s.channels);
  if (pred.hyper != q.hyper.has_value()) throw InvalidArgument("predictor and quantizers disagree on the hyperprior");
  detail::check_stacks(coded, q, pred.hyper);
  const std::size_t gh = s.height / 2, gw = s.width / 2;

  std::optional<HyperContext> hc;
  if (pred.hyper) {
    ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
    hc = decode_hyper_context(*q.hyper, *coded.hyper, detail::hyper_extent(s.height), detail::hyper_extent(s.width));
  }
  const LatentGrid* phi = hc ? &hc->phi : nullptr;

  std::array<LatentGrid, kGroupCount> decoded;
  VectorSet mu, sigma;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    {
      ScopedTimer t(detail::phase(timings, &PhaseTimings::autoregressive_ms));
      detail::predict_group(pred, std::span<const LatentGrid>(decoded.data(), g), phi, g, gh, gw, mu, sigma);
    }
    ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
    decoded[g] = from_vectors(detail::destandardize(rvq_dequantize(q.groups[g], coded.groups[g]), mu, sigma), gh, gw);
  }
  return merge_groups({decoded, {s.channels, s.height, s.width}});
}

// Every group quantized on its own; the hyperprior is not used.
inline CodedLatent iq_encode(const LatentGrid& y, const QuantizerSet& q, std::size_t m,
                             PhaseTimings* timings = nullptr) {
  ScopedTimer total(detail::phase(timings, &PhaseTimings::total_ms));
  detail::check_quantizers(q, y.channels());
  check_stage_count(q.groups[0], m);
  detail::check_geometry(y);
  CodedLatent out;
  out.scheme = Scheme::iq;
  out.shape = {y.channels(), y.height(), y.width()};
  out.m = m;
  const GroupedLatent grouped = partition_quadtree(y);
  const std::size_t gh = y.height() / 2, gw = y.width() / 2;
  std::array<LatentGrid, kGroupCount> decoded;
  {
    ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      RvqResult r = rvq_quantize(q.groups[g], to_vectors(grouped.groups[g]), m);
      decoded[g] = from_vectors(r.reconstruction, gh, gw);
      out.groups[g] = std::move(r.indices);
      out.rate_bits += fixed_length_bits(q.groups[g], gh * gw, m);
    }
  }
  out.reconstruction = merge_groups({decoded, out.shape});
  return out;
}

inline LatentGrid iq_decode(const CodedLatent& coded, const QuantizerSet& q, PhaseTimings* timings = nullptr) {
  ScopedTimer total(detail::phase(timings, &PhaseTimings::total_ms));
  detail::require(coded.scheme == Scheme::iq, "iq_decode given a " + to_string(coded.scheme) + " stream");
  detail::check_quantizers(q, coded.shape.channels);
  detail::check_stacks(coded, q, false);
  const std::size_t gh = coded.shape.height / 2, gw = coded.shape.width / 2;
  std::array<LatentGrid, kGroupCount> decoded;
  ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
  for (std::size_t g = 0; g < kGroupCount; ++g) decoded[g] = from_vectors(rvq_dequantize(q.groups[g], coded.groups[g]), gh, gw);
  return merge_groups({decoded, coded.shape});
}

/// Discretized Gaussian tables keyed by sigma/delta on a log2 grid.
class ScaleTableCache {
 public:
  ScaleTableCache(double delta, unsigned precision, double sigma_min)
      : delta_(delta), precision_(precision), sigma_min_(sigma_min) {}

  int level(double sigma) const {
    int k = static_cast<int>(std::lround(kScaleStepsPerOctave * std::log2(sigma / delta_)));
    k = std::clamp(k, -40 * kScaleStepsPerOctave, 40 * kScaleStepsPerOctave);
    while (scale_of(k) < sigma_min_) ++k;
    return k;
  }

  double scale_of(int level) const { return delta_ * std::exp2(static_cast<double>(level) / kScaleStepsPerOctave); }

  const FrequencyTable& table(double sigma) {
    const int k = level(sigma);
    auto it = cache_.find(k);
    if (it == cache_.end()) {
      it = cache_.emplace(k, discretized_gaussian_table(0.0, scale_of(k), delta_, kCmRadius, precision_, sigma_min_)).first;
    }
    return it->second;
  }

  std::size_t size() const { return cache_.size(); }

 private:
  double delta_;
  unsigned precision_;
  double sigma_min_;
  std::map<int, FrequencyTable> cache_;
};

namespace detail {

inline std::int32_t cm_symbol(double y, double mu, double delta, std::size_t& clamped) {
  const double k = std::round((y - mu) / delta);
  if (k < -kCmRadius || k > kCmRadius) {
    ++clamped;
    return k < 0 ? -kCmRadius : kCmRadius;
  }
  return static_cast<std::int32_t>(k);
}

inline double cm_value(std::int32_t k, double mu, double delta) { return mu + delta * static_cast<double>(k); }

}  // namespace detail

// Context-modeled scalar quantization: k = round((y - mu) / delta) per element,
// coded with rANS under the discretized Gaussian of scale sigma / delta.
inline CodedLatent cm_encode(const LatentGrid& y, const ContextPredictor& pred, const SchemeConfig& cfg,
                             const std::optional<ResidualVQ>& hyper_q = std::nullopt,
                             PhaseTimings* timings = nullptr) {
  ScopedTimer total(detail::phase(timings, &PhaseTimings::total_ms));
  detail::check_predictor(pred, y.channels());
  if (pred.hyper && !hyper_q) throw InvalidArgument("predictor expects a hyperprior quantizer");
  cfg.validate(hyper_q ? hyper_q->max_stages() : 1);
  detail::check_geometry(y);
  CodedLatent out;
  out.scheme = Scheme::cm;
  out.shape = {y.channels(), y.height(), y.width()};
  out.m = cfg.m;
  out.delta = cfg.delta;
  out.precision = cfg.precision;
  const GroupedLatent grouped = partition_quadtree(y);
  const std::size_t gh = y.height() / 2, gw = y.width() / 2, C = y.channels();

  std::optional<HyperContext> hc;
  if (pred.hyper) {
    ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
    hc = detail::encode_hyper(y, &*hyper_q, cfg.m);
    out.hyper = hc->indices;
  }
  const LatentGrid* phi = hc ? &hc->phi : nullptr;

  ScaleTableCache cache(cfg.delta, cfg.precision, pred.sigma_min);
  std::array<LatentGrid, kGroupCount> decoded;
  VectorSet mu, sigma;
  std::vector<std::uint32_t> symbols(gh * gw * C);
  std::vector<const FrequencyTable*> tables(gh * gw * C);
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    {
      ScopedTimer t(detail::phase(timings, &PhaseTimings::autoregressive_ms));
      detail::predict_group(pred, std::span<const LatentGrid>(decoded.data(), g), phi, g, gh, gw, mu, sigma);
    }
    const VectorSet yv = to_vectors(grouped.groups[g]);
    VectorSet rec(C, gh * gw);
    {
      ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
      for (std::size_t k = 0; k < yv.values.size(); ++k) {
        const std::int32_t s = detail::cm_symbol(yv.values[k], mu.values[k], cfg.delta, out.clamped);
        symbols[k] = static_cast<std::uint32_t>(s + kCmRadius);
        rec.values[k] = detail::cm_value(s, mu.values[k], cfg.delta);
      }
    }
    {
      ScopedTimer t(detail::phase(timings, &PhaseTimings::entropy_code_ms));
      for (std::size_t k = 0; k < symbols.size(); ++k) tables[k] = &cache.table(sigma.values[k]);
      out.streams[g] = rans_encode(symbols, std::span<const FrequencyTable* const>(tables));
    }
    decoded[g] = from_vectors(rec, gh, gw);
    out.rate_bits += out.streams[g].coded_bits();
  }
  out.reconstruction = merge_groups({decoded, out.shape});
  out.rate_bits += detail::hyper_bits(hyper_q, out.hyper);
  return out;
}

inline LatentGrid cm_decode(const CodedLatent& coded, const ContextPredictor& pred,
                            const std::optional<ResidualVQ>& hyper_q = std::nullopt,
                            PhaseTimings* timings = nullptr) {
  ScopedTimer total(detail::phase(timings, &PhaseTimings::total_ms));
  detail::require(coded.scheme == Scheme::cm, "cm_decode given a " + to_string(coded.scheme) + " stream");
  const Shape& s = coded.shape;
  detail::check_predictor(pred, s.channels);
  SchemeConfig cfg{Scheme::cm, coded.m, coded.delta, coded.precision, pred.hyper};
  cfg.validate(hyper_q ? hyper_q->max_stages() : 1);
  const std::size_t gh = s.height / 2, gw = s.width / 2, C = s.channels;

  std::optional<HyperContext> hc;
  if (pred.hyper) {
    if (!hyper_q || !coded.hyper) throw InvalidArgument("hyperprior quantizer or indices missing for CM decode");
    ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
    hc = decode_hyper_context(*hyper_q, *coded.hyper, detail::hyper_extent(s.height), detail::hyper_extent(s.width));
  }
  const LatentGrid* phi = hc ? &hc->phi : nullptr;

  ScaleTableCache cache(coded.delta, coded.precision, pred.sigma_min);
  std::array<LatentGrid, kGroupCount> decoded;
  VectorSet mu, sigma;
  std::vector<const FrequencyTable*> tables(gh * gw * C);
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    {
      ScopedTimer t(detail::phase(timings, &PhaseTimings::autoregressive_ms));
      detail::predict_group(pred, std::span<const LatentGrid>(decoded.data(), g), phi, g, gh, gw, mu, sigma);
    }
    std::vector<std::uint32_t> symbols;
    {
      ScopedTimer t(detail::phase(timings, &PhaseTimings::entropy_code_ms));
      for (std::size_t k = 0; k < tables.size(); ++k) tables[k] = &cache.table(sigma.values[k]);
      symbols = rans_decode(coded.streams[g], std::span<const FrequencyTable* const>(tables));
    }
    ScopedTimer t(detail::phase(timings, &PhaseTimings::quantize_ms));
    VectorSet rec(C, gh * gw);
    for (std::size_t k = 0; k < symbols.size(); ++k) {
      rec.values[k] = detail::cm_value(static_cast<std::int32_t>(symbols[k]) - kCmRadius, mu.values[k], coded.delta);
    }
    decoded[g] = from_vectors(rec, gh, gw);
  }
  return merge_groups({decoded, s});
}

// ---------------------------------------------------------------------------
// Training

struct RdTraining {
  std::array<std::size_t, kGroupCount> group_sizes = {256, 128, 64, 32};
  std::size_t stages = 3;
  std::size_t hyper_size = 0;  // 0 disables the hyperprior
  CodebookTraining codebook;
  double ridge = kDefaultRidge;
  double sigma_min = kSigmaFloor;
};

struct RdModel {
  QuantizerSet quantizers;
  ContextPredictor predictor;
};

namespace detail {

inline void check_training_set(std::span<const LatentGrid> images) {
  detail::require(!images.empty(), "training needs at least one latent");
  for (const auto& im : images) {
    detail::require(im.same_shape(images.front()), "training latents must share one shape");
  }
  check_geometry(images.front());
}

inline ResidualVQ train_hyper(std::span<const LatentGrid> images, std::size_t size, std::size_t stages,
                              const CodebookTraining& opts) {
  VectorSet means;
  for (const auto& im : images) means.append(to_vectors(block_means(pad_replicate(im, kHyperBlock))));
  CodebookTraining o = opts;
  o.seed = CounterRng::derive(opts.seed, 0x4859);
  const std::vector<std::size_t> sizes(stages, size);
  return train_rvq(means, sizes, o);
}

inline RegressionData collect_regression(std::span<const std::array<LatentGrid, kGroupCount>> decoded,
                                         std::span<const LatentGrid> phis, std::span<const GroupedLatent> grouped,
                                         std::size_t g, bool hyper) {
  const LatentGrid& g0 = grouped.front().groups[0];
  const std::size_t C = g0.channels(), gh = g0.height(), gw = g0.width();
  RegressionData data;
  data.inputs = context_size(g, C, hyper);
  data.channels = C;
  std::vector<double> ctx(data.inputs), target(C);
  for (std::size_t n = 0; n < decoded.size(); ++n) {
    const GroupedLatent& src = grouped[n % grouped.size()];
    const LatentGrid* phi = hyper ? &phis[n] : nullptr;
    for (std::size_t i = 0; i < gh; ++i)
      for (std::size_t j = 0; j < gw; ++j) {
        gather_context(std::span<const LatentGrid>(decoded[n].data(), g), phi, g, i, j, ctx);
        for (std::size_t c = 0; c < C; ++c) target[c] = src.groups[g].at(c, i, j);
        data.add(ctx, target);
      }
  }
  return data;
}

}  // namespace detail

// Closed-loop training. Group g's predictor is fitted on contexts decoded by
// the already trained groups, and its quantizer on the standardized residuals
// it produces. Contexts from every operating point m = 1..stages are pooled,
// since one model serves all of them.
inline RdModel train_rd(std::span<const LatentGrid> images, const RdTraining& opts) {
  const bool hyper = opts.hyper_size > 0;
  detail::check_training_set(images);
  detail::require(opts.stages >= 1, "training needs at least one stage");
  const std::size_t N = images.size(), M = opts.stages;
  const std::size_t gh = images.front().height() / 2, gw = images.front().width() / 2;

  RdModel model;
  model.predictor.hyper = hyper;
  model.predictor.sigma_min = opts.sigma_min;
  std::vector<GroupedLatent> grouped;
  for (const auto& im : images) grouped.push_back(partition_quadtree(im));

  // Slot m * N + n holds image n decoded at m + 1 stages.
  std::vector<std::array<LatentGrid, kGroupCount>> decoded(M * N);
  std::vector<LatentGrid> phis;
  if (hyper) {
    model.quantizers.hyper = detail::train_hyper(images, opts.hyper_size, M, opts.codebook);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t n = 0; n < N; ++n) phis.push_back(detail::encode_hyper(images[n], &*model.quantizers.hyper, m + 1).phi);
  }

  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const RegressionData data = detail::collect_regression(decoded, phis, grouped, g, hyper);
    model.predictor.groups[g] = fit_group_predictor(data, opts.ridge, opts.sigma_min);

    std::vector<VectorSet> mu(M * N), sigma(M * N), standardized(M * N);
    VectorSet pooled;
    for (std::size_t s = 0; s < M * N; ++s) {
      detail::predict_group(model.predictor, std::span<const LatentGrid>(decoded[s].data(), g),
                            hyper ? &phis[s] : nullptr, g, gh, gw, mu[s], sigma[s]);
      standardized[s] = detail::standardize(to_vectors(grouped[s % N].groups[g]), mu[s], sigma[s]);
      pooled.append(standardized[s]);
    }
    CodebookTraining cb = opts.codebook;
    cb.seed = CounterRng::derive(opts.codebook.seed, g);
    const std::vector<std::size_t> sizes(M, opts.group_sizes[g]);
    model.quantizers.groups[g] = train_rvq(pooled, sizes, cb);

    for (std::size_t s = 0; s < M * N; ++s) {
      const RvqResult r = rvq_quantize(model.quantizers.groups[g], standardized[s], s / N + 1);
      decoded[s][g] = from_vectors(detail::destandardize(r.reconstruction, mu[s], sigma[s]), gh, gw);
    }
  }
  return model;
}

inline QuantizerSet train_iq(std::span<const LatentGrid> images, const RdTraining& opts) {
  detail::check_training_set(images);
  QuantizerSet q;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    VectorSet pooled;
    for (const auto& im : images) pooled.append(to_vectors(partition_quadtree(im).groups[g]));
    CodebookTraining cb = opts.codebook;
    cb.seed = CounterRng::derive(opts.codebook.seed, g);
    const std::vector<std::size_t> sizes(opts.stages, opts.group_sizes[g]);
    q.groups[g] = train_rvq(pooled, sizes, cb);
  }
  return q;
}

struct CmTraining {
  double delta = 1.0;
  unsigned precision = kDefaultCmPrecision;
  std::size_t hyper_size = 0;
  std::size_t hyper_stages = 1;
  CodebookTraining codebook;
  double ridge = kDefaultRidge;
  double sigma_min = kSigmaFloor;
};

struct CmModel {
  ContextPredictor predictor;
  std::optional<ResidualVQ> hyper;
  SchemeConfig config;
};

// Closed loop at a single step size: contexts are the CM reconstructions.
inline CmModel train_cm(std::span<const LatentGrid> images, const CmTraining& opts) {
  const bool hyper = opts.hyper_size > 0;
  detail::check_training_set(images);
  CmModel model;
  model.config = {Scheme::cm, hyper ? opts.hyper_stages : 1, opts.delta, opts.precision, hyper};
  model.config.validate(hyper ? opts.hyper_stages : 1);
  model.predictor.hyper = hyper;
  model.predictor.sigma_min = opts.sigma_min;
  const std::size_t N = images.size();
  const std::size_t gh = images.front().height() / 2, gw = images.front().width() / 2;

  std::vector<GroupedLatent> grouped;
  for (const auto& im : images) grouped.push_back(partition_quadtree(im));
  std::vector<std::array<LatentGrid, kGroupCount>> decoded(N);
  std::vector<LatentGrid> phis;
  if (hyper) {
    model.hyper = detail::train_hyper(images, opts.hyper_size, opts.hyper_stages, opts.codebook);
    for (const auto& im : images) phis.push_back(detail::encode_hyper(im, &*model.hyper, opts.hyper_stages).phi);
  }
  std::size_t clamped = 0;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const RegressionData data = detail::collect_regression(decoded, phis, grouped, g, hyper);
    model.predictor.groups[g] = fit_group_predictor(data, opts.ridge, opts.sigma_min);
    VectorSet mu, sigma;
    for (std::size_t n = 0; n < N; ++n) {
      detail::predict_group(model.predictor, std::span<const LatentGrid>(decoded[n].data(), g),
                            hyper ? &phis[n] : nullptr, g, gh, gw, mu, sigma);
      const VectorSet yv = to_vectors(grouped[n].groups[g]);
      VectorSet rec(yv.dim, yv.count());
      for (std::size_t k = 0; k < yv.values.size(); ++k) {
        rec.values[k] = detail::cm_value(detail::cm_symbol(yv.values[k], mu.values[k], opts.delta, clamped),
                                         mu.values[k], opts.delta);
      }
      decoded[n][g] = from_vectors(rec, gh, gw);
    }
  }
  return model;
}

}  // namespace eflic
