#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "eflic/analysis.hpp"
#include "eflic/bitstream.hpp"
#include "eflic/latent.hpp"
#include "eflic/schemes.hpp"
#include "eflic/training.hpp"

namespace eflic::experiments {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

struct SourceSpec {
  Shape shape{1, 128, 128};
  double rho = 0.9;
  double variance = 1.0;
};

// Disjoint splits: image k of split s uses seed derive(derive(seed, s), k).
enum class Split : std::uint64_t { train = 1, holdout = 2, entropy = 3 };

inline std::vector<LatentGrid> draw_images(const SourceSpec& src, std::size_t count, std::uint64_t seed, Split split) {
  std::vector<LatentGrid> out;
  out.reserve(count);
  const std::uint64_t base = CounterRng::derive(seed, static_cast<std::uint64_t>(split));
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(gauss_markov_sample({src.shape, src.rho, src.variance, CounterRng::derive(base, k)}));
  }
  return out;
}

inline double standard_normal_log_density(std::span<const double> x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return -0.5 * ss - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

inline VectorSet gaussian_vectors(std::size_t dim, std::size_t count, std::uint64_t seed) {
  CounterRng rng(seed);
  VectorSet v(dim, count);
  for (double& x : v.values) x = rng.normal();
  return v;
}

// ---------------------------------------------------------------------------
// Entropy gap of a Lloyd-trained codebook on i.i.d. Gaussian vectors.

struct CodebookGapConfig {
  std::size_t dim = 8;
  std::size_t K = 256;
  std::size_t samples = 100000;
  std::size_t iterations = 50;
  std::uint64_t seed = 1;
  double max_gap = 0.05;
};

struct CodebookGapResult {
  Codebook codebook;
  double delta_h_init = 0.0;
  double delta_h_final = 0.0;
  double mse_init = 0.0;
  double mse_final = 0.0;
  std::size_t passes = 0;
  double seconds = 0.0;
  bool pass = false;
};

inline CodebookGapResult run_codebook_gap(const CodebookGapConfig& cfg) {
  Stopwatch clock;
  const VectorSet x = gaussian_vectors(cfg.dim, cfg.samples, cfg.seed);
  CodebookTraining opts;
  opts.iterations = cfg.iterations;
  opts.seed = cfg.seed;
  opts.init = CodebookInit::random_samples;
  // Same generator state train_codebook starts from, so this is its initial codebook.
  CounterRng rng(opts.seed);
  const Codebook init(eflic::detail::init_random_samples(x, cfg.K, false, rng));
  TrainedCodebook trained = train_codebook(x, cfg.K, opts);

  CodebookGapResult r;
  r.delta_h_init = entropy_gap(IndexHistogram(cfg.K, nn_quantize(init, x)));
  r.delta_h_final = entropy_gap(IndexHistogram(cfg.K, nn_quantize(trained.codebook, x)));
  r.mse_init = trained.mse_history.front() / static_cast<double>(cfg.dim);
  r.mse_final = trained.mse / static_cast<double>(cfg.dim);
  r.passes = trained.mse_history.size() - 1;
  r.codebook = std::move(trained.codebook);
  r.seconds = clock.seconds();
  r.pass = r.delta_h_final <= cfg.max_gap && r.delta_h_final <= r.delta_h_init;
  return r;
}

// ---------------------------------------------------------------------------
// High-rate density law against the empirical index law of the same codebook.

struct DensityLawConfig {
  std::size_t samples = 1000000;
  std::uint64_t seed = 1;
  double max_tv = 0.1;
};

struct DensityLawResult {
  double total_variation = 0.0;
  double predicted_delta_h = 0.0;
  double empirical_delta_h = 0.0;
  double seconds = 0.0;
  bool pass = false;
};

inline DensityLawResult run_density_law(const Codebook& cb, const DensityLawConfig& cfg) {
  Stopwatch clock;
  const VectorSet x = gaussian_vectors(cb.dim, cfg.samples, CounterRng::derive(cfg.seed, 0xE6));
  const IndexHistogram hist(cb.size(), nn_quantize(cb, x));
  std::vector<double> empirical(cb.size());
  for (std::size_t j = 0; j < cb.size(); ++j) {
    empirical[j] = static_cast<double>(hist.counts[j]) / static_cast<double>(cfg.samples);
  }
  const PredictedPmf pred = high_rate_predicted_pmf(cb, standard_normal_log_density, cb.dim);
  DensityLawResult r;
  r.total_variation = total_variation(pred.pmf, empirical);
  r.predicted_delta_h = pred.delta_h;
  r.empirical_delta_h = entropy_gap(hist);
  r.seconds = clock.seconds();
  r.pass = r.total_variation <= cfg.max_tv;
  return r;
}

// ---------------------------------------------------------------------------
// Trained RD / IQ pipeline on a Gauss-Markov source.

struct PipelineConfig {
  SourceSpec source;
  std::size_t train_images = 24;
  std::size_t holdout_images = 16;
  std::array<std::size_t, kGroupCount> group_sizes = {256, 128, 64, 32};
  std::size_t stages = 3;
  std::size_t hyper_size = 0;
  std::size_t iterations = 50;
  std::uint64_t seed = 1;
};

struct TrainedPipeline {
  PipelineConfig config;
  std::vector<LatentGrid> train;
  std::vector<LatentGrid> holdout;
  RdModel rd;
  QuantizerSet iq;
  double seconds = 0.0;
};

inline RdTraining rd_options(const PipelineConfig& cfg) {
  RdTraining opts;
  opts.group_sizes = cfg.group_sizes;
  opts.stages = cfg.stages;
  opts.hyper_size = cfg.hyper_size;
  opts.codebook.iterations = cfg.iterations;
  opts.codebook.seed = cfg.seed;
  return opts;
}

inline TrainedPipeline train_pipeline(const PipelineConfig& cfg) {
  Stopwatch clock;
  TrainedPipeline p;
  p.config = cfg;
  p.train = draw_images(cfg.source, cfg.train_images, cfg.seed, Split::train);
  p.holdout = draw_images(cfg.source, cfg.holdout_images, cfg.seed, Split::holdout);
  const RdTraining opts = rd_options(cfg);
  p.rd = train_rd(p.train, opts);
  RdTraining iq_opts = opts;
  iq_opts.hyper_size = 0;
  p.iq = train_iq(p.train, iq_opts);
  p.seconds = clock.seconds();
  return p;
}

/// Measured operating point averaged over a set of images.
struct Evaluation {
  double rate_bits = 0.0;      // mean coded bits per image
  double rate_per_element = 0.0;
  double mse = 0.0;
  PhaseTimings encode;
  PhaseTimings decode;
};

namespace internal {

inline void accumulate_eval(Evaluation& e, const CodedLatent& c, const LatentGrid& y) {
  e.rate_bits += c.rate_bits;
  e.mse += mean_squared_error(c.reconstruction, y);
}

inline void finish_eval(Evaluation& e, std::span<const LatentGrid> images) {
  const double n = static_cast<double>(images.size());
  e.rate_bits /= n;
  e.mse /= n;
  e.rate_per_element = e.rate_bits / static_cast<double>(images.front().size());
}

}  // namespace internal

inline Evaluation evaluate_rd(const RdModel& model, std::span<const LatentGrid> images, std::size_t m,
                              bool decode = false) {
  Evaluation e;
  for (const auto& y : images) {
    const CodedLatent c = rd_encode(y, model.predictor, model.quantizers, m, &e.encode);
    if (decode) rd_decode(c, model.predictor, model.quantizers, &e.decode);
    internal::accumulate_eval(e, c, y);
  }
  internal::finish_eval(e, images);
  return e;
}

inline Evaluation evaluate_iq(const QuantizerSet& q, std::span<const LatentGrid> images, std::size_t m,
                              bool decode = false) {
  Evaluation e;
  for (const auto& y : images) {
    const CodedLatent c = iq_encode(y, q, m, &e.encode);
    if (decode) iq_decode(c, q, &e.decode);
    internal::accumulate_eval(e, c, y);
  }
  internal::finish_eval(e, images);
  return e;
}

inline Evaluation evaluate_cm(const CmModel& model, std::span<const LatentGrid> images, bool decode = false) {
  Evaluation e;
  for (const auto& y : images) {
    const CodedLatent c = cm_encode(y, model.predictor, model.config, model.hyper, &e.encode);
    if (decode) cm_decode(c, model.predictor, model.hyper, &e.decode);
    internal::accumulate_eval(e, c, y);
  }
  internal::finish_eval(e, images);
  return e;
}

inline CmModel train_cm_for(const TrainedPipeline& p, double delta) {
  CmTraining opts;
  opts.delta = delta;
  opts.codebook.seed = p.config.seed;
  opts.codebook.iterations = p.config.iterations;
  return train_cm(p.train, opts);
}

// ---------------------------------------------------------------------------
// RD never worse than IQ, strictly better somewhere.

struct DecorrelationConfig {
  double tolerance = 1.02;
  double strict = 0.95;
};

struct DecorrelationResult {
  std::vector<double> mse_rd;
  std::vector<double> mse_iq;
  std::vector<double> ratio;
  double seconds = 0.0;
  bool pass = false;
};

inline DecorrelationResult run_decorrelation(const TrainedPipeline& p, const DecorrelationConfig& cfg = {}) {
  Stopwatch clock;
  DecorrelationResult r;
  bool never_worse = true, strictly_better = false;
  for (std::size_t m = 1; m <= p.config.stages; ++m) {
    const double rd = evaluate_rd(p.rd, p.holdout, m).mse;
    const double iq = evaluate_iq(p.iq, p.holdout, m).mse;
    r.mse_rd.push_back(rd);
    r.mse_iq.push_back(iq);
    r.ratio.push_back(rd / iq);
    never_worse = never_worse && rd <= cfg.tolerance * iq;
    strictly_better = strictly_better || rd <= cfg.strict * iq;
  }
  r.seconds = clock.seconds();
  r.pass = never_worse && strictly_better;
  return r;
}

// ---------------------------------------------------------------------------
// Conditional entropy gap of the trained RD indices.

struct EntropyRow {
  std::string quantizer;
  std::size_t stage = 0;  // 1-based
  std::size_t K = 0;
  double utilization = 0.0;
  double delta_h = 0.0;
  double conditional_delta_h = 0.0;
};

struct DeltaHBarConfig {
  std::size_t images = 96;
  double max_gap = 0.05;
};

struct DeltaHBarResult {
  std::vector<ConditionalGapReport> reports;  // operating point m = index + 1
  std::vector<EntropyRow> rows;               // streams at m = max stages
  std::size_t positions_per_stream = 0;
  double worst = 0.0;
  double seconds = 0.0;
  bool pass = false;
};

// At operating point m the streams are (group, stage) for stages 1..m. Groups
// 2-4 are labelled with the co-located stage-1 index of group 1; group 1 has no
// decoded context. Passing needs every operating point under the bound.
inline DeltaHBarResult run_delta_h_bar(const TrainedPipeline& p, const DeltaHBarConfig& cfg = {}) {
  Stopwatch clock;
  const auto images = draw_images(p.config.source, cfg.images, p.config.seed, Split::entropy);
  const QuantizerSet& q = p.rd.quantizers;
  DeltaHBarResult r;
  std::vector<LabeledStream> streams;
  for (std::size_t m = 1; m <= p.config.stages; ++m) {
    streams.clear();
    for (std::size_t g = 0; g < kGroupCount; ++g)
      for (std::size_t t = 0; t < m; ++t) {
        streams.push_back({"Q_" + std::to_string(g + 1), q.groups[g].stages[t].size(), {}, {}});
      }
    for (const auto& y : images) {
      const CodedLatent c = rd_encode(y, p.rd.predictor, q, m);
      const IndexArray& context = c.groups[0].stages[0];
      for (std::size_t g = 0; g < kGroupCount; ++g)
        for (std::size_t t = 0; t < m; ++t) {
          LabeledStream& s = streams[g * m + t];
          const IndexArray& idx = c.groups[g].stages[t];
          s.indices.insert(s.indices.end(), idx.begin(), idx.end());
          if (g > 0) s.labels.insert(s.labels.end(), context.begin(), context.end());
        }
    }
    r.reports.push_back(conditional_entropy_gap(streams));
    r.worst = std::max(r.worst, r.reports.back().delta_h_bar);
  }
  const std::size_t M = p.config.stages;
  const ConditionalGapReport& last = r.reports.back();
  r.positions_per_stream = streams.front().indices.size();
  for (std::size_t k = 0; k < streams.size(); ++k) {
    const IndexHistogram hist(streams[k].K, streams[k].indices);
    const auto used = std::count_if(hist.counts.begin(), hist.counts.end(), [](auto c) { return c > 0; });
    r.rows.push_back({streams[k].name, k % M + 1, streams[k].K,
                      static_cast<double>(used) / static_cast<double>(streams[k].K), last.unconditional_gap[k],
                      last.conditional_gap[k]});
  }
  r.seconds = clock.seconds();
  r.pass = r.worst <= cfg.max_gap;
  return r;
}

// ---------------------------------------------------------------------------
// Fixed-length RD against context-modeled scalar coding over a step-size sweep.

struct OperatingPoint {
  std::string scheme;
  std::string label;
  double rate = 0.0;  // bits per latent element
  double mse = 0.0;
  double train_mse = 0.0;
};

struct RateMatchConfig {
  std::vector<double> deltas = {2.0, 1.0, 0.5, 0.25, 0.125};
  double epsilon = 0.10;
  double distortion_slack = 1.05;
  unsigned max_bits = 10;  // per group, in the allocation search
};

struct RateMatchRow {
  double delta = 0.0;
  OperatingPoint cm;
  double rate_budget = 0.0;
  // Lowest-MSE RD point within the rate budget, if any.
  std::optional<OperatingPoint> best_rd;
  bool pass = false;
};

struct RateMatchResult {
  std::vector<RateMatchRow> rows;
  std::vector<OperatingPoint> rd_family;
  std::vector<OperatingPoint> cm_points;
  double seconds = 0.0;
  bool pass = false;
};

inline std::string bits_label(const std::array<unsigned, kGroupCount>& b) {
  std::string s = "K=";
  for (std::size_t g = 0; g < kGroupCount; ++g) s += (g ? "/" : "") + std::to_string(1u << b[g]);
  return s;
}

// RD points at one stage with per-group sizes K_g = 2^b_g (K = 1 sends nothing
// and keeps the prediction). Starting from all ones, each step doubles the group
// codebook that lowers the training MSE most, until the rate reaches rate_cap.
inline std::vector<OperatingPoint> rd_allocation_frontier(const TrainedPipeline& p, double rate_cap, unsigned max_bits) {
  std::vector<OperatingPoint> out;
  std::array<unsigned, kGroupCount> bits{};
  auto fit = [&](const std::array<unsigned, kGroupCount>& b) {
    RdTraining opts = rd_options(p.config);
    opts.stages = 1;
    opts.hyper_size = 0;
    for (std::size_t g = 0; g < kGroupCount; ++g) opts.group_sizes[g] = std::size_t{1} << b[g];
    return train_rd(p.train, opts);
  };
  auto point = [&](const std::array<unsigned, kGroupCount>& b, const RdModel& model, double train_mse) {
    const Evaluation e = evaluate_rd(model, p.holdout, 1);
    return OperatingPoint{"rd", bits_label(b), e.rate_per_element, e.mse, train_mse};
  };
  {
    const RdModel model = fit(bits);
    out.push_back(point(bits, model, evaluate_rd(model, p.train, 1).mse));
  }
  while (out.back().rate < rate_cap) {
    double best = std::numeric_limits<double>::infinity();
    std::optional<RdModel> best_model;
    std::array<unsigned, kGroupCount> best_bits{};
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      if (bits[g] >= max_bits) continue;
      auto cand = bits;
      ++cand[g];
      RdModel model = fit(cand);
      const double mse = evaluate_rd(model, p.train, 1).mse;
      if (mse < best) {
        best = mse;
        best_bits = cand;
        best_model = std::move(model);
      }
    }
    if (!best_model) break;
    bits = best_bits;
    out.push_back(point(bits, *best_model, best));
  }
  return out;
}

inline RateMatchResult run_rate_match(const TrainedPipeline& p, const RateMatchConfig& cfg = {}) {
  Stopwatch clock;
  RateMatchResult r;
  double max_budget = 0.0;
  for (double delta : cfg.deltas) {
    const Evaluation e = evaluate_cm(train_cm_for(p, delta), p.holdout);
    r.cm_points.push_back({"cm", "delta=" + std::to_string(delta), e.rate_per_element, e.mse, 0.0});
    max_budget = std::max(max_budget, e.rate_per_element / (1.0 - cfg.epsilon));
  }
  r.rd_family = rd_allocation_frontier(p, max_budget, cfg.max_bits);
  for (std::size_t m = 1; m <= p.config.stages; ++m) {
    const Evaluation e = evaluate_rd(p.rd, p.holdout, m);
    r.rd_family.push_back({"rd", "ladder m=" + std::to_string(m), e.rate_per_element, e.mse, 0.0});
  }
  r.pass = true;
  for (std::size_t k = 0; k < cfg.deltas.size(); ++k) {
    RateMatchRow row;
    row.delta = cfg.deltas[k];
    row.cm = r.cm_points[k];
    row.rate_budget = row.cm.rate / (1.0 - cfg.epsilon);
    for (const auto& rd : r.rd_family) {
      if (rd.rate > row.rate_budget) continue;
      if (!row.best_rd || rd.mse < row.best_rd->mse) row.best_rd = rd;
    }
    row.pass = row.best_rd && row.best_rd->mse <= cfg.distortion_slack * row.cm.mse;
    r.pass = r.pass && row.pass;
    r.rows.push_back(row);
  }
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------------------
// Decode-side phase timings of RD against CM.

struct LatencyConfig {
  std::vector<double> deltas = {1.0, 0.5, 0.25};
};

struct LatencyResult {
  PhaseTimings rd;
  PhaseTimings cm;
  std::size_t points = 0;
  double seconds = 0.0;
  bool pass = false;
};

// RD uses m = 1..stages; CM uses as many step sizes, so both sides decode the
// same number of operating points over the same images.
inline LatencyResult run_latency(const TrainedPipeline& p, const LatencyConfig& cfg = {}) {
  Stopwatch clock;
  LatencyResult r;
  r.points = std::min(p.config.stages, cfg.deltas.size());
  std::vector<CmModel> cms;
  for (std::size_t k = 0; k < r.points; ++k) cms.push_back(train_cm_for(p, cfg.deltas[k]));
  for (std::size_t k = 0; k < r.points; ++k) {
    for (const auto& y : p.holdout) {
      const CodedLatent rd = rd_encode(y, p.rd.predictor, p.rd.quantizers, k + 1);
      rd_decode(rd, p.rd.predictor, p.rd.quantizers, &r.rd);
      const CodedLatent cm = cm_encode(y, cms[k].predictor, cms[k].config, cms[k].hyper);
      cm_decode(cm, cms[k].predictor, cms[k].hyper, &r.cm);
    }
  }
  r.seconds = clock.seconds();
  r.pass = r.cm.entropy_code_ms > r.rd.entropy_code_ms && r.rd.entropy_code_ms == 0.0 && r.rd.total_ms < r.cm.total_ms;
  return r;
}

// ---------------------------------------------------------------------------
// Operating-point sweep.

struct SweepConfig {
  PipelineConfig pipeline;
  std::vector<std::uint64_t> seeds = {1};
  std::vector<Scheme> schemes = {Scheme::rd, Scheme::iq, Scheme::cm};
  std::vector<double> deltas = {2.0, 1.0, 0.5, 0.25, 0.125};
};

struct SweepPoint {
  Scheme scheme = Scheme::rd;
  double m_or_delta = 0.0;
  std::uint64_t seed = 0;
  double rate_bits = 0.0;  // mean per image
  double bpp = 0.0;        // over the 16x upsampled pixel grid
  double mse = 0.0;
  PhaseTimings encode;
  PhaseTimings decode;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<RDCurve> curves;  // rate in bits per element, mean over seeds
  std::vector<EntropyRow> entropy;  // RD quantizers of the first seed, m = max
};

inline SweepResult rd_sweep(const SweepConfig& cfg) {
  eflic::detail::require(!cfg.seeds.empty(), "sweep needs at least one seed");
  SweepResult out;
  const Shape& s = cfg.pipeline.source.shape;
  const double pixels = static_cast<double>(s.height * kLatentStride) * static_cast<double>(s.width * kLatentStride);
  const double elements = static_cast<double>(s.channels * s.height * s.width);
  auto add = [&](Scheme scheme, double op, std::uint64_t seed, const Evaluation& e) {
    out.points.push_back({scheme, op, seed, e.rate_bits, e.rate_bits / pixels, e.mse, e.encode, e.decode});
  };
  for (std::uint64_t seed : cfg.seeds) {
    PipelineConfig pc = cfg.pipeline;
    pc.seed = seed;
    const TrainedPipeline p = train_pipeline(pc);
    for (Scheme scheme : cfg.schemes) {
      if (scheme == Scheme::cm) {
        for (double delta : cfg.deltas) add(scheme, delta, seed, evaluate_cm(train_cm_for(p, delta), p.holdout, true));
        continue;
      }
      for (std::size_t m = 1; m <= pc.stages; ++m) {
        add(scheme, static_cast<double>(m), seed,
            scheme == Scheme::rd ? evaluate_rd(p.rd, p.holdout, m, true) : evaluate_iq(p.iq, p.holdout, m, true));
      }
    }
    if (out.entropy.empty()) {
      DeltaHBarConfig dc;
      dc.images = pc.holdout_images;
      out.entropy = run_delta_h_bar(p, dc).rows;
    }
  }
  for (Scheme scheme : cfg.schemes) {
    std::map<double, std::pair<double, double>> sums;
    for (const auto& pt : out.points) {
      if (pt.scheme != scheme) continue;
      sums[pt.m_or_delta].first += pt.rate_bits / elements;
      sums[pt.m_or_delta].second += pt.mse;
    }
    RDCurve curve{to_string(scheme), {}};
    const double n = static_cast<double>(cfg.seeds.size());
    for (const auto& [op, sum] : sums) {
      const std::string label = (scheme == Scheme::cm ? "delta=" : "m=") + std::to_string(op);
      curve.points.push_back({sum.first / n, sum.second / n, label});
    }
    std::sort(curve.points.begin(), curve.points.end(), [](const RDPoint& a, const RDPoint& b) { return a.rate < b.rate; });
    out.curves.push_back(std::move(curve));
  }
  return out;
}

inline void write_rd_curves_csv(std::ostream& os, std::span<const SweepPoint> points) {
  os << "scheme,m_or_delta,rate_bits,bpp,mse\n";
  os.precision(10);
  for (const auto& p : points) {
    os << to_string(p.scheme) << ',' << p.m_or_delta << ',' << p.rate_bits << ',' << p.bpp << ',' << p.mse << '\n';
  }
}

inline void write_entropy_csv(std::ostream& os, std::span<const EntropyRow> rows) {
  os << "quantizer,stage,utilization,delta_h,one_minus_delta_h\n";
  os.precision(10);
  for (const auto& r : rows) {
    os << r.quantizer << ',' << r.stage << ',' << r.utilization << ',' << r.delta_h << ',' << 1.0 - r.delta_h << '\n';
  }
}

}  // namespace eflic::experiments
