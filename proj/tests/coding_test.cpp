#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "eflic/hyper.hpp"
#include "eflic/predictor.hpp"
#include "eflic/schemes.hpp"

namespace eflic {
namespace {

Codebook Scalar(std::vector<double> words) { return Codebook(VectorSet(1, std::move(words))); }

std::vector<LatentGrid> Sources(std::size_t count, Shape shape, double rho, std::uint64_t seed0) {
  std::vector<LatentGrid> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(gauss_markov_sample({shape, rho, 1.0, seed0 + k}));
  return out;
}

double Variance(std::span<const double> v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / v.size();
}

TEST(Hyper, ConstantGrid) {
  const LatentGrid g(2, 8, 8, std::vector<double>(128, 3.25));
  const HyperContext h = extract_hyper_context(g);
  EXPECT_FALSE(h.quantized);
  EXPECT_EQ(h.phi.height(), 2u);
  for (double v : h.phi.data()) EXPECT_EQ(v, 3.25);
}

TEST(Hyper, BlockMeanOfRamp) {
  std::vector<double> v(16);
  std::iota(v.begin(), v.end(), 0.0);
  const HyperContext h = extract_hyper_context(LatentGrid(1, 4, 4, v));
  ASSERT_EQ(h.phi.size(), 1u);
  EXPECT_EQ(h.phi.data()[0], 7.5);
}

TEST(Hyper, QuantizedCodewordHit) {
  std::vector<double> v(16);
  std::iota(v.begin(), v.end(), 0.0);
  const LatentGrid g(1, 4, 4, v);
  ResidualVQ q;
  q.stages = {Scalar({0.0, 7.5}), Scalar({0.0, 1.0})};
  const HyperContext h = extract_hyper_context(g, &q, 1);
  EXPECT_TRUE(h.quantized);
  EXPECT_EQ(h.phi, extract_hyper_context(g).phi);
  ASSERT_TRUE(h.indices);
  EXPECT_EQ(h.indices->stages[0][0], 1u);
  EXPECT_EQ(decode_hyper_context(q, *h.indices, 1, 1).phi, h.phi);
  EXPECT_THROW(extract_hyper_context(g, &q, 3), InvalidArgument);
  EXPECT_THROW(extract_hyper_context(LatentGrid(1, 6, 4)), InvalidArgument);
}

TEST(Predictor, ContextLayout) {
  std::array<LatentGrid, 4> decoded = {LatentGrid(2, 2, 2, {1, 2, 3, 4, 5, 6, 7, 8}),
                                       LatentGrid(2, 2, 2, {9, 10, 11, 12, 13, 14, 15, 16})};
  const LatentGrid phi(2, 1, 1, {-1, -2});
  std::vector<double> ctx(context_size(2, 2, true));
  ASSERT_EQ(ctx.size(), 6u);
  gather_context(decoded, &phi, 2, 1, 0, ctx);
  EXPECT_EQ(ctx, (std::vector<double>{3, 7, 11, 15, -1, -2}));
}

RegressionData CopyGroupData(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  RegressionData d;
  d.inputs = 2;
  d.channels = 2;
  for (std::size_t r = 0; r < n; ++r) {
    const double a = rng.normal(), b = rng.normal();
    const double ctx[] = {a, b};
    d.add(ctx, ctx);
  }
  return d;
}

TEST(Predictor, PerfectlyPredictableGroup) {
  const RegressionData d = CopyGroupData(5000, 3);
  const GroupPredictor gp = fit_group_predictor(d);
  double resid = 0.0;
  std::vector<double> mu(2), sigma(2);
  for (std::size_t r = 0; r < d.rows(); ++r) {
    gp.predict(std::span<const double>(d.x.data() + 2 * r, 2), mu, sigma, kSigmaFloor);
    for (std::size_t c = 0; c < 2; ++c) resid += std::pow(d.y[2 * r + c] - mu[c], 2);
  }
  resid /= d.y.size();
  EXPECT_LT(resid, 1e-6 * Variance(d.y));
  for (double s : sigma) EXPECT_GE(s, kSigmaFloor);
}

TEST(Predictor, IndependentSourceGivesNearZeroWeights) {
  CounterRng rng(17);
  RegressionData train, test;
  for (RegressionData* d : {&train, &test}) {
    d->inputs = 3;
    d->channels = 1;
    for (std::size_t r = 0; r < 20000; ++r) {
      const double ctx[] = {rng.normal(), rng.normal(), rng.normal()};
      const double y[] = {rng.normal()};
      d->add(ctx, y);
    }
  }
  const GroupPredictor gp = fit_group_predictor(train);
  for (std::size_t f = 0; f < 3; ++f) EXPECT_LT(std::abs(gp.weights[f]), 0.03);
  double resid = 0.0;
  std::vector<double> mu(1), sigma(1);
  for (std::size_t r = 0; r < test.rows(); ++r) {
    gp.predict(std::span<const double>(test.x.data() + 3 * r, 3), mu, sigma, kSigmaFloor);
    resid += std::pow(test.y[r] - mu[0], 2);
  }
  resid /= test.rows();
  EXPECT_NEAR(resid / Variance(test.y), 1.0, 0.05);
}

TEST(Predictor, ConstantSource) {
  RegressionData d;
  d.inputs = 2;
  d.channels = 1;
  for (std::size_t r = 0; r < 200; ++r) {
    const double ctx[] = {2.5, 2.5};
    const double y[] = {2.5};
    d.add(ctx, y);
  }
  const GroupPredictor gp = fit_group_predictor(d);
  std::vector<double> mu(1), sigma(1);
  const double ctx[] = {2.5, 2.5};
  gp.predict(ctx, mu, sigma, kSigmaFloor);
  EXPECT_NEAR(mu[0], 2.5, 1e-12);
  EXPECT_DOUBLE_EQ(sigma[0], kSigmaFloor);
}

TEST(Predictor, ScaleHeadFollowsActivity) {
  // Residual scale grows with the spread of the context.
  CounterRng rng(5);
  RegressionData d;
  d.inputs = 2;
  d.channels = 1;
  for (std::size_t r = 0; r < 40000; ++r) {
    const double s = std::exp(2.0 * rng.uniform() - 1.0);
    const double ctx[] = {s, -s};
    const double y[] = {s * rng.normal()};
    d.add(ctx, y);
  }
  const GroupPredictor gp = fit_group_predictor(d);
  std::vector<double> mu(1), lo(1), hi(1);
  const double small[] = {0.5, -0.5}, large[] = {2.0, -2.0};
  gp.predict(small, mu, lo, kSigmaFloor);
  gp.predict(large, mu, hi, kSigmaFloor);
  EXPECT_NEAR(lo[0], 0.5, 0.05);
  EXPECT_NEAR(hi[0], 2.0, 0.2);
}

TEST(Predictor, InsufficientData) {
  EXPECT_THROW(fit_group_predictor(CopyGroupData(50, 1)), InvalidArgument);
}

TEST(Schemes, AffineRoundTrip) {
  CounterRng rng(2);
  VectorSet y(2, 500), mu(2, 500), sigma(2, 500), pow2(2, 500);
  for (std::size_t k = 0; k < y.values.size(); ++k) {
    y.values[k] = rng.normal();
    mu.values[k] = rng.normal();
    sigma.values[k] = std::exp(rng.normal());
    pow2.values[k] = std::ldexp(1.0, static_cast<int>(rng.below(9)) - 4);
  }
  const VectorSet back = detail::destandardize(detail::standardize(y, mu, sigma), mu, sigma);
  for (std::size_t k = 0; k < y.values.size(); ++k) EXPECT_NEAR(back.values[k], y.values[k], 1e-14 * (1 + std::abs(mu.values[k])));
  // With power-of-two scales and zero mean the affine map is exact.
  const VectorSet zero(2, 500);
  EXPECT_EQ(detail::destandardize(detail::standardize(y, zero, pow2), zero, pow2), y);
}

QuantizerSet SmallQuantizers(std::uint64_t seed) {
  const auto train = Sources(6, {1, 16, 16}, 0.5, seed);
  RdTraining opts;
  opts.group_sizes = {8, 8, 4, 4};
  opts.stages = 2;
  opts.codebook.iterations = 10;
  return train_iq(train, opts);
}

TEST(Schemes, RdWithIdentityPredictorIsIq) {
  const QuantizerSet q = SmallQuantizers(100);
  const ContextPredictor id = ContextPredictor::identity(1, false);
  for (std::uint64_t seed : {1, 2, 3}) {
    const LatentGrid y = gauss_markov_sample({{1, 16, 16}, 0.5, 1.0, seed});
    for (std::size_t m : {1, 2}) {
      const CodedLatent rd = rd_encode(y, id, q, m);
      const CodedLatent iq = iq_encode(y, q, m);
      EXPECT_EQ(rd.groups, iq.groups);
      EXPECT_EQ(rd.reconstruction, iq.reconstruction);
      EXPECT_EQ(rd.rate_bits, iq.rate_bits);
    }
  }
}

TEST(Schemes, IqExactOnCodewordSums) {
  QuantizerSet q;
  for (auto& g : q.groups) g.stages = {Scalar({0.0, 10.0}), Scalar({0.0, 1.0})};
  const LatentGrid y(1, 2, 2, {11.0, 10.0, 1.0, 0.0});
  const CodedLatent c = iq_encode(y, q, 2);
  EXPECT_EQ(c.reconstruction, y);
  EXPECT_EQ(iq_decode(c, q), y);
  EXPECT_DOUBLE_EQ(c.rate_bits, 8.0);
}

TEST(Schemes, IqRoundTripAndErrors) {
  const QuantizerSet q = SmallQuantizers(200);
  const LatentGrid y = gauss_markov_sample({{1, 16, 16}, 0.5, 1.0, 9});
  CodedLatent c = iq_encode(y, q, 2);
  EXPECT_EQ(iq_decode(c, q), c.reconstruction);
  EXPECT_THROW(iq_encode(y, q, 3), InvalidArgument);
  c.m = 1;
  EXPECT_THROW(iq_decode(c, q), InvalidArgument);
}

class TrainedRd : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto train = Sources(12, {1, 32, 32}, 0.9, 1000);
    RdTraining opts;
    opts.group_sizes = {16, 16, 8, 8};
    opts.stages = 2;
    opts.hyper_size = 8;
    opts.codebook.iterations = 15;
    model_ = new RdModel(train_rd(train, opts));
  }
  static void TearDownTestSuite() { delete model_; }
  static RdModel* model_;
};
RdModel* TrainedRd::model_ = nullptr;

TEST_F(TrainedRd, DecoderReproducesEncoder) {
  for (std::size_t m : {1, 2}) {
    const LatentGrid y = gauss_markov_sample({{1, 32, 32}, 0.9, 1.0, 77 + m});
    PhaseTimings enc, dec;
    const CodedLatent c = rd_encode(y, model_->predictor, model_->quantizers, m, &enc);
    EXPECT_EQ(rd_decode(c, model_->predictor, model_->quantizers, &dec), c.reconstruction);
    ASSERT_TRUE(c.hyper);
    EXPECT_DOUBLE_EQ(c.rate_bits, m * (256.0 * (4 + 4 + 3 + 3) + 64.0 * 3));
    EXPECT_EQ(enc.entropy_code_ms, 0.0);
    EXPECT_GT(enc.total_ms, 0.0);
  }
}

TEST_F(TrainedRd, MismatchedStageCountIsRejected) {
  const LatentGrid y = gauss_markov_sample({{1, 32, 32}, 0.9, 1.0, 5});
  CodedLatent c = rd_encode(y, model_->predictor, model_->quantizers, 1);
  c.m = 2;
  EXPECT_THROW(rd_decode(c, model_->predictor, model_->quantizers), InvalidArgument);
  c.m = 1;
  c.hyper.reset();
  EXPECT_THROW(rd_decode(c, model_->predictor, model_->quantizers), InvalidArgument);
}

TEST_F(TrainedRd, SecondStageNeverHurts) {
  const LatentGrid y = gauss_markov_sample({{1, 32, 32}, 0.9, 1.0, 6});
  const double d1 = mean_squared_error(y, rd_encode(y, model_->predictor, model_->quantizers, 1).reconstruction);
  const double d2 = mean_squared_error(y, rd_encode(y, model_->predictor, model_->quantizers, 2).reconstruction);
  EXPECT_LT(d2, d1);
}

TEST(Schemes, TrainingIsDeterministic) {
  const auto train = Sources(4, {1, 16, 16}, 0.9, 50);
  RdTraining opts;
  opts.group_sizes = {4, 4, 4, 4};
  opts.stages = 2;
  opts.codebook.iterations = 5;
  const RdModel a = train_rd(train, opts), b = train_rd(train, opts);
  EXPECT_EQ(a.predictor, b.predictor);
  EXPECT_EQ(a.quantizers, b.quantizers);
}

TEST(Schemes, CopiedGroupIsAlmostFree) {
  // Group 2 repeats group 1; its context then holds everything but group 1's
  // own quantization error.
  std::vector<LatentGrid> train;
  for (std::uint64_t s = 0; s < 10; ++s) {
    LatentGrid y = gauss_markov_sample({{1, 32, 32}, 0.5, 1.0, 300 + s});
    for (std::size_t i = 0; i < 32; i += 2)
      for (std::size_t j = 0; j < 32; j += 2) y.at(0, i, j + 1) = y.at(0, i, j);
    train.push_back(y);
  }
  RdTraining opts;
  opts.group_sizes = {64, 16, 16, 16};
  opts.stages = 1;
  opts.codebook.iterations = 20;
  const RdModel model = train_rd(train, opts);
  const LatentGrid& y = train.front();
  const CodedLatent c = rd_encode(y, model.predictor, model.quantizers, 1);
  const GroupedLatent a = partition_quadtree(y), b = partition_quadtree(c.reconstruction);
  const double g2 = mean_squared_error(a.groups[1], b.groups[1]);
  EXPECT_LT(g2, 1e-4 * Variance(a.groups[1].data()));
}

TEST(Schemes, IqAndRdAgreeWithoutCorrelation) {
  // Small codebooks and plenty of data, so both trainings reach the same optimum.
  const auto train = Sources(60, {1, 32, 32}, 0.0, 4000);
  const auto test = Sources(10, {1, 32, 32}, 0.0, 9000);
  RdTraining opts;
  opts.group_sizes = {4, 4, 4, 4};
  opts.stages = 2;
  opts.codebook.iterations = 30;
  const RdModel rd = train_rd(train, opts);
  const QuantizerSet iq = train_iq(train, opts);
  for (std::size_t m : {1, 2}) {
    double drd = 0.0, diq = 0.0;
    for (const auto& y : test) {
      drd += mean_squared_error(y, rd_encode(y, rd.predictor, rd.quantizers, m).reconstruction);
      diq += mean_squared_error(y, iq_encode(y, iq, m).reconstruction);
    }
    EXPECT_NEAR(drd / diq, 1.0, 0.02) << "m=" << m;
  }
}

ContextPredictor FixedScale(double sigma) {
  ContextPredictor p = ContextPredictor::identity(1, false);
  for (auto& g : p.groups) g.log_sigma_base[0] = std::log(sigma);
  return p;
}

TEST(Schemes, CmDegenerateStream) {
  const LatentGrid y(1, 16, 16);
  const ContextPredictor p = FixedScale(kSigmaFloor);
  const CodedLatent c = cm_encode(y, p, {Scheme::cm, 1, 1.0, 14, false});
  for (const auto& s : c.streams) EXPECT_LE(s.coded_bytes(), 4u + 8u);
  EXPECT_EQ(c.reconstruction, y);
  EXPECT_EQ(cm_decode(c, p), y);
}

TEST(Schemes, CmRateMatchesSelfInformation) {
  const LatentGrid y = gauss_markov_sample({{1, 64, 64}, 0.0, 1.0, 8});
  const ContextPredictor p = FixedScale(1.0);
  const SchemeConfig cfg{Scheme::cm, 1, 0.5, 14, false};
  PhaseTimings t;
  const CodedLatent c = cm_encode(y, p, cfg, std::nullopt, &t);
  ScaleTableCache cache(0.5, 14, kSigmaFloor);
  const FrequencyTable& table = cache.table(1.0);
  double info = 0.0;
  for (double v : y.data()) info += table.bits(static_cast<std::uint32_t>(std::clamp(std::round(v / 0.5), -255.0, 255.0) + 255));
  EXPECT_NEAR(c.rate_bits / info, 1.0, 0.03);
  EXPECT_GT(t.entropy_code_ms, 0.0);
  EXPECT_EQ(cm_decode(c, p), c.reconstruction);
  EXPECT_LE(mean_squared_error(y, c.reconstruction), 0.25 * 0.25 / 3.0 * 1.1);
}

TEST(Schemes, CmClampsOutOfSupport) {
  LatentGrid y(1, 2, 2);
  y.at(0, 0, 0) = 1e4;
  const ContextPredictor p = FixedScale(1.0);
  const CodedLatent c = cm_encode(y, p, {Scheme::cm, 1, 1.0, 12, false});
  EXPECT_EQ(c.clamped, 1u);
  EXPECT_EQ(c.reconstruction.at(0, 0, 0), 255.0);
  EXPECT_EQ(cm_decode(c, p), c.reconstruction);
}

TEST(Schemes, CmTrainedRoundTripWithHyper) {
  const auto train = Sources(8, {2, 16, 16}, 0.9, 700);
  CmTraining opts;
  opts.delta = 0.5;
  opts.hyper_size = 4;
  opts.codebook.iterations = 10;
  const CmModel model = train_cm(train, opts);
  const LatentGrid y = gauss_markov_sample({{2, 16, 16}, 0.9, 1.0, 1});
  const CodedLatent c = cm_encode(y, model.predictor, model.config, model.hyper);
  EXPECT_EQ(cm_decode(c, model.predictor, model.hyper), c.reconstruction);
  EXPECT_THROW(cm_decode(c, model.predictor), InvalidArgument);
}

}  // namespace
}  // namespace eflic
