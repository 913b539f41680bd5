#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "eflic/codebook.hpp"
#include "eflic/random.hpp"
#include "eflic/training.hpp"

namespace eflic {
namespace {

Codebook Scalar(std::vector<double> words) { return Codebook(VectorSet(1, std::move(words))); }

VectorSet GaussianSamples(std::size_t dim, std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  VectorSet v(dim, n);
  for (double& x : v.values) x = rng.normal();
  return v;
}

TEST(NearestNeighbour, ScalarExample) {
  const Codebook cb = Scalar({0.0, 1.0, 4.0});
  const double in[] = {2.4};
  EXPECT_EQ(nearest_codeword(cb, in), 1u);
  const double mid[] = {2.5};
  // 1 and 4 are equidistant from 2.5.
  EXPECT_EQ(nearest_codeword(cb, mid), 1u);
}

TEST(NearestNeighbour, TieGoesToLowestIndex) {
  const Codebook cb = Scalar({-1.0, 1.0, 1.0});
  const double zero[] = {0.0};
  EXPECT_EQ(nearest_codeword(cb, zero), 0u);
  const double one[] = {1.0};
  EXPECT_EQ(nearest_codeword(cb, one), 1u);
}

TEST(NearestNeighbour, MatchesBruteForce) {
  const Codebook cb(GaussianSamples(4, 32, 1));
  const VectorSet x = GaussianSamples(4, 1000, 2);
  const IndexArray idx = nn_quantize(cb, x);
  for (std::size_t n = 0; n < x.count(); ++n) {
    double best = INFINITY;
    std::uint32_t arg = 0;
    for (std::size_t k = 0; k < cb.size(); ++k) {
      const double d = squared_distance(x[n], cb.codewords[k]);
      if (d < best) {
        best = d;
        arg = static_cast<std::uint32_t>(k);
      }
    }
    ASSERT_EQ(idx[n], arg) << "sample " << n;
  }
}

TEST(NearestNeighbour, ScalarSearchMatchesScan) {
  // Duplicates and exact midpoints exercise the tie rule.
  const Codebook cb = Scalar({1.0, -1.0, 0.5, 1.0, 0.0, -1.0, 3.0, 0.5});
  std::vector<double> queries = {-5, -1, -0.5, -0.25, 0, 0.25, 0.5, 0.75, 1, 2, 3, 9};
  const VectorSet g = GaussianSamples(1, 2000, 3);
  queries.insert(queries.end(), g.values.begin(), g.values.end());
  const NearestSearch search(cb);
  for (double q : queries) {
    const double v[] = {q};
    double d1 = 0.0, d2 = 0.0;
    EXPECT_EQ(search(v, &d1), nearest_codeword(cb, v, &d2)) << q;
    EXPECT_EQ(d1, d2);
  }
  const Codebook big(GaussianSamples(1, 512, 4));
  const NearestSearch fast(big);
  for (double q : g.values) {
    const double v[] = {q};
    ASSERT_EQ(fast(v), nearest_codeword(big, v)) << q;
  }
}

TEST(NearestNeighbour, DequantizeAndErrors) {
  const Codebook cb = Scalar({0.0, 1.0, 4.0});
  EXPECT_EQ(dequantize(cb, {2, 0}).values, (std::vector<double>{4.0, 0.0}));
  EXPECT_THROW(dequantize(cb, {3}), InvalidArgument);
  EXPECT_THROW(nn_quantize(cb, VectorSet(2, 1)), InvalidArgument);
  EXPECT_EQ(Scalar({0, 1, 2, 3}).index_bits(), 2u);
  EXPECT_THROW(cb.index_bits(), InvalidArgument);
}

TEST(ResidualVq, ToyTwoStage) {
  ResidualVQ rvq;
  rvq.stages = {Scalar({0.0, 10.0}), Scalar({0.0, 1.0})};
  const RvqResult r = rvq_quantize(rvq, VectorSet(1, std::vector<double>{10.8}), 2);
  EXPECT_EQ(r.indices.stages[0][0], 1u);
  EXPECT_EQ(r.indices.stages[1][0], 1u);
  EXPECT_DOUBLE_EQ(r.reconstruction.values[0], 11.0);
  EXPECT_NEAR(std::pow(10.8 - r.reconstruction.values[0], 2), 0.04, 1e-12);
  EXPECT_EQ(rvq_dequantize(rvq, r.indices), r.reconstruction);
  EXPECT_DOUBLE_EQ(fixed_length_bits(rvq, 1, 2), 2.0);

  const RvqResult one = rvq_quantize(rvq, VectorSet(1, std::vector<double>{10.8}), 1);
  EXPECT_DOUBLE_EQ(one.reconstruction.values[0], 10.0);
  EXPECT_THROW(rvq_quantize(rvq, VectorSet(1, std::vector<double>{0.0}), 3), InvalidArgument);
  EXPECT_THROW(rvq_quantize(rvq, VectorSet(1, std::vector<double>{0.0}), 0), InvalidArgument);
}

TEST(ResidualVq, DequantizeRejectsBadIndex) {
  ResidualVQ rvq;
  rvq.stages = {Scalar({0.0, 10.0})};
  IndexStack s;
  s.stages = {{2}};
  EXPECT_THROW(rvq_dequantize(rvq, s), InvalidArgument);
}

TEST(Training, OneCodewordPerSampleIsExact) {
  const VectorSet x(1, {3.0, -1.0, 7.0, 0.5});
  const TrainedCodebook t = train_codebook(x, 4, {.iterations = 5, .seed = 3});
  EXPECT_DOUBLE_EQ(t.mse, 0.0);
}

TEST(Training, SingleCodewordIsTheMean) {
  const VectorSet x(1, {1.0, 2.0, 3.0, 10.0});
  const TrainedCodebook t = train_codebook(x, 1, {.iterations = 3});
  EXPECT_DOUBLE_EQ(t.codebook.codewords.values[0], 4.0);
}

TEST(Training, SeparatesTwoClusters) {
  CounterRng rng(5);
  VectorSet x(2, 400);
  for (std::size_t n = 0; n < 400; ++n) {
    const double centre = n % 2 ? 5.0 : -5.0;
    x[n][0] = centre + 0.1 * rng.normal();
    x[n][1] = centre + 0.1 * rng.normal();
  }
  const TrainedCodebook t = train_codebook(x, 2, {.iterations = 20, .seed = 1});
  std::vector<double> first = {t.codebook.codewords[0][0], t.codebook.codewords[1][0]};
  std::sort(first.begin(), first.end());
  EXPECT_NEAR(first[0], -5.0, 0.05);
  EXPECT_NEAR(first[1], 5.0, 0.05);
  EXPECT_LT(t.mse, 0.05);
}

TEST(Training, HistoryIsNonIncreasingAndSeeded) {
  const VectorSet x = GaussianSamples(2, 3000, 11);
  const CodebookTraining opts{.iterations = 30, .seed = 9};
  const TrainedCodebook a = train_codebook(x, 16, opts);
  for (std::size_t k = 1; k < a.mse_history.size(); ++k) {
    EXPECT_LE(a.mse_history[k], a.mse_history[k - 1] * (1 + 1e-12));
  }
  const TrainedCodebook b = train_codebook(x, 16, opts);
  EXPECT_EQ(a.codebook, b.codebook);
  EXPECT_EQ(a.mse_history, b.mse_history);
}

TEST(Training, RandomSampleInitAlsoConverges) {
  const VectorSet x = GaussianSamples(1, 5000, 4);
  const TrainedCodebook t = train_codebook(x, 4, {.iterations = 100, .seed = 2, .init = CodebookInit::random_samples});
  // Lloyd-Max 4-level Gaussian quantizer distortion is about 0.1175.
  EXPECT_NEAR(t.mse, 0.1175, 0.01);
}

TEST(Training, ReservedZeroStaysPut) {
  const VectorSet x = GaussianSamples(3, 2000, 8);
  const TrainedCodebook t = train_codebook(x, 8, {.iterations = 10, .seed = 1, .reserve_zero = true});
  for (double v : t.codebook.codewords[0]) EXPECT_EQ(v, 0.0);
}

TEST(Training, Errors) {
  EXPECT_THROW(train_codebook(VectorSet(1, std::vector<double>{1.0}), 2), InvalidArgument);
  EXPECT_THROW(train_codebook(VectorSet(1, std::vector<double>{1.0}), 1, {.iterations = 0}), InvalidArgument);
}

TEST(Training, RvqStagesReduceError) {
  const VectorSet x = GaussianSamples(2, 4000, 21);
  const std::vector<std::size_t> sizes = {16, 8, 4};
  const ResidualVQ rvq = train_rvq(x, sizes, {.iterations = 25, .seed = 4});
  ASSERT_EQ(rvq.max_stages(), 3u);
  double prev = INFINITY;
  for (std::size_t m = 1; m <= 3; ++m) {
    const RvqResult r = rvq_quantize(rvq, x, m);
    for (double v : rvq.stages[m - 1].codewords[0]) EXPECT_EQ(v, 0.0);
    double err = 0.0;
    for (std::size_t k = 0; k < x.values.size(); ++k) err += std::pow(x.values[k] - r.reconstruction.values[k], 2);
    EXPECT_LE(err, prev);
    prev = err;
  }
}

TEST(Report, HistogramAndEntropy) {
  const Codebook cb = Scalar({0.0, 1.0, 2.0, 3.0});
  const VectorSet x(1, {0.0, 1.0, 1.0, 2.0});
  const CodebookReport r = codebook_report(cb, x);
  EXPECT_EQ(r.histogram, (std::vector<std::uint64_t>{1, 2, 1, 0}));
  EXPECT_DOUBLE_EQ(r.index_entropy_bits, 1.5);
  EXPECT_DOUBLE_EQ(r.utilization, 0.75);
  EXPECT_DOUBLE_EQ(r.quantization_mse, 0.0);
  EXPECT_THROW(codebook_report(cb, VectorSet(1, std::vector<double>{})), InvalidArgument);
}

}  // namespace
}  // namespace eflic
