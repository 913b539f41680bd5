#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "eflic/latent.hpp"

namespace eflic {
namespace {

LatentGrid Iota(std::size_t c, std::size_t h, std::size_t w) {
  std::vector<double> v(c * h * w);
  std::iota(v.begin(), v.end(), 0.0);
  return LatentGrid(c, h, w, std::move(v));
}

double HorizontalLag1(const LatentGrid& g) {
  double mean = 0.0;
  for (double v : g.data()) mean += v;
  mean /= g.size();
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < g.channels(); ++c)
    for (std::size_t i = 0; i < g.height(); ++i)
      for (std::size_t j = 0; j < g.width(); ++j) {
        const double a = g.at(c, i, j) - mean;
        den += a * a;
        if (j + 1 < g.width()) num += a * (g.at(c, i, j + 1) - mean);
      }
  return num / den * g.width() / (g.width() - 1);
}

TEST(LatentGrid, RejectsWrongLengthAndNonFinite) {
  EXPECT_THROW(LatentGrid(1, 2, 2, std::vector<double>(3)), InvalidArgument);
  EXPECT_THROW(LatentGrid(1, 1, 1, std::vector<double>{NAN}), InvalidArgument);
  EXPECT_THROW(LatentGrid(0, 1, 1), InvalidArgument);
}

TEST(LatentGrid, VectorLayoutRoundTrip) {
  const LatentGrid g = Iota(3, 2, 2);
  const VectorSet v = to_vectors(g);
  ASSERT_EQ(v.count(), 4u);
  EXPECT_EQ(v[1][0], 1.0);
  EXPECT_EQ(v[1][2], 9.0);
  EXPECT_EQ(from_vectors(v, 2, 2), g);
}

TEST(GaussMarkov, IndependentCaseHasUnitVarianceAndNoCorrelation) {
  SourceConfig cfg{{1, 64, 64}, 0.0, 1.0, 42};
  const LatentGrid g = gauss_markov_sample(cfg);
  const double n = static_cast<double>(g.size());
  double mean = 0.0, var = 0.0;
  for (double v : g.data()) mean += v;
  mean /= n;
  for (double v : g.data()) var += (v - mean) * (v - mean);
  var /= n - 1;
  EXPECT_NEAR(var, 1.0, 3.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(HorizontalLag1(g), 0.0, 3.0 / std::sqrt(n));
}

TEST(GaussMarkov, DeterministicUnderSeed) {
  SourceConfig cfg{{2, 16, 24}, 0.7, 2.0, 99};
  EXPECT_EQ(gauss_markov_sample(cfg), gauss_markov_sample(cfg));
  SourceConfig other = cfg;
  other.seed = 100;
  EXPECT_NE(gauss_markov_sample(cfg), gauss_markov_sample(other));
}

TEST(GaussMarkov, StrongCorrelationMonteCarlo) {
  // Ten independent fields: every estimate must fall in [0.85, 0.95] and the
  // Monte Carlo mean must sit on the target within its own spread.
  std::vector<double> est;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    est.push_back(HorizontalLag1(gauss_markov_sample({{1, 256, 256}, 0.9, 1.0, seed})));
  }
  double mean = std::accumulate(est.begin(), est.end(), 0.0) / est.size();
  double sd = 0.0;
  for (double e : est) sd += (e - mean) * (e - mean);
  sd = std::sqrt(sd / (est.size() - 1));
  for (double e : est) {
    EXPECT_GE(e, 0.85);
    EXPECT_LE(e, 0.95);
  }
  EXPECT_NEAR(mean, 0.9, 3.0 * sd / std::sqrt(10.0) + 0.005);
}

TEST(GaussMarkov, MarginalVarianceScales) {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const LatentGrid g = gauss_markov_sample({{1, 128, 128}, 0.5, 4.0, seed});
    for (double v : g.data()) acc += v * v;
    n += g.size();
  }
  EXPECT_NEAR(acc / n, 4.0, 0.2);
}

TEST(GaussMarkov, RejectsUnitCorrelation) {
  EXPECT_THROW(gauss_markov_sample({{1, 4, 4}, 1.0, 1.0, 0}), InvalidArgument);
  EXPECT_THROW(gauss_markov_sample({{1, 4, 4}, -1.5, 1.0, 0}), InvalidArgument);
}

TEST(Quadtree, MinimalGrid) {
  const LatentGrid g(1, 2, 2, {1, 2, 3, 4});
  const GroupedLatent q = partition_quadtree(g);
  for (std::size_t k = 0; k < 4; ++k) {
    ASSERT_EQ(q.groups[k].size(), 1u);
    EXPECT_EQ(q.groups[k].data()[0], static_cast<double>(k + 1));
  }
  EXPECT_EQ(merge_groups(q), g);
}

TEST(Quadtree, PhaseEnumeration4x4) {
  const GroupedLatent q = partition_quadtree(Iota(1, 4, 4));
  const std::vector<std::vector<double>> expected = {{0, 2, 8, 10}, {1, 3, 9, 11}, {4, 6, 12, 14}, {5, 7, 13, 15}};
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> got(q.groups[k].data().begin(), q.groups[k].data().end());
    EXPECT_EQ(got, expected[k]) << "group " << k + 1;
  }
  EXPECT_EQ(merge_groups(q), Iota(1, 4, 4));
}

TEST(Quadtree, BijectionExhaustiveUpTo8x8) {
  for (std::size_t c : {1, 3})
    for (std::size_t h = 2; h <= 8; h += 2)
      for (std::size_t w = 2; w <= 8; w += 2) {
        const LatentGrid g = Iota(c, h, w);
        const GroupedLatent q = partition_quadtree(g);
        std::vector<int> seen(g.size(), 0);
        for (const auto& grp : q.groups) {
          EXPECT_EQ(grp.channels(), c);
          for (double v : grp.data()) ++seen[static_cast<std::size_t>(v)];
        }
        for (int s : seen) EXPECT_EQ(s, 1);
        EXPECT_EQ(merge_groups(q), g);
      }
}

TEST(Quadtree, RandomRoundTrip) {
  const LatentGrid g = gauss_markov_sample({{3, 8, 8}, 0.3, 1.0, 17});
  EXPECT_EQ(merge_groups(partition_quadtree(g)), g);
}

TEST(Quadtree, Errors) {
  EXPECT_THROW(partition_quadtree(LatentGrid(1, 3, 4)), InvalidArgument);
  GroupedLatent q = partition_quadtree(Iota(1, 4, 4));
  q.groups[2] = LatentGrid(1, 1, 2);
  EXPECT_THROW(merge_groups(q), InvalidArgument);
}

}  // namespace
}  // namespace eflic
