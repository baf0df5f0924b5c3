#include <gtest/gtest.h>

#include <random>

#include "hierspx/grid.hpp"
#include "oracles.hpp"

using namespace hierspx;

TEST(AvgPool, TwoByTwoMean) {
  FeatureMap m(2, 2, 1, {1, 2, 3, 4});
  FeatureMap out = avg_pool2(m);
  ASSERT_EQ(out.dims(), (Dims{1, 1}));
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 2.5);
}

TEST(AvgPool, ConstantStaysConstant) {
  for (auto [h, w] : {std::pair{2, 2}, {5, 7}, {9, 4}}) {
    FeatureMap m(h, w, 3, 0.37);
    FeatureMap out = avg_pool2(m);
    for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 0.37);
  }
}

TEST(AvgPool, RampMatchesBlockMeans) {
  FeatureMap m(4, 4, 1);
  for (std::size_t i = 0; i < 16; ++i) m.data()[i] = static_cast<double>(i);
  FeatureMap out = avg_pool2(m);
  FeatureMap ref = oracle::block_means(m);
  ASSERT_EQ(out.dims(), (Dims{2, 2}));
  EXPECT_EQ(out.data(), ref.data());
}

TEST(AvgPool, OddSizesUseShrunkenBorderBlocks) {
  std::mt19937_64 rng(3);
  FeatureMap m = oracle::random_map(5, 7, 2, rng);
  FeatureMap out = avg_pool2(m);
  ASSERT_EQ(out.dims(), (Dims{3, 4}));
  EXPECT_LT(oracle::max_abs_diff(out.data(), oracle::block_means(m).data()), 1e-15);
}

TEST(AvgPool, RejectsDegenerateDims) {
  EXPECT_THROW(avg_pool2(FeatureMap(1, 4, 1)), InvalidInput);
  EXPECT_THROW(avg_pool2(FeatureMap(4, 1, 1)), InvalidInput);
  EXPECT_THROW(avg_pool2(FeatureMap(0, 0, 1)), InvalidInput);
}

TEST(AvgPool, TilingBackPreservesBlockMeans) {
  std::mt19937_64 rng(11);
  FeatureMap m = oracle::random_map(8, 6, 2, rng);
  FeatureMap pooled = avg_pool2(m);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 3; ++x)
      for (std::size_t c = 0; c < 2; ++c) {
        double tiled = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) tiled += pooled.at(y, x, c);
        double orig = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) orig += m.at(2 * y + dy, 2 * x + dx, c);
        EXPECT_NEAR(tiled / 4, orig / 4, 1e-15);
      }
}

TEST(Subsample, TakesTopLeft) {
  FeatureMap m(3, 3, 1, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  FeatureMap out = subsample2(m);
  ASSERT_EQ(out.dims(), (Dims{2, 2}));
  EXPECT_EQ(out.data(), (std::vector<double>{1, 3, 7, 9}));
}

TEST(Bilinear, FactorOneIsIdentity) {
  std::mt19937_64 rng(5);
  FeatureMap m = oracle::random_map(4, 3, 2, rng);
  EXPECT_EQ(bilinear_upsample(m, 1).data(), m.data());
}

TEST(Bilinear, ConstantAtAnyFactor) {
  FeatureMap m(3, 5, 2, -1.25);
  for (std::size_t f : {2u, 3u, 4u, 7u}) {
    FeatureMap up = bilinear_upsample(m, f);
    for (double v : up.data()) EXPECT_DOUBLE_EQ(v, -1.25);
  }
}

TEST(Bilinear, MatchesPerPixelFormula) {
  FeatureMap m(2, 2, 1, {0, 1, 0, 1});
  FeatureMap out = bilinear_upsample(m, 2);
  ASSERT_EQ(out.dims(), (Dims{4, 4}));
  EXPECT_LT(oracle::max_abs_diff(out.data(), oracle::bilinear(m, 2).data()), 1e-15);
  // align_corners=false: inner columns sit a quarter of the way in
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 0.25);
  EXPECT_DOUBLE_EQ(out.at(0, 2, 0), 0.75);
  EXPECT_DOUBLE_EQ(out.at(0, 3, 0), 1.0);
}

TEST(Bilinear, RandomMatchesOracle) {
  std::mt19937_64 rng(8);
  for (std::size_t f : {2u, 3u, 4u}) {
    FeatureMap m = oracle::random_map(5, 3, 3, rng);
    EXPECT_LT(oracle::max_abs_diff(bilinear_upsample(m, f).data(),
                                   oracle::bilinear(m, f).data()),
              1e-14);
  }
}

TEST(Bilinear, ZeroFactorRejected) {
  EXPECT_THROW(bilinear_upsample(FeatureMap(2, 2, 1), 0), InvalidInput);
}

TEST(Project, IdentityLeavesMapUnchanged) {
  std::mt19937_64 rng(2);
  FeatureMap m = oracle::random_map(3, 4, 5, rng);
  EXPECT_EQ(project(m, Matrix::identity(5)).data(), m.data());
}

TEST(Project, MatchesNaiveMatvec) {
  std::mt19937_64 rng(4);
  FeatureMap m = oracle::random_map(4, 4, 3, rng);
  Matrix w = oracle::random_matrix(2, 3, rng);
  FeatureMap out = project(m, w);
  ASSERT_EQ(out.channels(), 2u);
  EXPECT_LT(oracle::max_abs_diff(out.data(), oracle::project(m, w).data()), 1e-15);
}

TEST(Project, DefaultProjectionDimension) {
  std::mt19937_64 rng(4);
  FeatureMap m = oracle::random_map(2, 2, 8, rng);
  EXPECT_EQ(project(m, oracle::random_matrix(64, 8, rng)).channels(), 64u);
}

TEST(Project, DimensionMismatchRejected) {
  EXPECT_THROW(project(FeatureMap(2, 2, 3), Matrix(4, 2)), InvalidInput);
}

TEST(Project, IsLinear) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMap m1 = oracle::random_map(5, 5, 4, rng);
    FeatureMap m2 = oracle::random_map(5, 5, 4, rng);
    Matrix w = oracle::random_matrix(6, 4, rng);
    double a = 1.7, b = -0.3;
    FeatureMap mix(5, 5, 4);
    for (std::size_t i = 0; i < mix.size(); ++i)
      mix.data()[i] = a * m1.data()[i] + b * m2.data()[i];
    FeatureMap lhs = project(mix, w), p1 = project(m1, w), p2 = project(m2, w);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      double rhs = a * p1.data()[i] + b * p2.data()[i];
      EXPECT_LE(std::abs(lhs.data()[i] - rhs), 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST(LabelMap, DistinctAndBound) {
  LabelMap m(2, 3, std::vector<std::uint32_t>{0, 4, 4, 2, 0, 2});
  EXPECT_EQ(m.distinct_labels(), 3u);
  EXPECT_EQ(m.label_bound(), 5u);
}

TEST(FeatureMap, RejectsWrongDataLength) {
  EXPECT_THROW(FeatureMap(2, 2, 2, std::vector<double>(7)), InvalidInput);
}
