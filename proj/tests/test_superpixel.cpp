#include <gtest/gtest.h>

#include <random>

#include "hierspx/metrics.hpp"
#include "hierspx/superpixel.hpp"
#include "oracles.hpp"

using namespace hierspx;

namespace {

FeatureMap two_tone(std::size_t h, std::size_t w, std::size_t edge) {
  FeatureMap img(h, w, 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto px = img.pixel(y, x);
      if (x < edge) {
        px[0] = 0.8, px[1] = 0.15, px[2] = 0.1;
      } else {
        px[0] = 0.1, px[1] = 0.2, px[2] = 0.85;
      }
    }
  return img;
}

LabelMap edge_truth(std::size_t h, std::size_t w, std::size_t edge) {
  LabelMap gt(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = edge; x < w; ++x) gt.at(y, x) = 1;
  return gt;
}

}  // namespace

TEST(Lab, WhiteIsL100) {
  auto lab = srgb_to_lab(1, 1, 1);
  EXPECT_NEAR(lab[0], 100.0, 0.01);
  EXPECT_NEAR(lab[1], 0.0, 0.01);
  EXPECT_NEAR(lab[2], 0.0, 0.01);
}

TEST(Lab, KnownPrimaries) {
  auto red = srgb_to_lab(1, 0, 0);
  EXPECT_NEAR(red[0], 53.24, 0.05);
  EXPECT_NEAR(red[1], 80.09, 0.05);
  EXPECT_NEAR(red[2], 67.20, 0.05);
  auto black = srgb_to_lab(0, 0, 0);
  EXPECT_NEAR(black[0], 0.0, 1e-9);
}

TEST(PixelFeatures, ZeroPositionWeightIsPureColour) {
  std::mt19937_64 rng(1);
  FeatureMap img = oracle::random_map(5, 6, 3, rng, 0.0, 1.0);
  PipelineConfig cfg;
  cfg.pos_weight = 0.0;
  cfg.color = ColorSpace::rgb;
  FeatureMap f = pixel_features(img, cfg);
  ASSERT_EQ(f.channels(), 5u);
  for (std::size_t p = 0; p < f.pixels(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f.pixel(p)[c], img.pixel(p)[c]);
    EXPECT_EQ(f.pixel(p)[3], 0.0);
    EXPECT_EQ(f.pixel(p)[4], 0.0);
  }
}

TEST(PixelFeatures, ConstantImageDiffersOnlyInPosition) {
  FeatureMap img(4, 8, 3, 0.4);
  PipelineConfig cfg;
  FeatureMap f = pixel_features(img, cfg);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f.at(y, x, c), f.at(0, 0, c));
      EXPECT_DOUBLE_EQ(f.at(y, x, 3), 0.5 * y / 4.0);
      EXPECT_DOUBLE_EQ(f.at(y, x, 4), 0.5 * x / 8.0);
    }
}

TEST(PixelFeatures, RequiresColourImage) {
  EXPECT_THROW(pixel_features(FeatureMap(4, 4, 1), PipelineConfig{}), InvalidInput);
}

TEST(Hierarchy, SingleLevelOnTwoByTwo) {
  PipelineConfig cfg;
  cfg.levels = 1;
  auto levels = hierarchical_superpixels(FeatureMap(2, 2, 3, 0.3), cfg);
  ASSERT_EQ(levels.size(), 1u);
  EXPECT_EQ(levels[0].labels.labels(), (std::vector<std::uint32_t>{0, 0, 0, 0}));
}

TEST(Hierarchy, LabelCountBoundedBySeedCount) {
  std::mt19937_64 rng(2);
  FeatureMap img = oracle::random_map(64, 96, 3, rng, 0.0, 1.0);
  PipelineConfig cfg;
  cfg.levels = 5;
  auto levels = hierarchical_superpixels(img, cfg);
  ASSERT_EQ(levels.size(), 5u);
  for (std::size_t l = 0; l < 5; ++l) {
    std::size_t s = std::size_t{2} << l;
    EXPECT_LE(levels[l].labels.distinct_labels(), (64 / s) * (96 / s));
    EXPECT_NO_THROW(levels[l].field.check());
  }
  EXPECT_LE(levels[4].labels.distinct_labels(), 64u * 96u / (32u * 32u));
}

TEST(Hierarchy, LocalityBound) {
  std::mt19937_64 rng(3);
  FeatureMap img = oracle::random_map(40, 36, 3, rng, 0.0, 1.0);
  for (std::size_t L = 1; L <= 4; ++L) {
    PipelineConfig cfg;
    cfg.levels = L;
    auto levels = hierarchical_superpixels(img, cfg);
    const LabelMap& labels = levels.back().labels;
    Dims cd = levels.back().field.seed_dims();
    long limit = L == 1 ? 1 : 2;
    for (std::size_t y = 0; y < 40; ++y)
      for (std::size_t x = 0; x < 36; ++x) {
        long ly = labels.at(y, x) / cd.width, lx = labels.at(y, x) % cd.width;
        EXPECT_LE(std::max(std::labs(ly - static_cast<long>(y >> L)),
                           std::labs(lx - static_cast<long>(x >> L))),
                  limit);
      }
  }
}

TEST(Hierarchy, Deterministic) {
  std::mt19937_64 rng(4);
  FeatureMap img = oracle::random_map(32, 32, 3, rng, 0.0, 1.0);
  PipelineConfig cfg;
  auto a = hierarchical_superpixels(img, cfg, 1);
  auto b = hierarchical_superpixels(img, cfg, 3);
  for (std::size_t l = 0; l < a.size(); ++l) {
    EXPECT_EQ(a[l].labels.labels(), b[l].labels.labels());
    EXPECT_TRUE(a[l].field == b[l].field);
  }
}

TEST(Hierarchy, TooSmallImageRejected) {
  PipelineConfig cfg;
  cfg.levels = 3;
  EXPECT_THROW(hierarchical_superpixels(FeatureMap(7, 16, 3), cfg), InvalidInput);
  cfg.levels = 6;
  EXPECT_THROW(hierarchical_superpixels(FeatureMap(128, 128, 3), cfg), InvalidConfig);
}

TEST(Hierarchy, TwoToneBoundaryFollowsEdge) {
  const std::size_t h = 64, w = 64, edge = 29;
  FeatureMap img = two_tone(h, w, edge);
  PipelineConfig cfg;
  cfg.pos_weight = 0.05;
  for (std::size_t L = 1; L <= 3; ++L) {
    cfg.levels = L;
    auto levels = hierarchical_superpixels(img, cfg);
    const LabelMap& labels = levels.back().labels;
    std::size_t good = 0;
    for (std::size_t y = 0; y < h; ++y) {
      bool hit = false;
      for (std::size_t x = edge - 2; x <= edge; ++x)
        hit = hit || labels.at(y, x) != labels.at(y, x + 1);
      good += hit;
    }
    EXPECT_GE(good, static_cast<std::size_t>(0.95 * h)) << "levels " << L;
    EXPECT_GE(asa(labels, edge_truth(h, w, edge)), 0.99) << "levels " << L;
  }
}

TEST(Overlay, ConstantLabelsLeaveImageUnchanged) {
  std::mt19937_64 rng(5);
  FeatureMap img = oracle::random_map(6, 6, 3, rng, 0.0, 1.0);
  EXPECT_EQ(overlay_boundaries(img, LabelMap(6, 6, 7)).data(), img.data());
}

TEST(Overlay, VerticalSplitRecolorsTwoColumns) {
  FeatureMap img(5, 8, 3, 0.2);
  FeatureMap out = overlay_boundaries(img, edge_truth(5, 8, 3));
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      bool boundary = x == 2 || x == 3;
      EXPECT_EQ(out.at(y, x, 0), boundary ? 1.0 : 0.2);
      EXPECT_EQ(out.at(y, x, 1), boundary ? 1.0 : 0.2);
      EXPECT_EQ(out.at(y, x, 2), boundary ? 0.0 : 0.2);
    }
}

TEST(Overlay, RandomMatchesNeighbourScan) {
  std::mt19937_64 rng(6);
  FeatureMap img(9, 11, 3, 0.5);
  LabelMap labels = oracle::random_labels(9, 11, 3, rng);
  FeatureMap out = overlay_boundaries(img, labels);
  for (std::size_t y = 0; y < 9; ++y)
    for (std::size_t x = 0; x < 11; ++x)
      EXPECT_EQ(out.at(y, x, 2) == 0.0, oracle::is_boundary(labels, y, x));
}

TEST(Overlay, DimensionMismatchRejected) {
  EXPECT_THROW(overlay_boundaries(FeatureMap(4, 4, 3), LabelMap(4, 5)), InvalidInput);
}

TEST(GridPartition, EqualBlocks) {
  LabelMap g = grid_partition(Dims{4, 6}, 2, 3);
  EXPECT_EQ(g.distinct_labels(), 6u);
  EXPECT_EQ(g.at(0, 0), 0u);
  EXPECT_EQ(g.at(3, 5), 5u);
  EXPECT_EQ(g.at(2, 2), 4u);
}
