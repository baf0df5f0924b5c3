#include <gtest/gtest.h>

#include <random>

#include "hierspx/decode.hpp"
#include "oracles.hpp"

using namespace hierspx;

namespace {

AssignmentField random_field(Dims fine, std::mt19937_64& rng, double tau = 0.2) {
  FeatureMap f = oracle::random_map(fine.height, fine.width, 3, rng);
  SeedGrid s{oracle::random_map((fine.height + 1) / 2, (fine.width + 1) / 2, 3, rng)};
  ClusteringConfig cfg;
  cfg.tau = tau;
  return soft_assign(f, s, ProjectionPair::identity(3), cfg);
}

// Fields for an L-level hierarchy above `fine`, ordered coarsest first.
std::vector<AssignmentField> random_chain(Dims fine, std::size_t levels, std::mt19937_64& rng) {
  std::vector<AssignmentField> fine_first;
  Dims d = fine;
  for (std::size_t l = 0; l < levels; ++l) {
    fine_first.push_back(random_field(d, rng));
    d = half_dims(d);
  }
  return {fine_first.rbegin(), fine_first.rend()};
}

std::vector<std::reference_wrapper<const AssignmentField>> refs(
    const std::vector<AssignmentField>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

TEST(DecodeOnce, ConstantCoarseStaysConstant) {
  std::mt19937_64 rng(1);
  AssignmentField f = random_field(Dims{9, 7}, rng);
  FeatureMap coarse(f.seed_dims(), 2, 3.5);
  FeatureMap out = decode_once(f, coarse);
  for (double v : out.data()) EXPECT_NEAR(v, 3.5, 1e-14);
}

TEST(DecodeOnce, HardFieldCopiesWinner) {
  std::mt19937_64 rng(2);
  HardAssignment h = hard_assign(random_field(Dims{8, 8}, rng));
  FeatureMap coarse = oracle::random_map(4, 4, 3, rng);
  FeatureMap out = decode_once(h.field, coarse);
  for (std::size_t p = 0; p < out.pixels(); ++p)
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_EQ(out.pixel(p)[c], coarse.pixel(h.labels[p])[c]);
}

TEST(DecodeOnce, MatchesDenseProduct) {
  std::mt19937_64 rng(3);
  for (auto d : {Dims{16, 16}, Dims{11, 6}, Dims{4, 13}}) {
    AssignmentField f = random_field(d, rng);
    FeatureMap coarse = oracle::random_map(f.seed_dims().height, f.seed_dims().width, 4, rng);
    FeatureMap ref = oracle::apply_dense(oracle::dense_of(f), coarse, d);
    EXPECT_LT(oracle::max_abs_diff(decode_once(f, coarse).data(), ref.data()), 1e-12);
  }
}

TEST(DecodeOnce, DimensionMismatchRejected) {
  std::mt19937_64 rng(4);
  AssignmentField f = random_field(Dims{8, 8}, rng);
  EXPECT_THROW(decode_once(f, FeatureMap(3, 4, 1)), InvalidInput);
}

TEST(DecodeOnce, CountsMultiplyAdds) {
  std::mt19937_64 rng(5);
  AssignmentField f = random_field(Dims{10, 12}, rng);
  std::size_t macs = 0;
  DecodeOptions opts;
  opts.mac_counter = &macs;
  decode_once(f, FeatureMap(f.seed_dims(), 3), opts);
  EXPECT_EQ(macs, f.total_entries() * 3);
  EXPECT_LE(macs, 10u * 12u * 9u * 3u);
}

TEST(DecodeOnce, ThreadedMatchesSerialBitwise) {
  std::mt19937_64 rng(6);
  AssignmentField f = random_field(Dims{37, 23}, rng);
  FeatureMap coarse = oracle::random_map(f.seed_dims().height, f.seed_dims().width, 5, rng);
  DecodeOptions par;
  par.threads = 3;
  EXPECT_EQ(decode_once(f, coarse).data(), decode_once(f, coarse, par).data());
}

TEST(DecodeHierarchy, EmptyPlanIsIdentity) {
  std::mt19937_64 rng(7);
  FeatureMap m = oracle::random_map(3, 5, 2, rng);
  DecodePlan plan({});
  EXPECT_EQ(decode_hierarchy(plan, m).data(), m.data());
}

TEST(DecodeHierarchy, FinalFactorAppliesBilinear) {
  std::mt19937_64 rng(8);
  FeatureMap m = oracle::random_map(3, 5, 2, rng);
  DecodePlan plan({}, 4);
  EXPECT_LT(oracle::max_abs_diff(decode_hierarchy(plan, m).data(),
                                 oracle::bilinear(m, 4).data()),
            1e-14);
  EXPECT_THROW(DecodePlan({}, 0), InvalidInput);
}

TEST(DecodeHierarchy, TwoHardFieldsMatchComposedLabels) {
  std::mt19937_64 rng(9);
  auto chain = random_chain(Dims{12, 12}, 2, rng);
  std::vector<AssignmentField> hard;
  for (const auto& f : chain) hard.push_back(hard_assign(f).field);
  FeatureMap coarsest = oracle::random_map(3, 3, 2, rng);
  FeatureMap out = decode_hierarchy(DecodePlan(refs(hard)), coarsest);
  LabelMap labels = oracle::compose_two(chain[0], chain[1]);
  for (std::size_t p = 0; p < out.pixels(); ++p)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out.pixel(p)[c], coarsest.pixel(labels[p])[c]);
}

TEST(DecodeHierarchy, TwoSoftFieldsMatchDenseProduct) {
  std::mt19937_64 rng(10);
  for (auto d : {Dims{8, 8}, Dims{7, 6}, Dims{16, 16}}) {
    auto chain = random_chain(d, 2, rng);
    Matrix product = oracle::matmul(oracle::dense_of(chain[1]), oracle::dense_of(chain[0]));
    FeatureMap coarsest = oracle::random_map(chain[0].seed_dims().height,
                                             chain[0].seed_dims().width, 3, rng);
    FeatureMap ref = oracle::apply_dense(product, coarsest, d);
    FeatureMap out = decode_hierarchy(DecodePlan(refs(chain)), coarsest);
    EXPECT_LT(oracle::max_abs_diff(out.data(), ref.data()), 1e-12);
  }
}

TEST(DecodeHierarchy, ConstantThroughAnyPlan) {
  std::mt19937_64 rng(11);
  for (std::size_t levels = 1; levels <= 3; ++levels) {
    auto chain = random_chain(Dims{19, 24}, levels, rng);
    FeatureMap coarsest(chain[0].seed_dims(), 2, -0.75);
    for (std::size_t factor : {1u, 2u}) {
      FeatureMap out = decode_hierarchy(DecodePlan(refs(chain), factor), coarsest);
      for (double v : out.data()) EXPECT_NEAR(v, -0.75, 1e-9);
    }
  }
}

TEST(DecodeHierarchy, IsLinear) {
  std::mt19937_64 rng(12);
  auto chain = random_chain(Dims{16, 12}, 3, rng);
  DecodePlan plan(refs(chain), 2);
  Dims cd = chain[0].seed_dims();
  for (int t = 0; t < 10; ++t) {
    FeatureMap y1 = oracle::random_map(cd.height, cd.width, 3, rng);
    FeatureMap y2 = oracle::random_map(cd.height, cd.width, 3, rng);
    double a = 0.6, b = -2.1;
    FeatureMap mix(cd, 3);
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = a * y1.data()[i] + b * y2.data()[i];
    FeatureMap lhs = decode_hierarchy(plan, mix);
    FeatureMap d1 = decode_hierarchy(plan, y1), d2 = decode_hierarchy(plan, y2);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      double rhs = a * d1.data()[i] + b * d2.data()[i];
      EXPECT_LE(std::abs(lhs.data()[i] - rhs), 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST(DecodeHierarchy, ChainMismatchRejected) {
  std::mt19937_64 rng(13);
  AssignmentField a = random_field(Dims{8, 8}, rng);
  AssignmentField b = random_field(Dims{8, 8}, rng);
  std::vector<std::reference_wrapper<const AssignmentField>> bad{a, b};
  EXPECT_THROW(DecodePlan{bad}, InvalidInput);
  DecodePlan ok({std::cref(a)});
  EXPECT_THROW(decode_hierarchy(ok, FeatureMap(2, 2, 1)), InvalidInput);
}

TEST(ComposeHardLabels, SingleLevelEqualsHardAssign) {
  std::mt19937_64 rng(14);
  AssignmentField f = random_field(Dims{10, 10}, rng);
  EXPECT_EQ(compose_hard_labels({std::cref(f)}).labels(), hard_assign(f).labels.labels());
}

TEST(ComposeHardLabels, TwoLevelsMatchTwoHopLookup) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 10; ++t) {
    auto chain = random_chain(Dims{14, 18}, 2, rng);
    EXPECT_EQ(compose_hard_labels(refs(chain)).labels(),
              oracle::compose_two(chain[0], chain[1]).labels());
  }
}

TEST(ComposeHardLabels, LabelCountBoundedBySeeds) {
  std::mt19937_64 rng(16);
  for (std::size_t levels = 1; levels <= 5; ++levels) {
    Dims d{64, 96};
    auto chain = random_chain(d, levels, rng);
    std::size_t bound = ((d.height + (1u << levels) - 1) >> levels) *
                        ((d.width + (1u << levels) - 1) >> levels);
    EXPECT_LE(compose_hard_labels(refs(chain)).distinct_labels(), bound);
  }
}

TEST(ComposeHardLabels, LocalityBound) {
  std::mt19937_64 rng(17);
  for (std::size_t levels = 1; levels <= 3; ++levels) {
    Dims d{24, 20};
    auto chain = random_chain(d, levels, rng);
    LabelMap labels = compose_hard_labels(refs(chain));
    Dims cd = chain[0].seed_dims();
    long limit = levels == 1 ? 1 : 2;
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        long ly = labels.at(y, x) / cd.width, lx = labels.at(y, x) % cd.width;
        long cy = static_cast<long>(y >> levels), cx = static_cast<long>(x >> levels);
        EXPECT_LE(std::max(std::labs(ly - cy), std::labs(lx - cx)), limit);
      }
  }
}

TEST(ComposeHardLabels, EmptyRejected) {
  EXPECT_THROW(compose_hard_labels({}), InvalidInput);
}
