#include <gtest/gtest.h>

#include <set>

#include "zsceval/common.hpp"
#include "zsceval/parallel.hpp"

using namespace zsceval;

TEST(Common, RequireThrowsTypedError) {
  EXPECT_NO_THROW(require(true, "never"));
  EXPECT_THROW(require(false, "x"), PreconditionError);
  EXPECT_THROW(require<ConfigError>(false, "x"), ConfigError);
  try {
    require<IntegrityError>(false, "value ", 3, " bad");
  } catch (const IntegrityError& e) {
    EXPECT_STREQ(e.what(), "value 3 bad");
  }
}

TEST(Common, DeriveSeedIsStableAndKeyed) {
  EXPECT_EQ(derive_seed(1, "generate", "a"), derive_seed(1, "generate", "a"));
  EXPECT_NE(derive_seed(1, "generate", "a"), derive_seed(1, "generate", "b"));
  EXPECT_NE(derive_seed(1, "generate", "a"), derive_seed(2, "generate", "a"));
  EXPECT_NE(derive_seed(1, "generate", "a"), derive_seed(1, "select", "a"));
  // Stage and item are not simply concatenated.
  EXPECT_NE(derive_seed(1, "ab", "c"), derive_seed(1, "a", "bc"));
}

TEST(Common, FnvMatchesPublishedVectors) {
  // 64-bit FNV-1a test vectors.
  EXPECT_EQ(Fnv1a().bytes("", 0).value(), 0xcbf29ce484222325ULL);
  EXPECT_EQ(Fnv1a().bytes("a", 1).value(), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(Fnv1a().bytes("foobar", 6).value(), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Common, UniformIndexCoversRange) {
  Rng rng(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = uniform_index(rng, 7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Common, MeanAndStandardError) {
  const std::vector<double> x = {1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(mean_of(x), 2.5);
  // Sample sd = sqrt(5/3), se = sd / 2.
  EXPECT_NEAR(standard_error(x), std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
}

TEST(Parallel, VisitsEveryIndexOnce) {
  for (int workers : {1, 3, 8}) {
    std::vector<int> hits(100, 0);
    parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}

TEST(Parallel, RethrowsLowestFailingIndex) {
  try {
    parallel_for(50, 4, [](std::size_t i) {
      if (i == 7 || i == 30) throw std::runtime_error("job " + std::to_string(i));
    });
    FAIL() << "no exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "job 7");
  }
}
