#include <gtest/gtest.h>

#include "zsceval/core/kitchen.hpp"
#include "zsceval/metrics.hpp"

using namespace zsceval;

namespace {

// Weighted-trim oracle: expands each value into `scale` equal slices and
// averages the middle half of the slices.
double iqm_by_expansion(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t scale = 4;
  std::vector<double> slices;
  for (double x : v)
    for (std::size_t i = 0; i < scale; ++i) slices.push_back(x);
  const std::size_t n = slices.size();
  double total = 0.0;
  for (std::size_t i = n / 4; i < 3 * n / 4; ++i) total += slices[i];
  return total / static_cast<double>(n / 2);
}

std::vector<double> ranks(std::initializer_list<double> r) { return std::vector<double>(r); }

MetricConfig config(Aggregator a = Aggregator::iqm, double level = 0.95) {
  MetricConfig c;
  c.aggregator = a;
  c.ci_level = level;
  c.bootstrap_resamples = 2000;
  return c;
}

}  // namespace

// ---- IQM ---------------------------------------------------------------------

TEST(Iqm, DropsTheOuterQuartiles) {
  const std::vector<double> v = {8, 1, 7, 2, 6, 3, 5, 4};
  EXPECT_DOUBLE_EQ(iqm(v), 4.5);
}

TEST(Iqm, SyntheticRatios) {
  const std::vector<double> v = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  EXPECT_NEAR(iqm(v), 0.45, 1e-12);
}

TEST(Iqm, ConstantSample) {
  for (std::size_t n = 1; n < 12; ++n) {
    const std::vector<double> v(n, 2.75);
    EXPECT_NEAR(iqm(v), 2.75, 1e-12);
  }
}

TEST(Iqm, FractionalTrimOnFiveValues) {
  const std::vector<double> v = {1, 2, 3, 4, 5};
  EXPECT_NEAR(iqm(v), 3.0, 1e-12);
}

TEST(Iqm, MatchesTheSliceExpansionOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> v(1 + uniform_index(rng, 15));
    for (auto& x : v) x = std::round(uniform01(rng) * 100) / 10;
    EXPECT_NEAR(iqm(v), iqm_by_expansion(v), 1e-9) << "n=" << v.size();
  }
}

TEST(Iqm, BoundedAndEquivariant) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(2 + uniform_index(rng, 10));
    for (auto& x : v) x = uniform01(rng) * 10 - 3;
    const double m = iqm(v);
    EXPECT_GE(m, *std::min_element(v.begin(), v.end()) - 1e-12);
    EXPECT_LE(m, *std::max_element(v.begin(), v.end()) + 1e-12);
    auto w = v;
    for (auto& x : w) x = 2.5 * x + 1;
    EXPECT_NEAR(iqm(w), 2.5 * m + 1, 1e-9);
  }
}

TEST(Aggregate, MeanAndMedian) {
  const std::vector<double> v = {1, 2, 10};
  EXPECT_DOUBLE_EQ(aggregate(v, Aggregator::mean), 13.0 / 3);
  EXPECT_DOUBLE_EQ(aggregate(v, Aggregator::median), 2.0);
  const auto r = interquartile_range(v);
  EXPECT_DOUBLE_EQ(r.lo, 1.5);
  EXPECT_DOUBLE_EQ(r.hi, 6.0);
  EXPECT_THROW(aggregator_from_string("trimmed"), ConfigError);
}

// ---- bootstrap ------------------------------------------------------------------

TEST(Bootstrap, IdenticalReturnsGiveADegenerateInterval) {
  const std::vector<std::vector<double>> strata(5, std::vector<double>(20, 7.0));
  const auto ci = bootstrap_ci(strata, config(), 1);
  EXPECT_NEAR(ci.lo, 7.0, 1e-12);
  EXPECT_NEAR(ci.hi, 7.0, 1e-12);
}

TEST(Bootstrap, DeterministicForAFixedSeed) {
  Rng rng(2);
  std::vector<std::vector<double>> strata(6, std::vector<double>(30));
  for (auto& s : strata)
    for (auto& x : s) x = uniform01(rng) * 20;
  const auto a = bootstrap_ci(strata, config(), 99);
  const auto b = bootstrap_ci(strata, config(), 99);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  const auto c = bootstrap_ci(strata, config(), 100);
  EXPECT_TRUE(a.lo != c.lo || a.hi != c.hi);
}

TEST(Bootstrap, NarrowLevelNestsInsideWideLevel) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> strata(8, std::vector<double>(25));
    for (auto& s : strata)
      for (auto& x : s) x = uniform01(rng) * 40;
    const auto narrow = bootstrap_ci(strata, config(Aggregator::iqm, 0.5), trial);
    const auto wide = bootstrap_ci(strata, config(Aggregator::iqm, 0.95), trial);
    EXPECT_LE(wide.lo, narrow.lo);
    EXPECT_GE(wide.hi, narrow.hi);
  }
}

TEST(Bootstrap, WiderEpisodeVarianceNeverNarrowsTheInterval) {
  Rng rng(4);
  for (int repeat = 0; repeat < 20; ++repeat) {
    std::vector<std::vector<double>> noise(6, std::vector<double>(30));
    for (auto& s : noise)
      for (auto& x : s) x = standard_normal(rng);
    double prev = -1.0;
    for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
      auto strata = noise;
      for (auto& s : strata)
        for (auto& x : s) x = 10.0 + sigma * x;
      const auto ci = bootstrap_ci(strata, config(), 1234);
      EXPECT_GE(ci.hi - ci.lo, prev) << "repeat " << repeat << " sigma " << sigma;
      prev = ci.hi - ci.lo;
    }
  }
}

TEST(Bootstrap, RatiosAreInvariantToRewardScale) {
  Rng rng(5);
  std::vector<std::vector<double>> strata(5, std::vector<double>(20));
  std::vector<double> denom(5);
  for (std::size_t s = 0; s < 5; ++s) {
    denom[s] = 10 + uniform01(rng) * 10;
    for (auto& x : strata[s]) x = uniform01(rng) * denom[s];
  }
  auto scaled = strata;
  auto scaled_denom = denom;
  for (std::size_t s = 0; s < 5; ++s) {
    for (auto& x : scaled[s]) x *= 4.0;
    scaled_denom[s] *= 4.0;
  }
  const auto a = bootstrap_ci(strata, denom, config(), 8);
  const auto b = bootstrap_ci(scaled, scaled_denom, config(), 8);
  EXPECT_NEAR(a.lo, b.lo, 1e-12);
  EXPECT_NEAR(a.hi, b.hi, 1e-12);
}

TEST(Bootstrap, RejectsTinyStrataAndBadLevels) {
  const std::vector<std::vector<double>> one = {{1.0}};
  EXPECT_THROW(bootstrap_ci(one, config(), 0), PreconditionError);
  const std::vector<std::vector<double>> ok = {{1.0, 2.0}};
  EXPECT_THROW(bootstrap_ci(ok, config(Aggregator::iqm, 1.0), 0), ConfigError);
}

// ---- rank correlation ---------------------------------------------------------

TEST(Spearman, IdenticalAndReversed) {
  EXPECT_DOUBLE_EQ(spearman(ranks({1, 2, 3, 4, 5}), ranks({1, 2, 3, 4, 5})).r_s, 1.0);
  EXPECT_DOUBLE_EQ(spearman(ranks({1, 2, 3, 4, 5}), ranks({5, 4, 3, 2, 1})).r_s, -1.0);
}

TEST(Spearman, CoordinationRingRankings) {
  const auto human = ranks({3, 1, 2, 4, 5});
  EXPECT_NEAR(spearman(human, ranks({2, 1, 3, 4, 5})).r_s, 0.90, 1e-12);
  EXPECT_NEAR(spearman(human, ranks({4, 1, 3, 2, 5})).r_s, 0.70, 1e-12);
}

TEST(Spearman, CounterCircuitRankings) {
  const auto human = ranks({1, 3, 2, 4, 5});
  EXPECT_NEAR(spearman(human, ranks({1, 3, 2, 4, 5})).r_s, 1.00, 1e-12);
  EXPECT_NEAR(spearman(human, ranks({3, 1, 2, 4, 5})).r_s, 0.60, 1e-12);
  EXPECT_NEAR(spearman(human, ranks({4, 3, 2, 1, 5})).r_s, 0.10, 1e-12);
}

TEST(Spearman, WorksOnScoresAndAveragesTies) {
  // Scores rather than ranks: only the order matters.
  EXPECT_DOUBLE_EQ(spearman(ranks({0.1, 0.5, 0.9}), ranks({10, 20, 300})).r_s, 1.0);
  EXPECT_EQ(average_ranks(ranks({5, 1, 5, 3})), (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_THROW(spearman(ranks({1, 2}), ranks({1, 2, 3})), PreconditionError);
}

// ---- skill split ----------------------------------------------------------------

TEST(SkillSplit, EvenCount) {
  const std::vector<double> sp = {0, 10, 20, 40};
  const auto s = skill_split(sp);
  EXPECT_DOUBLE_EQ(s.median, 15.0);
  EXPECT_EQ(s.moderate, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.expert, (std::vector<std::size_t>{2, 3}));
}

TEST(SkillSplit, OddCount) {
  const std::vector<double> sp = {20, 0, 10};
  const auto s = skill_split(sp);
  EXPECT_DOUBLE_EQ(s.median, 10.0);
  EXPECT_EQ(s.moderate, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(s.expert, (std::vector<std::size_t>{0}));
}

TEST(SkillSplit, AllEqualIsAllModerate) {
  const std::vector<double> sp = {5, 5, 5};
  set_warnings_enabled(false);
  const auto s = skill_split(sp);
  set_warnings_enabled(true);
  EXPECT_EQ(s.moderate.size(), 3u);
  EXPECT_TRUE(s.expert.empty());
}

// ---- BR-Prox -----------------------------------------------------------------------

namespace {

TrainConfig kitchen_train(std::uint64_t steps, std::uint64_t seed) {
  TrainConfig c;
  c.total_steps = steps;
  c.lr_start = c.lr_end = 0.3;
  c.q_init = 5.0;
  c.policy_epsilon = 0.05;
  c.aux_event_reward = {0, 0, 0, 3, 5, 3, 0, 0, 0, 0};
  c.seed = seed;
  return c;
}

// One trained kitchen partner with its best response.
PartnerSet single_partner_set(const MiniKitchen& env) {
  static const CandidatePair cand =
      approximate_ne(env, RewardWeights(std::vector<double>(env.schema().size(), 0.0)), kitchen_train(2000000, 0));
  const std::vector<const CandidatePair*> eligible = {&cand};
  SelectionResult sel;
  sel.indices = {0};
  sel.value = 1.0;
  auto ps = make_partner_set(eligible, sel, Criterion::br_div);
  train_partner_brs(env, ps, kitchen_train(2000000, 0), 3);
  return ps;
}

}  // namespace

TEST(BrProx, BestResponseAgainstItsOwnPartnerScoresOne) {
  const MiniKitchen env;
  const auto ps = single_partner_set(env);
  ASSERT_EQ(ps.brs.size(), 1u);
  const auto rep = br_prox(env, ps.brs[0].policy, ps, 200, config(), 5);
  ASSERT_EQ(rep.combinations.size(), 1u);
  const auto& c = rep.combinations[0];
  const double se = std::hypot(standard_error(c.ego_returns), ps.brs[0].estimate.standard_error()) / c.br_return;
  EXPECT_NEAR(rep.point_estimate(), 1.0, 2 * se);
  EXPECT_LE(rep.overall.ci.lo, rep.point_estimate());
  EXPECT_GE(rep.overall.ci.hi, rep.point_estimate());
}

TEST(BrProx, StayingEgoScoresZero) {
  const MiniKitchen env;
  using K = MiniKitchen;
  const auto ps = single_partner_set(env);
  const auto stay = Policy::constant(env.observation_count(), K::kNumActions, K::kStay, ps.ego_slot, "stay");
  const auto rep = br_prox(env, stay, ps, 20, config(), 5);
  for (const auto& c : rep.combinations) EXPECT_EQ(c.ratio, 0.0);
  EXPECT_EQ(rep.point_estimate(), 0.0);
}

TEST(BrProx, ZeroBestResponseReturnsAreExcluded) {
  const MiniKitchen env;
  using K = MiniKitchen;
  auto ps = single_partner_set(env);
  ps.brs[0].estimate = ReturnEstimate::from({0.0, 0.0});
  const auto stay = Policy::constant(env.observation_count(), K::kNumActions, K::kStay, ps.ego_slot, "stay");
  set_warnings_enabled(false);
  EXPECT_THROW(br_prox(env, stay, ps, 20, config(), 5), PreconditionError);
  set_warnings_enabled(true);
}

TEST(BrProx, CombinationSeedsDependOnlyOnPartners) {
  const std::vector<std::string> a = {"p1"}, b = {"p2"};
  EXPECT_EQ(combination_seed(1, a), combination_seed(1, a));
  EXPECT_NE(combination_seed(1, a), combination_seed(1, b));
  EXPECT_NE(combination_seed(1, a), combination_seed(2, a));
}
