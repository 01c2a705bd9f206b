#include <gtest/gtest.h>

#include <set>

#include "game_corpus.hpp"
#include "oracles.hpp"
#include "zsceval/core/kitchen.hpp"
#include "zsceval/reward_space.hpp"

using namespace zsceval;

namespace {

RewardSpaceSpec uniform_menu(std::vector<double> menu, std::size_t events, int c_max, double b_max = 20.0) {
  RewardSpaceSpec s;
  s.menus.assign(events, std::move(menu));
  s.c_max = c_max;
  s.b_max = b_max;
  return s;
}

// Counts admissible vectors by scanning the full Cartesian product.
std::size_t brute_force_count(const RewardSpaceSpec& s) {
  std::size_t total = 1;
  for (const auto& m : s.menus) total *= m.size();
  std::size_t admitted = 0;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<double> w;
    std::size_t rest = code;
    for (const auto& m : s.menus) {
      w.push_back(m[rest % m.size()]);
      rest /= m.size();
    }
    int nz = 0;
    double mx = 0.0;
    for (double v : w) {
      nz += v != 0.0;
      mx = std::max(mx, std::abs(v));
    }
    admitted += nz <= s.c_max && mx <= s.b_max;
  }
  return admitted;
}

Transition<int> transition(double base, std::size_t event, double count) {
  Transition<int> t;
  t.base_reward = base;
  t.events[0][event] = count;
  return t;
}

}  // namespace

TEST(RewardSpace, SingleNonzeroMenuOnThreeEvents) {
  const auto s = uniform_menu({-5, 0, 1}, 3, 1);
  const auto all = enumerate_weights(s);
  EXPECT_EQ(all.size(), 7u);
  EXPECT_EQ(s.space_size(), 7u);
  EXPECT_EQ(std::count_if(all.begin(), all.end(), [](const RewardWeights& w) { return w.is_zero(); }), 1);
}

TEST(RewardSpace, AllZeroMenuYieldsOnlyTheZeroVector) {
  const auto s = uniform_menu({0}, 4, 3);
  const auto all = enumerate_weights(s);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_TRUE(all[0].is_zero());
}

TEST(RewardSpace, KitchenDefaultStaysWithinTheCandidateBudget) {
  const auto s = RewardSpaceSpec::kitchen_default();
  s.check_schema(MiniKitchen::event_schema());
  const auto all = enumerate_weights(s);
  EXPECT_LE(all.size(), 194u);
  EXPECT_EQ(all.size(), s.space_size());
  EXPECT_EQ(all.size(), brute_force_count(s));
  std::set<std::string> ids;
  for (const auto& w : all) {
    EXPECT_TRUE(s.admits(w));
    EXPECT_LE(static_cast<int>(w.nonzeros()), s.c_max);
    EXPECT_LE(w.max_abs(), s.b_max);
    ids.insert(w.id);
  }
  EXPECT_EQ(ids.size(), all.size());
}

TEST(RewardSpace, EnumerationMatchesBruteForceOnRandomMenus) {
  Rng rng(11);
  const std::vector<double> values = {-20, -5, -1, 0, 1, 3, 10, 25};
  for (int trial = 0; trial < 40; ++trial) {
    RewardSpaceSpec s;
    const std::size_t events = 1 + uniform_index(rng, 5);
    for (std::size_t k = 0; k < events; ++k) {
      std::vector<double> menu;
      for (double v : values)
        if (uniform01(rng) < 0.4) menu.push_back(v);
      if (menu.empty()) menu.push_back(0.0);
      s.menus.push_back(menu);
    }
    s.c_max = 1 + static_cast<int>(uniform_index(rng, 3));
    s.b_max = 30.0;
    EXPECT_EQ(enumerate_weights(s).size(), brute_force_count(s)) << "trial " << trial;
    EXPECT_EQ(s.space_size(), brute_force_count(s)) << "trial " << trial;
  }
}

TEST(RewardSpace, ValidationRejectsBadMenus) {
  EXPECT_THROW(uniform_menu({-30, 0}, 2, 1).validate(), ConfigError);  // exceeds B_max
  EXPECT_THROW(uniform_menu({1, 1}, 2, 1).validate(), ConfigError);    // duplicate value
  EXPECT_THROW(uniform_menu({0, 1}, 2, 0).validate(), ConfigError);    // C_max < 1
  RewardSpaceSpec empty_menu;
  empty_menu.menus = {{0, 1}, {}};
  EXPECT_THROW(empty_menu.validate(), ConfigError);
  EXPECT_THROW(uniform_menu({0, 1}, 2, 1).check_schema(corpus::schema(3)), SchemaMismatchError);
}

TEST(RewardSpace, SamplingReturnsDistinctAdmissibleMembers) {
  const auto s = RewardSpaceSpec::kitchen_default();
  Rng rng(3);
  const auto sample = enumerate_or_sample_weights(s, 30, rng);
  ASSERT_EQ(sample.weights.size(), 30u);
  EXPECT_FALSE(sample.exhausted);
  std::set<std::string> ids;
  for (const auto& w : sample.weights) {
    EXPECT_TRUE(s.admits(w));
    ids.insert(w.id);
  }
  EXPECT_EQ(ids.size(), 30u);

  set_warnings_enabled(false);
  const auto all = enumerate_or_sample_weights(uniform_menu({-5, 0, 1}, 3, 1), 10, rng);
  set_warnings_enabled(true);
  EXPECT_EQ(all.weights.size(), 7u);
  EXPECT_TRUE(all.exhausted);
}

TEST(RewardSpace, RejectionSamplerOnLargeSpaces) {
  const auto s = uniform_menu({-1, 0, 1}, 12, 12);
  Rng rng(5);
  // A tiny enumeration cap forces the rejection path.
  const auto sample = enumerate_or_sample_weights(s, 50, rng, 10);
  std::set<std::string> ids;
  for (const auto& w : sample.weights) {
    EXPECT_TRUE(s.admits(w));
    ids.insert(w.id);
  }
  EXPECT_EQ(ids.size(), 50u);
}

TEST(ShapedReward, ZeroWeightsLeaveEveryPlayerOnTheBaseReward) {
  const auto schema = MiniKitchen::event_schema();
  const RewardWeights w(std::vector<double>(schema.size(), 0.0));
  for (double base : {0.0, 20.0, -3.5}) {
    const auto r = shaped_reward(schema, w, transition(base, 2, 1.0), 0);
    EXPECT_EQ(r[0], base);
    EXPECT_EQ(r[1], base);
  }
}

TEST(ShapedReward, OnionPickupBonusGoesToTheDesignatedPlayerOnly) {
  const auto schema = MiniKitchen::event_schema();
  std::vector<double> w(schema.size(), 0.0);
  w[static_cast<std::size_t>(schema.index_of("pickup_onion"))] = 10;
  const auto r = shaped_reward(schema, RewardWeights(w), transition(0.0, schema.index_of("pickup_onion"), 1.0), 0);
  EXPECT_EQ(r[0], 10.0);
  EXPECT_EQ(r[1], 0.0);
}

TEST(ShapedReward, DeliveryPenaltyCancelsTheOrderReward) {
  const auto schema = MiniKitchen::event_schema();
  std::vector<double> w(schema.size(), 0.0);
  w[static_cast<std::size_t>(schema.index_of("deliver_soup"))] = -20;
  const auto r = shaped_reward(schema, RewardWeights(w), transition(20.0, schema.index_of("deliver_soup"), 1.0), 0);
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 20.0);
}

TEST(ShapedReward, MultiplicativeEventScalesTheBaseReward) {
  const auto schema = MiniKitchen::event_schema();
  std::vector<double> w(schema.size(), 0.0);
  w[static_cast<std::size_t>(schema.index_of("order_reward"))] = 0.1;
  const auto r = shaped_reward(schema, RewardWeights(w), transition(20.0, 6, 1.0), 0);
  EXPECT_DOUBLE_EQ(r[0], 2.0);
  EXPECT_EQ(r[1], 20.0);
}

TEST(ShapedReward, LinearInTheAdditiveWeights) {
  const auto schema = corpus::schema(3);
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(3), b(3), sum(3);
    Transition<int> t;
    t.base_reward = uniform01(rng) * 10 - 5;
    for (std::size_t k = 0; k < 3; ++k) {
      a[k] = uniform01(rng) * 4 - 2;
      b[k] = uniform01(rng) * 4 - 2;
      sum[k] = a[k] + b[k];
      t.events[0][k] = static_cast<double>(uniform_index(rng, 3));
    }
    const double ra = shaped_player_reward(schema, RewardWeights(a), t, 0) - t.base_reward;
    const double rb = shaped_player_reward(schema, RewardWeights(b), t, 0) - t.base_reward;
    const double rs = shaped_player_reward(schema, RewardWeights(sum), t, 0) - t.base_reward;
    EXPECT_NEAR(rs, ra + rb, 1e-12);
  }
}

TEST(ShapedReward, WrongLengthIsASchemaMismatch) {
  const auto schema = MiniKitchen::event_schema();
  EXPECT_THROW(shaped_reward(schema, RewardWeights({1.0, 2.0}), transition(0, 0, 0), 0), SchemaMismatchError);
}

TEST(RewardWeights, IdentifierIsAFunctionOfTheValues) {
  EXPECT_EQ(RewardWeights({1, 0, -2}).id, RewardWeights({1, 0, -2}).id);
  EXPECT_NE(RewardWeights({1, 0, -2}).id, RewardWeights({1, -2, 0}).id);
}
