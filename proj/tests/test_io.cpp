#include <gtest/gtest.h>

#include <filesystem>

#include "zsceval/io.hpp"

using namespace zsceval;

namespace {

Policy sample_policy(bool with_probs) {
  Policy p = Policy::from_function(1000, 6, [](std::size_t o) { return static_cast<int>((o / 37) % 6); }, 1, "pi-7");
  p.epsilon = 0.05;
  if (with_probs) {
    p.probs.resize(1000 * 6);
    for (std::size_t i = 0; i < p.probs.size(); ++i) p.probs[i] = (i % 6 == 0) ? 0.5f : 0.1f;
  }
  return p;
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("zsceval-io-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(PolicyCodec, RoundTripPreservesBehaviorAndMetadata) {
  for (bool probs : {false, true}) {
    const Policy p = sample_policy(probs);
    const json meta = {{"candidate", "abc"}, {"step", 42}};
    const auto s = decode_policy(encode_policy(p, meta));
    EXPECT_TRUE(s.policy.same_behavior(p));
    EXPECT_EQ(s.policy.id, "pi-7");
    EXPECT_EQ(s.policy.agent_slot, 1);
    EXPECT_EQ(s.meta, meta);
    EXPECT_EQ(s.policy.content_hash(), p.content_hash());
  }
}

TEST(PolicyCodec, EncodingIsDeterministic) {
  EXPECT_EQ(encode_policy(sample_policy(true)), encode_policy(sample_policy(true)));
}

TEST(PolicyCodec, RunLengthKeepsGreedyTablesSmall) {
  const auto bytes = encode_policy(Policy::constant(100000, 6, 3));
  EXPECT_LT(bytes.size(), 100u);
}

TEST(PolicyCodec, CorruptionIsReported) {
  const std::string good = encode_policy(sample_policy(false));
  EXPECT_THROW(decode_policy(good.substr(0, good.size() - 3)), IntegrityError);
  EXPECT_THROW(decode_policy("XXXX" + good.substr(4)), IntegrityError);
  EXPECT_THROW(decode_policy(good + "junk"), IntegrityError);
  std::string wrong_version = good;
  wrong_version[4] = 9;
  EXPECT_THROW(decode_policy(wrong_version), IntegrityError);
}

TEST(PolicyCodec, FileRoundTripAndJsonExport) {
  const auto dir = temp_dir("policy");
  const Policy p = sample_policy(false);
  save_policy(dir / "p.pol", p, {{"k", 1}});
  const auto s = load_policy(dir / "p.pol");
  EXPECT_TRUE(s.policy.same_behavior(p));
  const json j = policy_to_json(s);
  EXPECT_EQ(j["observations"], 1000);
  EXPECT_EQ(j["num_actions"], 6);
  EXPECT_EQ(j["metadata"]["k"], 1);
  // Observation 37 is the first with a nonzero greedy action.
  EXPECT_EQ(j["greedy_nonzero"][0][0], 37);
  EXPECT_EQ(j["greedy_nonzero"][0][1], 1);
  fs::remove_all(dir);
}

TEST(Files, HashesTrackContent) {
  const auto dir = temp_dir("files");
  write_file(dir / "a" / "b.txt", "hello");
  EXPECT_EQ(read_file(dir / "a" / "b.txt"), "hello");
  const auto h = file_hash(dir / "a" / "b.txt");
  EXPECT_EQ(h, content_hash_hex("hello"));
  write_file(dir / "a" / "b.txt", "hellp");
  EXPECT_NE(file_hash(dir / "a" / "b.txt"), h);
  fs::remove_all(dir);
}

TEST(ConfigParsing, TrainConfigRejectsUnknownKeysAndBadValues) {
  const auto c = train_config_from_json(json::parse(R"({"total_steps": 5000, "lr_start": 0.3, "lr_end": 0.3})"));
  EXPECT_EQ(c.total_steps, 5000u);
  EXPECT_DOUBLE_EQ(c.lr_start, 0.3);
  EXPECT_THROW(train_config_from_json(json::parse(R"({"total_step": 5})")), ConfigError);
  EXPECT_THROW(train_config_from_json(json::parse(R"({"lr_start": "fast"})")), ConfigError);
  EXPECT_THROW(train_config_from_json(json::parse(R"({"lr_start": 0.1, "lr_end": 0.5})")), ConfigError);
  EXPECT_THROW(train_config_from_json(json::parse(R"({"algorithm": "ppo"})")), ConfigError);
}

TEST(ConfigParsing, TrainConfigRoundTrips) {
  TrainConfig c;
  c.total_steps = 1234;
  c.q_init = 5;
  c.aux_event_reward = {0, 1, 2};
  c.algorithm = Algorithm::independent_pg;
  const auto d = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(d), to_json(c));
}

TEST(ConfigParsing, RewardSpaceSection) {
  const auto s = reward_space_from_json(json::parse(R"({"menus": "kitchen-default", "c_max": 2})"));
  EXPECT_EQ(s.menus, RewardSpaceSpec::kitchen_default().menus);
  EXPECT_EQ(s.c_max, 2);
  EXPECT_THROW(reward_space_from_json(json::parse(R"({"menus": "overcooked"})")), ConfigError);
  EXPECT_THROW(reward_space_from_json(json::parse(R"({"menus": [[0, 50]]})")), ConfigError);
  EXPECT_THROW(reward_space_from_json(json::parse(R"({"cmax": 2})")), ConfigError);
}

TEST(ConfigParsing, MetricsSection) {
  const auto m = metric_config_from_json(json::parse(R"({"aggregator": "mean", "ci_level": 0.9})"));
  EXPECT_EQ(to_string(m.aggregator), "mean");
  EXPECT_DOUBLE_EQ(m.ci_level, 0.9);
  EXPECT_THROW(metric_config_from_json(json::parse(R"({"aggregator": "median-of-means"})")), ConfigError);
  EXPECT_THROW(metric_config_from_json(json::parse(R"({"ci_level": 1.5})")), ConfigError);
}

TEST(ConfigParsing, MatrixGames) {
  EXPECT_EQ(matrix_preset("coordination").schema().size(), 4u);
  EXPECT_EQ(matrix_preset("relay").nodes().size(), 3u);
  EXPECT_THROW(matrix_preset("chicken"), ConfigError);
  const auto g = matrix_game_from_json(json::parse(R"({
    "type": "matrix", "actions": [2, 2], "events": ["x"],
    "nodes": [{"depth": 0, "outcomes": [
      {"reward": 1, "events": [[1], [0]]}, {"reward": 0}, {"reward": 0}, {"reward": 2}]}]})"));
  EXPECT_EQ(g.nodes()[0].outcomes[3].reward, 2.0);
  EXPECT_EQ(g.nodes()[0].outcomes[0].events[0][0], 1.0);
  EXPECT_THROW(matrix_game_from_json(json::parse(R"({"actions": [2, 2], "events": ["x"],
    "nodes": [{"depth": 0, "outcomes": [{"events": [[1, 2], [0]]}]}]})")), ConfigError);
  EXPECT_THROW(matrix_game_from_json(json::parse(R"({"actions": [2, 2]})")), ConfigError);
}

TEST(ConfigParsing, KitchenSection) {
  const auto k = kitchen_config_from_json(json::parse(R"({"type": "kitchen", "horizon": 50, "cook_time": 4})"));
  EXPECT_EQ(k.horizon, 50);
  EXPECT_EQ(k.cook_time, 4);
  EXPECT_THROW(kitchen_config_from_json(json::parse(R"({"layout_file": "/nonexistent/layout.txt"})")), ConfigError);
  EXPECT_THROW(kitchen_config_from_json(json::parse(R"({"colour": "blue"})")), ConfigError);
}
