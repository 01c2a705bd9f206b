#include <gtest/gtest.h>

#include <chrono>

#include "zsceval/pipeline.hpp"

using namespace zsceval;

namespace {

const fs::path kSmoke = fs::path(ZSCEVAL_SOURCE_DIR) / "configs" / "smoke_matrix.json";

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("zsceval-pipeline-" + name);
  fs::remove_all(d);
  return d;
}

PipelineConfig smoke(const fs::path& out) {
  ConfigOverrides ov;
  ov.output_dir = out;
  return load_pipeline_config(kSmoke, ov);
}

struct RunOutcomes {
  StageOutcome generate, select, brs, evaluate, benchmark, compare;
};

RunOutcomes run_all(const PipelineConfig& c, int workers = 1) {
  fs::create_directories(c.output_dir);
  Manifest m(c.output_dir, c.config_hash);
  const AnyEnv env = make_env(c);
  RunOutcomes r;
  std::visit(
      [&](const auto& e) {
        r.generate = run_generate(e, c, m, workers);
        r.select = run_select(e, c, m);
        r.brs = run_train_brs(e, c, m, workers);
        r.evaluate = run_evaluate(e, c, m, {});
        r.benchmark = run_benchmark_stage(e, c, m, workers);
        r.compare = run_compare_selection(e, c, m);
      },
      env);
  return r;
}

template <typename F>
void with_env(const PipelineConfig& c, F&& f) {
  Manifest m(c.output_dir, c.config_hash);
  const AnyEnv env = make_env(c);
  std::visit([&](const auto& e) { f(e, m); }, env);
}

}  // namespace

TEST(Pipeline, SmokeRunCompletesAndIsSelfConsistent) {
  set_warnings_enabled(false);
  const auto c = smoke(fresh_dir("smoke"));
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run_all(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  set_warnings_enabled(true);
  EXPECT_LT(secs, 60.0);
  EXPECT_FALSE(r.generate.skipped);
  EXPECT_EQ(r.generate.summary["candidates"], 16);
  // Every combination's own BR, scored against that combination, is 1.
  EXPECT_NEAR(r.evaluate.summary["min_br_prox"].get<double>(), 1.0, 0.05);
  EXPECT_NEAR(r.evaluate.summary["max_br_prox"].get<double>(), 1.0, 0.05);
  for (const char* f : {"generate/weights.json", "generate/candidates.json", "generate/features.csv",
                        "select/report.json", "select/partner_set.json", "train-brs/partner_set.json",
                        "evaluate/self-consistency/report.json", "benchmark/results.json", "benchmark/rankings.csv",
                        "benchmark/leaderboard.txt", "compare-selection/selection_criteria.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(c.output_dir / f)) << f;
}

TEST(Pipeline, RerunIsANoOp) {
  set_warnings_enabled(false);
  const auto c = smoke(fresh_dir("rerun"));
  run_all(c);
  const std::string before = read_file(c.output_dir / "manifest.json");
  const auto r = run_all(c);
  set_warnings_enabled(true);
  EXPECT_TRUE(r.generate.skipped);
  EXPECT_TRUE(r.select.skipped);
  EXPECT_TRUE(r.brs.skipped);
  EXPECT_TRUE(r.evaluate.skipped);
  EXPECT_TRUE(r.benchmark.skipped);
  EXPECT_TRUE(r.compare.skipped);
  EXPECT_EQ(read_file(c.output_dir / "manifest.json"), before);
}

TEST(Pipeline, UnchangedTrainingJobsAreReusedAcrossConfigChanges) {
  set_warnings_enabled(false);
  const fs::path out = fresh_dir("reuse");
  const auto c = smoke(out);
  run_all(c);
  // A looser B_max admits the same weights, so every job key survives.
  json j = json::parse(read_file(kSmoke));
  j["reward_space"]["b_max"] = 7;
  ConfigOverrides ov;
  ov.output_dir = out;
  const auto changed = parse_pipeline_config(j.dump(), kSmoke.parent_path(), ov);
  ASSERT_NE(changed.config_hash, c.config_hash);
  StageOutcome g;
  with_env(changed, [&](const auto& e, Manifest& m) { g = run_generate(e, changed, m, 1); });
  set_warnings_enabled(true);
  EXPECT_FALSE(g.skipped);
  EXPECT_EQ(g.summary["trained"], 0);
  EXPECT_EQ(g.summary["reused"], 16);
}

TEST(Pipeline, CorruptedArtifactIsNamed) {
  set_warnings_enabled(false);
  const auto c = smoke(fresh_dir("corrupt"));
  run_all(c);
  set_warnings_enabled(true);
  fs::path victim;
  for (const auto& entry : fs::directory_iterator(c.output_dir / "train-brs" / "policies")) {
    victim = entry.path();
    break;
  }
  ASSERT_FALSE(victim.empty());
  std::string data = read_file(victim);
  data[data.size() / 2] ^= 0x5a;
  write_file(victim, data);
  EvaluateRequest req;
  req.ego_name = "random";
  try {
    with_env(c, [&](const auto& e, Manifest& m) { run_evaluate(e, c, m, req); });
    FAIL() << "corruption went unnoticed";
  } catch (const IntegrityError& err) {
    EXPECT_NE(std::string(err.what()).find(victim.string()), std::string::npos) << err.what();
  }
  Manifest m(c.output_dir);
  EXPECT_THROW(m.verify_all(), IntegrityError);
}

TEST(Pipeline, MissingUpstreamNamesTheCommand) {
  const auto c = smoke(fresh_dir("missing"));
  fs::create_directories(c.output_dir);
  try {
    with_env(c, [&](const auto& e, Manifest& m) { run_select(e, c, m); });
    FAIL() << "select ran without generate";
  } catch (const MissingUpstreamError& err) {
    EXPECT_NE(std::string(err.what()).find("zsc_eval generate"), std::string::npos) << err.what();
  }
  try {
    with_env(c, [&](const auto& e, Manifest& m) { run_evaluate(e, c, m, {}); });
    FAIL() << "evaluate ran without train-brs";
  } catch (const MissingUpstreamError& err) {
    EXPECT_NE(std::string(err.what()).find("zsc_eval train-brs"), std::string::npos) << err.what();
  }
}

TEST(Pipeline, ManifestCoversEveryArtifact) {
  set_warnings_enabled(false);
  const auto c = smoke(fresh_dir("manifest"));
  run_all(c);
  set_warnings_enabled(true);
  const json j = json::parse(read_file(c.output_dir / "manifest.json"));
  EXPECT_EQ(j["tool_version"], kToolVersion);
  EXPECT_EQ(j["config_hash"], c.config_hash);
  std::set<std::string> recorded;
  for (const auto& [name, s] : j["stages"].items())
    for (const auto& [rel, h] : s["files"].items()) {
      recorded.insert(rel);
      EXPECT_EQ(file_hash(c.output_dir / rel), h.get<std::string>()) << rel;
    }
  for (const auto& entry : fs::recursive_directory_iterator(c.output_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), c.output_dir).generic_string();
    if (rel == "manifest.json" || rel == "timings.json") continue;
    EXPECT_TRUE(recorded.count(rel)) << rel << " is not in the manifest";
  }
  Manifest m(c.output_dir);
  EXPECT_EQ(m.verify_all(), recorded.size());
}

TEST(Pipeline, IdenticalConfigsGiveIdenticalArtifacts) {
  set_warnings_enabled(false);
  const auto a = smoke(fresh_dir("repro-a"));
  const auto b = smoke(fresh_dir("repro-b"));
  run_all(a, 1);
  run_all(b, 2);
  set_warnings_enabled(true);
  EXPECT_EQ(a.config_hash, b.config_hash);
  EXPECT_EQ(read_file(a.output_dir / "manifest.json"), read_file(b.output_dir / "manifest.json"));
}

TEST(Pipeline, SeedOverrideChangesResults) {
  set_warnings_enabled(false);
  const auto a = smoke(fresh_dir("seed-a"));
  ConfigOverrides ov;
  ov.output_dir = fresh_dir("seed-b");
  ov.seed = 8;
  const auto b = load_pipeline_config(kSmoke, ov);
  EXPECT_NE(a.config_hash, b.config_hash);
  run_all(a);
  run_all(b);
  set_warnings_enabled(true);
  EXPECT_NE(read_file(a.output_dir / "generate" / "candidates.json"),
            read_file(b.output_dir / "generate" / "candidates.json"));
}

TEST(PipelineConfig, RejectsBadConfigs) {
  const fs::path base = ".";
  EXPECT_THROW(parse_pipeline_config("{not json", base), ConfigError);
  EXPECT_THROW(parse_pipeline_config(R"({"env": {"type": "kitchen"}, "colour": 1})", base), ConfigError);
  EXPECT_THROW(parse_pipeline_config(R"({"env": {"type": "go"}})", base), ConfigError);
  EXPECT_THROW(parse_pipeline_config(R"({"env": {"type": "matrix", "preset": "relay"}})", base), ConfigError);
  EXPECT_THROW(parse_pipeline_config(R"({"env": {"type": "kitchen"}, "generation": {"embed_episodes": 10}})", base),
               ConfigError);
  EXPECT_THROW(parse_pipeline_config(R"({"env": {"type": "kitchen"}, "selection": {"criterion": "x-div"}})", base),
               ConfigError);
  EXPECT_THROW(load_pipeline_config("/nonexistent/config.json"), ConfigError);
  const auto ok = parse_pipeline_config(R"({"env": {"type": "kitchen"}, "workers": 3, "output_dir": "x"})", base);
  const auto same = parse_pipeline_config(R"({"env": {"type": "kitchen"}, "workers": 1, "output_dir": "y"})", base);
  EXPECT_EQ(ok.config_hash, same.config_hash);
  EXPECT_EQ(ok.reward_space.menus, RewardSpaceSpec::kitchen_default().menus);
}

TEST(PipelineConfig, SchemaMismatchBetweenMenusAndEnvironment) {
  json j = json::parse(read_file(kSmoke));
  j["reward_space"]["menus"] = json::array({json::array({0, 3})});
  ConfigOverrides ov;
  ov.output_dir = fresh_dir("schema");
  const auto c = parse_pipeline_config(j.dump(), kSmoke.parent_path(), ov);
  fs::create_directories(c.output_dir);
  EXPECT_THROW(with_env(c, [&](const auto& e, Manifest& m) { run_generate(e, c, m, 1); }), SchemaMismatchError);
}
