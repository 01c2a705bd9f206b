#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "zsceval/io.hpp"

namespace zsceval {

inline constexpr const char* kToolVersion = "zsc-eval 0.1.0";

// ===========================================================================
// Configuration
// ===========================================================================

struct EgoConfig {
  std::string name;
  EgoAlgorithm algorithm = EgoAlgorithm::sp;
  int population_size = 4;
  TrainConfig train;
  TrainConfig stage1;
  std::optional<int> action;  // scripted: constant action
};

struct PipelineConfig {
  json canonical;  // parsed config with overrides applied, minus output_dir and workers
  std::string config_hash;
  std::uint64_t seed = 0;
  fs::path output_dir;
  fs::path base_dir;

  json env;
  RewardSpaceSpec reward_space;
  std::size_t num_candidates = 20;
  int seeds_per_weight = 1;
  int embed_episodes = kMinEmbeddingEpisodes;
  TrainConfig generation_train;

  SelectionConfig selection;
  std::vector<std::size_t> compare_sizes;

  TrainConfig br_train;

  MetricConfig metrics;
  int eval_episodes = 50;

  std::vector<EgoConfig> egos;
  int benchmark_seeds = 1;
  int workers = 1;
};

struct ConfigOverrides {
  std::optional<fs::path> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> criterion;
};

inline EgoConfig ego_config_from_json(const json& j, const TrainConfig& defaults) {
  detail::check_keys(j, "benchmark.egos[]", {"name", "algorithm", "population_size", "train", "stage1", "action"});
  EgoConfig e;
  e.algorithm = ego_algorithm_from_string(j.at("algorithm").get<std::string>());
  e.name = j.value("name", to_string(e.algorithm));
  e.population_size = j.value("population_size", 4);
  e.train = j.contains("train") ? train_config_from_json(j["train"], defaults, "benchmark.egos[].train") : defaults;
  e.stage1 = j.contains("stage1") ? train_config_from_json(j["stage1"], defaults, "benchmark.egos[].stage1") : defaults;
  if (j.contains("action")) e.action = j["action"].get<int>();
  require<ConfigError>(e.algorithm != EgoAlgorithm::scripted || e.action.has_value(), "scripted ego '", e.name,
                       "' needs an 'action'");
  return e;
}

inline PipelineConfig parse_pipeline_config(std::string_view text, const fs::path& base_dir,
                                            const ConfigOverrides& ov = {}) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  detail::check_keys(j, "config",
                     {"seed", "output_dir", "workers", "env", "reward_space", "generation", "selection", "best_response",
                      "metrics", "benchmark"});
  if (ov.seed) j["seed"] = *ov.seed;
  if (ov.criterion) j["selection"]["criterion"] = *ov.criterion;

  PipelineConfig c;
  c.base_dir = base_dir;
  try {
    c.seed = j.value("seed", std::uint64_t{0});
    c.workers = j.value("workers", 1);
    require<ConfigError>(c.workers >= 1, "workers must be >= 1");
    c.output_dir = ov.output_dir ? *ov.output_dir : fs::path(j.value("output_dir", std::string("zsc-eval-out")));
    if (c.output_dir.is_relative() && !ov.output_dir) c.output_dir = base_dir / c.output_dir;

    require<ConfigError>(j.contains("env"), "config needs an 'env' section");
    c.env = j["env"];
    const std::string type = c.env.value("type", std::string());
    require<ConfigError>(type == "kitchen" || type == "matrix", "env.type must be 'kitchen' or 'matrix'");

    if (!j.contains("reward_space")) j["reward_space"] = json::object();
    if (!j["reward_space"].contains("menus")) {
      require<ConfigError>(type == "kitchen", "reward_space.menus is required for matrix games");
      j["reward_space"]["menus"] = "kitchen-default";
    }
    c.reward_space = reward_space_from_json(j["reward_space"]);

    const json gen = j.value("generation", json::object());
    detail::check_keys(gen, "generation", {"num_candidates", "seeds_per_weight", "embed_episodes", "train"});
    c.num_candidates = gen.value("num_candidates", std::size_t{20});
    c.seeds_per_weight = gen.value("seeds_per_weight", 1);
    c.embed_episodes = gen.value("embed_episodes", kMinEmbeddingEpisodes);
    require<ConfigError>(c.num_candidates >= 1, "generation.num_candidates must be >= 1");
    require<ConfigError>(c.seeds_per_weight >= 1, "generation.seeds_per_weight must be >= 1");
    require<ConfigError>(c.embed_episodes >= kMinEmbeddingEpisodes, "generation.embed_episodes must be >= ",
                         kMinEmbeddingEpisodes);
    c.generation_train = train_config_from_json(gen.value("train", json::object()), {}, "generation.train");

    const json sel = j.value("selection", json::object());
    detail::check_keys(sel, "selection", {"subset_size", "dpp_iterations", "mcmc_steps", "criterion", "compare_sizes"});
    c.selection.subset_size = sel.value("subset_size", std::size_t{4});
    c.selection.dpp_iterations = sel.value("dpp_iterations", 20);
    c.selection.mcmc_steps = sel.value("mcmc_steps", 200);
    c.selection.criterion = criterion_from_string(sel.value("criterion", std::string("br-div")));
    c.compare_sizes = sel.value("compare_sizes", std::vector<std::size_t>{});
    require<ConfigError>(c.selection.subset_size >= 1 && c.selection.dpp_iterations >= 1 && c.selection.mcmc_steps >= 0,
                         "selection: subset_size and dpp_iterations must be >= 1");

    const json br = j.value("best_response", json::object());
    detail::check_keys(br, "best_response", {"train"});
    c.br_train = train_config_from_json(br.value("train", json::object()), c.generation_train, "best_response.train");

    json met = j.value("metrics", json::object());
    c.metrics = metric_config_from_json(met);
    c.eval_episodes = met.value("episodes", 50);
    require<ConfigError>(c.eval_episodes >= 2, "metrics.episodes must be >= 2");

    const json bench = j.value("benchmark", json::object());
    detail::check_keys(bench, "benchmark", {"seeds", "egos"});
    c.benchmark_seeds = bench.value("seeds", 1);
    require<ConfigError>(c.benchmark_seeds >= 1, "benchmark.seeds must be >= 1");
    for (const auto& e : bench.value("egos", json::array())) c.egos.push_back(ego_config_from_json(e, c.generation_train));
    std::set<std::string> names;
    for (const auto& e : c.egos) require<ConfigError>(names.insert(e.name).second, "duplicate ego name '", e.name, "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  // Neither the output location nor the worker count changes any result.
  j.erase("output_dir");
  j.erase("workers");
  c.canonical = j;
  c.config_hash = content_hash_hex(j.dump());
  return c;
}

inline PipelineConfig load_pipeline_config(const fs::path& path, const ConfigOverrides& ov = {}) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse_pipeline_config(text, path.has_parent_path() ? path.parent_path() : fs::path("."), ov);
}

using AnyEnv = std::variant<MiniKitchen, EventMatrixGame>;

inline AnyEnv make_env(const PipelineConfig& c) {
  if (c.env.at("type") == "kitchen") return MiniKitchen(kitchen_config_from_json(c.env, c.base_dir));
  return matrix_game_from_json(c.env);
}

// ===========================================================================
// Manifest
// ===========================================================================

struct StageRecord {
  std::string key;
  std::map<std::string, std::string> files;  // relative path -> content hash
  json summary = json::object();
};

// Index of every artifact under the output directory, with content hashes.
// Wall-clock timings live in a separate file so that reruns reproduce the
// manifest byte for byte.
class Manifest {
 public:
  explicit Manifest(fs::path root, std::string config_hash = {}) : root_(std::move(root)), config_hash_(std::move(config_hash)) {
    const fs::path p = root_ / "manifest.json";
    if (!fs::exists(p)) return;
    json j;
    try {
      j = json::parse(read_file(p));
    } catch (const json::exception& e) {
      throw IntegrityError("manifest " + p.string() + " is not valid JSON: " + e.what());
    }
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.key = s.at("key").get<std::string>();
      r.files = s.at("files").get<std::map<std::string, std::string>>();
      r.summary = s.value("summary", json::object());
      stages_[name] = std::move(r);
    }
  }

  const fs::path& root() const { return root_; }

  const StageRecord* stage(const std::string& name) const {
    const auto it = stages_.find(name);
    return it == stages_.end() ? nullptr : &it->second;
  }

  // True when the stage ran with this key and all of its files are intact.
  bool complete(const std::string& name, const std::string& key) const {
    const StageRecord* r = stage(name);
    if (r == nullptr || r->key != key) return false;
    verify_stage(name);
    return true;
  }

  void require_stage(const std::string& name, const std::string& command) const {
    require<MissingUpstreamError>(stage(name) != nullptr, "stage '", name, "' has not run in ", root_.string(),
                                  "; run `zsc_eval ", command, "` first");
  }

  // Reads an artifact and checks it against its recorded hash.
  std::string checked_read(const std::string& name, const std::string& rel) const {
    const StageRecord* r = stage(name);
    require<MissingUpstreamError>(r != nullptr, "stage '", name, "' has not run");
    const auto it = r->files.find(rel);
    require<IntegrityError>(it != r->files.end(), "file ", rel, " is not recorded by stage '", name, "'");
    const fs::path p = root_ / rel;
    require<IntegrityError>(fs::exists(p), "artifact ", p.string(), " recorded by stage '", name, "' is missing");
    std::string data = read_file(p);
    const std::string h = content_hash_hex(data);
    require<IntegrityError>(h == it->second, "content hash mismatch for ", p.string(), ": recorded ", it->second,
                            ", found ", h);
    return data;
  }

  void verify_stage(const std::string& name) const {
    const StageRecord* r = stage(name);
    require<MissingUpstreamError>(r != nullptr, "stage '", name, "' has not run");
    for (const auto& [rel, h] : r->files) checked_read(name, rel);
  }

  std::size_t verify_all() const {
    std::size_t n = 0;
    for (const auto& [name, r] : stages_) {
      verify_stage(name);
      n += r.files.size();
    }
    return n;
  }

  void record(const std::string& name, StageRecord r) {
    if (const StageRecord* old = stage(name))
      for (const auto& [rel, h] : old->files)
        if (!r.files.count(rel)) {
          bool shared = false;
          for (const auto& [other, s] : stages_) shared = shared || (other != name && s.files.count(rel));
          if (!shared) fs::remove(root_ / rel);
        }
    stages_[name] = std::move(r);
    save();
  }

  void save() const {
    json stages = json::object();
    for (const auto& [name, r] : stages_) stages[name] = {{"key", r.key}, {"files", r.files}, {"summary", r.summary}};
    const json j = {{"tool_version", kToolVersion}, {"config_hash", config_hash_}, {"stages", stages}};
    write_file(root_ / "manifest.json", dump(j));
  }

 private:
  fs::path root_;
  std::string config_hash_;
  std::map<std::string, StageRecord> stages_;
};

// Collects a stage's outputs and their hashes.
class StageWriter {
 public:
  StageWriter(const fs::path& root, std::string key) : root_(root) { rec_.key = std::move(key); }

  void write(const std::string& rel, std::string_view data) {
    write_file(root_ / rel, data);
    rec_.files[rel] = content_hash_hex(data);
  }
  void write_json(const std::string& rel, const json& j) { write(rel, dump(j)); }
  json& summary() { return rec_.summary; }
  StageRecord take() { return std::move(rec_); }

 private:
  fs::path root_;
  StageRecord rec_;
};

inline std::string stage_key(std::initializer_list<std::string_view> parts) {
  Fnv1a h;
  for (auto p : parts) h.str(p);
  return hex64(h.value());
}

inline void record_timing(const fs::path& root, const std::string& stage, double seconds) {
  const fs::path p = root / "timings.json";
  json j = json::object();
  if (fs::exists(p)) {
    try {
      j = json::parse(read_file(p));
    } catch (const json::exception&) {
      j = json::object();
    }
  }
  j[stage] = seconds;
  write_file(p, dump(j));
}

// ===========================================================================
// Serialization of pipeline records
// ===========================================================================

inline json candidate_to_json(const CandidatePair& c, const std::string& menu_hash) {
  json cps = json::array();
  for (const auto& cp : c.checkpoints) cps.push_back({{"step", cp.step}, {"eval_return", cp.eval_return}});
  return {{"run_id", c.run_id},
          {"weights", to_json(c.weights, menu_hash)},
          {"seed", c.seed},
          {"partner_slot", c.partner_slot},
          {"br_slot", c.br_slot},
          {"initial_return", c.initial_return},
          {"final_pair_return", to_json(c.final_pair_return)},
          {"final_pair_stderr", c.final_pair_stderr},
          {"self_play_return", c.self_play_return ? json(*c.self_play_return) : json(nullptr)},
          {"final_deliveries", c.final_deliveries},
          {"degenerate", c.degenerate},
          {"checkpoints", cps},
          {"br_feature", c.br_feature ? to_json(*c.br_feature) : json(nullptr)},
          {"partner_feature", c.partner_feature ? to_json(*c.partner_feature) : json(nullptr)}};
}

// Everything but the policy tables.
inline CandidatePair candidate_from_json(const json& j) {
  CandidatePair c;
  c.run_id = j.at("run_id").get<std::string>();
  c.weights = RewardWeights(j.at("weights").at("w").get<std::vector<double>>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.partner_slot = j.at("partner_slot").get<int>();
  c.br_slot = j.at("br_slot").get<int>();
  c.initial_return = j.at("initial_return").get<double>();
  c.final_pair_return = return_estimate_from_json(j.at("final_pair_return"));
  c.final_pair_stderr = j.at("final_pair_stderr").get<double>();
  if (!j.at("self_play_return").is_null()) c.self_play_return = j["self_play_return"].get<double>();
  c.final_deliveries = j.at("final_deliveries").get<double>();
  c.degenerate = j.at("degenerate").get<bool>();
  for (const auto& cp : j.at("checkpoints")) {
    Checkpoint k;
    k.step = cp.at("step").get<std::uint64_t>();
    k.eval_return = cp.at("eval_return").get<double>();
    c.checkpoints.push_back(std::move(k));
  }
  if (!j.at("br_feature").is_null()) c.br_feature = behavior_feature_from_json(j["br_feature"]);
  if (!j.at("partner_feature").is_null()) c.partner_feature = behavior_feature_from_json(j["partner_feature"]);
  return c;
}

inline json to_json(const Summary& s) {
  return {{"combinations", s.combinations},
          {"point_estimate", s.point_estimate},
          {"ci", {s.ci.lo, s.ci.hi}},
          {"iqr", {s.iqr.lo, s.iqr.hi}},
          {"mean_return", s.mean_return}};
}

inline json to_json(const BRProxReport& r) {
  json combos = json::array();
  for (const auto& c : r.combinations)
    combos.push_back({{"partner_ids", c.partner_ids},
                      {"has_checkpoint", c.has_checkpoint},
                      {"episodes", c.episodes},
                      {"seed", c.seed},
                      {"ego_return", c.ego_return},
                      {"br_return", c.br_return},
                      {"ratio", c.ratio},
                      {"ego_returns", c.ego_returns}});
  auto opt = [](const std::optional<Summary>& s) { return s ? to_json(*s) : json(nullptr); };
  return {{"ego_id", r.ego_id},
          {"metric", to_json(r.config)},
          {"combinations", combos},
          {"excluded", r.excluded},
          {"overall", to_json(r.overall)},
          {"final_only", opt(r.final_only)},
          {"moderate", opt(r.moderate)},
          {"expert", opt(r.expert)}};
}

inline std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : "+") + id;
  return s;
}

inline std::string report_csv(const BRProxReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "partner_ids,episodes,ego_return,br_return,ratio\n";
  for (const auto& c : r.combinations)
    out << join_ids(c.partner_ids) << ',' << c.episodes << ',' << c.ego_return << ',' << c.br_return << ','
        << c.ratio << '\n';
  return out.str();
}

inline std::string features_csv(std::span<const CandidatePair> cands, const EventSchema& schema) {
  std::ostringstream out;
  out.precision(10);
  out << "run_id,kind";
  for (std::size_t k = 0; k < schema.size(); ++k) out << ',' << schema[k].name;
  out << '\n';
  for (const auto& c : cands)
    for (const auto* kind : {"br", "partner"}) {
      const auto& f = std::string_view(kind) == "br" ? c.br_feature : c.partner_feature;
      if (!f) continue;
      out << c.run_id << ',' << kind;
      for (double v : f->theta) out << ',' << v;
      out << '\n';
    }
  return out.str();
}

// ===========================================================================
// Stages
// ===========================================================================

struct StageOutcome {
  bool skipped = false;
  json summary = json::object();
};

namespace detail {

inline std::string policy_rel(const std::string& dir, const std::string& id) {
  std::string safe = id;
  for (char& ch : safe)
    if (ch == '/' || ch == ':' || ch == ';' || ch == '+') ch = '_';
  return dir + "/" + safe + ".pol";
}

template <typename F>
StageOutcome timed(const fs::path& root, const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  StageOutcome out = body();
  if (!out.skipped)
    record_timing(root, name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return out;
}

template <Environment E>
std::string generate_key(const E& env, const PipelineConfig& c) {
  return stage_key({"generate", hex64(env.content_hash()), c.canonical.value("reward_space", json::object()).dump(),
                    c.canonical.value("generation", json::object()).dump(), std::to_string(c.seed)});
}

inline std::string select_key(const Manifest& m, const PipelineConfig& c) {
  return stage_key({"select", m.stage("generate")->key, c.canonical.value("selection", json::object()).dump()});
}

inline std::string brs_key(const Manifest& m, const PipelineConfig& c) {
  return stage_key({"train-brs", m.stage("select")->key, c.canonical.value("best_response", json::object()).dump()});
}

}  // namespace detail

// Sample weights, train each shaped pair, embed, filter.
template <Environment E>
StageOutcome run_generate(const E& env, const PipelineConfig& c, Manifest& m, int workers) {
  return detail::timed(m.root(), "generate", [&]() -> StageOutcome {
    const std::string key = detail::generate_key(env, c);
    if (m.complete("generate", key)) return {true, m.stage("generate")->summary};
    c.reward_space.check_schema(env.schema());
    const std::string menu_hash = c.reward_space.menu_hash();
    Rng wrng(derive_seed(c.seed, "weights"));
    const auto sample = enumerate_or_sample_weights(c.reward_space, c.num_candidates, wrng);

    struct Job {
      RewardWeights w;
      std::string run_id;
      std::string job_key;
      std::uint64_t seed;
      std::optional<CandidatePair> cand;
      std::optional<CheckpointChoice> choice;
      std::string partner_bytes, br_bytes, ckpt_bytes;
      bool reused = false;
    };
    std::vector<Job> jobs;
    const std::string train_json = to_json(c.generation_train).dump();
    for (const auto& w : sample.weights)
      for (int s = 0; s < c.seeds_per_weight; ++s) {
        Job j;
        j.w = w;
        j.run_id = c.seeds_per_weight == 1 ? w.id : w.id + "-s" + std::to_string(s);
        j.seed = derive_seed(c.seed, "generate", j.run_id);
        j.job_key = stage_key({hex64(env.content_hash()), w.id, train_json, std::to_string(j.seed),
                               std::to_string(c.embed_episodes)});
        jobs.push_back(std::move(j));
      }

    // Reuse intact results of an earlier generate run with the same job key.
    std::map<std::string, json> previous;
    if (const StageRecord* old = m.stage("generate"); old && old->files.count("generate/candidates.json")) {
      try {
        const json doc = json::parse(m.checked_read("generate", "generate/candidates.json"));
        for (const auto& rec : doc.at("candidates"))
          previous[rec.at("job_key").get<std::string>()] = rec;
      } catch (const IntegrityError&) {
        previous.clear();
      }
    }
    for (auto& j : jobs) {
      const auto it = previous.find(j.job_key);
      if (it == previous.end()) continue;
      try {
        const json& rec = it->second;
        j.cand = candidate_from_json(rec);
        j.partner_bytes = m.checked_read("generate", rec.at("files").at("partner"));
        j.br_bytes = m.checked_read("generate", rec.at("files").at("br"));
        if (!rec.at("files").at("checkpoint").is_null()) {
          j.ckpt_bytes = m.checked_read("generate", rec["files"]["checkpoint"]);
          j.choice = CheckpointChoice{rec.at("chosen_checkpoint").at("index").get<std::size_t>(),
                                      rec["chosen_checkpoint"].at("warned").get<bool>()};
        }
        j.reused = true;
      } catch (const Error&) {
        j.cand.reset();
        j.reused = false;
      }
    }

    parallel_for(jobs.size(), workers, [&](std::size_t i) {
      Job& j = jobs[i];
      if (j.reused) return;
      TrainConfig tc = c.generation_train;
      tc.seed = j.seed;
      CandidatePair cand = approximate_ne(env, j.w, tc, j.run_id);
      embed_candidate(env, cand, c.embed_episodes, derive_seed(c.seed, "embed", j.run_id));
      const json meta_base = {{"env_hash", hex64(env.content_hash())}, {"w_id", j.w.id}, {"seed", j.seed},
                              {"steps", tc.total_steps}, {"eval_curve", cand.eval_curve()}};
      json meta = meta_base;
      meta["role"] = "partner";
      j.partner_bytes = encode_policy(cand.partner_policy, meta);
      meta["role"] = "br";
      j.br_bytes = encode_policy(cand.br_policy, meta);
      if (cand.checkpoints.size() >= 2) {
        const auto curve = cand.eval_curve();
        j.choice = choose_checkpoint(curve, cand.final_pair_return.mean, cand.run_id);
        meta["role"] = "checkpoint";
        meta["steps"] = cand.checkpoints[j.choice->index].step;
        j.ckpt_bytes = encode_policy(cand.checkpoints[j.choice->index].partner, meta);
      }
      j.cand = std::move(cand);
    });

    std::vector<CandidatePair> cands;
    for (auto& j : jobs) cands.push_back(*j.cand);
    const auto eligible = filter_candidates(cands, env.schema());
    std::set<std::string> eligible_ids;
    for (const auto* e : eligible) eligible_ids.insert(e->run_id);

    StageWriter w(m.root(), key);
    json weights = json::array();
    for (const auto& x : sample.weights) weights.push_back(to_json(x, menu_hash));
    w.write_json("generate/weights.json", {{"space_size", sample.space_size},
                                           {"exhausted", sample.exhausted},
                                           {"weights", weights}});
    json records = json::array();
    std::size_t trained = 0;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      Job& j = jobs[i];
      trained += !j.reused;
      json rec = candidate_to_json(cands[i], menu_hash);
      rec["job_key"] = j.job_key;
      rec["eligible"] = eligible_ids.count(j.run_id) > 0;
      const std::string pr = detail::policy_rel("generate/policies", j.run_id + "-partner");
      const std::string br = detail::policy_rel("generate/policies", j.run_id + "-br");
      w.write(pr, j.partner_bytes);
      w.write(br, j.br_bytes);
      rec["files"] = {{"partner", pr}, {"br", br}, {"checkpoint", nullptr}};
      rec["chosen_checkpoint"] = nullptr;
      if (j.choice) {
        const std::string cr = detail::policy_rel("generate/policies", j.run_id + "-checkpoint");
        w.write(cr, j.ckpt_bytes);
        rec["files"]["checkpoint"] = cr;
        rec["chosen_checkpoint"] = {{"index", j.choice->index},
                                    {"step", cands[i].checkpoints[j.choice->index].step},
                                    {"warned", j.choice->warned}};
      }
      records.push_back(std::move(rec));
    }
    w.write_json("generate/candidates.json", {{"env_hash", hex64(env.content_hash())},
                                              {"schema", [&] {
                                                 json s = json::array();
                                                 for (std::size_t k = 0; k < env.schema().size(); ++k)
                                                   s.push_back(env.schema()[k].name);
                                                 return s;
                                               }()},
                                              {"candidates", records}});
    w.write("generate/features.csv", features_csv(cands, env.schema()));
    w.summary() = {{"candidates", jobs.size()}, {"eligible", eligible.size()}, {"space_size", sample.space_size}};
    m.record("generate", w.take());
    return {false, {{"candidates", jobs.size()}, {"eligible", eligible.size()}, {"trained", trained},
                    {"reused", jobs.size() - trained}}};
  });
}

// Candidates of the generate stage, policies not loaded.
inline std::vector<CandidatePair> load_candidates(const Manifest& m, json* records = nullptr) {
  m.require_stage("generate", "generate");
  const json j = json::parse(m.checked_read("generate", "generate/candidates.json"));
  std::vector<CandidatePair> out;
  for (const auto& rec : j.at("candidates")) out.push_back(candidate_from_json(rec));
  if (records) *records = j.at("candidates");
  return out;
}

inline Policy load_checked_policy(const Manifest& m, const std::string& stage, const std::string& rel) {
  return decode_policy(m.checked_read(stage, rel), rel).policy;
}

// Subset search by the configured criterion, then one
// checkpoint per selected candidate.
template <Environment E>
StageOutcome run_select(const E& env, const PipelineConfig& c, Manifest& m) {
  return detail::timed(m.root(), "select", [&]() -> StageOutcome {
    m.require_stage("generate", "generate");
    m.verify_stage("generate");
    const std::string key = detail::select_key(m, c);
    if (m.complete("select", key)) return {true, m.stage("select")->summary};
    json records;
    auto cands = load_candidates(m, &records);
    const auto eligible = filter_candidates(cands, env.schema());
    SelectionConfig sc = c.selection;
    sc.seed = derive_seed(c.seed, "select");
    const auto sel = select_partners(eligible, sc);

    std::map<std::string, std::string> partner_files, ckpt_files;
    for (auto i : sel.indices) {
      const std::string& id = eligible[i]->run_id;
      for (std::size_t r = 0; r < cands.size(); ++r) {
        if (cands[r].run_id != id) continue;
        const json& files = records[r].at("files");
        require<IntegrityError>(!files.at("checkpoint").is_null(), "candidate ", id, " has no stored checkpoint");
        cands[r].partner_policy = load_checked_policy(m, "generate", files.at("partner"));
        const std::size_t ci = records[r].at("chosen_checkpoint").at("index").get<std::size_t>();
        cands[r].checkpoints[ci].partner = load_checked_policy(m, "generate", files.at("checkpoint"));
        partner_files[id] = files.at("partner");
        ckpt_files[id] = files.at("checkpoint");
      }
    }
    PartnerSet ps = make_partner_set(eligible, sel, sc.criterion);
    select_checkpoints(ps, eligible);

    json partners = json::array();
    for (const auto& p : ps.partners)
      partners.push_back({{"id", p.id},
                          {"candidate_id", p.candidate_id},
                          {"is_checkpoint", p.is_checkpoint},
                          {"step", p.step},
                          {"recorded_pair_return", p.recorded_pair_return},
                          {"self_play_return", p.self_play_return ? json(*p.self_play_return) : json(nullptr)},
                          {"policy_file", p.is_checkpoint ? ckpt_files[p.candidate_id] : partner_files[p.candidate_id]}});
    const json report = {{"criterion", to_string(ps.criterion)},
                         {"M", ps.subset_size},
                         {"num_candidates", cands.size()},
                         {"num_eligible", eligible.size()},
                         {"achieved_value", ps.achieved_value},
                         {"determinant_jitter", kDeterminantJitter},
                         {"member_ids", ps.selected_ids},
                         {"checkpoint_ids", ps.checkpoint_ids},
                         {"chain_statistics",
                          {{"chains", sel.stats.chains},
                           {"proposals", sel.stats.proposals},
                           {"accepted", sel.stats.accepted},
                           {"distinct_subsets", sel.stats.distinct_subsets},
                           {"uniform_fallback", sel.stats.uniform_fallback}}}};
    StageWriter w(m.root(), key);
    w.write_json("select/report.json", report);
    w.write_json("select/partner_set.json", {{"ego_slot", ps.ego_slot}, {"report", report}, {"partners", partners}});
    w.summary() = {{"criterion", to_string(ps.criterion)}, {"achieved_value", ps.achieved_value},
                   {"partners", ps.partners.size()}};
    const json summary = w.summary();
    m.record("select", w.take());
    return {false, summary};
  });
}

// The selected partner set; with `with_brs` the evaluation-ready version
// written by train-brs.
inline PartnerSet load_partner_set(const Manifest& m, bool with_brs) {
  const std::string stage = with_brs ? "train-brs" : "select";
  m.require_stage(stage, with_brs ? "train-brs" : "select");
  const json j = json::parse(m.checked_read(stage, stage == "select" ? "select/partner_set.json" : "train-brs/partner_set.json"));
  PartnerSet ps;
  const json& rep = j.at("report");
  ps.criterion = criterion_from_string(rep.at("criterion").get<std::string>());
  ps.subset_size = rep.at("M").get<std::size_t>();
  ps.achieved_value = rep.at("achieved_value").get<double>();
  ps.selected_ids = rep.at("member_ids").get<std::vector<std::string>>();
  ps.checkpoint_ids = rep.at("checkpoint_ids").get<std::vector<std::string>>();
  ps.ego_slot = j.at("ego_slot").get<int>();
  for (const auto& jp : j.at("partners")) {
    PartnerEntry e;
    e.id = jp.at("id").get<std::string>();
    e.candidate_id = jp.at("candidate_id").get<std::string>();
    e.is_checkpoint = jp.at("is_checkpoint").get<bool>();
    e.step = jp.at("step").get<std::uint64_t>();
    e.recorded_pair_return = jp.at("recorded_pair_return").get<double>();
    if (!jp.at("self_play_return").is_null()) e.self_play_return = jp["self_play_return"].get<double>();
    e.policy = load_checked_policy(m, "generate", jp.at("policy_file").get<std::string>());
    e.policy.id = e.id;
    ps.partners.push_back(std::move(e));
  }
  if (with_brs)
    for (const auto& jb : j.at("brs")) {
      CombinationBR b;
      b.partner_ids = jb.at("partner_ids").get<std::vector<std::string>>();
      b.policy = load_checked_policy(m, "train-brs", jb.at("policy_file").get<std::string>());
      b.estimate = return_estimate_from_json(jb.at("estimate"));
      ps.brs.push_back(std::move(b));
    }
  return ps;
}

// A BR for every partner combination.
template <Environment E>
StageOutcome run_train_brs(const E& env, const PipelineConfig& c, Manifest& m, int workers) {
  return detail::timed(m.root(), "train-brs", [&]() -> StageOutcome {
    m.require_stage("select", "select");
    for (const auto* up : {"generate", "select"}) m.verify_stage(up);
    const std::string key = detail::brs_key(m, c);
    if (m.complete("train-brs", key)) return {true, m.stage("train-brs")->summary};
    PartnerSet ps = load_partner_set(m, false);
    train_partner_brs(env, ps, c.br_train, derive_seed(c.seed, "train-brs"), workers);

    json j = json::parse(m.checked_read("select", "select/partner_set.json"));
    for (std::size_t i = 0; i < ps.partners.size(); ++i)
      j["partners"][i]["self_play_return"] =
          ps.partners[i].self_play_return ? json(*ps.partners[i].self_play_return) : json(nullptr);
    StageWriter w(m.root(), key);
    json brs = json::array();
    for (std::size_t i = 0; i < ps.brs.size(); ++i) {
      const auto& b = ps.brs[i];
      const std::string rel = detail::policy_rel("train-brs/policies", "br-" + std::to_string(i));
      w.write(rel, encode_policy(b.policy, {{"env_hash", hex64(env.content_hash())},
                                            {"partners", b.partner_ids},
                                            {"steps", c.br_train.total_steps}}));
      brs.push_back({{"partner_ids", b.partner_ids}, {"policy_file", rel}, {"estimate", to_json(b.estimate)}});
    }
    j["brs"] = brs;
    j["evaluation_ready"] = ps.evaluation_ready(env.spec().num_agents);
    w.write_json("train-brs/partner_set.json", j);
    w.summary() = {{"brs", ps.brs.size()}, {"evaluation_ready", ps.evaluation_ready(env.spec().num_agents)}};
    const json summary = w.summary();
    m.record("train-brs", w.take());
    return {false, summary};
  });
}

template <Environment E>
EgoSpec make_ego_spec(const E& env, const EgoConfig& e, std::uint64_t seed) {
  EgoSpec s;
  s.name = e.name;
  s.algorithm = e.algorithm;
  s.population_size = e.population_size;
  s.train = e.train;
  s.stage1 = e.stage1;
  s.seed = seed;
  if (e.action) s.scripted = Policy::constant(env.observation_count(), env.spec().action_space_sizes[0], *e.action, 0, e.name);
  return s;
}

struct EvaluateRequest {
  std::optional<std::string> ego_name;     // from benchmark.egos
  std::optional<fs::path> policy_file;     // external policy table
};

// BR-Prox of one ego. Without an ego, every combination's own BR is scored
// against that combination alone (a self-consistency check).
template <Environment E>
StageOutcome run_evaluate(const E& env, const PipelineConfig& c, Manifest& m, const EvaluateRequest& req) {
  m.require_stage("train-brs", "train-brs");
  for (const auto* up : {"generate", "select", "train-brs"}) m.verify_stage(up);
  std::string label = "self-consistency";
  std::string ego_key;
  std::optional<Policy> ego;
  if (req.policy_file) {
    std::string data;
    try {
      data = read_file(*req.policy_file);
    } catch (const Error&) {
      throw ConfigError("cannot read ego policy " + req.policy_file->string());
    }
    ego = decode_policy(data, req.policy_file->string()).policy;
    label = "policy-" + content_hash_hex(data);
    ego_key = label;
  } else if (req.ego_name) {
    const EgoConfig* found = nullptr;
    for (const auto& e : c.egos)
      if (e.name == *req.ego_name) found = &e;
    require<ConfigError>(found != nullptr, "no ego named '", *req.ego_name, "' in benchmark.egos");
    label = found->name;
    ego_key = c.canonical.at("benchmark").dump() + "/" + label;
  }
  const std::string stage = "evaluate:" + label;
  return detail::timed(m.root(), stage, [&]() -> StageOutcome {
    const std::string key = stage_key({"evaluate", m.stage("train-brs")->key,
                                       c.canonical.value("metrics", json::object()).dump(), ego_key});
    if (m.complete(stage, key)) return {true, m.stage(stage)->summary};
    const PartnerSet ps = load_partner_set(m, true);
    const std::uint64_t seed = derive_seed(c.seed, "evaluate");
    StageWriter w(m.root(), key);
    const std::string dir = "evaluate/" + label;
    if (req.ego_name) {
      for (const auto& e : c.egos)
        if (e.name == *req.ego_name) ego = train_ego(env, make_ego_spec(env, e, derive_seed(c.seed, "ego", e.name))).policy;
    }
    if (ego) {
      ego->agent_slot = ps.ego_slot;
      const auto rep = br_prox(env, *ego, ps, c.eval_episodes, c.metrics, seed);
      w.write_json(dir + "/report.json", to_json(rep));
      w.write(dir + "/report.csv", report_csv(rep));
      w.summary() = {{"ego", label}, {"br_prox", rep.overall.point_estimate},
                     {"ci", {rep.overall.ci.lo, rep.overall.ci.hi}}};
    } else {
      json rows = json::array();
      std::ostringstream csv;
      csv.precision(10);
      csv << "partner_ids,br_prox,ci_lo,ci_hi,ego_return,br_return\n";
      double lo = 1e300, hi = -1e300;
      for (const auto& b : ps.brs) {
        PartnerSet one = ps;
        one.partners.clear();
        for (const auto& id : b.partner_ids) one.partners.push_back(ps.partner(id));
        one.brs = {b};
        Policy br = b.policy;
        br.id = "br:" + join_ids(b.partner_ids);
        const auto rep = br_prox(env, br, one, c.eval_episodes, c.metrics, seed);
        rows.push_back({{"partner_ids", b.partner_ids}, {"report", to_json(rep)}});
        const auto& cr = rep.combinations.front();
        csv << join_ids(b.partner_ids) << ',' << rep.overall.point_estimate << ',' << rep.overall.ci.lo << ','
            << rep.overall.ci.hi << ',' << cr.ego_return << ',' << cr.br_return << '\n';
        lo = std::min(lo, rep.overall.point_estimate);
        hi = std::max(hi, rep.overall.point_estimate);
      }
      w.write_json(dir + "/report.json", rows);
      w.write(dir + "/report.csv", csv.str());
      w.summary() = {{"ego", label}, {"min_br_prox", lo}, {"max_br_prox", hi}, {"combinations", ps.brs.size()}};
    }
    const json summary = w.summary();
    m.record(stage, w.take());
    return {false, summary};
  });
}

inline std::string leaderboard_text(const std::vector<BenchmarkResult>& runs) {
  std::ostringstream out;
  char line[256];
  for (std::size_t s = 0; s < runs.size(); ++s) {
    out << "seed " << s << "\n";
    std::snprintf(line, sizeof line, "  %-4s %-20s %10s %21s %10s\n", "rank", "ego", "BR-Prox", "95% CI", "mean ret");
    out << line;
    int rank = 1;
    for (const auto& id : runs[s].ranking) {
      const auto& e = runs[s].entry(id);
      const auto& o = e.report.overall;
      std::snprintf(line, sizeof line, "  %-4d %-20s %10.4f   [%7.4f, %7.4f] %10.3f\n", rank++, id.c_str(),
                    o.point_estimate, o.ci.lo, o.ci.hi, e.mean_return);
      out << line;
    }
  }
  return out.str();
}

template <Environment E>
StageOutcome run_benchmark_stage(const E& env, const PipelineConfig& c, Manifest& m, int workers) {
  return detail::timed(m.root(), "benchmark", [&]() -> StageOutcome {
    m.require_stage("train-brs", "train-brs");
    for (const auto* up : {"generate", "select", "train-brs"}) m.verify_stage(up);
    require<ConfigError>(c.egos.size() >= 2, "benchmark needs at least 2 egos in benchmark.egos");
    const std::string key = stage_key({"benchmark", m.stage("train-brs")->key,
                                       c.canonical.value("metrics", json::object()).dump(),
                                       c.canonical.at("benchmark").dump()});
    if (m.complete("benchmark", key)) return {true, m.stage("benchmark")->summary};
    const PartnerSet ps = load_partner_set(m, true);

    const std::size_t n_ego = c.egos.size();
    std::vector<TrainedEgo> trained(static_cast<std::size_t>(c.benchmark_seeds) * n_ego);
    parallel_for(trained.size(), workers, [&](std::size_t i) {
      const std::size_t s = i / n_ego;
      const EgoConfig& e = c.egos[i % n_ego];
      trained[i] = train_ego(env, make_ego_spec(env, e, derive_seed(c.seed, "benchmark-ego", e.name + "/" + std::to_string(s))));
      trained[i].policy.agent_slot = ps.ego_slot;
    });

    StageWriter w(m.root(), key);
    std::vector<BenchmarkResult> runs;
    json seeds = json::array();
    std::ostringstream ranks_csv, pool_csv;
    ranks_csv.precision(10);
    pool_csv.precision(10);
    ranks_csv << "seed,rank,ego,br_prox,ci_lo,ci_hi,mean_return\n";
    pool_csv << "seed,ego,pool_size,pd_final_only,pd_with_checkpoints\n";
    for (int s = 0; s < c.benchmark_seeds; ++s) {
      std::vector<Policy> egos;
      for (std::size_t k = 0; k < n_ego; ++k) {
        const auto& t = trained[static_cast<std::size_t>(s) * n_ego + k];
        egos.push_back(t.policy);
        if (t.pool_pd_final)
          pool_csv << s << ',' << t.policy.id << ',' << t.pool.size() << ',' << *t.pool_pd_final << ','
                   << *t.pool_pd_augmented << '\n';
      }
      auto res = run_benchmark(env, std::span<const Policy>(egos), ps, c.eval_episodes, c.metrics,
                               derive_seed(c.seed, "benchmark-eval"));
      json entries = json::array();
      for (const auto& e : res.entries)
        entries.push_back({{"ego", e.ego_id}, {"mean_return", e.mean_return}, {"report", to_json(e.report)}});
      seeds.push_back({{"seed", s}, {"ranking", res.ranking}, {"schedule_parity", res.schedule_parity()},
                       {"episodes_per_ego", res.entries.front().seed_log.size()}, {"entries", entries}});
      int rank = 1;
      for (const auto& id : res.ranking) {
        const auto& e = res.entry(id);
        ranks_csv << s << ',' << rank++ << ',' << id << ',' << e.report.overall.point_estimate << ','
                  << e.report.overall.ci.lo << ',' << e.report.overall.ci.hi << ',' << e.mean_return << '\n';
      }
      runs.push_back(std::move(res));
    }
    w.write_json("benchmark/results.json", {{"episodes_per_combination", c.eval_episodes}, {"runs", seeds}});
    w.write("benchmark/rankings.csv", ranks_csv.str());
    w.write("benchmark/pool_diversity.csv", pool_csv.str());
    w.write("benchmark/leaderboard.txt", leaderboard_text(runs));
    json first = json::array();
    for (const auto& r : runs) first.push_back(r.ranking.front());
    w.summary() = {{"seeds", c.benchmark_seeds}, {"egos", n_ego}, {"winners", first}};
    const json summary = w.summary();
    m.record("benchmark", w.take());
    return {false, summary};
  });
}

template <Environment E>
StageOutcome run_compare_selection(const E& env, const PipelineConfig& c, Manifest& m) {
  return detail::timed(m.root(), "compare-selection", [&]() -> StageOutcome {
    m.require_stage("generate", "generate");
    m.verify_stage("generate");
    const std::string key = stage_key({"compare-selection", m.stage("generate")->key,
                                       c.canonical.value("selection", json::object()).dump()});
    if (m.complete("compare-selection", key)) return {true, m.stage("compare-selection")->summary};
    auto cands = load_candidates(m);
    const auto eligible = filter_candidates(cands, env.schema());
    std::vector<std::size_t> sizes = c.compare_sizes;
    if (sizes.empty())
      for (std::size_t k = 2; k <= std::min<std::size_t>(8, eligible.size()); ++k) sizes.push_back(k);
    SelectionConfig sc = c.selection;
    sc.seed = derive_seed(c.seed, "compare-selection");
    const auto rows = compare_selection_criteria(eligible, sizes, sc);
    std::ostringstream csv;
    csv.precision(10);
    csv << "size,criterion,criterion_value,br_pd\n";
    json jr = json::array();
    std::size_t br_wins = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      csv << r.size << ',' << to_string(r.criterion) << ',' << r.criterion_value << ',' << r.br_pd << '\n';
      jr.push_back({{"size", r.size}, {"criterion", to_string(r.criterion)}, {"criterion_value", r.criterion_value},
                    {"br_pd", r.br_pd}});
      if (r.criterion == Criterion::br_div && i + 1 < rows.size()) br_wins += r.br_pd >= rows[i + 1].br_pd;
    }
    StageWriter w(m.root(), key);
    w.write("compare-selection/selection_criteria.csv", csv.str());
    w.write_json("compare-selection/selection_criteria.json", {{"eligible", eligible.size()}, {"rows", jr}});
    w.summary() = {{"sizes", sizes.size()}, {"br_div_at_least_p_div", br_wins}};
    const json summary = w.summary();
    m.record("compare-selection", w.take());
    return {false, summary};
  });
}

}  // namespace zsceval
