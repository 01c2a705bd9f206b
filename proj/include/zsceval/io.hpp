#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "zsceval/bench.hpp"
#include "zsceval/core/kitchen.hpp"
#include "zsceval/core/matrix_game.hpp"

namespace zsceval {

using nlohmann::json;
namespace fs = std::filesystem;

// ===========================================================================
// Files
// ===========================================================================

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require<MissingUpstreamError>(in.good(), "cannot read ", p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so readers never observe a half-written artifact.
inline void write_file(const fs::path& p, std::string_view data) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot write ", tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    require(out.good(), "short write to ", tmp.string());
  }
  fs::rename(tmp, p);
}

inline std::string content_hash_hex(std::string_view data) { return hex64(hash_bytes(data)); }

inline std::string file_hash(const fs::path& p) { return content_hash_hex(read_file(p)); }

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ===========================================================================
// Policy tables
// ===========================================================================
//
// Binary layout (little-endian):
//   "ZSCP" u32 version | u32 num_actions | i32 slot | f64 epsilon
//   u64 observations | u8 has_probs | varint id_len, id
//   varint meta_len, meta (JSON text)
//   run-length greedy table: repeated (varint run, u8 action)
//   has_probs: observations * num_actions f32 values

inline constexpr std::uint32_t kPolicyFormatVersion = 1;

namespace detail {

inline void put_varint(std::string& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<char>((v & 0x7f) | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<char>(v));
}

template <typename T>
void put_raw(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

struct Reader {
  std::string_view data;
  std::size_t pos = 0;
  std::string what;

  void need(std::size_t n) const {
    require<IntegrityError>(pos + n <= data.size(), "truncated policy file ", what);
  }
  template <typename T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      need(1);
      const auto b = static_cast<std::uint8_t>(data[pos++]);
      v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) return v;
    }
    throw IntegrityError("malformed varint in policy file " + what);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string encode_policy(const Policy& p, const json& meta = json::object()) {
  std::string out = "ZSCP";
  detail::put_raw(out, kPolicyFormatVersion);
  detail::put_raw(out, static_cast<std::uint32_t>(p.num_actions));
  detail::put_raw(out, static_cast<std::int32_t>(p.agent_slot));
  detail::put_raw(out, p.epsilon);
  detail::put_raw(out, static_cast<std::uint64_t>(p.greedy.size()));
  out.push_back(p.probs.empty() ? 0 : 1);
  detail::put_varint(out, p.id.size());
  out += p.id;
  const std::string m = meta.dump();
  detail::put_varint(out, m.size());
  out += m;
  for (std::size_t i = 0; i < p.greedy.size();) {
    std::size_t j = i;
    while (j < p.greedy.size() && p.greedy[j] == p.greedy[i]) ++j;
    detail::put_varint(out, j - i);
    out.push_back(static_cast<char>(p.greedy[i]));
    i = j;
  }
  if (!p.probs.empty()) out.append(reinterpret_cast<const char*>(p.probs.data()), p.probs.size() * sizeof(float));
  return out;
}

struct StoredPolicy {
  Policy policy;
  json meta;
};

inline StoredPolicy decode_policy(std::string_view data, std::string what = "<memory>") {
  detail::Reader r{data, 0, std::move(what)};
  require<IntegrityError>(r.bytes(4) == "ZSCP", "not a policy file: ", r.what);
  const auto version = r.raw<std::uint32_t>();
  require<IntegrityError>(version == kPolicyFormatVersion, "unsupported policy format version ", version, " in ",
                          r.what);
  StoredPolicy s;
  Policy& p = s.policy;
  p.num_actions = static_cast<int>(r.raw<std::uint32_t>());
  p.agent_slot = r.raw<std::int32_t>();
  p.epsilon = r.raw<double>();
  const auto obs = r.raw<std::uint64_t>();
  r.need(1);
  const bool has_probs = r.data[r.pos++] != 0;
  p.id = r.bytes(r.varint());
  s.meta = json::parse(r.bytes(r.varint()));
  p.greedy.reserve(obs);
  while (p.greedy.size() < obs) {
    const auto run = r.varint();
    r.need(1);
    const auto a = static_cast<std::uint8_t>(r.data[r.pos++]);
    require<IntegrityError>(run >= 1 && p.greedy.size() + run <= obs && a < p.num_actions, "corrupt run in ", r.what);
    p.greedy.insert(p.greedy.end(), run, a);
  }
  if (has_probs) {
    const std::size_t n = obs * static_cast<std::size_t>(p.num_actions);
    r.need(n * sizeof(float));
    p.probs.resize(n);
    std::memcpy(p.probs.data(), r.data.data() + r.pos, n * sizeof(float));
    r.pos += n * sizeof(float);
  }
  require<IntegrityError>(r.pos == r.data.size(), "trailing bytes in policy file ", r.what);
  return s;
}

inline void save_policy(const fs::path& p, const Policy& pol, const json& meta = json::object()) {
  write_file(p, encode_policy(pol, meta));
}

inline StoredPolicy load_policy(const fs::path& p) { return decode_policy(read_file(p), p.string()); }

// Human-readable export: one entry per observation with a non-default
// action, or every distribution row for stochastic tables.
inline json policy_to_json(const StoredPolicy& s) {
  const Policy& p = s.policy;
  json j = {{"id", p.id},
            {"agent_slot", p.agent_slot},
            {"num_actions", p.num_actions},
            {"epsilon", p.epsilon},
            {"observations", p.greedy.size()},
            {"metadata", s.meta}};
  json greedy = json::array();
  for (std::size_t o = 0; o < p.greedy.size(); ++o)
    if (p.greedy[o] != 0) greedy.push_back({o, p.greedy[o]});
  j["greedy_nonzero"] = std::move(greedy);
  if (!p.probs.empty()) {
    json rows = json::array();
    for (std::size_t o = 0; o < p.greedy.size(); ++o) rows.push_back(p.distribution(o));
    j["distributions"] = std::move(rows);
  }
  return j;
}

// ===========================================================================
// Strict JSON helpers
// ===========================================================================

namespace detail {

inline void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  require<ConfigError>(j.is_object(), where, " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == k;
    require<ConfigError>(ok, "unknown key '", k, "' in ", where);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(concat(where, ".", key, ": ", e.what()));
  }
}

}  // namespace detail

// ===========================================================================
// Configuration sections
// ===========================================================================

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}, std::string_view where = "train") {
  detail::check_keys(j, where,
                     {"algorithm", "total_steps", "lr_start", "lr_end", "explore_start", "explore_end",
                      "explore_decay_fraction", "q_init", "negative_lr_scale", "eval_interval", "num_checkpoints",
                      "eval_episodes", "final_eval_episodes", "policy_epsilon", "aux_event_reward",
                      "aux_shaping_fraction"});
  if (j.contains("algorithm")) c.algorithm = algorithm_from_string(j["algorithm"].get<std::string>());
  detail::read_opt(j, "total_steps", c.total_steps, where);
  detail::read_opt(j, "lr_start", c.lr_start, where);
  detail::read_opt(j, "lr_end", c.lr_end, where);
  detail::read_opt(j, "explore_start", c.explore_start, where);
  detail::read_opt(j, "explore_end", c.explore_end, where);
  detail::read_opt(j, "explore_decay_fraction", c.explore_decay_fraction, where);
  detail::read_opt(j, "q_init", c.q_init, where);
  detail::read_opt(j, "negative_lr_scale", c.negative_lr_scale, where);
  detail::read_opt(j, "eval_interval", c.eval_interval, where);
  detail::read_opt(j, "num_checkpoints", c.num_checkpoints, where);
  detail::read_opt(j, "eval_episodes", c.eval_episodes, where);
  detail::read_opt(j, "final_eval_episodes", c.final_eval_episodes, where);
  detail::read_opt(j, "policy_epsilon", c.policy_epsilon, where);
  detail::read_opt(j, "aux_event_reward", c.aux_event_reward, where);
  detail::read_opt(j, "aux_shaping_fraction", c.aux_shaping_fraction, where);
  c.validate();
  return c;
}

inline json to_json(const TrainConfig& c) {
  return {{"algorithm", to_string(c.algorithm)},
          {"total_steps", c.total_steps},
          {"lr_start", c.lr_start},
          {"lr_end", c.lr_end},
          {"explore_start", c.explore_start},
          {"explore_end", c.explore_end},
          {"explore_decay_fraction", c.explore_decay_fraction},
          {"q_init", c.q_init},
          {"negative_lr_scale", c.negative_lr_scale},
          {"eval_interval", c.eval_interval},
          {"num_checkpoints", c.num_checkpoints},
          {"eval_episodes", c.eval_episodes},
          {"final_eval_episodes", c.final_eval_episodes},
          {"policy_epsilon", c.policy_epsilon},
          {"aux_event_reward", c.aux_event_reward},
          {"aux_shaping_fraction", c.aux_shaping_fraction}};
}

inline MetricConfig metric_config_from_json(const json& j) {
  detail::check_keys(j, "metrics", {"aggregator", "ci_level", "bootstrap_resamples", "ratio_clip", "episodes"});
  MetricConfig c;
  if (j.contains("aggregator")) c.aggregator = aggregator_from_string(j["aggregator"].get<std::string>());
  detail::read_opt(j, "ci_level", c.ci_level, "metrics");
  detail::read_opt(j, "bootstrap_resamples", c.bootstrap_resamples, "metrics");
  if (j.contains("ratio_clip") && !j["ratio_clip"].is_null()) c.ratio_clip = j["ratio_clip"].get<double>();
  c.validate();
  return c;
}

inline json to_json(const MetricConfig& c) {
  return {{"aggregator", to_string(c.aggregator)},
          {"ci_level", c.ci_level},
          {"bootstrap_resamples", c.bootstrap_resamples},
          {"ratio_clip", c.ratio_clip ? json(*c.ratio_clip) : json(nullptr)}};
}

inline RewardSpaceSpec reward_space_from_json(const json& j) {
  detail::check_keys(j, "reward_space", {"menus", "b_max", "c_max"});
  RewardSpaceSpec s;
  if (j.contains("menus")) {
    if (j["menus"].is_string()) {
      require<ConfigError>(j["menus"] == "kitchen-default", "unknown menu preset ", j["menus"].dump());
      s.menus = RewardSpaceSpec::kitchen_default().menus;
    } else {
      detail::read_opt(j, "menus", s.menus, "reward_space");
    }
  }
  detail::read_opt(j, "b_max", s.b_max, "reward_space");
  detail::read_opt(j, "c_max", s.c_max, "reward_space");
  s.validate();
  return s;
}

inline json to_json(const RewardWeights& w, const std::string& menu_hash) {
  return {{"id", w.id}, {"w", w.w}, {"menu_hash", menu_hash}};
}

inline json to_json(const ReturnEstimate& r) {
  return {{"mean", r.mean}, {"episodes", r.episodes}, {"per_episode_returns", r.per_episode_returns}};
}

inline ReturnEstimate return_estimate_from_json(const json& j) {
  return ReturnEstimate::from(j.at("per_episode_returns").get<std::vector<double>>());
}

inline json to_json(const BehaviorFeature& f) {
  return {{"theta", f.theta}, {"normalized", f.normalized}, {"episodes_used", f.episodes_used},
          {"degenerate", f.degenerate}};
}

inline BehaviorFeature behavior_feature_from_json(const json& j) {
  return BehaviorFeature::from_raw(j.at("theta").get<std::vector<double>>(), j.at("episodes_used").get<int>());
}

// ---- environments ---------------------------------------------------------

inline json to_json(const KitchenConfig& k) {
  json recipes = json::object();
  for (const auto& [n, r] : k.recipes) recipes[std::to_string(n)] = r;
  return {{"type", "kitchen"},         {"layout", k.rows},   {"cook_time", k.cook_time}, {"recipes", recipes},
          {"horizon", k.horizon},      {"discount", k.discount}, {"random_start", k.random_start}};
}

inline KitchenConfig kitchen_config_from_json(const json& j, const fs::path& base_dir = {}) {
  detail::check_keys(j, "env",
                     {"type", "layout", "layout_file", "cook_time", "recipes", "horizon", "discount", "random_start",
                      "preset"});
  KitchenConfig k;
  if (j.contains("preset")) {
    require<ConfigError>(j["preset"] == "multi-recipe", "unknown kitchen preset ", j["preset"].dump());
    k = KitchenConfig::multi_recipe();
  }
  if (j.contains("layout_file")) {
    fs::path p = j["layout_file"].get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    std::string text;
    try {
      text = read_file(p);
    } catch (const Error&) {
      throw ConfigError("cannot read layout file " + p.string());
    }
    k = parse_kitchen_config(text);
  }
  detail::read_opt(j, "layout", k.rows, "env");
  detail::read_opt(j, "cook_time", k.cook_time, "env");
  detail::read_opt(j, "horizon", k.horizon, "env");
  detail::read_opt(j, "discount", k.discount, "env");
  detail::read_opt(j, "random_start", k.random_start, "env");
  if (j.contains("recipes")) {
    k.recipes.clear();
    for (const auto& [n, r] : j["recipes"].items()) k.recipes[std::stoi(n)] = r.get<double>();
  }
  return k;
}

// Built-in matrix games. "coordination": both players pick one of three
// dishes; matching pays 3/2/1, anything else 0. Every pick fires that
// player's choice event and a match fires "coordinate" for both.
// "relay": a two-stage variant where the first stage picks which second
// stage is played.
inline EventMatrixGame matrix_preset(std::string_view name) {
  if (name == "coordination") {
    EventSchema schema({{"choose_a", EventKind::indicator, false},
                        {"choose_b", EventKind::indicator, false},
                        {"choose_c", EventKind::indicator, false},
                        {"coordinate", EventKind::indicator, false}});
    const double pay[3] = {3, 2, 1};
    std::vector<std::vector<double>> payoff(3, std::vector<double>(3, 0.0));
    std::vector<std::vector<std::array<EventVector, 2>>> events(3, std::vector<std::array<EventVector, 2>>(3));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        payoff[a][b] = a == b ? pay[a] : 0.0;
        events[a][b][0][a] = 1;
        events[a][b][1][b] = 1;
        if (a == b) events[a][b][0][3] = events[a][b][1][3] = 1;
      }
    return EventMatrixGame::single_stage(payoff, events, std::move(schema));
  }
  if (name == "relay") {
    EventSchema schema({{"lead", EventKind::indicator, false},
                        {"follow", EventKind::indicator, false},
                        {"handoff", EventKind::indicator, false},
                        {"finish", EventKind::indicator, false}});
    // Root: (a0, a1) in {lead, follow}^2. Matching roles (one leads, one
    // follows) move to the rewarding stage 2, otherwise to a dud stage.
    EventMatrixGame::Node root{0, {}}, good{1, {}}, dud{1, {}};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        EventMatrixGame::Outcome o;
        o.events[0][a] = 1;
        o.events[1][b] = 1;
        o.next = a != b ? 1 : 2;
        if (a != b) o.events[0][2] = o.events[1][2] = 1;
        root.outcomes.push_back(o);
        EventMatrixGame::Outcome g;
        g.reward = a == b ? (a == 0 ? 2.0 : 1.0) : 0.0;
        g.events[0][a] = 1;
        g.events[1][b] = 1;
        if (a == b) g.events[0][3] = g.events[1][3] = 1;
        good.outcomes.push_back(g);
        EventMatrixGame::Outcome d;
        d.reward = a == b ? 0.5 : 0.0;
        d.events[0][a] = 1;
        d.events[1][b] = 1;
        dud.outcomes.push_back(d);
      }
    return EventMatrixGame({2, 2}, {root, good, dud}, std::move(schema));
  }
  throw ConfigError(detail::concat("unknown matrix-game preset '", name, "' (expected coordination or relay)"));
}

inline EventMatrixGame matrix_game_from_json(const json& j) {
  detail::check_keys(j, "env", {"type", "preset", "actions", "events", "nodes"});
  if (j.contains("preset")) return matrix_preset(j["preset"].get<std::string>());
  try {
    std::vector<EventInfo> infos;
    for (const auto& name : j.at("events")) infos.push_back({name.get<std::string>(), EventKind::indicator, false});
    EventSchema schema(std::move(infos));
    const auto actions = j.at("actions").get<std::array<int, 2>>();
    std::vector<EventMatrixGame::Node> nodes;
    for (const auto& jn : j.at("nodes")) {
      EventMatrixGame::Node n;
      n.depth = jn.at("depth").get<int>();
      for (const auto& jo : jn.at("outcomes")) {
        EventMatrixGame::Outcome o;
        o.reward = jo.value("reward", 0.0);
        o.next = jo.value("next", EventMatrixGame::kTerminal);
        if (jo.contains("events")) {
          const auto ev = jo["events"].get<std::vector<std::vector<double>>>();
          require<ConfigError>(ev.size() == 2, "outcome events need one vector per player");
          for (int i = 0; i < 2; ++i) {
            require<ConfigError>(ev[i].size() == schema.size(), "outcome event vector has length ", ev[i].size(),
                                 ", schema has ", schema.size());
            for (std::size_t k = 0; k < ev[i].size(); ++k) o.events[i][k] = ev[i][k];
          }
        }
        n.outcomes.push_back(o);
      }
      nodes.push_back(std::move(n));
    }
    return EventMatrixGame(actions, std::move(nodes), std::move(schema));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("matrix game: ") + e.what());
  }
}

}  // namespace zsceval
