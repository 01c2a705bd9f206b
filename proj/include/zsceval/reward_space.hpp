#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "zsceval/core/env.hpp"

namespace zsceval {

// Event-weight vector defining one behavior-preferring reward. Additive
// entries add w_k * phi_k to the shaped player's reward; multiplicative
// entries (EventInfo::multiplicative) scale the base reward, with 0 meaning
// "inactive" (factor 1).
struct RewardWeights {
  std::vector<double> w;
  std::string id;

  RewardWeights() = default;
  explicit RewardWeights(std::vector<double> values) : w(std::move(values)), id(make_id(w)) {}

  static std::string make_id(const std::vector<double>& values) {
    Fnv1a h;
    h.str("w");
    for (double v : values) h.f64(v);
    return hex64(h.value());
  }

  std::size_t nonzeros() const {
    return static_cast<std::size_t>(std::count_if(w.begin(), w.end(), [](double v) { return v != 0.0; }));
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : w) m = std::max(m, std::abs(v));
    return m;
  }

  bool is_zero() const { return nonzeros() == 0; }
  bool operator==(const RewardWeights& o) const { return w == o.w; }
};

struct RewardSpaceSpec {
  // menus[k] lists the allowed weights of event k.
  std::vector<std::vector<double>> menus;
  double b_max = 20.0;
  int c_max = 3;
  bool include_base_reward = true;

  // The weight menus used for the kitchen's event set.
  static RewardSpaceSpec kitchen_default() {
    RewardSpaceSpec s;
    s.menus = {
        {0},                  // put onto counter
        {0},                  // pickup from counter
        {-20, 0, 10},         // pickup onion
        {-20, 0, 10},         // pickup dish
        {-20, 0, 5, 10},      // pickup soup
        {-20, 0, 3, 10},      // place in pot
        {-20, 0},             // deliver
        {-0.1, 0, 0.1},       // stay
        {0},                  // movement
        {0.1, 1},             // order reward (multiplier)
    };
    return s;
  }

  void validate() const {
    require<ConfigError>(c_max >= 1, "C_max must be >= 1, got ", c_max);
    require<ConfigError>(b_max >= 0.0, "B_max must be >= 0");
    require<ConfigError>(include_base_reward, "the base game reward is always part of the shaped reward");
    bool any_nonzero = false;
    for (std::size_t k = 0; k < menus.size(); ++k) {
      require<ConfigError>(!menus[k].empty(), "event ", k, " has an empty weight menu");
      std::set<double> seen;
      for (double v : menus[k]) {
        require<ConfigError>(std::isfinite(v) && std::abs(v) <= b_max, "menu value ", v, " of event ", k,
                             " exceeds B_max=", b_max);
        require<ConfigError>(seen.insert(v).second, "event ", k, " lists weight ", v, " twice");
        any_nonzero = any_nonzero || v != 0.0;
      }
    }
    if (!any_nonzero) warn("reward space has no nonzero weight option; only the base game is representable");
  }

  void check_schema(const EventSchema& schema) const {
    require<SchemaMismatchError>(menus.size() == schema.size(), "reward space has ", menus.size(),
                                 " event menus but the environment schema has ", schema.size(), " events");
  }

  bool admits(const RewardWeights& rw) const {
    if (rw.w.size() != menus.size()) return false;
    if (rw.max_abs() > b_max) return false;
    if (static_cast<int>(rw.nonzeros()) > c_max) return false;
    for (std::size_t k = 0; k < menus.size(); ++k)
      if (std::find(menus[k].begin(), menus[k].end(), rw.w[k]) == menus[k].end()) return false;
    return true;
  }

  std::string menu_hash() const {
    Fnv1a h;
    h.str("menus").f64(b_max).u64(static_cast<std::uint64_t>(c_max));
    for (const auto& m : menus) {
      h.u64(m.size());
      for (double v : m) h.f64(v);
    }
    return hex64(h.value());
  }

  // Size of the constrained space without materializing it.
  std::uint64_t space_size() const {
    // ways[c] = number of prefixes with c nonzero entries
    std::vector<std::uint64_t> ways(static_cast<std::size_t>(c_max) + 1, 0);
    ways[0] = 1;
    for (const auto& menu : menus) {
      const auto nz = static_cast<std::uint64_t>(std::count_if(menu.begin(), menu.end(), [](double v) { return v != 0.0; }));
      const std::uint64_t z = menu.size() - nz;
      std::vector<std::uint64_t> next(ways.size(), 0);
      for (std::size_t c = 0; c < ways.size(); ++c) {
        next[c] += ways[c] * z;
        if (c + 1 < ways.size()) next[c + 1] += ways[c] * nz;
      }
      ways = std::move(next);
    }
    std::uint64_t total = 0;
    for (auto w : ways) total += w;
    return total;
  }
};

// Every admissible weight vector, in lexicographic order of menu positions.
inline std::vector<RewardWeights> enumerate_weights(const RewardSpaceSpec& spec) {
  spec.validate();
  std::vector<RewardWeights> out;
  std::vector<double> cur(spec.menus.size(), 0.0);
  auto rec = [&](auto&& self, std::size_t k, int used) -> void {
    if (k == spec.menus.size()) {
      out.emplace_back(cur);
      return;
    }
    for (double v : spec.menus[k]) {
      const int u = used + (v != 0.0);
      if (u > spec.c_max) continue;
      cur[k] = v;
      self(self, k + 1, u);
    }
  };
  rec(rec, 0, 0);
  return out;
}

struct WeightSample {
  std::vector<RewardWeights> weights;
  std::uint64_t space_size = 0;
  bool exhausted = false;  // fewer than requested members exist
};

// Draws `count` distinct admissible weight vectors. When the space holds no
// more than `count` members the whole enumeration is returned and flagged.
inline WeightSample enumerate_or_sample_weights(const RewardSpaceSpec& spec, std::size_t count, Rng& rng,
                                                std::uint64_t enumeration_cap = 1u << 20) {
  require(count >= 1, "need at least one candidate weight vector");
  spec.validate();
  WeightSample out;
  out.space_size = spec.space_size();
  if (out.space_size <= enumeration_cap) {
    auto all = enumerate_weights(spec);
    if (all.size() <= count) {
      out.exhausted = all.size() < count;
      if (out.exhausted) warn("reward space holds only ", all.size(), " members, ", count, " requested");
      out.weights = std::move(all);
      return out;
    }
    std::vector<std::size_t> idx(all.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle(idx, rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) out.weights.push_back(all[i]);
    return out;
  }
  // Rejection sampling for spaces too large to list.
  std::set<std::string> seen;
  while (out.weights.size() < count) {
    std::vector<double> w(spec.menus.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = spec.menus[k][uniform_index(rng, spec.menus[k].size())];
    RewardWeights rw(std::move(w));
    if (!spec.admits(rw) || !seen.insert(rw.id).second) continue;
    out.weights.push_back(std::move(rw));
  }
  return out;
}

using PlayerRewards = std::array<double, kMaxAgents>;

// Shaped player reward. Others receive the base reward.
template <typename State>
double shaped_player_reward(const EventSchema& schema, const RewardWeights& rw, const Transition<State>& t,
                            int shaped_slot) {
  double mult = 1.0;
  double add = 0.0;
  const EventVector& phi = t.events[shaped_slot];
  for (std::size_t k = 0; k < schema.size(); ++k) {
    const double wk = rw.w[k];
    if (wk == 0.0) continue;
    if (schema[k].multiplicative)
      mult *= wk;
    else
      add += wk * phi[k];
  }
  return mult * t.base_reward + add;
}

template <typename State>
PlayerRewards shaped_reward(const EventSchema& schema, const RewardWeights& rw, const Transition<State>& t,
                            int shaped_slot, int num_agents = 2) {
  require<SchemaMismatchError>(rw.w.size() == schema.size(), "weight vector has length ", rw.w.size(),
                               ", event schema has ", schema.size(), " events");
  require(shaped_slot >= 0 && shaped_slot < num_agents, "shaped slot ", shaped_slot, " out of range");
  PlayerRewards out{};
  for (int i = 0; i < num_agents; ++i) out[i] = t.base_reward;
  out[shaped_slot] = shaped_player_reward(schema, rw, t, shaped_slot);
  return out;
}

}  // namespace zsceval
