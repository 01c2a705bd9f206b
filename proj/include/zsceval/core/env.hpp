#pragma once

#include <concepts>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "zsceval/common.hpp"

namespace zsceval {

// The static part of a DEC-MDP: sizes, horizon, discount and start
// distribution. Transition and reward functions live on the environment.
struct EnvSpec {
  int num_agents = 2;
  std::uint64_t state_space_size = 1;
  std::vector<int> action_space_sizes;
  int horizon = 1;
  double discount = 0.99;
  // Sparse start distribution: (global state index, probability).
  std::vector<std::pair<std::uint64_t, double>> initial_state_dist;

  void validate() const {
    require<ConfigError>(num_agents >= 2 && num_agents <= static_cast<int>(kMaxAgents),
                         "num_agents must be in [2, ", kMaxAgents, "], got ", num_agents);
    require<ConfigError>(static_cast<int>(action_space_sizes.size()) == num_agents,
                         "action_space_sizes has ", action_space_sizes.size(), " entries for ", num_agents,
                         " agents");
    for (int a : action_space_sizes) require<ConfigError>(a >= 1, "action space size must be >= 1");
    require<ConfigError>(state_space_size >= 1, "state space must be nonempty");
    require<ConfigError>(horizon >= 1, "horizon must be >= 1, got ", horizon);
    require<ConfigError>(discount >= 0.0 && discount < 1.0, "discount must be in [0,1), got ", discount);
    double total = 0.0;
    for (const auto& [s, p] : initial_state_dist) {
      require<ConfigError>(s < state_space_size, "initial state ", s, " out of range");
      require<ConfigError>(p >= 0.0, "negative initial probability");
      total += p;
    }
    require<ConfigError>(std::abs(total - 1.0) <= 1e-12, "initial distribution sums to ", total);
  }
};

enum class EventKind { indicator, count };

struct EventInfo {
  std::string name;
  EventKind kind = EventKind::indicator;
  // A multiplicative event scales the base reward of the shaped player
  // instead of adding to it (e.g. an order-reward multiplier).
  bool multiplicative = false;
};

// Ordered list of named events; environments emit one EventVector per agent
// whose first size() entries follow this order.
class EventSchema {
 public:
  EventSchema() = default;
  explicit EventSchema(std::vector<EventInfo> events) : events_(std::move(events)) {
    require<ConfigError>(events_.size() <= kMaxEvents, "at most ", kMaxEvents, " events supported");
    std::set<std::string> seen;
    for (const auto& e : events_)
      require<ConfigError>(seen.insert(e.name).second, "duplicate event name '", e.name, "'");
  }

  std::size_t size() const { return events_.size(); }
  const EventInfo& operator[](std::size_t i) const { return events_[i]; }
  const std::vector<EventInfo>& events() const { return events_; }

  int index_of(std::string_view name) const {
    for (std::size_t i = 0; i < events_.size(); ++i)
      if (events_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  std::uint64_t hash() const {
    Fnv1a h;
    for (const auto& e : events_) h.str(e.name).u64(static_cast<std::uint64_t>(e.kind)).u64(e.multiplicative);
    return h.value();
  }

 private:
  std::vector<EventInfo> events_;
};

template <typename State>
struct Transition {
  State state{};
  JointAction joint_action{};
  State next_state{};
  double base_reward = 0.0;
  // events[i] holds the events attributed to agent i.
  std::array<EventVector, kMaxAgents> events{};
};

// What the trainers, evaluators and embedders need from an environment.
// Observations are agent-centric indices into a dense table so one tabular
// policy can be placed in different slots where the environment allows it.
template <typename E>
concept Environment = requires(const E& env, const typename E::State& s, const JointAction& a, int slot,
                               std::uint64_t seed) {
  typename E::State;
  { env.spec() } -> std::convertible_to<const EnvSpec&>;
  { env.schema() } -> std::convertible_to<const EventSchema&>;
  { env.reset(seed) } -> std::same_as<typename E::State>;
  { env.step(s, a) } -> std::same_as<Transition<typename E::State>>;
  { env.observe(s, slot) } -> std::convertible_to<std::size_t>;
  { env.observation_count() } -> std::convertible_to<std::size_t>;
  { env.is_terminal(s) } -> std::convertible_to<bool>;
  { env.content_hash() } -> std::convertible_to<std::uint64_t>;
};

template <typename E>
void check_joint_action(const E& env, const JointAction& a) {
  const EnvSpec& spec = env.spec();
  for (int i = 0; i < spec.num_agents; ++i)
    require(a[i] >= 0 && a[i] < spec.action_space_sizes[i], "invalid action ", a[i], " for agent ", i,
            " (action space size ", spec.action_space_sizes[i], ")");
}

}  // namespace zsceval
