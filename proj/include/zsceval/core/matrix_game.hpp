#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "zsceval/core/env.hpp"

namespace zsceval {

// Finite-horizon two-player game over an explicit tree of stage games. Each
// joint action at a node yields a fixed base reward, fires a fixed set of
// events for each player, and moves deterministically to a child node.
// Small enough that every deterministic joint policy can be enumerated.
class EventMatrixGame {
 public:
  using State = int;  // node id; kTerminal after the last stage
  static constexpr State kTerminal = -1;

  struct Outcome {
    double reward = 0.0;
    std::array<EventVector, 2> events{};
    State next = kTerminal;
  };

  struct Node {
    int depth = 0;
    // Indexed a0 * num_actions[1] + a1.
    std::vector<Outcome> outcomes;
  };

  static constexpr int kMaxHorizon = 3;
  static constexpr int kMaxActions = 5;
  static constexpr std::uint64_t kMaxTrajectories = 100000;

  EventMatrixGame(std::array<int, 2> num_actions, std::vector<Node> nodes, EventSchema schema)
      : num_actions_(num_actions), nodes_(std::move(nodes)), schema_(std::move(schema)) {
    for (int n : num_actions_)
      require<ConfigError>(n >= 1 && n <= kMaxActions, "matrix game action counts must be in [1, ", kMaxActions,
                           "]");
    require<ConfigError>(!nodes_.empty(), "matrix game needs a root node");
    require<ConfigError>(nodes_[0].depth == 0, "node 0 must be the root");
    int horizon = 0;
    const std::size_t joint = static_cast<std::size_t>(num_actions_[0] * num_actions_[1]);
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      require<ConfigError>(n.outcomes.size() == joint, "node ", id, " has ", n.outcomes.size(),
                           " outcomes, expected ", joint);
      horizon = std::max(horizon, n.depth + 1);
      for (const Outcome& o : n.outcomes) {
        if (o.next == kTerminal) continue;
        require<ConfigError>(o.next > 0 && o.next < static_cast<int>(nodes_.size()), "node ", id,
                             " links to missing node ", o.next);
        require<ConfigError>(nodes_[o.next].depth == n.depth + 1, "node ", id, " child ", o.next,
                             " is not one level deeper");
      }
    }
    require<ConfigError>(horizon <= kMaxHorizon, "matrix game horizon ", horizon, " exceeds ", kMaxHorizon);
    // Every non-terminal path must last exactly `horizon` steps.
    for (std::size_t id = 0; id < nodes_.size(); ++id)
      for (const Outcome& o : nodes_[id].outcomes)
        require<ConfigError>((o.next == kTerminal) == (nodes_[id].depth == horizon - 1), "node ", id,
                             " terminates at the wrong depth");
    require<ConfigError>(trajectory_count() <= kMaxTrajectories, "game tree has ", trajectory_count(),
                         " joint trajectories, cap is ", kMaxTrajectories);

    spec_.num_agents = 2;
    spec_.state_space_size = nodes_.size();
    spec_.action_space_sizes = {num_actions_[0], num_actions_[1]};
    spec_.horizon = horizon;
    spec_.discount = 0.99;
    spec_.initial_state_dist = {{0, 1.0}};
    spec_.validate();
  }

  // One-shot game from payoff and event tables, indexed [a0][a1].
  static EventMatrixGame single_stage(const std::vector<std::vector<double>>& payoff,
                                      const std::vector<std::vector<std::array<EventVector, 2>>>& events,
                                      EventSchema schema) {
    require<ConfigError>(!payoff.empty() && !payoff[0].empty(), "empty payoff table");
    const int n0 = static_cast<int>(payoff.size());
    const int n1 = static_cast<int>(payoff[0].size());
    Node root;
    for (int a0 = 0; a0 < n0; ++a0) {
      require<ConfigError>(static_cast<int>(payoff[a0].size()) == n1, "ragged payoff table");
      for (int a1 = 0; a1 < n1; ++a1) {
        Outcome o;
        o.reward = payoff[a0][a1];
        if (!events.empty()) o.events = events[a0][a1];
        root.outcomes.push_back(o);
      }
    }
    return EventMatrixGame({n0, n1}, {std::move(root)}, std::move(schema));
  }

  const EnvSpec& spec() const { return spec_; }
  const EventSchema& schema() const { return schema_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::array<int, 2> num_actions() const { return num_actions_; }

  State reset(std::uint64_t /*seed*/) const { return 0; }

  bool is_terminal(State s) const { return s == kTerminal; }

  std::size_t observation_count() const { return nodes_.size(); }
  std::size_t observe(State s, int /*slot*/) const { return static_cast<std::size_t>(s); }

  const Outcome& outcome(State s, int a0, int a1) const {
    return nodes_[static_cast<std::size_t>(s)].outcomes[static_cast<std::size_t>(a0 * num_actions_[1] + a1)];
  }

  Transition<State> step(State s, const JointAction& a) const {
    require(s >= 0 && s < static_cast<int>(nodes_.size()), "step from invalid node ", s);
    check_joint_action(*this, a);
    const Outcome& o = outcome(s, a[0], a[1]);
    Transition<State> t;
    t.state = s;
    t.joint_action = a;
    t.next_state = o.next;
    t.base_reward = o.reward;
    t.events[0] = o.events[0];
    t.events[1] = o.events[1];
    return t;
  }

  std::array<EventVector, 2> embed(State s, const JointAction& a, State next) const {
    const auto t = step(s, a);
    require(t.next_state == next, "embed: (state, action, next) is not a transition of this game");
    return {t.events[0], t.events[1]};
  }

  std::uint64_t trajectory_count() const {
    // Joint trajectories from the root, counted over the tree.
    std::vector<std::uint64_t> paths(nodes_.size(), 0);
    for (std::size_t id = nodes_.size(); id-- > 0;) {
      std::uint64_t total = 0;
      for (const Outcome& o : nodes_[id].outcomes) total += o.next == kTerminal ? 1 : paths[o.next];
      paths[id] = total;
    }
    return paths[0];
  }

  // Node ids reachable from the root under some joint action sequence.
  std::vector<int> reachable_nodes() const {
    std::vector<bool> seen(nodes_.size(), false);
    std::vector<int> stack{0}, order;
    seen[0] = true;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      order.push_back(id);
      for (const Outcome& o : nodes_[id].outcomes)
        if (o.next != kTerminal && !seen[o.next]) {
          seen[o.next] = true;
          stack.push_back(o.next);
        }
    }
    std::sort(order.begin(), order.end());
    return order;
  }

  std::uint64_t content_hash() const {
    Fnv1a h;
    h.str("event-matrix-game").u64(schema_.hash()).u64(num_actions_[0]).u64(num_actions_[1]);
    for (const Node& n : nodes_) {
      h.u64(n.depth);
      for (const Outcome& o : n.outcomes) {
        h.f64(o.reward).u64(static_cast<std::uint64_t>(o.next));
        for (const auto& ev : o.events)
          for (std::size_t k = 0; k < schema_.size(); ++k) h.f64(ev[k]);
      }
    }
    return h.value();
  }

 private:
  std::array<int, 2> num_actions_;
  std::vector<Node> nodes_;
  EventSchema schema_;
  EnvSpec spec_;
};

// A deterministic joint policy: for each player, the action taken at every
// node (entries for unreachable nodes are 0 and never consulted).
struct JointDeterministicPolicy {
  std::array<std::vector<int>, 2> actions;

  bool operator==(const JointDeterministicPolicy&) const = default;
};

// Exhaustive list of deterministic joint policies over reachable nodes.
// Throws PreconditionError with the would-be size when it exceeds `cap`.
inline std::vector<JointDeterministicPolicy> enumerate_joint_policies(const EventMatrixGame& game,
                                                                       std::uint64_t cap = 1000000) {
  const auto reachable = game.reachable_nodes();
  const auto na = game.num_actions();
  long double count = 1.0L;
  for (std::size_t k = 0; k < reachable.size(); ++k) count *= static_cast<long double>(na[0]) * na[1];
  require(count <= static_cast<long double>(cap), "refusing to enumerate ", static_cast<double>(count),
          " joint policies (", reachable.size(), " reachable nodes, cap ", cap, ")");

  std::vector<JointDeterministicPolicy> out;
  out.reserve(static_cast<std::size_t>(count));
  const std::size_t n_nodes = game.nodes().size();
  // Mixed-radix counter over (player, reachable node) digits.
  std::vector<int> digits(reachable.size() * 2, 0);
  while (true) {
    JointDeterministicPolicy p;
    p.actions[0].assign(n_nodes, 0);
    p.actions[1].assign(n_nodes, 0);
    for (std::size_t k = 0; k < reachable.size(); ++k) {
      p.actions[0][reachable[k]] = digits[k];
      p.actions[1][reachable[k]] = digits[reachable.size() + k];
    }
    out.push_back(std::move(p));
    std::size_t pos = 0;
    for (; pos < digits.size(); ++pos) {
      const int radix = na[pos < reachable.size() ? 0 : 1];
      if (++digits[pos] < radix) break;
      digits[pos] = 0;
    }
    if (pos == digits.size()) break;
  }
  return out;
}

// Number of deterministic policies of one player (product over reachable nodes).
inline std::uint64_t count_player_policies(const EventMatrixGame& game, int player) {
  std::uint64_t c = 1;
  for (std::size_t k = 0; k < game.reachable_nodes().size(); ++k) c *= game.num_actions()[player];
  return c;
}

}  // namespace zsceval
