#pragma once
// Seeded corpus of small random event matrix games for oracle tests.

#include "zsceval/core/matrix_game.hpp"
#include "zsceval/reward_space.hpp"

namespace corpus {

using namespace zsceval;

inline EventSchema schema(std::size_t m) {
  std::vector<EventInfo> ev;
  for (std::size_t k = 0; k < m; ++k) ev.push_back({"e" + std::to_string(k), EventKind::indicator, false});
  return EventSchema(std::move(ev));
}

// Integer payoffs in [0, 4]; each player fires each event with
// probability 1/3 on every outcome.
inline EventMatrixGame random_game(Rng& rng, int horizon, std::array<int, 2> na, std::size_t events = 3) {
  auto outcome = [&](int next) {
    EventMatrixGame::Outcome o;
    o.reward = static_cast<double>(uniform_index(rng, 5));
    for (int i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < events; ++k) o.events[i][k] = uniform_index(rng, 3) == 0 ? 1.0 : 0.0;
    o.next = next;
    return o;
  };
  const int joint = na[0] * na[1];
  std::vector<EventMatrixGame::Node> nodes(1);
  nodes[0].depth = 0;
  if (horizon == 1) {
    for (int j = 0; j < joint; ++j) nodes[0].outcomes.push_back(outcome(EventMatrixGame::kTerminal));
  } else {
    // Two stage-2 nodes; each root outcome links to one of them.
    for (int c = 0; c < 2; ++c) {
      EventMatrixGame::Node n;
      n.depth = 1;
      for (int j = 0; j < joint; ++j) n.outcomes.push_back(outcome(EventMatrixGame::kTerminal));
      nodes.push_back(std::move(n));
    }
    for (int j = 0; j < joint; ++j) nodes[0].outcomes.push_back(outcome(1 + static_cast<int>(uniform_index(rng, 2))));
  }
  return EventMatrixGame(na, std::move(nodes), schema(events));
}

inline RewardWeights random_weights(Rng& rng, std::size_t events) {
  static const double menu[] = {-3, -1, 0, 0, 1, 3};
  std::vector<double> w(events);
  for (auto& x : w) x = menu[uniform_index(rng, 6)];
  return RewardWeights(std::move(w));
}

}  // namespace corpus
