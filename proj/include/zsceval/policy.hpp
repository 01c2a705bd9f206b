#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "zsceval/common.hpp"

namespace zsceval {

// Tabular policy over agent-centric observation indices.
//
// Two representations share one type: a greedy table mixed with uniform
// exploration (pi = (1 - epsilon) * onehot(greedy) + epsilon / |A|), or an
// explicit per-observation distribution in `probs` (row-major, used by
// policy-gradient learners). `probs` wins when non-empty.
struct Policy {
  std::string id;
  int agent_slot = 0;
  int num_actions = 1;
  std::vector<std::uint8_t> greedy;
  double epsilon = 0.0;
  std::vector<float> probs;

  std::size_t observation_count() const {
    return probs.empty() ? greedy.size() : probs.size() / static_cast<std::size_t>(num_actions);
  }

  int act(std::size_t obs, Rng& rng) const {
    if (!probs.empty()) {
      const float* row = &probs[obs * static_cast<std::size_t>(num_actions)];
      double u = uniform01(rng);
      for (int a = 0; a < num_actions - 1; ++a) {
        u -= row[a];
        if (u < 0.0) return a;
      }
      return num_actions - 1;
    }
    if (epsilon > 0.0 && (epsilon >= 1.0 || uniform01(rng) < epsilon))
      return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(num_actions)));
    return greedy[obs];
  }

  std::vector<double> distribution(std::size_t obs) const {
    std::vector<double> d(static_cast<std::size_t>(num_actions), 0.0);
    if (!probs.empty()) {
      for (int a = 0; a < num_actions; ++a) d[a] = probs[obs * static_cast<std::size_t>(num_actions) + a];
      return d;
    }
    const double eps = std::min(1.0, epsilon);
    for (auto& x : d) x = eps / num_actions;
    d[greedy[obs]] += 1.0 - eps;
    return d;
  }

  std::uint64_t content_hash() const {
    Fnv1a h;
    h.u64(static_cast<std::uint64_t>(num_actions)).f64(epsilon).bytes(greedy.data(), greedy.size());
    if (!probs.empty()) h.bytes(probs.data(), probs.size() * sizeof(float));
    return h.value();
  }

  bool same_behavior(const Policy& o) const {
    return num_actions == o.num_actions && epsilon == o.epsilon && greedy == o.greedy && probs == o.probs;
  }

  // ---- factories -------------------------------------------------------

  static Policy uniform(std::size_t obs_count, int num_actions, int slot = 0, std::string id = "uniform") {
    Policy p;
    p.id = std::move(id);
    p.agent_slot = slot;
    p.num_actions = num_actions;
    p.greedy.assign(obs_count, 0);
    p.epsilon = 1.0;
    return p;
  }

  static Policy constant(std::size_t obs_count, int num_actions, int action, int slot = 0, std::string id = "constant") {
    require(action >= 0 && action < num_actions, "constant action out of range");
    Policy p;
    p.id = std::move(id);
    p.agent_slot = slot;
    p.num_actions = num_actions;
    p.greedy.assign(obs_count, static_cast<std::uint8_t>(action));
    return p;
  }

  static Policy from_function(std::size_t obs_count, int num_actions, const std::function<int(std::size_t)>& fn,
                              int slot = 0, std::string id = "scripted") {
    Policy p = constant(obs_count, num_actions, 0, slot, std::move(id));
    for (std::size_t o = 0; o < obs_count; ++o) {
      const int a = fn(o);
      require(a >= 0 && a < num_actions, "scripted action out of range at observation ", o);
      p.greedy[o] = static_cast<std::uint8_t>(a);
    }
    return p;
  }
};

}  // namespace zsceval
