#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zsceval/behavior_feature.hpp"
#include "zsceval/core/env.hpp"
#include "zsceval/policy.hpp"
#include "zsceval/reward_space.hpp"

namespace zsceval {

// ===========================================================================
// Evaluation
// ===========================================================================

struct ReturnEstimate {
  double mean = 0.0;
  int episodes = 0;
  std::vector<double> per_episode_returns;

  static ReturnEstimate from(std::vector<double> returns) {
    ReturnEstimate r;
    r.mean = mean_of(returns);
    r.episodes = static_cast<int>(returns.size());
    r.per_episode_returns = std::move(returns);
    return r;
  }

  double standard_error() const { return zsceval::standard_error(per_episode_returns); }
};

struct Rollouts {
  ReturnEstimate returns;
  // Per slot: mean (over episodes) of the per-episode summed event vectors.
  std::vector<EventVector> mean_events;
  // Per slot: event totals over the whole batch.
  std::vector<EventVector> total_events;
  // Reset seed of every episode, in order.
  std::vector<std::uint64_t> env_seeds;
};

inline std::uint64_t episode_env_seed(std::uint64_t seed, std::uint64_t episode) {
  return splitmix64(seed ^ splitmix64(episode + 0x51ed27));
}

template <Environment E>
void check_policies(const E& env, std::span<const Policy* const> policies) {
  const EnvSpec& spec = env.spec();
  require(static_cast<int>(policies.size()) == spec.num_agents, "need one policy per slot: got ", policies.size(),
          " for ", spec.num_agents, " agents");
  for (int i = 0; i < spec.num_agents; ++i) {
    require(policies[i] != nullptr, "missing policy for slot ", i);
    require(policies[i]->num_actions == spec.action_space_sizes[i], "policy '", policies[i]->id, "' has ",
            policies[i]->num_actions, " actions but slot ", i, " has ", spec.action_space_sizes[i]);
    require(policies[i]->observation_count() == env.observation_count(), "policy '", policies[i]->id,
            "' covers ", policies[i]->observation_count(), " observations, environment has ", env.observation_count());
  }
}

// Undiscounted fixed-horizon returns of one policy per slot. Deterministic
// for a fixed seed; episode k always resets with episode_env_seed(seed, k).
template <Environment E>
Rollouts evaluate_pair(const E& env, std::span<const Policy* const> policies, int episodes, std::uint64_t seed) {
  require(episodes >= 1, "need at least one evaluation episode");
  check_policies(env, policies);
  const EnvSpec& spec = env.spec();
  const int n = spec.num_agents;
  Rollouts out;
  out.mean_events.assign(n, EventVector{});
  out.total_events.assign(n, EventVector{});
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    const std::uint64_t env_seed = episode_env_seed(seed, static_cast<std::uint64_t>(e));
    out.env_seeds.push_back(env_seed);
    Rng rng(splitmix64(env_seed + 1));
    auto state = env.reset(env_seed);
    double ret = 0.0;
    for (int t = 0; t < spec.horizon && !env.is_terminal(state); ++t) {
      JointAction a{};
      for (int i = 0; i < n; ++i) a[i] = policies[i]->act(env.observe(state, i), rng);
      auto tr = env.step(state, a);
      ret += tr.base_reward;
      for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < env.schema().size(); ++k) out.total_events[i][k] += tr.events[i][k];
      state = tr.next_state;
    }
    returns.push_back(ret);
  }
  for (int i = 0; i < n; ++i)
    for (std::size_t k = 0; k < env.schema().size(); ++k) out.mean_events[i][k] = out.total_events[i][k] / episodes;
  out.returns = ReturnEstimate::from(std::move(returns));
  return out;
}

template <Environment E>
Rollouts evaluate_pair(const E& env, std::initializer_list<const Policy*> policies, int episodes, std::uint64_t seed) {
  return evaluate_pair(env, std::span<const Policy* const>(policies.begin(), policies.size()), episodes, seed);
}

// ===========================================================================
// Configuration
// ===========================================================================

enum class Algorithm { independent_q, independent_pg };

inline std::string to_string(Algorithm a) { return a == Algorithm::independent_q ? "independent-q" : "independent-pg"; }

inline Algorithm algorithm_from_string(std::string_view s) {
  if (s == "independent-q") return Algorithm::independent_q;
  if (s == "independent-pg") return Algorithm::independent_pg;
  throw ConfigError(detail::concat("unknown algorithm '", s, "'"));
}

struct TrainConfig {
  Algorithm algorithm = Algorithm::independent_q;
  std::uint64_t total_steps = 200000;
  // Learning rate, linear from start to end over the run.
  double lr_start = 0.1;
  double lr_end = 0.1;
  // Epsilon (Q-learning) or entropy weight (policy gradient): linear from
  // start to end over the first `explore_decay_fraction` of the run.
  double explore_start = 0.2;
  double explore_end = 0.01;
  double explore_decay_fraction = 0.5;
  double q_init = 0.0;
  // Scale on the learning rate for negative TD errors (hysteretic
  // learners); 1 is plain Q-learning.
  double negative_lr_scale = 1.0;
  // 0 means total_steps / num_checkpoints.
  std::uint64_t eval_interval = 0;
  int num_checkpoints = 20;
  int eval_episodes = 10;
  int final_eval_episodes = 100;
  // Uniform exploration kept by exported Q policies.
  double policy_epsilon = 0.0;
  // Auxiliary per-event reward paid to every learner for its own events,
  // annealed linearly to zero by `aux_shaping_fraction` of the run. Empty
  // disables it. Only learning targets see it; evaluation never does.
  std::vector<double> aux_event_reward;
  double aux_shaping_fraction = 0.5;
  std::uint64_t seed = 0;

  std::uint64_t effective_eval_interval() const {
    return eval_interval > 0 ? eval_interval : std::max<std::uint64_t>(1, total_steps / std::max(1, num_checkpoints));
  }

  void validate() const {
    require<ConfigError>(total_steps >= 1, "total_steps must be >= 1");
    require<ConfigError>(total_steps >= effective_eval_interval(), "total_steps must be >= eval_interval");
    require<ConfigError>(lr_start > 0.0 && lr_end > 0.0 && lr_start <= 1.0, "learning rates must be in (0, 1]");
    require<ConfigError>(lr_end <= lr_start, "learning-rate schedule must be non-increasing");
    require<ConfigError>(explore_end <= explore_start, "exploration schedule must be non-increasing");
    require<ConfigError>(explore_end >= 0.0, "exploration must be non-negative");
    require<ConfigError>(explore_decay_fraction > 0.0 && explore_decay_fraction <= 1.0,
                         "explore_decay_fraction must be in (0, 1]");
    require<ConfigError>(negative_lr_scale >= 0.0 && negative_lr_scale <= 1.0, "negative_lr_scale must be in [0, 1]");
    require<ConfigError>(num_checkpoints >= 1, "num_checkpoints must be >= 1");
    require<ConfigError>(eval_episodes >= 1 && final_eval_episodes >= 1, "evaluation episodes must be >= 1");
    require<ConfigError>(policy_epsilon >= 0.0 && policy_epsilon <= 1.0, "policy_epsilon must be in [0, 1]");
    require<ConfigError>(aux_event_reward.size() <= kMaxEvents, "too many auxiliary event rewards");
    require<ConfigError>(aux_shaping_fraction > 0.0 && aux_shaping_fraction <= 1.0,
                         "aux_shaping_fraction must be in (0, 1]");
  }

  double aux_scale_at(std::uint64_t step) const {
    const double span = aux_shaping_fraction * static_cast<double>(total_steps);
    return std::max(0.0, 1.0 - static_cast<double>(step) / std::max(1.0, span));
  }

  double lr_at(std::uint64_t step) const {
    const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return lr_start + (lr_end - lr_start) * f;
  }

  double explore_at(std::uint64_t step) const {
    const double span = explore_decay_fraction * static_cast<double>(total_steps);
    const double f = std::min(1.0, static_cast<double>(step) / std::max(1.0, span));
    return explore_start + (explore_end - explore_start) * f;
  }
};

// ===========================================================================
// Tabular learner
// ===========================================================================

class TabularLearner {
 public:
  TabularLearner(std::size_t obs_count, int num_actions, const TrainConfig& cfg)
      : algo_(cfg.algorithm), n_actions_(num_actions), neg_scale_(cfg.negative_lr_scale) {
    const std::size_t cells = obs_count * static_cast<std::size_t>(num_actions);
    if (algo_ == Algorithm::independent_q) {
      q_.assign(cells, static_cast<float>(cfg.q_init));
    } else {
      q_.assign(cells, 0.0f);  // logits
      v_.assign(obs_count, static_cast<float>(cfg.q_init));
    }
  }

  int num_actions() const { return n_actions_; }
  std::size_t observation_count() const { return q_.size() / static_cast<std::size_t>(n_actions_); }

  int greedy(std::size_t obs) const {
    const float* row = &q_[obs * static_cast<std::size_t>(n_actions_)];
    int best = 0;
    for (int a = 1; a < n_actions_; ++a)
      if (row[a] > row[best]) best = a;
    return best;
  }

  int act(std::size_t obs, double explore, Rng& rng) const {
    if (algo_ == Algorithm::independent_q) {
      if (explore > 0.0 && uniform01(rng) < explore)
        return static_cast<int>(uniform_index(rng, static_cast<std::size_t>(n_actions_)));
      return greedy(obs);
    }
    float probs[16];
    softmax_row(obs, probs);
    double u = uniform01(rng);
    for (int a = 0; a < n_actions_ - 1; ++a) {
      u -= probs[a];
      if (u < 0.0) return a;
    }
    return n_actions_ - 1;
  }

  // One learning step on (obs, action, reward, next_obs). `next_obs` is
  // ignored when `terminal` is set.
  void update(std::size_t obs, int action, double reward, std::size_t next_obs, bool terminal, double gamma,
              double lr, double explore) {
    if (algo_ == Algorithm::independent_q) {
      float* row = &q_[obs * static_cast<std::size_t>(n_actions_)];
      double target = reward;
      if (!terminal) {
        const float* nrow = &q_[next_obs * static_cast<std::size_t>(n_actions_)];
        target += gamma * static_cast<double>(*std::max_element(nrow, nrow + n_actions_));
      }
      const double delta = target - row[action];
      const double step = delta < 0.0 ? lr * neg_scale_ : lr;
      row[action] = static_cast<float>(row[action] + step * delta);
      if (!std::isfinite(row[action]))
        throw TrainingError(detail::concat("non-finite Q value at observation ", obs, " action ", action,
                                           " (reward ", reward, ", target ", target, ")"));
      return;
    }
    // One-step actor-critic with an entropy bonus.
    double target = reward;
    if (!terminal) target += gamma * v_[next_obs];
    const double delta = target - v_[obs];
    v_[obs] = static_cast<float>(v_[obs] + lr * delta);
    float probs[16];
    softmax_row(obs, probs);
    double entropy = 0.0;
    for (int b = 0; b < n_actions_; ++b)
      if (probs[b] > 0.0f) entropy -= probs[b] * std::log(static_cast<double>(probs[b]));
    float* logits = &q_[obs * static_cast<std::size_t>(n_actions_)];
    for (int b = 0; b < n_actions_; ++b) {
      const double pb = probs[b];
      const double grad_pg = delta * ((b == action ? 1.0 : 0.0) - pb);
      const double grad_ent = pb > 0.0 ? -pb * (std::log(pb) + entropy) : 0.0;
      logits[b] = static_cast<float>(logits[b] + lr * (grad_pg + explore * grad_ent));
    }
    if (!std::isfinite(v_[obs]) || !std::isfinite(logits[action]))
      throw TrainingError(detail::concat("non-finite actor-critic value at observation ", obs));
  }

  Policy snapshot(std::string id, int slot, double policy_epsilon) const {
    Policy p;
    p.id = std::move(id);
    p.agent_slot = slot;
    p.num_actions = n_actions_;
    const std::size_t n = observation_count();
    p.greedy.resize(n);
    for (std::size_t o = 0; o < n; ++o) p.greedy[o] = static_cast<std::uint8_t>(greedy(o));
    if (algo_ == Algorithm::independent_q) {
      p.epsilon = policy_epsilon;
    } else {
      p.probs.resize(q_.size());
      for (std::size_t o = 0; o < n; ++o) softmax_row(o, &p.probs[o * static_cast<std::size_t>(n_actions_)]);
    }
    return p;
  }

 private:
  void softmax_row(std::size_t obs, float* out) const {
    const float* row = &q_[obs * static_cast<std::size_t>(n_actions_)];
    const float mx = *std::max_element(row, row + n_actions_);
    double z = 0.0;
    for (int a = 0; a < n_actions_; ++a) z += std::exp(static_cast<double>(row[a] - mx));
    for (int a = 0; a < n_actions_; ++a) out[a] = static_cast<float>(std::exp(static_cast<double>(row[a] - mx)) / z);
  }

  Algorithm algo_;
  int n_actions_;
  double neg_scale_;
  std::vector<float> q_;  // Q values or policy logits
  std::vector<float> v_;  // critic (policy gradient only)
};

// A seat at the table for one training episode: either a learner that acts
// and updates, or a frozen policy.
struct Seat {
  TabularLearner* learner = nullptr;
  const Policy* fixed = nullptr;
};

using Seats = std::array<Seat, kMaxAgents>;

// Shared episode loop behind every trainer. `matchup(episode, rng)` fills
// the seats, `reward(transition)` returns per-slot learning rewards and
// `on_episode_end(steps_done)` runs between episodes. Learning stops at the
// first episode boundary at or after cfg.total_steps.
template <Environment E, typename Matchup, typename Reward, typename EpisodeEnd>
void run_training(const E& env, const TrainConfig& cfg, Matchup&& matchup, Reward&& reward, EpisodeEnd&& on_episode_end) {
  cfg.validate();
  const EnvSpec& spec = env.spec();
  const int n = spec.num_agents;
  Rng rng(splitmix64(cfg.seed ^ 0x7261696eULL));
  std::uint64_t steps = 0;
  for (std::uint64_t episode = 0; steps < cfg.total_steps; ++episode) {
    const Seats seats = matchup(episode, rng);
    auto state = env.reset(rng());
    std::array<std::size_t, kMaxAgents> obs{};
    for (int i = 0; i < n; ++i) obs[i] = env.observe(state, i);
    for (int t = 0; t < spec.horizon; ++t) {
      const double explore = cfg.explore_at(steps);
      const double lr = cfg.lr_at(steps);
      JointAction a{};
      for (int i = 0; i < n; ++i)
        a[i] = seats[i].learner ? seats[i].learner->act(obs[i], explore, rng) : seats[i].fixed->act(obs[i], rng);
      auto tr = env.step(state, a);
      PlayerRewards r = reward(tr);
      if (!cfg.aux_event_reward.empty()) {
        const double scale = cfg.aux_scale_at(steps);
        if (scale > 0.0)
          for (int i = 0; i < n; ++i)
            for (std::size_t k = 0; k < cfg.aux_event_reward.size(); ++k)
              r[i] += scale * cfg.aux_event_reward[k] * tr.events[i][k];
      }
      const bool terminal = env.is_terminal(tr.next_state);
      std::array<std::size_t, kMaxAgents> next_obs{};
      if (!terminal)
        for (int i = 0; i < n; ++i) next_obs[i] = env.observe(tr.next_state, i);
      for (int i = 0; i < n; ++i)
        if (seats[i].learner)
          seats[i].learner->update(obs[i], a[i], r[i], next_obs[i], terminal, spec.discount, lr, explore);
      ++steps;
      if (terminal) break;
      state = tr.next_state;
      obs = next_obs;
    }
    on_episode_end(steps);
  }
}

// ===========================================================================
// Behavior-preferring pairs
// ===========================================================================

struct Checkpoint {
  std::uint64_t step = 0;
  Policy partner;
  double eval_return = 0.0;
};

struct CandidatePair {
  std::string run_id;
  RewardWeights weights;
  std::uint64_t seed = 0;
  int partner_slot = 0;  // the slot receiving the shaped reward
  int br_slot = 1;
  Policy partner_policy;
  Policy br_policy;
  std::vector<Checkpoint> checkpoints;
  ReturnEstimate final_pair_return;
  double final_pair_stderr = 0.0;
  std::optional<double> self_play_return;
  double initial_return = 0.0;
  // Deliveries (or generic "deliver" events) over the final evaluation batch.
  double final_deliveries = 0.0;
  bool degenerate = false;
  // Filled by the diversity module.
  std::optional<BehaviorFeature> br_feature;
  std::optional<BehaviorFeature> partner_feature;

  std::vector<double> eval_curve() const {
    std::vector<double> c;
    for (const auto& cp : checkpoints) c.push_back(cp.eval_return);
    return c;
  }
};

inline double count_deliveries(const EventSchema& schema, const Rollouts& r) {
  const int k = schema.index_of("deliver_soup");
  if (k < 0) return 0.0;
  double total = 0.0;
  for (const auto& ev : r.total_events) total += ev[static_cast<std::size_t>(k)];
  return total;
}

// Trains the shaped player (slot 0, reward r + phi^T w) and its partner
// (slot 1, base reward) simultaneously with independent learners.
template <Environment E>
CandidatePair approximate_ne(const E& env, const RewardWeights& w, const TrainConfig& cfg, std::string run_id = {}) {
  cfg.validate();
  const EnvSpec& spec = env.spec();
  require(spec.num_agents == 2, "approximate_ne expects a two-player environment");
  require<SchemaMismatchError>(w.w.size() == env.schema().size(), "weight vector has length ", w.w.size(),
                               ", event schema has ", env.schema().size(), " events");

  CandidatePair cand;
  cand.run_id = run_id.empty() ? w.id + "-" + hex64(cfg.seed).substr(8) : std::move(run_id);
  cand.weights = w;
  cand.seed = cfg.seed;

  TabularLearner shaped(env.observation_count(), spec.action_space_sizes[0], cfg);
  TabularLearner base(env.observation_count(), spec.action_space_sizes[1], cfg);
  const std::uint64_t interval = cfg.effective_eval_interval();
  const std::uint64_t eval_seed = splitmix64(cfg.seed ^ 0x6576616cULL);

  auto evaluate_now = [&](Policy& p, Policy& b) {
    p = shaped.snapshot(cand.run_id + "/partner", 0, cfg.policy_epsilon);
    b = base.snapshot(cand.run_id + "/br", 1, cfg.policy_epsilon);
    return evaluate_pair(env, {&p, &b}, cfg.eval_episodes, eval_seed).returns.mean;
  };

  {
    Policy p, b;
    cand.initial_return = evaluate_now(p, b);
  }
  std::uint64_t next_eval = interval;
  Policy last_br;
  run_training(
      env, cfg, [&](std::uint64_t, Rng&) { return Seats{Seat{&shaped, nullptr}, Seat{&base, nullptr}}; },
      [&](const Transition<typename E::State>& tr) { return shaped_reward(env.schema(), w, tr, 0, 2); },
      [&](std::uint64_t steps) {
        const bool last = steps >= cfg.total_steps;
        if (steps < next_eval && !last) return;
        while (next_eval <= steps) next_eval += interval;
        Checkpoint cp;
        cp.step = steps;
        cp.eval_return = evaluate_now(cp.partner, last_br);
        cp.partner.id = cand.run_id + "/ckpt-" + std::to_string(steps);
        cand.checkpoints.push_back(std::move(cp));
      });

  cand.partner_policy = shaped.snapshot(cand.run_id + "/partner", 0, cfg.policy_epsilon);
  cand.br_policy = base.snapshot(cand.run_id + "/br", 1, cfg.policy_epsilon);
  const auto final = evaluate_pair(env, {&cand.partner_policy, &cand.br_policy}, cfg.final_eval_episodes,
                                   splitmix64(cfg.seed ^ 0x66696e61ULL));
  cand.final_pair_return = final.returns;
  cand.final_pair_stderr = final.returns.standard_error();
  cand.final_deliveries = count_deliveries(env.schema(), final);
  // Self-play skill is measured with the co-trained counterpart. A
  // slot-specific policy copied into the other seat says nothing about it.
  cand.self_play_return = cand.final_pair_return.mean;
  // No improvement over the untrained pair and nothing achieved.
  cand.degenerate = !(cand.final_pair_return.mean > cand.initial_return) && !(cand.final_pair_return.mean > 0.0);
  return cand;
}

struct BestResponse {
  Policy policy;
  ReturnEstimate estimate;
};

// Trains a learner in `br_slot` against frozen partners (listed in slot
// order, skipping br_slot) on the base reward.
template <Environment E>
BestResponse train_best_response(const E& env, std::span<const Policy* const> partners, const TrainConfig& cfg,
                                 int br_slot = 1, std::string id = "br") {
  cfg.validate();
  const EnvSpec& spec = env.spec();
  require(br_slot >= 0 && br_slot < spec.num_agents, "best-response slot ", br_slot, " out of range");
  require(static_cast<int>(partners.size()) == spec.num_agents - 1, "need ", spec.num_agents - 1,
          " fixed partners, got ", partners.size());
  Seats seats{};
  std::vector<const Policy*> table(static_cast<std::size_t>(spec.num_agents), nullptr);
  TabularLearner learner(env.observation_count(), spec.action_space_sizes[br_slot], cfg);
  for (int i = 0, k = 0; i < spec.num_agents; ++i) {
    if (i == br_slot) {
      seats[i].learner = &learner;
      continue;
    }
    seats[i].fixed = partners[static_cast<std::size_t>(k++)];
    table[i] = seats[i].fixed;
  }
  {
    // Validate partner shapes up front (placeholder for the learner slot).
    Policy placeholder = Policy::uniform(env.observation_count(), spec.action_space_sizes[br_slot], br_slot);
    table[br_slot] = &placeholder;
    check_policies(env, std::span<const Policy* const>(table));
  }

  run_training(
      env, cfg, [&](std::uint64_t, Rng&) { return seats; },
      [&](const Transition<typename E::State>& tr) {
        PlayerRewards r{};
        r.fill(tr.base_reward);
        return r;
      },
      [](std::uint64_t) {});

  BestResponse out;
  out.policy = learner.snapshot(std::move(id), br_slot, cfg.policy_epsilon);
  table[br_slot] = &out.policy;
  out.estimate = evaluate_pair(env, std::span<const Policy* const>(table), std::max(100, cfg.final_eval_episodes),
                               splitmix64(cfg.seed ^ 0x62726576ULL))
                     .returns;
  return out;
}

template <Environment E>
BestResponse train_best_response(const E& env, const Policy& partner, const TrainConfig& cfg, int br_slot = 1,
                                 std::string id = "br") {
  const Policy* p = &partner;
  return train_best_response(env, std::span<const Policy* const>(&p, 1), cfg, br_slot, std::move(id));
}

}  // namespace zsceval
