#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "zsceval/metrics.hpp"

namespace zsceval {

// ===========================================================================
// Self-play runs
// ===========================================================================

struct SelfPlayRun {
  Policy policy;
  std::vector<Checkpoint> checkpoints;
  double final_return = 0.0;
};

// One learner sits in every slot (agent-centric observations make the
// table valid for either seat).
template <Environment E>
SelfPlayRun self_play(const E& env, const TrainConfig& cfg, std::string id = "sp") {
  cfg.validate();
  const EnvSpec& spec = env.spec();
  for (int a : spec.action_space_sizes)
    require(a == spec.action_space_sizes[0], "self-play needs identical action sets in every slot");
  TabularLearner learner(env.observation_count(), spec.action_space_sizes[0], cfg);
  Seats seats{};
  for (int i = 0; i < spec.num_agents; ++i) seats[i].learner = &learner;

  SelfPlayRun run;
  const std::uint64_t interval = cfg.effective_eval_interval();
  const std::uint64_t eval_seed = splitmix64(cfg.seed ^ 0x6576616cULL);
  auto eval_self = [&](const Policy& p, int episodes, std::uint64_t s) {
    std::vector<const Policy*> table(static_cast<std::size_t>(spec.num_agents), &p);
    return evaluate_pair(env, std::span<const Policy* const>(table), episodes, s).returns.mean;
  };
  std::uint64_t next_eval = interval;
  run_training(
      env, cfg, [&](std::uint64_t, Rng&) { return seats; },
      [&](const Transition<typename E::State>& tr) {
        PlayerRewards r{};
        r.fill(tr.base_reward);
        return r;
      },
      [&](std::uint64_t steps) {
        if (steps < next_eval && steps < cfg.total_steps) return;
        while (next_eval <= steps) next_eval += interval;
        Checkpoint cp;
        cp.step = steps;
        cp.partner = learner.snapshot(id + "/ckpt-" + std::to_string(steps), 0, cfg.policy_epsilon);
        cp.eval_return = eval_self(cp.partner, cfg.eval_episodes, eval_seed);
        run.checkpoints.push_back(std::move(cp));
      });
  run.policy = learner.snapshot(id, 0, cfg.policy_epsilon);
  run.final_return = eval_self(run.policy, cfg.final_eval_episodes, splitmix64(cfg.seed ^ 0x66696e61ULL));
  return run;
}

// ===========================================================================
// Ego agents
// ===========================================================================

enum class EgoAlgorithm { sp, pp, fcp_lite, random, scripted };

inline std::string to_string(EgoAlgorithm a) {
  switch (a) {
    case EgoAlgorithm::sp: return "sp";
    case EgoAlgorithm::pp: return "pp";
    case EgoAlgorithm::fcp_lite: return "fcp-lite";
    case EgoAlgorithm::random: return "random";
    case EgoAlgorithm::scripted: return "scripted";
  }
  return "?";
}

inline EgoAlgorithm ego_algorithm_from_string(std::string_view s) {
  if (s == "sp") return EgoAlgorithm::sp;
  if (s == "pp") return EgoAlgorithm::pp;
  if (s == "fcp-lite") return EgoAlgorithm::fcp_lite;
  if (s == "random") return EgoAlgorithm::random;
  if (s == "scripted") return EgoAlgorithm::scripted;
  throw ConfigError(detail::concat("unknown ego algorithm '", s, "'"));
}

struct EgoSpec {
  std::string name;
  EgoAlgorithm algorithm = EgoAlgorithm::sp;
  int population_size = 4;
  TrainConfig train;   // sp, pp, and fcp-lite stage 2
  TrainConfig stage1;  // fcp-lite pool runs
  std::optional<Policy> scripted;
  std::uint64_t seed = 0;

  void validate() const {
    if (algorithm == EgoAlgorithm::pp || algorithm == EgoAlgorithm::fcp_lite)
      require<ConfigError>(population_size >= 2, to_string(algorithm), " needs population_size >= 2, got ",
                           population_size);
    if (algorithm == EgoAlgorithm::scripted)
      require<ConfigError>(scripted.has_value(), "scripted ego '", name, "' has no policy");
  }
};

struct TrainedEgo {
  Policy policy;
  // fcp-lite only: the frozen stage-1 pool (finals, then checkpoints).
  std::vector<Policy> pool;
  std::optional<double> pool_pd_final;
  std::optional<double> pool_pd_augmented;
};

namespace detail {

template <Environment E>
std::vector<double> self_play_feature(const E& env, const Policy& p, int episodes, std::uint64_t seed) {
  const auto r = evaluate_pair(env, {&p, &p}, episodes, seed);
  std::vector<double> v(env.schema().size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = r.mean_events[0][k];
  return BehaviorFeature::from_raw(std::move(v), episodes).normalized;
}

}  // namespace detail

template <Environment E>
TrainedEgo train_ego(const E& env, const EgoSpec& spec) {
  spec.validate();
  const EnvSpec& es = env.spec();
  const std::string name = spec.name.empty() ? to_string(spec.algorithm) : spec.name;
  TrainedEgo out;
  switch (spec.algorithm) {
    case EgoAlgorithm::random:
      out.policy = Policy::uniform(env.observation_count(), es.action_space_sizes[0], 0, name);
      return out;
    case EgoAlgorithm::scripted:
      out.policy = *spec.scripted;
      out.policy.id = name;
      return out;
    case EgoAlgorithm::sp: {
      TrainConfig cfg = spec.train;
      cfg.seed = derive_seed(spec.seed, "ego-sp");
      out.policy = self_play(env, cfg, name).policy;
      return out;
    }
    case EgoAlgorithm::pp: {
      TrainConfig cfg = spec.train;
      cfg.seed = derive_seed(spec.seed, "ego-pp");
      cfg.validate();
      std::vector<TabularLearner> pop;
      for (int i = 0; i < spec.population_size; ++i)
        pop.emplace_back(env.observation_count(), es.action_space_sizes[0], cfg);
      run_training(
          env, cfg,
          [&](std::uint64_t, Rng& rng) {
            const std::size_t a = uniform_index(rng, pop.size());
            std::size_t b = uniform_index(rng, pop.size() - 1);
            if (b >= a) ++b;
            Seats s{};
            s[0].learner = &pop[a];
            s[1].learner = &pop[b];
            return s;
          },
          [&](const Transition<typename E::State>& tr) {
            PlayerRewards r{};
            r.fill(tr.base_reward);
            return r;
          },
          [](std::uint64_t) {});
      out.policy = pop[0].snapshot(name, 0, cfg.policy_epsilon);
      return out;
    }
    case EgoAlgorithm::fcp_lite: {
      const TrainConfig& s1 = spec.stage1;
      s1.validate();
      require<ConfigError>(s1.total_steps >= 2 * static_cast<std::uint64_t>(es.horizon) && s1.num_checkpoints >= 2,
                           "fcp-lite stage-1 budget of ", s1.total_steps,
                           " steps cannot record the two checkpoints each pool run needs (horizon ", es.horizon, ")");
      std::vector<Policy> finals, ckpts;
      for (int i = 0; i < spec.population_size; ++i) {
        TrainConfig cfg = s1;
        cfg.seed = derive_seed(spec.seed, "fcp-stage1", std::to_string(i));
        const std::string id = name + "/pool-" + std::to_string(i);
        auto run = self_play(env, cfg, id);
        require<TrainingError>(run.checkpoints.size() >= 2, "fcp-lite stage-1 run ", i, " recorded only ",
                               run.checkpoints.size(), " checkpoints");
        std::vector<double> curve;
        for (const auto& c : run.checkpoints) curve.push_back(c.eval_return);
        const auto choice = choose_checkpoint(curve, run.final_return, id);
        finals.push_back(std::move(run.policy));
        ckpts.push_back(std::move(run.checkpoints[choice.index].partner));
      }
      out.pool = finals;
      for (auto& p : ckpts) out.pool.push_back(std::move(p));

      const int feature_episodes = kMinEmbeddingEpisodes;
      std::vector<std::vector<double>> feats;
      for (std::size_t i = 0; i < out.pool.size(); ++i)
        feats.push_back(detail::self_play_feature(env, out.pool[i], feature_episodes,
                                                  derive_seed(spec.seed, "fcp-feature", std::to_string(i))));
      out.pool_pd_final = population_diversity(std::span<const std::vector<double>>(feats.data(), finals.size()));
      out.pool_pd_augmented = population_diversity(std::span<const std::vector<double>>(feats));

      TrainConfig cfg = spec.train;
      cfg.seed = derive_seed(spec.seed, "fcp-stage2");
      cfg.validate();
      TabularLearner ego(env.observation_count(), es.action_space_sizes[0], cfg);
      run_training(
          env, cfg,
          [&](std::uint64_t, Rng& rng) {
            const Policy* partner = &out.pool[uniform_index(rng, out.pool.size())];
            const std::size_t ego_slot = uniform_index(rng, 2);
            Seats s{};
            s[ego_slot].learner = &ego;
            s[1 - ego_slot].fixed = partner;
            return s;
          },
          [&](const Transition<typename E::State>& tr) {
            PlayerRewards r{};
            r.fill(tr.base_reward);
            return r;
          },
          [](std::uint64_t) {});
      out.policy = ego.snapshot(name, 0, cfg.policy_epsilon);
      return out;
    }
  }
  return out;
}

// ===========================================================================
// Benchmark
// ===========================================================================

struct BenchmarkEntry {
  std::string ego_id;
  BRProxReport report;
  double mean_return = 0.0;
  // Episode reset seeds, in evaluation order.
  std::vector<std::uint64_t> seed_log;
};

struct BenchmarkResult {
  std::vector<BenchmarkEntry> entries;
  std::vector<std::string> ranking;  // best first
  int episodes_per_combination = 0;

  const BenchmarkEntry& entry(std::string_view id) const {
    for (const auto& e : entries)
      if (e.ego_id == id) return e;
    throw PreconditionError(detail::concat("benchmark has no ego '", id, "'"));
  }

  bool schedule_parity() const {
    for (const auto& e : entries)
      if (e.seed_log != entries.front().seed_log) return false;
    return true;
  }
};

// Order by point estimate, then by CI lower bound, then by id.
inline std::vector<std::string> rank_by_br_prox(std::span<const BenchmarkEntry> entries) {
  std::vector<const BenchmarkEntry*> order;
  for (const auto& e : entries) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(), [](const BenchmarkEntry* a, const BenchmarkEntry* b) {
    const auto& x = a->report.overall;
    const auto& y = b->report.overall;
    if (x.point_estimate != y.point_estimate) return x.point_estimate > y.point_estimate;
    if (x.ci.lo != y.ci.lo) return x.ci.lo > y.ci.lo;
    return a->ego_id < b->ego_id;
  });
  std::vector<std::string> ids;
  for (const auto* e : order) ids.push_back(e->ego_id);
  return ids;
}

template <Environment E>
BenchmarkResult run_benchmark(const E& env, std::span<const Policy> egos, const PartnerSet& ps, int episodes,
                              const MetricConfig& cfg, std::uint64_t seed) {
  require(egos.size() >= 2, "a benchmark compares at least 2 egos, got ", egos.size());
  BenchmarkResult res;
  res.episodes_per_combination = episodes;
  for (const auto& ego : egos) {
    BenchmarkEntry e;
    e.ego_id = ego.id;
    e.report = br_prox(env, ego, ps, episodes, cfg, seed);
    std::vector<double> means;
    for (const auto& c : e.report.combinations) {
      means.push_back(c.ego_return);
      for (int k = 0; k < c.episodes; ++k) e.seed_log.push_back(episode_env_seed(c.seed, static_cast<std::uint64_t>(k)));
    }
    e.mean_return = mean_of(means);
    res.entries.push_back(std::move(e));
  }
  require(res.schedule_parity(), "egos were evaluated under different episode schedules");
  res.ranking = rank_by_br_prox(res.entries);
  return res;
}

// ===========================================================================
// Comparisons
// ===========================================================================

struct SelectionComparisonRow {
  std::size_t size = 0;
  Criterion criterion = Criterion::br_div;
  double criterion_value = 0.0;
  double br_pd = 0.0;  // PD of the selected members' BR features
  std::vector<std::size_t> members;
};

inline std::vector<SelectionComparisonRow> compare_selection_criteria(std::span<const CandidatePair* const> eligible,
                                                                      std::span<const std::size_t> sizes,
                                                                      const SelectionConfig& base) {
  std::vector<SelectionComparisonRow> rows;
  for (std::size_t m : sizes) {
    require(m >= 1 && m <= eligible.size(), "insufficient eligible candidates for subset size ", m, " (have ",
            eligible.size(), ")");
    for (Criterion c : {Criterion::br_div, Criterion::p_div}) {
      SelectionConfig cfg = base;
      cfg.subset_size = m;
      cfg.criterion = c;
      const auto sel = select_partners(eligible, cfg);
      std::vector<const CandidatePair*> members;
      for (auto i : sel.indices) members.push_back(eligible[i]);
      rows.push_back({m, c, sel.value, br_div(members), sel.indices});
    }
  }
  return rows;
}

struct MethodCorrelation {
  std::string method;
  RankCorrelation correlation;
};

// Spearman r_s of each method's ranking against the reference ranking.
inline std::vector<MethodCorrelation> compare_evaluation_methods(
    std::span<const double> reference, std::span<const std::pair<std::string, std::vector<double>>> methods) {
  std::vector<MethodCorrelation> out;
  for (const auto& [name, ranks] : methods) {
    require(ranks.size() == reference.size(), "ranking of method '", name, "' covers ", ranks.size(), " of ",
            reference.size(), " egos");
    for (double r : ranks) require(std::isfinite(r), "ranking of method '", name, "' has a missing entry");
    out.push_back({name, spearman(reference, ranks)});
  }
  return out;
}

}  // namespace zsceval
