#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zsceval/diversity.hpp"

namespace zsceval {

enum class Aggregator { iqm, mean, median };

inline std::string to_string(Aggregator a) {
  switch (a) {
    case Aggregator::iqm: return "iqm";
    case Aggregator::mean: return "mean";
    case Aggregator::median: return "median";
  }
  return "?";
}

inline Aggregator aggregator_from_string(std::string_view s) {
  if (s == "iqm") return Aggregator::iqm;
  if (s == "mean") return Aggregator::mean;
  if (s == "median") return Aggregator::median;
  throw ConfigError(detail::concat("unknown aggregator '", s, "'"));
}

struct MetricConfig {
  Aggregator aggregator = Aggregator::iqm;
  double ci_level = 0.95;
  int bootstrap_resamples = 1000;
  std::optional<double> ratio_clip;

  void validate() const {
    require<ConfigError>(ci_level > 0.0 && ci_level < 1.0, "ci_level must be in (0, 1), got ", ci_level);
    require<ConfigError>(bootstrap_resamples >= 100, "bootstrap_resamples must be >= 100, got ", bootstrap_resamples);
    require<ConfigError>(!ratio_clip || *ratio_clip > 0.0, "ratio_clip must be positive");
  }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// ===========================================================================
// Robust statistics
// ===========================================================================

// Inter-quartile mean with fractional trimming: after sorting, element i
// (1-based) covers [(i-1)/n, i/n] and is weighted by its overlap with
// [1/4, 3/4].
inline double iqm(std::span<const double> values) {
  require(!values.empty(), "IQM of an empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lo = std::max(0.25, static_cast<double>(i) / n);
    const double hi = std::min(0.75, static_cast<double>(i + 1) / n);
    if (hi > lo) total += (hi - lo) * v[i];
  }
  return total / 0.5;
}

// Linear-interpolation quantile of a sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  require(!sorted.empty(), "quantile of an empty sample");
  require(q >= 0.0 && q <= 1.0, "quantile level ", q, " outside [0, 1]");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(sorted.size() - 1, lo + 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::span<const double> values, double q) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, q);
}

inline double median(std::span<const double> values) { return quantile(values, 0.5); }

inline Interval interquartile_range(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return {quantile_sorted(v, 0.25), quantile_sorted(v, 0.75)};
}

inline double aggregate(std::span<const double> values, Aggregator a) {
  require(!values.empty(), "aggregate of an empty sample");
  switch (a) {
    case Aggregator::iqm: return iqm(values);
    case Aggregator::mean: return mean_of(values);
    case Aggregator::median: return median(values);
  }
  return 0.0;
}

namespace detail {

inline double ratio(double ego, double br, const MetricConfig& cfg) {
  double r = ego / br;
  if (cfg.ratio_clip) r = std::min(r, *cfg.ratio_clip);
  return r;
}

}  // namespace detail

// Stratified percentile bootstrap of Aggr_L(mean(ego_L) / denominator_L):
// episodes are resampled with replacement inside each stratum; the
// denominators stay fixed.
inline Interval bootstrap_ci(std::span<const std::vector<double>> strata, std::span<const double> denominators,
                             const MetricConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require(!strata.empty(), "bootstrap needs at least one stratum");
  require(denominators.size() == strata.size(), "one denominator per stratum expected");
  for (std::size_t s = 0; s < strata.size(); ++s)
    require(strata[s].size() >= 2, "bootstrap stratum ", s, " has ", strata[s].size(), " episodes, need >= 2");

  Rng rng(splitmix64(seed ^ 0x626f6f74ULL));
  std::vector<double> stats(static_cast<std::size_t>(cfg.bootstrap_resamples));
  std::vector<double> ratios(strata.size());
  for (auto& stat : stats) {
    for (std::size_t s = 0; s < strata.size(); ++s) {
      const auto& x = strata[s];
      double sum = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) sum += x[uniform_index(rng, x.size())];
      ratios[s] = detail::ratio(sum / static_cast<double>(x.size()), denominators[s], cfg);
    }
    stat = aggregate(ratios, cfg.aggregator);
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - cfg.ci_level) / 2.0;
  return {quantile_sorted(stats, alpha), quantile_sorted(stats, 1.0 - alpha)};
}

inline Interval bootstrap_ci(std::span<const std::vector<double>> strata, const MetricConfig& cfg, std::uint64_t seed) {
  const std::vector<double> ones(strata.size(), 1.0);
  return bootstrap_ci(strata, ones, cfg, seed);
}

// ===========================================================================
// Rank correlation
// ===========================================================================

struct RankCorrelation {
  double r_s = 0.0;
  std::size_t n = 0;
  std::string tie_policy = "average";
};

// 1-based ranks of `values` (ascending); tied values share their mean rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// r_s = 1 - 6 sum d^2 / (n (n^2 - 1)) over average ranks.
inline RankCorrelation spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "rankings have different lengths: ", a.size(), " vs ", b.size());
  require(a.size() >= 2, "rank correlation needs at least 2 items");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  double d2 = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  const double n = static_cast<double>(a.size());
  RankCorrelation rc;
  rc.n = a.size();
  rc.r_s = std::clamp(1.0 - 6.0 * d2 / (n * (n * n - 1.0)), -1.0, 1.0);
  return rc;
}

// ===========================================================================
// Skill split
// ===========================================================================

struct SkillSplit {
  double median = 0.0;
  std::vector<std::size_t> moderate;
  std::vector<std::size_t> expert;
};

// Partners with self-play return <= median are moderate, the rest expert.
inline SkillSplit skill_split(std::span<const double> self_play_returns) {
  require(self_play_returns.size() >= 2, "skill split needs at least 2 partners, got ", self_play_returns.size());
  SkillSplit s;
  s.median = median(self_play_returns);
  for (std::size_t i = 0; i < self_play_returns.size(); ++i)
    (self_play_returns[i] <= s.median ? s.moderate : s.expert).push_back(i);
  if (s.expert.empty()) warn("skill split: every partner is at or below the median; expert stratum is empty");
  return s;
}

// ===========================================================================
// BR-Prox
// ===========================================================================

struct CombinationResult {
  std::vector<std::string> partner_ids;
  bool has_checkpoint = false;
  int episodes = 0;
  std::uint64_t seed = 0;
  double ego_return = 0.0;
  double br_return = 0.0;
  double ratio = 0.0;
  std::vector<double> ego_returns;
};

struct Summary {
  std::size_t combinations = 0;
  double point_estimate = 0.0;
  Interval ci;
  Interval iqr;
  double mean_return = 0.0;
};

struct BRProxReport {
  std::string ego_id;
  MetricConfig config;
  std::vector<CombinationResult> combinations;
  std::vector<std::vector<std::string>> excluded;
  Summary overall;
  std::optional<Summary> final_only;
  std::optional<Summary> moderate;
  std::optional<Summary> expert;

  double point_estimate() const { return overall.point_estimate; }
};

// Aggregates a subset of combination results.
inline Summary summarize(std::span<const CombinationResult* const> combos, const MetricConfig& cfg,
                         std::uint64_t seed) {
  require(!combos.empty(), "nothing to summarize");
  Summary s;
  s.combinations = combos.size();
  std::vector<double> ratios, denominators, means;
  std::vector<std::vector<double>> strata;
  for (const auto* c : combos) {
    ratios.push_back(c->ratio);
    denominators.push_back(c->br_return);
    means.push_back(c->ego_return);
    strata.push_back(c->ego_returns);
  }
  s.point_estimate = aggregate(ratios, cfg.aggregator);
  s.iqr = interquartile_range(ratios);
  s.mean_return = mean_of(means);
  s.ci = bootstrap_ci(strata, denominators, cfg, seed);
  // A percentile interval need not cover the plug-in estimate for
  // non-linear aggregators; widen it so it always does.
  s.ci.lo = std::min(s.ci.lo, s.point_estimate);
  s.ci.hi = std::max(s.ci.hi, s.point_estimate);
  return s;
}

// Per-combination evaluation seed: a function of the run seed and the
// partner ids only, so every ego meets every combination under the same
// episode seeds.
inline std::uint64_t combination_seed(std::uint64_t seed, std::span<const std::string> ids) {
  std::string key;
  for (const auto& id : ids) key += id + ";";
  return derive_seed(seed, "br-prox", key);
}

template <Environment E>
BRProxReport br_prox(const E& env, const Policy& ego, const PartnerSet& ps, int episodes, const MetricConfig& cfg,
                     std::uint64_t seed) {
  cfg.validate();
  require(episodes >= 2, "BR-Prox needs at least 2 episodes per combination");
  const EnvSpec& spec = env.spec();
  require(ps.evaluation_ready(spec.num_agents), "partner set is not evaluation-ready (missing best responses)");

  BRProxReport rep;
  rep.ego_id = ego.id;
  rep.config = cfg;
  const auto combos = partner_combinations(ps.partners.size(), spec.num_agents);
  std::vector<std::vector<std::size_t>> kept_members;
  for (const auto& combo : combos) {
    CombinationResult c;
    std::vector<const Policy*> table(static_cast<std::size_t>(spec.num_agents), nullptr);
    std::size_t k = 0;
    for (int slot = 0; slot < spec.num_agents; ++slot) {
      if (slot == ps.ego_slot) {
        table[slot] = &ego;
        continue;
      }
      const PartnerEntry& p = ps.partners[combo[k++]];
      table[slot] = &p.policy;
      c.partner_ids.push_back(p.id);
      c.has_checkpoint = c.has_checkpoint || p.is_checkpoint;
    }
    const CombinationBR* br = ps.br_for(c.partner_ids);
    if (!(br->estimate.mean > 0.0)) {
      warn("combination of ", c.partner_ids.front(), " has best-response return ", br->estimate.mean,
           "; excluded from BR-Prox");
      rep.excluded.push_back(c.partner_ids);
      continue;
    }
    c.episodes = episodes;
    c.seed = combination_seed(seed, c.partner_ids);
    const auto r = evaluate_pair(env, std::span<const Policy* const>(table), episodes, c.seed);
    c.ego_returns = r.returns.per_episode_returns;
    c.ego_return = r.returns.mean;
    c.br_return = br->estimate.mean;
    c.ratio = detail::ratio(c.ego_return, c.br_return, cfg);
    rep.combinations.push_back(std::move(c));
    kept_members.push_back(combo);
  }
  require(!rep.combinations.empty(), "every partner combination was excluded; BR-Prox is undefined");

  std::vector<const CombinationResult*> all, finals;
  for (const auto& c : rep.combinations) {
    all.push_back(&c);
    if (!c.has_checkpoint) finals.push_back(&c);
  }
  rep.overall = summarize(all, cfg, seed);
  if (!finals.empty() && finals.size() < all.size()) rep.final_only = summarize(finals, cfg, seed);

  // Skill strata over single-partner combinations.
  bool splittable = spec.num_agents == 2 && ps.partners.size() >= 2;
  for (const auto& p : ps.partners) splittable = splittable && p.self_play_return.has_value();
  if (splittable) {
    std::vector<double> sp;
    for (const auto& p : ps.partners) sp.push_back(*p.self_play_return);
    const auto split = skill_split(sp);
    auto stratum = [&](const std::vector<std::size_t>& members) -> std::optional<Summary> {
      std::vector<const CombinationResult*> sel;
      for (std::size_t i = 0; i < kept_members.size(); ++i)
        if (std::find(members.begin(), members.end(), kept_members[i][0]) != members.end())
          sel.push_back(&rep.combinations[i]);
      if (sel.empty()) return std::nullopt;
      return summarize(sel, cfg, seed);
    };
    rep.moderate = stratum(split.moderate);
    rep.expert = stratum(split.expert);
  }
  return rep;
}

}  // namespace zsceval
