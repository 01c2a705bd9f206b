#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "zsceval/behavior_feature.hpp"
#include "zsceval/linalg.hpp"
#include "zsceval/parallel.hpp"
#include "zsceval/trainer.hpp"

namespace zsceval {

// ===========================================================================
// Behavior features
// ===========================================================================

enum class FeatureSource { best_response, partner };

inline constexpr int kMinEmbeddingEpisodes = 50;

namespace detail {

inline std::vector<double> slot_feature(const Rollouts& r, int slot, std::size_t m) {
  std::vector<double> v(m);
  for (std::size_t k = 0; k < m; ++k) v[k] = r.mean_events[static_cast<std::size_t>(slot)][k];
  return v;
}

}  // namespace detail

// theta = mean over episodes of the summed event vector of one slot, from
// rollouts of (partner_policy, br_policy).
template <Environment E>
BehaviorFeature embed_behavior(const E& env, const CandidatePair& cand, int episodes, std::uint64_t seed,
                               FeatureSource source = FeatureSource::best_response) {
  require(episodes >= kMinEmbeddingEpisodes, "behavior embedding needs at least ", kMinEmbeddingEpisodes,
          " episodes, got ", episodes);
  require(!cand.br_policy.greedy.empty() || !cand.br_policy.probs.empty(), "candidate '", cand.run_id,
          "' has no trained best response");
  const auto r = evaluate_pair(env, {&cand.partner_policy, &cand.br_policy}, episodes, seed);
  const int slot = source == FeatureSource::best_response ? cand.br_slot : cand.partner_slot;
  return BehaviorFeature::from_raw(detail::slot_feature(r, slot, env.schema().size()), episodes);
}

// Fills both feature kinds from one rollout batch. An all-zero BR feature
// marks the candidate degenerate.
template <Environment E>
void embed_candidate(const E& env, CandidatePair& cand, int episodes, std::uint64_t seed) {
  require(episodes >= kMinEmbeddingEpisodes, "behavior embedding needs at least ", kMinEmbeddingEpisodes,
          " episodes, got ", episodes);
  const auto r = evaluate_pair(env, {&cand.partner_policy, &cand.br_policy}, episodes, seed);
  const std::size_t m = env.schema().size();
  cand.br_feature = BehaviorFeature::from_raw(detail::slot_feature(r, cand.br_slot, m), episodes);
  cand.partner_feature = BehaviorFeature::from_raw(detail::slot_feature(r, cand.partner_slot, m), episodes);
  if (cand.br_feature->degenerate) cand.degenerate = true;
}

// ===========================================================================
// Population diversity
// ===========================================================================

// det of the Gram matrix of the given (normalized) features.
inline double population_diversity(std::span<const std::vector<double>> features) {
  require(!features.empty(), "population diversity of an empty set");
  for (const auto& f : features)
    require(f.size() == features[0].size(), "features of unequal length: ", f.size(), " vs ", features[0].size());
  return psd_determinant(gram_matrix(features));
}

inline double population_diversity(std::span<const BehaviorFeature> features) {
  std::vector<std::vector<double>> v;
  v.reserve(features.size());
  for (const auto& f : features) v.push_back(f.normalized);
  return population_diversity(std::span<const std::vector<double>>(v));
}

enum class Criterion { br_div, p_div };

inline std::string to_string(Criterion c) { return c == Criterion::br_div ? "br-div" : "p-div"; }

inline Criterion criterion_from_string(std::string_view s) {
  if (s == "br-div") return Criterion::br_div;
  if (s == "p-div") return Criterion::p_div;
  throw ConfigError(detail::concat("unknown selection criterion '", s, "' (expected br-div or p-div)"));
}

inline const BehaviorFeature& feature_of(const CandidatePair& c, Criterion criterion) {
  const auto& f = criterion == Criterion::br_div ? c.br_feature : c.partner_feature;
  require(f.has_value(), "candidate '", c.run_id, "' has no ",
          criterion == Criterion::br_div ? "best-response" : "partner", " behavior feature");
  return *f;
}

inline std::vector<std::vector<double>> feature_rows(std::span<const CandidatePair* const> members, Criterion criterion) {
  std::vector<std::vector<double>> rows;
  rows.reserve(members.size());
  for (const CandidatePair* c : members) rows.push_back(feature_of(*c, criterion).normalized);
  return rows;
}

inline double br_div(std::span<const CandidatePair* const> members) {
  const auto rows = feature_rows(members, Criterion::br_div);
  return population_diversity(std::span<const std::vector<double>>(rows));
}

inline double p_div(std::span<const CandidatePair* const> members) {
  const auto rows = feature_rows(members, Criterion::p_div);
  return population_diversity(std::span<const std::vector<double>>(rows));
}

// ===========================================================================
// k-DPP search
// ===========================================================================

// Determinants at or below this are treated as zero. The Cholesky jitter
// lifts a singular m x m Gram matrix to roughly m * 1e-12.
inline constexpr double kDeterminantTolerance = 1e-9;

// Greedy MAP start: repeatedly add the item that maximizes det(K_P).
inline std::vector<std::size_t> greedy_map_subset(const Matrix& k, std::size_t m) {
  require(m >= 1 && m <= k.size(), "subset size ", m, " out of range for ", k.size(), " items");
  std::vector<std::size_t> subset;
  std::vector<bool> used(k.size(), false);
  for (std::size_t step = 0; step < m; ++step) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
      if (used[i]) continue;
      subset.push_back(i);
      const double d = psd_determinant(k.principal(subset));
      subset.pop_back();
      if (d > best) {
        best = d;
        arg = i;
      }
    }
    used[arg] = true;
    subset.push_back(arg);
  }
  std::sort(subset.begin(), subset.end());
  return subset;
}

// Swap chain over size-m subsets whose stationary law is P(S) ∝ det(K_S):
// propose replacing a uniform member with a uniform non-member, accept with
// min(1, det(K_S') / det(K_S)).
class KdppChain {
 public:
  enum class Init { random, greedy };

  KdppChain(const Matrix& k, std::size_t m, Rng& rng, Init init = Init::random, bool announce = true)
      : k_(k), m_(m), rng_(rng) {
    require(m >= 1 && m <= k.size(), "k-DPP subset size ", m, " out of range for ", k.size(), " items");
    require(k.max_asymmetry() <= 1e-9, "k-DPP kernel is not symmetric");
    if (init == Init::random) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        set_subset(random_subset());
        if (det_ > kDeterminantTolerance) return;
      }
    }
    set_subset(greedy_map_subset(k, m));
    if (det_ <= kDeterminantTolerance) {
      if (announce) warn("every size-", m, " determinant is numerically zero; k-DPP falls back to uniform subsets");
      uniform_ = true;
      set_subset(random_subset());
    }
  }

  // One proposal; returns whether it was accepted.
  bool step() {
    ++proposals_;
    if (uniform_) {
      set_subset(random_subset());
      ++accepted_;
      return true;
    }
    if (m_ == k_.size()) return false;
    const std::size_t pos = uniform_index(rng_, m_);
    std::size_t j = uniform_index(rng_, k_.size() - m_);
    for (std::size_t i = 0; i < k_.size(); ++i) {
      if (member_[i]) continue;
      if (j-- == 0) {
        j = i;
        break;
      }
    }
    std::vector<std::size_t> next = subset_;
    next[pos] = j;
    std::sort(next.begin(), next.end());
    const double d = psd_determinant(k_.principal(next));
    if (!(d > 0.0)) return false;
    if (d < det_ && uniform01(rng_) >= d / det_) return false;
    member_[subset_[pos]] = false;
    member_[j] = true;
    subset_ = std::move(next);
    det_ = d;
    ++accepted_;
    return true;
  }

  const std::vector<std::size_t>& subset() const { return subset_; }
  double determinant() const { return det_; }
  bool uniform_fallback() const { return uniform_; }
  std::uint64_t proposals() const { return proposals_; }
  std::uint64_t accepted() const { return accepted_; }

 private:
  std::vector<std::size_t> random_subset() {
    std::vector<std::size_t> idx(k_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle(idx, rng_);
    idx.resize(m_);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  void set_subset(std::vector<std::size_t> s) {
    subset_ = std::move(s);
    member_.assign(k_.size(), false);
    for (auto i : subset_) member_[i] = true;
    det_ = psd_determinant(k_.principal(subset_));
  }

  Matrix k_;
  std::size_t m_;
  Rng& rng_;
  std::vector<std::size_t> subset_;
  std::vector<bool> member_;
  double det_ = 0.0;
  bool uniform_ = false;
  std::uint64_t proposals_ = 0, accepted_ = 0;
};

struct KdppOptions {
  int mcmc_steps = 200;  // burn-in before the draw
  KdppChain::Init init = KdppChain::Init::random;
};

// One approximate draw: a fresh chain run for `mcmc_steps` proposals.
inline std::vector<std::size_t> kdpp_sample(const Matrix& k, std::size_t m, Rng& rng, const KdppOptions& opt = {}) {
  KdppChain chain(k, m, rng, opt.init);
  for (int s = 0; s < opt.mcmc_steps; ++s) chain.step();
  return chain.subset();
}

// ===========================================================================
// Partner selection
// ===========================================================================

struct SelectionConfig {
  std::size_t subset_size = 4;
  int dpp_iterations = 20;
  int mcmc_steps = 200;
  std::uint64_t seed = 0;
  Criterion criterion = Criterion::br_div;

  void validate(std::size_t num_candidates) const {
    require<ConfigError>(subset_size >= 1, "subset size M must be >= 1");
    require<ConfigError>(dpp_iterations >= 1, "dpp_iterations must be >= 1");
    require<ConfigError>(mcmc_steps >= 0, "mcmc_steps must be >= 0");
    require(subset_size <= num_candidates, "insufficient eligible candidates: need M=", subset_size, ", have ",
            num_candidates);
  }
};

struct ChainStats {
  int chains = 0;
  std::uint64_t proposals = 0;
  std::uint64_t accepted = 0;
  std::uint64_t distinct_subsets = 0;
  bool uniform_fallback = false;
};

struct SelectionResult {
  std::vector<std::size_t> indices;  // sorted
  double value = 0.0;
  ChainStats stats;
};

// Runs `dpp_iterations` independent swap chains (the first from the greedy
// MAP subset, the rest from random subsets), scoring every visited subset
// by det(K_S). Returns the best subset seen.
inline SelectionResult select_subset(const Matrix& k, const SelectionConfig& cfg) {
  cfg.validate(k.size());
  SelectionResult best;
  best.value = -1.0;
  std::set<std::vector<std::size_t>> visited;
  auto visit = [&](const std::vector<std::size_t>& s, double det) {
    visited.insert(s);
    if (det > best.value || (det == best.value && s < best.indices)) {
      best.value = det;
      best.indices = s;
    }
  };
  for (int it = 0; it < cfg.dpp_iterations; ++it) {
    Rng rng(derive_seed(cfg.seed, "dpp-chain", std::to_string(it)));
    KdppChain chain(k, cfg.subset_size, rng, it == 0 ? KdppChain::Init::greedy : KdppChain::Init::random, false);
    visit(chain.subset(), chain.determinant());
    for (int s = 0; s < cfg.mcmc_steps; ++s)
      if (chain.step()) visit(chain.subset(), chain.determinant());
    best.stats.chains += 1;
    best.stats.proposals += chain.proposals();
    best.stats.accepted += chain.accepted();
    best.stats.uniform_fallback = best.stats.uniform_fallback || chain.uniform_fallback();
  }
  if (best.stats.uniform_fallback)
    warn("every size-", cfg.subset_size, " determinant is numerically zero; k-DPP falls back to uniform subsets");
  best.stats.distinct_subsets = visited.size();
  best.value = std::max(0.0, best.value);
  return best;
}

// Indices (into `eligible`) of the subset maximizing the criterion.
inline SelectionResult select_partners(std::span<const CandidatePair* const> eligible, const SelectionConfig& cfg) {
  cfg.validate(eligible.size());
  const auto rows = feature_rows(eligible, cfg.criterion);
  return select_subset(gram_matrix(rows), cfg);
}

// ===========================================================================
// Candidate filtering
// ===========================================================================

// Kitchen-style schemas (with a deliver event) require at least one delivery
// in the final evaluation batch; other environments require a positive pair
// return. Degenerate candidates are always dropped.
inline std::vector<const CandidatePair*> filter_candidates(std::span<const CandidatePair> candidates,
                                                           const EventSchema& schema) {
  const bool has_delivery = schema.index_of("deliver_soup") >= 0;
  std::vector<const CandidatePair*> out;
  for (const auto& c : candidates) {
    if (c.degenerate) continue;
    if (c.br_feature && c.br_feature->degenerate) continue;
    if (c.partner_feature && c.partner_feature->degenerate) continue;
    const bool ok = has_delivery ? c.final_deliveries >= 1.0 : c.final_pair_return.mean > 0.0;
    if (ok) out.push_back(&c);
  }
  return out;
}

// ===========================================================================
// Checkpoint rule
// ===========================================================================

struct CheckpointChoice {
  std::size_t index = 0;
  bool warned = false;
};

// Picks, among all checkpoints but the last (which is the final policy),
// the one whose recorded return is nearest to half of `final_return`; ties
// go to the later checkpoint.
inline CheckpointChoice choose_checkpoint(std::span<const double> curve, double final_return,
                                          std::string_view who = "candidate") {
  require(curve.size() >= 2, who, " needs at least 2 checkpoints, has ", curve.size());
  const double target = final_return / 2.0;
  CheckpointChoice c;
  if (curve[0] > target) {
    warn(who, ": first checkpoint return ", curve[0], " already exceeds the target ", target, " (half of ",
         final_return, "); using the earliest checkpoint");
    c.warned = true;
    return c;
  }
  double best = std::abs(curve[0] - target);
  for (std::size_t i = 1; i + 1 < curve.size(); ++i) {
    const double d = std::abs(curve[i] - target);
    if (d <= best) {
      best = d;
      c.index = i;
    }
  }
  if (best > 0.25 * std::abs(final_return)) {
    warn(who, ": no checkpoint near half the final return (closest ", curve[c.index], ", target ", target, ")");
    c.warned = true;
  }
  return c;
}

// ===========================================================================
// Partner sets
// ===========================================================================

struct PartnerEntry {
  std::string id;
  std::string candidate_id;
  bool is_checkpoint = false;
  std::uint64_t step = 0;
  // J(BR, partner) recorded while generating the candidate (or the
  // checkpoint's eval return).
  double recorded_pair_return = 0.0;
  std::optional<double> self_play_return;
  Policy policy;
};

struct CombinationBR {
  std::vector<std::string> partner_ids;  // in slot order
  Policy policy;
  ReturnEstimate estimate;
};

struct PartnerSet {
  Criterion criterion = Criterion::br_div;
  std::size_t subset_size = 0;
  double achieved_value = 0.0;
  ChainStats stats;
  int ego_slot = 1;
  std::vector<std::string> selected_ids;
  std::vector<std::string> checkpoint_ids;
  std::vector<PartnerEntry> partners;  // selected, then checkpoints
  std::vector<CombinationBR> brs;

  const PartnerEntry& partner(std::string_view id) const {
    for (const auto& p : partners)
      if (p.id == id) return p;
    throw PreconditionError(detail::concat("partner set has no member '", id, "'"));
  }

  const CombinationBR* br_for(std::span<const std::string> ids) const {
    for (const auto& b : brs)
      if (std::equal(b.partner_ids.begin(), b.partner_ids.end(), ids.begin(), ids.end())) return &b;
    return nullptr;
  }

  bool evaluation_ready(int num_agents = 2) const;
};

// Every partner combination that fills the non-ego slots: subsets of size
// n-1 of the partner list, so singletons for two-player games.
inline std::vector<std::vector<std::size_t>> partner_combinations(std::size_t partners, int num_agents) {
  const std::size_t k = static_cast<std::size_t>(num_agents - 1);
  std::vector<std::vector<std::size_t>> out;
  if (k == 0 || k > partners) return out;
  std::vector<std::size_t> cur;
  auto rec = [&](auto&& self, std::size_t start) -> void {
    if (cur.size() == k) {
      out.push_back(cur);
      return;
    }
    for (std::size_t i = start; i < partners; ++i) {
      cur.push_back(i);
      self(self, i + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

inline bool PartnerSet::evaluation_ready(int num_agents) const {
  if (partners.empty()) return false;
  for (const auto& combo : partner_combinations(partners.size(), num_agents)) {
    std::vector<std::string> ids;
    for (auto i : combo) ids.push_back(partners[i].id);
    if (br_for(ids) == nullptr) return false;
  }
  return true;
}

// Partner set holding the selected candidates' final partner policies.
inline PartnerSet make_partner_set(std::span<const CandidatePair* const> eligible, const SelectionResult& sel,
                                   Criterion criterion) {
  PartnerSet ps;
  ps.criterion = criterion;
  ps.subset_size = sel.indices.size();
  ps.achieved_value = sel.value;
  ps.stats = sel.stats;
  for (auto i : sel.indices) {
    const CandidatePair& c = *eligible[i];
    PartnerEntry e;
    e.id = c.run_id;
    e.candidate_id = c.run_id;
    e.recorded_pair_return = c.final_pair_return.mean;
    e.self_play_return = c.self_play_return;
    e.policy = c.partner_policy;
    e.policy.id = c.run_id;
    ps.ego_slot = c.br_slot;
    ps.selected_ids.push_back(e.id);
    ps.partners.push_back(std::move(e));
  }
  return ps;
}

// Adds one earlier checkpoint per selected candidate.
inline void select_checkpoints(PartnerSet& ps, std::span<const CandidatePair* const> candidates) {
  require(ps.checkpoint_ids.empty(), "partner set already holds checkpoints");
  std::vector<PartnerEntry> added;
  for (const auto& id : ps.selected_ids) {
    const CandidatePair* c = nullptr;
    for (const CandidatePair* x : candidates)
      if (x->run_id == id) c = x;
    require(c != nullptr, "selected candidate '", id, "' is missing from the candidate list");
    const auto curve = c->eval_curve();
    const auto choice = choose_checkpoint(curve, c->final_pair_return.mean, id);
    const Checkpoint& cp = c->checkpoints[choice.index];
    PartnerEntry e;
    e.id = cp.partner.id;
    e.candidate_id = id;
    e.is_checkpoint = true;
    e.step = cp.step;
    e.recorded_pair_return = cp.eval_return;
    e.self_play_return = cp.eval_return;
    e.policy = cp.partner;
    ps.checkpoint_ids.push_back(e.id);
    added.push_back(std::move(e));
  }
  for (auto& e : added) ps.partners.push_back(std::move(e));
}

// Trains a BR for every partner combination and fills missing self-play
// returns. Seeds derive from (seed, combination ids), so adding partners
// leaves existing BRs untouched.
template <Environment E>
void train_partner_brs(const E& env, PartnerSet& ps, const TrainConfig& base_cfg, std::uint64_t seed,
                       int workers = 1, int self_play_episodes = 100) {
  const EnvSpec& spec = env.spec();
  for (auto& p : ps.partners) {
    if (p.self_play_return || spec.action_space_sizes[0] != spec.action_space_sizes[1]) continue;
    p.self_play_return =
        evaluate_pair(env, {&p.policy, &p.policy}, self_play_episodes, derive_seed(seed, "self-play", p.id)).returns.mean;
  }
  struct Job {
    std::vector<std::string> ids;
    std::vector<const Policy*> partners;
    std::optional<BestResponse> result;
  };
  std::vector<Job> jobs;
  for (const auto& combo : partner_combinations(ps.partners.size(), spec.num_agents)) {
    Job j;
    for (auto i : combo) {
      j.ids.push_back(ps.partners[i].id);
      j.partners.push_back(&ps.partners[i].policy);
    }
    if (ps.br_for(j.ids) == nullptr) jobs.push_back(std::move(j));
  }
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    Job& j = jobs[i];
    std::string key;
    for (const auto& id : j.ids) key += id + ";";
    TrainConfig cfg = base_cfg;
    cfg.seed = derive_seed(seed, "train-br", key);
    j.result = train_best_response(env, std::span<const Policy* const>(j.partners), cfg, ps.ego_slot,
                                   "br:" + key.substr(0, key.size() - 1));
  });
  for (auto& j : jobs) ps.brs.push_back(CombinationBR{j.ids, std::move(j.result->policy), std::move(j.result->estimate)});
}

}  // namespace zsceval
