#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "zsceval/core/env.hpp"

namespace zsceval {

// Layout legend:
//   'X' counter (items may be placed)   '#' wall
//   'O' onion dispenser                 'D' dish dispenser
//   'P' pot                             'S' serving cell
//   ' ' or '.' floor                    '1'..'2' agent start (floor)
struct KitchenConfig {
  std::vector<std::string> rows = {
      "##P##",
      "O  2O",
      "X1  #",
      "#D#S#",
  };
  int cook_time = 5;
  // Onions per soup -> delivery reward. Multiple entries enable the
  // multi-recipe mode where a partial pot is started by an empty-handed
  // interact.
  std::map<int, double> recipes = {{3, 20.0}};
  int horizon = 100;
  double discount = 0.99;
  bool random_start = false;

  static KitchenConfig multi_recipe() {
    KitchenConfig c;
    c.recipes = {{2, 8.0}, {3, 20.0}};
    return c;
  }
};

// Parses the plain-text layout format:
//
//   # comment
//   cook_time: 5
//   horizon: 100
//   recipes: 2:8, 3:20
//   random_start: false
//   layout:
//   ##P##
//   O..2O
//   X1..#
//   #D#S#
//
// Every line after "layout:" is a grid row; rows must have equal width.
KitchenConfig parse_kitchen_config(std::string_view text);

class MiniKitchen {
 public:
  enum Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4, kInteract = 5 };
  static constexpr int kNumActions = 6;

  enum Item : std::uint8_t { kNone = 0, kOnion = 1, kDish = 2, kSoupBase = 3 };  // soup of recipe r is 3 + r

  enum Event : int {
    kPutOnCounter = 0,
    kPickupFromCounter,
    kPickupOnion,
    kPickupDish,
    kPickupSoup,
    kPlaceInPot,
    kDeliver,
    kStayEvent,
    kMovement,
    kOrderReward,
    kNumEvents
  };

  static constexpr int kMaxCounters = 4;
  static constexpr int kMaxPots = 2;

  struct State {
    std::array<std::uint8_t, 2> cell{};    // floor index
    std::array<std::uint8_t, 2> facing{};  // Action direction 0..3
    std::array<std::uint8_t, 2> hand{};
    std::array<std::uint8_t, kMaxPots> pot{};  // pot code, see pot_code helpers
    std::array<std::uint8_t, kMaxCounters> counter{};

    bool operator==(const State&) const = default;
  };

  static EventSchema event_schema() {
    return EventSchema({
        {"put_onto_counter", EventKind::indicator, false},
        {"pickup_from_counter", EventKind::indicator, false},
        {"pickup_onion", EventKind::indicator, false},
        {"pickup_dish", EventKind::indicator, false},
        {"pickup_soup", EventKind::indicator, false},
        {"place_in_pot", EventKind::indicator, false},
        {"deliver_soup", EventKind::indicator, false},
        {"stay", EventKind::indicator, false},
        {"movement", EventKind::indicator, false},
        {"order_reward", EventKind::count, true},
    });
  }

  explicit MiniKitchen(KitchenConfig config = {}) : config_(std::move(config)), schema_(event_schema()) {
    build();
  }

  const KitchenConfig& config() const { return config_; }
  const EnvSpec& spec() const { return spec_; }
  const EventSchema& schema() const { return schema_; }

  int width() const { return width_; }
  int height() const { return height_; }
  int floor_count() const { return static_cast<int>(floor_xy_.size()); }
  std::pair<int, int> floor_xy(int cell) const { return floor_xy_[cell]; }
  int floor_index(int x, int y) const { return floor_id_[y * width_ + x]; }
  char tile(int x, int y) const { return config_.rows[y][x]; }
  int num_pots() const { return static_cast<int>(pots_.size()); }
  int num_counters() const { return static_cast<int>(counters_.size()); }
  int item_count() const { return kSoupBase + static_cast<int>(recipe_onions_.size()); }
  int pot_code_count() const { return max_onions_ + static_cast<int>(recipe_onions_.size()) * (config_.cook_time + 1); }

  // ---- pot codes -------------------------------------------------------
  // [0, max_onions)            idle with n onions
  // next R * cook_time codes   cooking recipe r with t steps left (t >= 1)
  // last R codes               ready recipe r
  int pot_idle(int onions) const { return onions; }
  int pot_cooking(int recipe, int left) const { return max_onions_ + recipe * config_.cook_time + (left - 1); }
  int pot_ready(int recipe) const { return max_onions_ + static_cast<int>(recipe_onions_.size()) * config_.cook_time + recipe; }
  bool pot_is_idle(int code) const { return code < max_onions_; }
  bool pot_is_ready(int code) const { return code >= pot_ready(0); }
  bool pot_is_cooking(int code) const { return !pot_is_idle(code) && !pot_is_ready(code); }
  int pot_recipe(int code) const {
    if (pot_is_ready(code)) return code - pot_ready(0);
    return (code - max_onions_) / config_.cook_time;
  }
  int pot_time_left(int code) const { return (code - max_onions_) % config_.cook_time + 1; }
  int recipe_onions(int r) const { return recipe_onions_[r]; }
  double recipe_reward(int r) const { return recipe_reward_[r]; }
  int recipe_count() const { return static_cast<int>(recipe_onions_.size()); }

  // ---- DEC-MDP interface ----------------------------------------------
  State start_state() const { return starts_.front(); }
  const std::vector<State>& start_states() const { return starts_; }

  State reset(std::uint64_t seed) const {
    if (starts_.size() == 1) return starts_.front();
    Rng rng(seed);
    return starts_[uniform_index(rng, starts_.size())];
  }

  // Episodes end by horizon only.
  bool is_terminal(const State&) const { return false; }

  std::size_t observation_count() const { return static_cast<std::size_t>(spec_.state_space_size); }

  // Agent-centric index: the observing agent's (cell, facing, hand) come
  // first, so the same table can drive either slot.
  std::size_t observe(const State& s, int slot) const { return encode(s, slot); }

  std::size_t state_index(const State& s) const { return encode(s, 0); }

  State decode(std::size_t index) const {
    State s;
    for (int k = num_counters() - 1; k >= 0; --k) {
      s.counter[k] = static_cast<std::uint8_t>(index % item_count());
      index /= item_count();
    }
    for (int k = num_pots() - 1; k >= 0; --k) {
      s.pot[k] = static_cast<std::uint8_t>(index % pot_code_count());
      index /= pot_code_count();
    }
    for (int i = 1; i >= 0; --i) {
      s.hand[i] = static_cast<std::uint8_t>(index % item_count());
      index /= item_count();
      s.facing[i] = static_cast<std::uint8_t>(index % 4);
      index /= 4;
      s.cell[i] = static_cast<std::uint8_t>(index % floor_count());
      index /= floor_count();
    }
    return s;
  }

  Transition<State> step(const State& s, const JointAction& a) const {
    check_joint_action(*this, a);
    Transition<State> t;
    t.state = s;
    t.joint_action = a;
    State n = s;

    // Movement: facing follows every move action, position only if the
    // target is free floor. Contested cells go to the lower-indexed agent.
    std::array<int, 2> target{s.cell[0], s.cell[1]};
    for (int i = 0; i < 2; ++i) {
      if (a[i] > kRight) continue;
      n.facing[i] = static_cast<std::uint8_t>(a[i]);
      const int dest = neighbor_floor_[s.cell[i] * 4 + a[i]];
      if (dest >= 0) target[i] = dest;
    }
    resolve_moves(s.cell, target);
    for (int i = 0; i < 2; ++i) {
      n.cell[i] = static_cast<std::uint8_t>(target[i]);
      if (a[i] == kStay) t.events[i][kStayEvent] = 1.0;
      if (target[i] != s.cell[i]) t.events[i][kMovement] = 1.0;
    }

    // Pots already cooking at the start of the step advance by one.
    std::array<bool, kMaxPots> was_cooking{};
    for (int p = 0; p < num_pots(); ++p) was_cooking[p] = pot_is_cooking(s.pot[p]);

    int deliveries = 0;
    for (int i = 0; i < 2; ++i) {
      if (a[i] != kInteract) continue;
      const int faced = faced_tile_[s.cell[i] * 4 + s.facing[i]];
      if (faced < 0) continue;
      const char kind = tile_kind_[faced];
      std::uint8_t& hand = n.hand[i];
      switch (kind) {
        case 'O':
          if (hand == kNone) {
            hand = kOnion;
            t.events[i][kPickupOnion] = 1.0;
          }
          break;
        case 'D':
          if (hand == kNone) {
            hand = kDish;
            t.events[i][kPickupDish] = 1.0;
          }
          break;
        case 'X': {
          std::uint8_t& slot = n.counter[tile_slot_[faced]];
          if (hand != kNone && slot == kNone) {
            slot = hand;
            hand = kNone;
            t.events[i][kPutOnCounter] = 1.0;
          } else if (hand == kNone && slot != kNone) {
            hand = slot;
            slot = kNone;
            t.events[i][kPickupFromCounter] = 1.0;
          }
          break;
        }
        case 'P': {
          std::uint8_t& pot = n.pot[tile_slot_[faced]];
          if (hand == kOnion && pot_is_idle(pot)) {
            const int onions = pot + 1;
            hand = kNone;
            t.events[i][kPlaceInPot] = 1.0;
            pot = static_cast<std::uint8_t>(onions == max_onions_ ? pot_cooking(recipe_for(onions), config_.cook_time)
                                                                  : pot_idle(onions));
          } else if (hand == kDish && pot_is_ready(pot)) {
            hand = static_cast<std::uint8_t>(kSoupBase + pot_recipe(pot));
            pot = static_cast<std::uint8_t>(pot_idle(0));
            t.events[i][kPickupSoup] = 1.0;
          } else if (hand == kNone && pot_is_idle(pot) && recipe_for(pot) >= 0) {
            pot = static_cast<std::uint8_t>(pot_cooking(recipe_for(pot), config_.cook_time));
          }
          break;
        }
        case 'S':
          if (hand >= kSoupBase) {
            t.base_reward += recipe_reward_[hand - kSoupBase];
            hand = kNone;
            t.events[i][kDeliver] = 1.0;
            ++deliveries;
          }
          break;
        default:
          break;
      }
    }
    for (int i = 0; i < 2; ++i) t.events[i][kOrderReward] = deliveries;

    for (int p = 0; p < num_pots(); ++p) {
      if (!was_cooking[p] || !pot_is_cooking(n.pot[p])) continue;
      const int r = pot_recipe(n.pot[p]);
      const int left = pot_time_left(n.pot[p]);
      n.pot[p] = static_cast<std::uint8_t>(left > 1 ? pot_cooking(r, left - 1) : pot_ready(r));
    }

    t.next_state = n;
    return t;
  }

  std::array<EventVector, 2> embed(const State& s, const JointAction& a, const State& next) const {
    const auto t = step(s, a);
    require(t.next_state == next, "embed: (state, action, next) is not a transition of this kitchen");
    return {t.events[0], t.events[1]};
  }

  std::uint64_t content_hash() const {
    Fnv1a h;
    h.str("mini-kitchen").u64(schema_.hash());
    for (const auto& r : config_.rows) h.str(r);
    h.u64(config_.cook_time).u64(config_.horizon).f64(config_.discount).u64(config_.random_start);
    for (const auto& [n, r] : config_.recipes) h.u64(n).f64(r);
    return h.value();
  }

  std::string render(const State& s) const {
    std::string out;
    for (int y = 0; y < height_; ++y) {
      for (int x = 0; x < width_; ++x) {
        const int f = floor_id_[y * width_ + x];
        char c = config_.rows[y][x];
        if (f >= 0) c = f == s.cell[0] ? 'A' : f == s.cell[1] ? 'B' : '.';
        out += c;
      }
      out += '\n';
    }
    return out;
  }

 private:
  void build() {
    const auto& rows = config_.rows;
    require<ConfigError>(!rows.empty(), "kitchen layout is empty");
    height_ = static_cast<int>(rows.size());
    width_ = static_cast<int>(rows[0].size());
    for (const auto& r : rows)
      require<ConfigError>(static_cast<int>(r.size()) == width_, "kitchen rows must have equal width");
    require<ConfigError>(config_.cook_time >= 1, "cook_time must be >= 1");
    require<ConfigError>(!config_.recipes.empty(), "at least one recipe required");
    for (const auto& [onions, reward] : config_.recipes) {
      require<ConfigError>(onions >= 1 && onions <= 3, "recipe onion count must be 1..3");
      recipe_onions_.push_back(onions);
      recipe_reward_.push_back(reward);
    }
    max_onions_ = recipe_onions_.back();

    floor_id_.assign(static_cast<std::size_t>(width_ * height_), -1);
    tile_slot_.assign(static_cast<std::size_t>(width_ * height_), -1);
    tile_kind_.assign(static_cast<std::size_t>(width_ * height_), '#');
    std::array<int, 2> start{-1, -1};
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        const char c = rows[y][x];
        const int idx = y * width_ + x;
        switch (c) {
          case ' ':
          case '.':
          case '1':
          case '2':
            floor_id_[idx] = static_cast<int>(floor_xy_.size());
            floor_xy_.emplace_back(x, y);
            tile_kind_[idx] = '.';
            if (c != ' ' && c != '.') {
              require<ConfigError>(start[c - '1'] < 0, "agent start '", c, "' appears twice");
              start[c - '1'] = floor_id_[idx];
            }
            break;
          case 'X':
            tile_slot_[idx] = static_cast<int>(counters_.size());
            counters_.push_back(idx);
            tile_kind_[idx] = c;
            break;
          case 'P':
            tile_slot_[idx] = static_cast<int>(pots_.size());
            pots_.push_back(idx);
            tile_kind_[idx] = c;
            break;
          case 'O':
          case 'D':
          case 'S':
          case '#':
            tile_kind_[idx] = c;
            break;
          default:
            throw ConfigError(detail::concat("unknown layout character '", c, "'"));
        }
      }
    require<ConfigError>(start[0] >= 0 && start[1] >= 0, "layout must place agent starts '1' and '2'");
    require<ConfigError>(!pots_.empty(), "layout needs a pot");
    require<ConfigError>(static_cast<int>(pots_.size()) <= kMaxPots, "at most ", kMaxPots, " pots supported");
    require<ConfigError>(static_cast<int>(counters_.size()) <= kMaxCounters, "at most ", kMaxCounters,
                         " counters supported");

    static constexpr int dx[4] = {0, 0, -1, 1};
    static constexpr int dy[4] = {-1, 1, 0, 0};
    neighbor_floor_.assign(floor_xy_.size() * 4, -1);
    faced_tile_.assign(floor_xy_.size() * 4, -1);
    for (std::size_t f = 0; f < floor_xy_.size(); ++f)
      for (int d = 0; d < 4; ++d) {
        const int x = floor_xy_[f].first + dx[d];
        const int y = floor_xy_[f].second + dy[d];
        if (x < 0 || y < 0 || x >= width_ || y >= height_) continue;
        const int idx = y * width_ + x;
        if (floor_id_[idx] >= 0)
          neighbor_floor_[f * 4 + d] = floor_id_[idx];
        else
          faced_tile_[f * 4 + d] = idx;
      }

    radix_agent_ = static_cast<std::uint64_t>(floor_count()) * 4 * item_count();
    std::uint64_t size = radix_agent_ * radix_agent_;
    for (int p = 0; p < num_pots(); ++p) size *= static_cast<std::uint64_t>(pot_code_count());
    for (int k = 0; k < num_counters(); ++k) size *= static_cast<std::uint64_t>(item_count());

    State s0;
    s0.cell = {static_cast<std::uint8_t>(start[0]), static_cast<std::uint8_t>(start[1])};
    if (config_.random_start) {
      for (int a = 0; a < floor_count(); ++a)
        for (int b = 0; b < floor_count(); ++b) {
          if (a == b) continue;
          State s;
          s.cell = {static_cast<std::uint8_t>(a), static_cast<std::uint8_t>(b)};
          starts_.push_back(s);
        }
    } else {
      starts_.push_back(s0);
    }

    spec_.num_agents = 2;
    spec_.state_space_size = size;
    spec_.action_space_sizes = {kNumActions, kNumActions};
    spec_.horizon = config_.horizon;
    spec_.discount = config_.discount;
    const double p = 1.0 / static_cast<double>(starts_.size());
    for (const auto& s : starts_) spec_.initial_state_dist.emplace_back(encode(s, 0), p);
    if (starts_.size() > 1) {
      // Make the probabilities sum to exactly one.
      double rest = 1.0;
      for (std::size_t k = 0; k + 1 < starts_.size(); ++k) rest -= p;
      spec_.initial_state_dist.back().second = rest;
    }
    spec_.validate();
  }

  int recipe_for(int onions) const {
    for (std::size_t r = 0; r < recipe_onions_.size(); ++r)
      if (recipe_onions_[r] == onions) return static_cast<int>(r);
    return -1;
  }

  static void resolve_moves(const std::array<std::uint8_t, 2>& pos, std::array<int, 2>& target) {
    for (int iter = 0; iter < 4; ++iter) {
      bool changed = false;
      if (target[0] == target[1]) {
        // A stationary agent keeps its cell; otherwise agent 0 wins.
        if (target[1] == pos[1])
          target[0] = pos[0];
        else
          target[1] = pos[1];
        changed = true;
      }
      if (target[0] == pos[1] && target[1] == pos[0] && target[0] != pos[0]) {
        target = {pos[0], pos[1]};
        changed = true;
      }
      if (!changed) break;
    }
  }

  std::size_t encode(const State& s, int first) const {
    std::uint64_t idx = 0;
    for (int k = 0; k < 2; ++k) {
      const int i = k == 0 ? first : 1 - first;
      idx = ((idx * floor_count() + s.cell[i]) * 4 + s.facing[i]) * item_count() + s.hand[i];
    }
    for (int p = 0; p < num_pots(); ++p) idx = idx * pot_code_count() + s.pot[p];
    for (int k = 0; k < num_counters(); ++k) idx = idx * item_count() + s.counter[k];
    return static_cast<std::size_t>(idx);
  }

  KitchenConfig config_;
  EventSchema schema_;
  EnvSpec spec_;
  int width_ = 0, height_ = 0;
  int max_onions_ = 3;
  std::vector<int> recipe_onions_;
  std::vector<double> recipe_reward_;
  std::vector<int> floor_id_;
  std::vector<std::pair<int, int>> floor_xy_;
  std::vector<int> tile_slot_;
  std::vector<char> tile_kind_;
  std::vector<int> counters_, pots_;
  std::vector<int> neighbor_floor_, faced_tile_;
  std::vector<State> starts_;
  std::uint64_t radix_agent_ = 1;
};

inline KitchenConfig parse_kitchen_config(std::string_view text) {
  KitchenConfig cfg;
  cfg.rows.clear();
  bool in_layout = false;
  std::size_t pos = 0;
  int line_no = 0;
  auto trim = [](std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  };
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (in_layout) {
      if (!line.empty()) cfg.rows.emplace_back(line);
      continue;
    }
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto colon = t.find(':');
    require<ConfigError>(colon != std::string_view::npos, "line ", line_no, ": expected 'key: value'");
    const std::string key(trim(t.substr(0, colon)));
    const std::string value(trim(t.substr(colon + 1)));
    try {
      if (key == "layout") {
        in_layout = true;
      } else if (key == "cook_time") {
        cfg.cook_time = std::stoi(value);
      } else if (key == "horizon") {
        cfg.horizon = std::stoi(value);
      } else if (key == "discount") {
        cfg.discount = std::stod(value);
      } else if (key == "random_start") {
        require<ConfigError>(value == "true" || value == "false", "line ", line_no, ": random_start must be true/false");
        cfg.random_start = value == "true";
      } else if (key == "recipes") {
        cfg.recipes.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) {
          const auto c = item.find(':');
          require<ConfigError>(c != std::string::npos, "line ", line_no, ": recipe entries look like 3:20");
          cfg.recipes[std::stoi(item.substr(0, c))] = std::stod(item.substr(c + 1));
        }
      } else {
        throw ConfigError(detail::concat("line ", line_no, ": unknown key '", key, "'"));
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError(detail::concat("line ", line_no, ": bad value '", value, "' for ", key));
    }
    if (end == text.size()) break;
  }
  require<ConfigError>(!cfg.rows.empty(), "kitchen config has no layout block");
  return cfg;
}

}  // namespace zsceval
