#pragma once

// Desk-scale cooperative multi-agent environments. All randomness is consumed
// by reset(); observe() and step() are pure functions of the state.
//
// coop_spread: 3 agents, 3 landmarks on the unit square, 5 actions
//   {stay, +x, -x, +y, -y} with step 0.05, horizon 25.
//   state (12): agent positions (6) then landmark positions (6), raw in [0,1].
//   obs (12):   own position rescaled to [-1,1] (2), landmark - own (6),
//               other agent - own (4).
//
// grid_battle: 8x8 grid, units 0..2 controlled, 3..5 scripted enemies, hp 3,
//   6 actions {stay, up, down, left, right, attack_nearest}, horizon 40.
//   state (24): per unit (x, y, hp, alive), raw.
//   obs (23):   own (x, y, hp) then per other unit (dx/7, dy/7, hp, alive);
//               dead units' blocks are all zero.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "adapam/errors.hpp"
#include "adapam/ndmath.hpp"
#include "adapam/rng.hpp"

namespace adapam {

struct EnvSpec {
  std::string name;
  std::size_t n_agents;
  std::size_t obs_dim;
  std::size_t action_count;
  std::size_t state_dim;
  int horizon;
  bool has_win_flag;
};

struct GlobalState {
  Vec vector;
  int t = 0;
  bool operator==(const GlobalState&) const = default;
};

struct Observation {
  Vec vector;
  std::size_t agent = 0;
};

struct StepResult {
  GlobalState next_state;
  double reward = 0.0;
  bool done = false;
  std::optional<bool> win;
};

namespace detail {
inline void check_joint_action(std::span<const std::size_t> joint, const EnvSpec& spec) {
  if (joint.size() != spec.n_agents) throw ArgumentError("joint action has wrong length");
  for (auto a : joint)
    if (a >= spec.action_count) throw ArgumentError("action index out of range");
}
inline void check_agent(std::size_t agent, const EnvSpec& spec) {
  if (agent >= spec.n_agents) throw ArgumentError("agent index out of range");
}
}  // namespace detail

class CoopSpread {
 public:
  static constexpr std::size_t kAgents = 3;
  static constexpr std::size_t kLandmarks = 3;
  static constexpr double kStep = 0.05;
  static constexpr double kCollisionDist = 0.1;
  static constexpr double kCollisionPenalty = 0.5;

  static const EnvSpec& spec() {
    static const EnvSpec s{"coop_spread", kAgents, 12, 5, 12, 25, false};
    return s;
  }

  GlobalState reset(std::uint64_t seed) const {
    Rng rng(seed);
    GlobalState s{Vec(12), 0};
    for (auto& v : s.vector) v = rng.uniform();
    return s;
  }

  Observation observe(const GlobalState& s, std::size_t agent) const {
    detail::check_agent(agent, spec());
    const double px = s.vector[2 * agent], py = s.vector[2 * agent + 1];
    Observation o{Vec(), agent};
    o.vector.reserve(12);
    o.vector.push_back(2.0 * px - 1.0);
    o.vector.push_back(2.0 * py - 1.0);
    for (std::size_t l = 0; l < kLandmarks; ++l) {
      o.vector.push_back(s.vector[6 + 2 * l] - px);
      o.vector.push_back(s.vector[6 + 2 * l + 1] - py);
    }
    for (std::size_t j = 0; j < kAgents; ++j) {
      if (j == agent) continue;
      o.vector.push_back(s.vector[2 * j] - px);
      o.vector.push_back(s.vector[2 * j + 1] - py);
    }
    return o;
  }

  static double reward_of(const Vec& v) {
    double r = 0.0;
    for (std::size_t l = 0; l < kLandmarks; ++l) {
      double best = INFINITY;
      for (std::size_t i = 0; i < kAgents; ++i)
        best = std::min(best, std::hypot(v[2 * i] - v[6 + 2 * l], v[2 * i + 1] - v[6 + 2 * l + 1]));
      r -= best;
    }
    for (std::size_t i = 0; i < kAgents; ++i)
      for (std::size_t j = i + 1; j < kAgents; ++j)
        if (std::hypot(v[2 * i] - v[2 * j], v[2 * i + 1] - v[2 * j + 1]) < kCollisionDist)
          r -= kCollisionPenalty;
    return r;
  }

  StepResult step(const GlobalState& s, std::span<const std::size_t> joint) const {
    detail::check_joint_action(joint, spec());
    StepResult r{s, 0.0, false, std::nullopt};
    Vec& v = r.next_state.vector;
    for (std::size_t i = 0; i < kAgents; ++i) {
      double& x = v[2 * i];
      double& y = v[2 * i + 1];
      switch (joint[i]) {
        case 1: x += kStep; break;
        case 2: x -= kStep; break;
        case 3: y += kStep; break;
        case 4: y -= kStep; break;
        default: break;
      }
      x = std::clamp(x, 0.0, 1.0);
      y = std::clamp(y, 0.0, 1.0);
    }
    r.next_state.t = s.t + 1;
    r.reward = reward_of(v);
    r.done = r.next_state.t >= spec().horizon;
    return r;
  }

  Vec features(const GlobalState& s) const {
    Vec f(s.vector.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = 2.0 * s.vector[i] - 1.0;
    return f;
  }

  bool active(const GlobalState&, std::size_t) const { return true; }
};

class GridBattle {
 public:
  static constexpr int kSize = 8;
  static constexpr std::size_t kAllies = 3;
  static constexpr std::size_t kUnits = 6;
  static constexpr int kMaxHp = 3;
  static constexpr double kWinBonus = 10.0;

  enum Action : std::size_t { kStay = 0, kUp, kDown, kLeft, kRight, kAttack };

  static const EnvSpec& spec() {
    static const EnvSpec s{"grid_battle", kAllies, 23, 6, 24, 40, true};
    return s;
  }

  /// Allies spawn on distinct cells of the two left columns, enemies on the
  /// two right columns.
  GlobalState reset(std::uint64_t seed) const {
    Rng rng(seed);
    GlobalState s{Vec(24, 0.0), 0};
    auto place = [&](std::size_t first, int x0) {
      std::vector<int> cells(2 * kSize);
      for (int c = 0; c < 2 * kSize; ++c) cells[c] = c;
      for (std::size_t k = 0; k < 3; ++k) {
        std::size_t j = k + rng.index(cells.size() - k);
        std::swap(cells[k], cells[j]);
        std::size_t u = first + k;
        s.vector[4 * u] = x0 + cells[k] / kSize;
        s.vector[4 * u + 1] = cells[k] % kSize;
        s.vector[4 * u + 2] = kMaxHp;
        s.vector[4 * u + 3] = 1.0;
      }
    };
    place(0, 0);
    place(kAllies, kSize - 2);
    return s;
  }

  static int x(const Vec& v, std::size_t u) { return static_cast<int>(v[4 * u]); }
  static int y(const Vec& v, std::size_t u) { return static_cast<int>(v[4 * u + 1]); }
  static int hp(const Vec& v, std::size_t u) { return static_cast<int>(v[4 * u + 2]); }
  static bool alive(const Vec& v, std::size_t u) { return v[4 * u + 3] > 0.5; }

  static int chebyshev(const Vec& v, std::size_t a, std::size_t b) {
    return std::max(std::abs(x(v, a) - x(v, b)), std::abs(y(v, a) - y(v, b)));
  }

  static std::optional<std::size_t> nearest(const Vec& v, std::size_t from, std::size_t first,
                                            std::size_t last) {
    std::optional<std::size_t> best;
    int best_d = 1 << 20;
    for (std::size_t u = first; u < last; ++u) {
      if (!alive(v, u)) continue;
      int d = chebyshev(v, from, u);
      if (d < best_d) best_d = d, best = u;
    }
    return best;
  }

  static bool occupied(const Vec& v, int cx, int cy) {
    for (std::size_t u = 0; u < kUnits; ++u)
      if (alive(v, u) && x(v, u) == cx && y(v, u) == cy) return true;
    return false;
  }

  static bool try_move(Vec& v, std::size_t u, int dx, int dy) {
    int nx = x(v, u) + dx, ny = y(v, u) + dy;
    if (nx < 0 || ny < 0 || nx >= kSize || ny >= kSize || occupied(v, nx, ny)) return false;
    v[4 * u] = nx;
    v[4 * u + 1] = ny;
    return true;
  }

  /// Returns damage dealt (0 or 1).
  static int strike(Vec& v, std::size_t attacker, std::size_t first, std::size_t last) {
    auto target = nearest(v, attacker, first, last);
    if (!target || chebyshev(v, attacker, *target) > 1) return 0;
    v[4 * *target + 2] -= 1.0;
    if (v[4 * *target + 2] <= 0.0) v[4 * *target + 3] = 0.0;
    return 1;
  }

  static std::size_t living(const Vec& v, std::size_t first, std::size_t last) {
    std::size_t n = 0;
    for (std::size_t u = first; u < last; ++u) n += alive(v, u) ? 1 : 0;
    return n;
  }

  Observation observe(const GlobalState& s, std::size_t agent) const {
    detail::check_agent(agent, spec());
    const Vec& v = s.vector;
    Observation o{Vec(), agent};
    o.vector.reserve(23);
    o.vector.push_back(x(v, agent) / 3.5 - 1.0);
    o.vector.push_back(y(v, agent) / 3.5 - 1.0);
    o.vector.push_back(hp(v, agent) * (2.0 / kMaxHp) - 1.0);
    for (std::size_t u = 0; u < kUnits; ++u) {
      if (u == agent) continue;
      if (!alive(v, u)) {
        o.vector.insert(o.vector.end(), {0.0, 0.0, 0.0, 0.0});
        continue;
      }
      o.vector.push_back((x(v, u) - x(v, agent)) / 7.0);
      o.vector.push_back((y(v, u) - y(v, agent)) / 7.0);
      o.vector.push_back(hp(v, u) * (2.0 / kMaxHp) - 1.0);
      o.vector.push_back(1.0);
    }
    return o;
  }

  StepResult step(const GlobalState& s, std::span<const std::size_t> joint) const {
    detail::check_joint_action(joint, spec());
    StepResult r{s, 0.0, false, false};
    Vec& v = r.next_state.vector;
    r.next_state.t = s.t + 1;

    for (std::size_t i = 0; i < kAllies; ++i) {
      if (!alive(v, i)) continue;
      switch (joint[i]) {
        case kUp: try_move(v, i, 0, 1); break;
        case kDown: try_move(v, i, 0, -1); break;
        case kLeft: try_move(v, i, -1, 0); break;
        case kRight: try_move(v, i, 1, 0); break;
        case kAttack: r.reward += strike(v, i, kAllies, kUnits); break;
        default: break;
      }
    }
    if (living(v, kAllies, kUnits) == 0) {
      r.reward += kWinBonus;
      r.done = true;
      r.win = true;
      return r;
    }
    for (std::size_t e = kAllies; e < kUnits; ++e) {
      if (!alive(v, e)) continue;
      auto target = nearest(v, e, 0, kAllies);
      if (!target) break;
      if (chebyshev(v, e, *target) <= 1) {
        r.reward -= strike(v, e, 0, kAllies);
        continue;
      }
      int dx = x(v, *target) - x(v, e), dy = y(v, *target) - y(v, e);
      int sx = (dx > 0) - (dx < 0), sy = (dy > 0) - (dy < 0);
      bool x_first = std::abs(dx) >= std::abs(dy);
      if (x_first) {
        if (!try_move(v, e, sx, 0) && sy != 0) try_move(v, e, 0, sy);
      } else {
        if (!try_move(v, e, 0, sy) && sx != 0) try_move(v, e, sx, 0);
      }
    }
    if (living(v, 0, kAllies) == 0) {
      r.reward -= kWinBonus;
      r.done = true;
      return r;
    }
    r.done = r.next_state.t >= spec().horizon;
    return r;
  }

  /// Normalized network input: every state coordinate mapped to [-1,1].
  Vec features(const GlobalState& s) const {
    Vec f(24);
    for (std::size_t u = 0; u < kUnits; ++u) {
      f[4 * u] = s.vector[4 * u] / 3.5 - 1.0;
      f[4 * u + 1] = s.vector[4 * u + 1] / 3.5 - 1.0;
      f[4 * u + 2] = s.vector[4 * u + 2] * (2.0 / kMaxHp) - 1.0;
      f[4 * u + 3] = 2.0 * s.vector[4 * u + 3] - 1.0;
    }
    return f;
  }

  bool active(const GlobalState& s, std::size_t agent) const { return alive(s.vector, agent); }
};

/// Value wrapper over the built-in environments.
class Env {
 public:
  static Env make(const std::string& name) {
    if (name == "coop_spread") return Env(CoopSpread{});
    if (name == "grid_battle") return Env(GridBattle{});
    throw ConfigError("unknown environment: " + name);
  }

  const EnvSpec& spec() const {
    return std::visit([](const auto& e) -> const EnvSpec& { return e.spec(); }, impl_);
  }
  const std::string& name() const { return spec().name; }

  GlobalState reset(std::uint64_t seed) const {
    return std::visit([&](const auto& e) { return e.reset(seed); }, impl_);
  }
  Observation observe(const GlobalState& s, std::size_t agent) const {
    return std::visit([&](const auto& e) { return e.observe(s, agent); }, impl_);
  }
  std::vector<Observation> observe_all(const GlobalState& s) const {
    std::vector<Observation> out;
    for (std::size_t i = 0; i < spec().n_agents; ++i) out.push_back(observe(s, i));
    return out;
  }
  StepResult step(const GlobalState& s, std::span<const std::size_t> joint) const {
    return std::visit([&](const auto& e) { return e.step(s, joint); }, impl_);
  }
  Vec features(const GlobalState& s) const {
    return std::visit([&](const auto& e) { return e.features(s); }, impl_);
  }
  /// Whether the agent's action has any effect (alive in grid_battle).
  bool active(const GlobalState& s, std::size_t agent) const {
    return std::visit([&](const auto& e) { return e.active(s, agent); }, impl_);
  }

 private:
  explicit Env(std::variant<CoopSpread, GridBattle> impl) : impl_(impl) {}
  std::variant<CoopSpread, GridBattle> impl_;
};

/// Observation box shared by both environments.
inline constexpr double kObsLow = -1.0;
inline constexpr double kObsHigh = 1.0;

}  // namespace adapam
