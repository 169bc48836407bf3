#pragma once

// Episode logs and their JSON-lines encoding ("adapam-ep-1"): one header
// line per episode followed by one record per timestep.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapam/ndmath.hpp"

namespace adapam {

using json = nlohmann::json;

inline constexpr const char* kEpisodeFormat = "adapam-ep-1";

/// One attack applied at one timestep.
struct AttackNote {
  std::size_t agent = 0;
  std::optional<std::size_t> malicious_action;  // targeted methods only
  std::optional<Vec> perturbed_obs;             // observation attacks only
  double linf = 0.0;
  double l2 = 0.0;
  bool success_proxy = false;
  bool success_victim = false;
  bool action_override = false;  // direct control
  bool operator==(const AttackNote&) const = default;
};

struct StepRecord {
  int t = 0;
  Vec state;
  std::vector<Vec> observations;  // clean
  std::vector<std::size_t> actions;  // executed
  std::vector<bool> active;
  double reward = 0.0;
  std::vector<AttackNote> attacks;
  bool operator==(const StepRecord&) const = default;
};

struct EpisodeLog {
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  double total_reward = 0.0;
  std::optional<bool> win;
  bool operator==(const EpisodeLog&) const = default;
};

inline json to_json(const AttackNote& a) {
  json j{{"agent", a.agent}, {"linf", a.linf}, {"l2", a.l2}, {"success_proxy", a.success_proxy},
         {"success_victim", a.success_victim}, {"action_override", a.action_override}};
  j["malicious_action"] = a.malicious_action ? json(*a.malicious_action) : json(nullptr);
  j["perturbed_obs"] = a.perturbed_obs ? json(*a.perturbed_obs) : json(nullptr);
  return j;
}

inline AttackNote attack_from_json(const json& j) {
  AttackNote a;
  a.agent = j.at("agent");
  a.linf = j.at("linf");
  a.l2 = j.at("l2");
  a.success_proxy = j.at("success_proxy");
  a.success_victim = j.at("success_victim");
  a.action_override = j.at("action_override");
  if (!j.at("malicious_action").is_null()) a.malicious_action = j.at("malicious_action").get<std::size_t>();
  if (!j.at("perturbed_obs").is_null()) a.perturbed_obs = j.at("perturbed_obs").get<Vec>();
  return a;
}

inline void write_episode_jsonl(std::ostream& out, const EpisodeLog& ep, std::size_t index) {
  json head{{"format", kEpisodeFormat}, {"episode", index}, {"seed", ep.seed},
            {"total_reward", ep.total_reward}, {"steps", ep.steps.size()}};
  head["win"] = ep.win ? json(*ep.win) : json(nullptr);
  out << head.dump() << '\n';
  for (const auto& s : ep.steps) {
    json j{{"t", s.t}, {"state", s.state}, {"observations", s.observations}, {"actions", s.actions},
           {"active", s.active}, {"reward", s.reward}, {"attacks", json::array()}};
    for (const auto& a : s.attacks) j["attacks"].push_back(to_json(a));
    out << j.dump() << '\n';
  }
}

/// Parses logs written by write_episode_jsonl.
inline std::vector<EpisodeLog> read_episodes_jsonl(std::istream& in) {
  std::vector<EpisodeLog> eps;
  std::string line;
  std::size_t remaining = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (remaining == 0) {
      if (j.value("format", "") != kEpisodeFormat) throw IntegrityError("not an adapam-ep-1 log");
      EpisodeLog ep;
      ep.seed = j.at("seed");
      ep.total_reward = j.at("total_reward");
      if (!j.at("win").is_null()) ep.win = j.at("win").get<bool>();
      remaining = j.at("steps");
      eps.push_back(std::move(ep));
      continue;
    }
    StepRecord s;
    s.t = j.at("t");
    s.state = j.at("state").get<Vec>();
    s.observations = j.at("observations").get<std::vector<Vec>>();
    s.actions = j.at("actions").get<std::vector<std::size_t>>();
    s.active = j.at("active").get<std::vector<bool>>();
    s.reward = j.at("reward");
    for (const auto& a : j.at("attacks")) s.attacks.push_back(attack_from_json(a));
    eps.back().steps.push_back(std::move(s));
    --remaining;
  }
  if (remaining != 0) throw IntegrityError("episode log truncated");
  return eps;
}

}  // namespace adapam
