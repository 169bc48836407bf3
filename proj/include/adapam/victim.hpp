#pragma once

// The target multi-agent system: independent per-agent Q-learning on the
// shared reward, frozen into a deterministic argmax policy. Downstream code
// interacts with a VictimPolicy only through act() and rollout().

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adapam/checkpoint.hpp"
#include "adapam/envs.hpp"
#include "adapam/episode.hpp"
#include "adapam/ndmath.hpp"
#include "adapam/replay.hpp"
#include "adapam/stats.hpp"

namespace adapam {

class VictimPolicy {
 public:
  VictimPolicy() = default;

  /// Wraps per-agent action-value networks (obs_dim -> action_count).
  static VictimPolicy from_networks(std::vector<Network> nets) {
    if (nets.empty()) throw ArgumentError("victim needs at least one agent network");
    for (const auto& n : nets) {
      n.spec.validate();
      check_mlp_layout(n.params, n.spec);
      if (n.spec.input_dim() != nets[0].spec.input_dim() || n.spec.output_dim() != nets[0].spec.output_dim())
        throw ShapeError("victim agents must share observation and action dimensions");
    }
    VictimPolicy v;
    v.nets_ = std::move(nets);
    return v;
  }

  std::size_t n_agents() const { return nets_.size(); }
  std::size_t obs_dim() const { return nets_.at(0).spec.input_dim(); }
  std::size_t action_count() const { return nets_.at(0).spec.output_dim(); }

  /// Greedy action; ties go to the lowest index.
  std::size_t act(std::size_t agent, std::span<const double> obs) const {
    if (agent >= nets_.size()) throw ArgumentError("agent index out of range");
    if (obs.size() != obs_dim()) throw ShapeError("observation has wrong dimension");
    return argmax(nets_[agent].forward(obs));
  }

  friend std::filesystem::path save_victim(const std::filesystem::path& dir, const VictimPolicy& v,
                                           const json& meta);
  friend VictimPolicy load_victim(const std::filesystem::path& manifest);
  friend std::string victim_fingerprint(const VictimPolicy& v);

 private:
  std::vector<Network> nets_;
};

inline std::filesystem::path save_victim(const std::filesystem::path& dir, const VictimPolicy& v,
                                         const json& meta = json::object()) {
  return save_network_group(dir, "victim", v.nets_, meta);
}

inline VictimPolicy load_victim(const std::filesystem::path& manifest) {
  return VictimPolicy::from_networks(load_network_group(manifest).nets);
}

/// SHA-256 over the serialized agent networks.
inline std::string victim_fingerprint(const VictimPolicy& v) {
  std::string all;
  for (const auto& n : v.nets_) all += encode_checkpoint(n.params, {{"mlp", spec_to_json(n.spec)}});
  return sha256_hex(all);
}

// ---------------------------------------------------------------------------
// Rollouts

/// Interception points for attacks during a rollout. Observation attacks edit
/// `victim_obs`; action attacks edit `actions`. Each attacked agent gets one
/// note.
class AttackHook {
 public:
  virtual ~AttackHook() = default;
  virtual void begin_episode(std::size_t /*index*/, std::uint64_t /*episode_seed*/) {}
  virtual void on_observe(const GlobalState&, std::vector<Vec>& /*victim_obs*/,
                          std::vector<AttackNote>& /*notes*/) {}
  virtual void on_act(const GlobalState&, std::vector<std::size_t>& /*actions*/,
                      std::vector<AttackNote>& /*notes*/) {}
};

struct RolloutSummary {
  std::size_t episodes = 0;
  double mean_reward = 0.0;
  double stderr_reward = 0.0;
  std::optional<double> win_rate;
  bool operator==(const RolloutSummary&) const = default;
};

struct RolloutResult {
  std::vector<EpisodeLog> episodes;
  RolloutSummary summary;
};

inline std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode) {
  return derive_seed(seed, 0xe915, episode);
}

inline RolloutSummary summarize(const std::vector<EpisodeLog>& eps) {
  RolloutSummary s;
  s.episodes = eps.size();
  Vec rewards;
  std::size_t wins = 0;
  bool has_win = !eps.empty() && eps.front().win.has_value();
  for (const auto& e : eps) {
    rewards.push_back(e.total_reward);
    wins += e.win.value_or(false) ? 1 : 0;
  }
  s.mean_reward = stats::mean(rewards);
  s.stderr_reward = stats::stderr_of_mean(rewards);
  if (has_win) s.win_rate = eps.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(eps.size());
  return s;
}

inline EpisodeLog run_episode(const Env& env, const VictimPolicy& victim, std::size_t index,
                              std::uint64_t ep_seed, AttackHook* hook) {
  const auto& spec = env.spec();
  EpisodeLog log;
  log.seed = ep_seed;
  GlobalState s = env.reset(ep_seed);
  if (hook) hook->begin_episode(index, ep_seed);
  for (;;) {
    StepRecord rec;
    rec.t = s.t;
    rec.state = s.vector;
    for (std::size_t i = 0; i < spec.n_agents; ++i) {
      rec.observations.push_back(env.observe(s, i).vector);
      rec.active.push_back(env.active(s, i));
    }
    std::vector<Vec> victim_obs = rec.observations;
    if (hook) hook->on_observe(s, victim_obs, rec.attacks);
    rec.actions.resize(spec.n_agents);
    for (std::size_t i = 0; i < spec.n_agents; ++i) rec.actions[i] = victim.act(i, victim_obs[i]);
    if (hook) hook->on_act(s, rec.actions, rec.attacks);
    for (auto& note : rec.attacks)
      if (note.malicious_action && !note.action_override)
        note.success_victim = rec.actions[note.agent] == *note.malicious_action;
    StepResult r = env.step(s, rec.actions);
    rec.reward = r.reward;
    log.total_reward += r.reward;
    log.steps.push_back(std::move(rec));
    s = std::move(r.next_state);
    if (r.done) {
      log.win = r.win;
      break;
    }
  }
  return log;
}

/// Runs `n_episodes` episodes; episode e starts from episode_seed(seed, e).
inline RolloutResult rollout(const Env& env, const VictimPolicy& victim, std::size_t n_episodes,
                             std::uint64_t seed, AttackHook* hook = nullptr) {
  RolloutResult out;
  for (std::size_t e = 0; e < n_episodes; ++e)
    out.episodes.push_back(run_episode(env, victim, e, episode_seed(seed, e), hook));
  out.summary = summarize(out.episodes);
  return out;
}

/// Mean episode rewards of a uniform-random joint policy on the same episode
/// seeds rollout() uses.
inline Vec random_policy_rewards(const Env& env, std::size_t n_episodes, std::uint64_t seed,
                                 std::vector<bool>* wins = nullptr) {
  const auto& spec = env.spec();
  Vec out;
  Rng rng(derive_seed(seed, 0xa11));
  std::vector<std::size_t> joint(spec.n_agents);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    GlobalState s = env.reset(episode_seed(seed, e));
    double total = 0.0;
    for (;;) {
      for (auto& a : joint) a = rng.index(spec.action_count);
      StepResult r = env.step(s, joint);
      total += r.reward;
      s = std::move(r.next_state);
      if (r.done) {
        if (wins) wins->push_back(r.win.value_or(false));
        break;
      }
    }
    out.push_back(total);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct VictimTrainConfig {
  std::size_t episodes = 800;
  double learning_rate = 1e-3;
  double discount = 0.95;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_fraction = 0.6;  // of episodes
  std::size_t target_sync_steps = 250;
  std::size_t replay_capacity = 20000;
  std::size_t batch_size = 32;
  std::size_t warmup_steps = 500;
  std::vector<std::size_t> hidden = {64};
  Activation activation = Activation::tanh;
  double grad_clip = 10.0;
  std::size_t select_every = 50;       // episodes between checkpoint-selection evaluations
  std::size_t select_episodes = 30;
  std::size_t eval_episodes = 100;
  double min_margin_over_random = 0.0;  // trained mean reward must exceed random by more than this
  double min_win_rate = 0.8;            // only for environments with a win flag
  std::uint64_t seed = 0;

  void validate() const {
    if (episodes == 0 || batch_size == 0 || replay_capacity == 0 || target_sync_steps == 0 ||
        eval_episodes == 0 || select_every == 0 || select_episodes == 0)
      throw ConfigError("victim config: counts must be positive");
    if (!(learning_rate > 0.0) || !(discount > 0.0 && discount <= 1.0))
      throw ConfigError("victim config: learning rate / discount out of range");
    if (!(epsilon_start >= epsilon_end && epsilon_end >= 0.0 && epsilon_start <= 1.0))
      throw ConfigError("victim config: epsilon schedule must be non-increasing within [0,1]");
    if (!(epsilon_decay_fraction > 0.0 && epsilon_decay_fraction <= 1.0))
      throw ConfigError("victim config: epsilon_decay_fraction must lie in (0,1]");
  }

  double epsilon(std::size_t episode) const {
    double span = epsilon_decay_fraction * static_cast<double>(episodes);
    double frac = std::min(1.0, static_cast<double>(episode) / span);
    return epsilon_start + (epsilon_end - epsilon_start) * frac;
  }
};

struct VictimCurvePoint {
  std::size_t episode;
  double train_return;
  double epsilon;
  std::optional<double> selection_score;
};

struct VictimTrainResult {
  VictimPolicy policy;
  std::vector<VictimCurvePoint> curve;
  RolloutSummary eval;
  double random_mean_reward = 0.0;
  std::optional<double> random_win_rate;
};

namespace detail {
struct JointTransition {
  std::vector<Vec> obs;
  std::vector<std::size_t> actions;
  std::vector<bool> active;
  double reward;
  std::vector<Vec> next_obs;
  bool done;
};

inline double selection_score(const RolloutSummary& s) {
  // Win rate dominates when present; reward breaks ties.
  return s.win_rate ? *s.win_rate * 1e6 + s.mean_reward : s.mean_reward;
}
}  // namespace detail

/// Independent Q-learning; the returned policy is the best of the periodic
/// greedy snapshots on a selection seed set disjoint from the evaluation seeds.
/// Throws TrainingFailure when the final policy misses the quality gate.
inline VictimTrainResult train_victim(const Env& env, const VictimTrainConfig& cfg) {
  cfg.validate();
  const auto& spec = env.spec();
  const std::size_t n = spec.n_agents;
  MlpSpec mspec;
  mspec.layer_sizes.push_back(spec.obs_dim);
  mspec.layer_sizes.insert(mspec.layer_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  mspec.layer_sizes.push_back(spec.action_count);
  mspec.hidden = cfg.activation;

  std::vector<Trainable> online;
  std::vector<Network> target;
  for (std::size_t i = 0; i < n; ++i) {
    online.emplace_back(Network::create(mspec, derive_seed(cfg.seed, 0x71c, i)));
    target.push_back(online.back().net);
  }

  Rng rng(derive_seed(cfg.seed, 0xe95));
  RingBuffer<detail::JointTransition> replay(cfg.replay_capacity);
  VictimTrainResult result;
  const std::uint64_t select_seed = derive_seed(cfg.seed, 0x5e1);
  const std::uint64_t eval_seed = derive_seed(cfg.seed, 0xe7a1);
  std::optional<double> best_score;
  std::vector<Network> best_nets;

  std::size_t total_steps = 0;
  MlpTrace tr, tr_next;
  std::vector<ParameterSet> grads;
  for (auto& o : online) grads.push_back(o.net.params.zeros_like());

  for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
    const double eps = cfg.epsilon(ep);
    GlobalState s = env.reset(derive_seed(cfg.seed, 0x7a1, ep));
    double ret = 0.0;
    for (;;) {
      detail::JointTransition tx;
      tx.actions.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        tx.obs.push_back(env.observe(s, i).vector);
        tx.active.push_back(env.active(s, i));
        if (rng.uniform() < eps)
          tx.actions[i] = rng.index(spec.action_count);
        else
          tx.actions[i] = argmax(online[i].net.forward(tx.obs[i]));
      }
      StepResult r = env.step(s, tx.actions);
      tx.reward = r.reward;
      tx.done = r.done;
      for (std::size_t i = 0; i < n; ++i) tx.next_obs.push_back(env.observe(r.next_state, i).vector);
      ret += r.reward;
      replay.push(std::move(tx));
      s = std::move(r.next_state);
      ++total_steps;

      if (replay.size() >= std::max(cfg.warmup_steps, cfg.batch_size)) {
        auto idx = replay.sample(rng, cfg.batch_size);
        for (std::size_t i = 0; i < n; ++i) {
          grads[i].fill(0.0);
          std::size_t used = 0;
          for (auto k : idx) {
            const auto& t = replay[k];
            if (!t.active[i]) continue;
            double y = t.reward;
            if (!t.done) {
              target[i].forward(t.next_obs[i], tr_next);
              auto q = tr_next.logits();
              y += cfg.discount * *std::max_element(q.begin(), q.end());
            }
            online[i].net.forward(t.obs[i], tr);
            HeadValue hv = evaluate_head(MseHead{t.actions[i], y}, tr.logits(), {});
            mlp_backward(online[i].net.params, mspec, tr, hv.d_logits, &grads[i]);
            ++used;
          }
          if (used == 0) continue;
          for (std::size_t e = 0; e < grads[i].size(); ++e)
            for (auto& g : grads[i].at(e).data) g /= static_cast<double>(used);
          clip_grad_norm(grads[i], cfg.grad_clip);
          online[i].step(grads[i], cfg.learning_rate);
        }
      }
      if (total_steps % cfg.target_sync_steps == 0)
        for (std::size_t i = 0; i < n; ++i) target[i] = online[i].net;
      if (r.done) break;
    }

    VictimCurvePoint pt{ep, ret, eps, std::nullopt};
    if ((ep + 1) % cfg.select_every == 0 || ep + 1 == cfg.episodes) {
      std::vector<Network> nets;
      for (auto& o : online) nets.push_back(o.net);
      auto snapshot = VictimPolicy::from_networks(nets);
      double score = detail::selection_score(rollout(env, snapshot, cfg.select_episodes, select_seed).summary);
      pt.selection_score = score;
      if (!best_score || score > *best_score) {
        best_score = score;
        best_nets = std::move(nets);
      }
    }
    result.curve.push_back(pt);
  }

  result.policy = VictimPolicy::from_networks(std::move(best_nets));
  result.eval = rollout(env, result.policy, cfg.eval_episodes, eval_seed).summary;
  std::vector<bool> rwins;
  Vec rnd = random_policy_rewards(env, cfg.eval_episodes, eval_seed, &rwins);
  result.random_mean_reward = stats::mean(rnd);
  if (spec.has_win_flag) {
    std::size_t w = 0;
    for (bool b : rwins) w += b;
    result.random_win_rate = static_cast<double>(w) / static_cast<double>(rwins.size());
  }

  json metrics{{"mean_reward", result.eval.mean_reward}, {"random_mean_reward", result.random_mean_reward}};
  if (result.eval.win_rate) metrics["win_rate"] = *result.eval.win_rate;
  if (!(result.eval.mean_reward - result.random_mean_reward > cfg.min_margin_over_random))
    throw TrainingFailure("victim under-trained: margin over random policy not met", metrics.dump());
  if (spec.has_win_flag && *result.eval.win_rate < cfg.min_win_rate)
    throw TrainingFailure("victim under-trained: win rate below gate", metrics.dump());
  return result;
}

}  // namespace adapam
