#pragma once

// Proxy agents imitating the victim's observation -> action mapping through
// per-agent generative adversarial imitation. Only VictimPolicy::act() and
// rollouts are used; victim parameters are never read.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "adapam/envs.hpp"
#include "adapam/ndmath.hpp"
#include "adapam/perturber.hpp"
#include "adapam/victim.hpp"

namespace adapam {

struct ExpertPair {
  Vec obs;
  std::size_t action = 0;
  bool operator==(const ExpertPair&) const = default;
};

struct ExpertDataset {
  std::vector<std::vector<ExpertPair>> train;    // per agent
  std::vector<std::vector<ExpertPair>> heldout;  // per agent
  std::vector<std::size_t> heldout_episodes;
  std::size_t episodes = 0;
  bool operator==(const ExpertDataset&) const = default;
};

/// Clean victim rollouts split into train / held-out at episode level:
/// round(holdout_frac * n_episodes) episodes, chosen by a seeded shuffle.
inline ExpertDataset collect_expert(const Env& env, const VictimPolicy& victim, std::size_t n_episodes,
                                    std::uint64_t seed, double holdout_frac) {
  if (n_episodes < 1) throw ArgumentError("collect_expert needs at least one episode");
  if (!(holdout_frac >= 0.0 && holdout_frac < 1.0)) throw ArgumentError("holdout_frac must lie in [0,1)");
  const std::size_t n = env.spec().n_agents;
  auto logs = rollout(env, victim, n_episodes, seed).episodes;

  std::vector<std::size_t> order(n_episodes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5b1));
  for (std::size_t k = n_episodes; k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
  auto n_hold = static_cast<std::size_t>(std::llround(holdout_frac * static_cast<double>(n_episodes)));
  std::vector<bool> held(n_episodes, false);
  for (std::size_t k = 0; k < n_hold; ++k) held[order[k]] = true;

  ExpertDataset ds;
  ds.episodes = n_episodes;
  ds.train.resize(n);
  ds.heldout.resize(n);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    if (held[e]) ds.heldout_episodes.push_back(e);
    auto& dest = held[e] ? ds.heldout : ds.train;
    for (const auto& st : logs[e].steps)
      for (std::size_t i = 0; i < n; ++i)
        if (st.active[i]) dest[i].push_back({st.observations[i], st.actions[i]});
  }
  return ds;
}

/// Appends `copies` noisy variants of every training observation, each
/// labelled by querying the victim. Noise is uniform within the budget, so the
/// proxy sees the region the attack will search. Held-out pairs stay clean.
inline void add_query_pairs(ExpertDataset& ds, const VictimPolicy& victim, std::size_t copies,
                            const PerturbBudget& budget, std::uint64_t seed) {
  budget.validate();
  Rng rng(derive_seed(seed, 0x9e7));
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    const std::size_t clean = ds.train[i].size();
    ds.train[i].reserve(clean * (copies + 1));
    for (std::size_t c = 0; c < copies; ++c)
      for (std::size_t k = 0; k < clean; ++k) {
        Vec o = ds.train[i][k].obs;
        for (auto& x : o) x = budget.apply(x, rng.uniform(-budget.epsilon, budget.epsilon));
        std::size_t a = victim.act(i, o);
        ds.train[i].push_back({std::move(o), a});
      }
  }
}

/// Per-agent proxy policies (obs -> action logits).
struct ProxyPolicy {
  std::vector<Network> agents;

  std::size_t greedy(std::size_t agent, std::span<const double> obs) const {
    return argmax(agents.at(agent).forward(obs));
  }
  bool operator==(const ProxyPolicy&) const = default;
};

/// Per-agent discriminators: (obs ++ onehot(action)) -> one logit.
struct Discriminators {
  std::vector<Network> agents;
};

inline Vec disc_input(std::span<const double> obs, std::size_t action, std::size_t action_count) {
  Vec x(obs.begin(), obs.end());
  x.resize(obs.size() + action_count, 0.0);
  x[obs.size() + action] = 1.0;
  return x;
}

/// D(o, a) = sigmoid(logit), strictly inside (0, 1).
inline double disc_score(const Network& disc, std::span<const double> obs, std::size_t action) {
  std::size_t A = disc.spec.input_dim() - obs.size();
  return sigmoid(disc.forward(disc_input(obs, action, A))[0]);
}

/// Binary cross-entropy of the discriminator: -mean log D(expert) - mean log(1 - D(proxy)).
inline double discriminator_loss(const Network& disc, std::span<const ExpertPair> expert,
                                 std::span<const ExpertPair> proxy) {
  if (expert.empty() || proxy.empty()) throw ArgumentError("discriminator batches must be non-empty");
  const std::size_t A = disc.spec.input_dim() - expert.front().obs.size();
  double le = 0.0, lp = 0.0;
  for (const auto& p : expert) le += softplus(-disc.forward(disc_input(p.obs, p.action, A))[0]);
  for (const auto& p : proxy) lp += softplus(disc.forward(disc_input(p.obs, p.action, A))[0]);
  return le / static_cast<double>(expert.size()) + lp / static_cast<double>(proxy.size());
}

/// One Adam step on the discriminator BCE; returns the loss before the step.
inline double discriminator_update(Trainable& disc, std::span<const ExpertPair> expert,
                                   std::span<const ExpertPair> proxy, double lr) {
  if (expert.empty() || proxy.empty()) throw ArgumentError("discriminator batches must be non-empty");
  const std::size_t A = disc.net.spec.input_dim() - expert.front().obs.size();
  ParameterSet g = disc.net.params.zeros_like();
  MlpTrace tr;
  double loss = 0.0;
  auto accumulate = [&](std::span<const ExpertPair> batch, double label) {
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const auto& p : batch) {
      Vec x = disc_input(p.obs, p.action, A);
      disc.net.forward(x, tr);
      HeadValue hv = evaluate_head(BinaryCrossEntropyHead{label}, tr.logits(), x);
      loss += w * hv.loss;
      hv.d_logits[0] *= w;
      mlp_backward(disc.net.params, disc.net.spec, tr, hv.d_logits, &g);
    }
  };
  accumulate(expert, 1.0);
  accumulate(proxy, 0.0);
  disc.step(g, lr);
  return loss;
}

/// Imitation reward -log(1 - D(o, a)).
inline double imitation_reward(const Network& disc, std::span<const double> obs, std::size_t action) {
  std::size_t A = disc.spec.input_dim() - obs.size();
  return softplus(disc.forward(disc_input(obs, action, A))[0]);
}

struct GeneratorDiagnostics {
  double mean_imitation_reward = 0.0;
  double baseline = 0.0;
};

/// REINFORCE step on the proxy with reward -log(1 - D) minus a moving-average
/// baseline, plus an entropy bonus. `baseline` is updated in place after the
/// step.
inline GeneratorDiagnostics generator_update(Trainable& proxy, const Network& disc,
                                             std::span<const ExpertPair> batch, double& baseline,
                                             double lr, double entropy_weight,
                                             double baseline_rate = 0.1) {
  if (batch.empty()) throw ArgumentError("generator batch must be non-empty");
  ParameterSet g = proxy.net.params.zeros_like();
  MlpTrace tr;
  Vec rewards;
  for (const auto& p : batch) rewards.push_back(imitation_reward(disc, p.obs, p.action));
  const double w = 1.0 / static_cast<double>(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    proxy.net.forward(batch[k].obs, tr);
    HeadValue hv = evaluate_head(
        WeightedLogProbHead{batch[k].action, rewards[k] - baseline, entropy_weight}, tr.logits(), {});
    for (auto& d : hv.d_logits) d *= w;
    mlp_backward(proxy.net.params, proxy.net.spec, tr, hv.d_logits, &g);
  }
  proxy.step(g, lr);
  GeneratorDiagnostics out;
  out.mean_imitation_reward = stats::mean(rewards);
  baseline += baseline_rate * (out.mean_imitation_reward - baseline);
  out.baseline = baseline;
  return out;
}

/// Fraction of held-out observations where the proxy's argmax equals the
/// victim's action.
inline double agreement(const Network& proxy_i, const VictimPolicy& victim, std::size_t agent,
                        std::span<const ExpertPair> heldout) {
  if (heldout.empty()) throw ArgumentError("agreement needs a non-empty held-out set");
  std::size_t hits = 0;
  for (const auto& p : heldout) hits += argmax(proxy_i.forward(p.obs)) == victim.act(agent, p.obs) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(heldout.size());
}

/// Mean cross-entropy of the proxy on expert pairs.
inline double expert_cross_entropy(const Network& proxy_i, std::span<const ExpertPair> pairs) {
  double s = 0.0;
  for (const auto& p : pairs) s += -log_softmax(proxy_i.forward(p.obs))[p.action];
  return pairs.empty() ? 0.0 : s / static_cast<double>(pairs.size());
}

struct MagailConfig {
  std::vector<std::size_t> proxy_hidden = {64};
  std::vector<std::size_t> disc_hidden = {64};
  Activation activation = Activation::tanh;
  bool bc_warm_start = true;
  std::size_t bc_epochs = 40;
  std::size_t bc_batch = 64;
  double bc_lr = 3e-3;
  std::size_t adversarial_epochs = 10;
  std::size_t rollout_episodes = 4;  // on-policy episodes per agent per epoch
  std::size_t disc_steps = 2;
  double disc_lr = 1e-3;
  double gen_lr = 1e-4;
  double entropy_weight = 1e-3;
  double min_agreement = 0.85;
  std::uint64_t seed = 0;

  void validate() const {
    if (bc_batch == 0 || rollout_episodes == 0 || disc_steps == 0)
      throw ConfigError("magail config: counts must be positive");
    if (!(bc_lr > 0.0 && disc_lr > 0.0 && gen_lr > 0.0)) throw ConfigError("magail config: rates must be positive");
    if (!(min_agreement >= 0.0 && min_agreement <= 1.0)) throw ConfigError("magail config: min_agreement in [0,1]");
  }
};

struct MagailCurvePoint {
  std::string phase;  // "bc" or "gail"
  std::size_t epoch;
  Vec disc_loss;                // per agent (gail)
  Vec mean_imitation_reward;    // per agent (gail)
  Vec expert_ce;                // per agent, training split
  Vec agreement;                // per agent, held-out split
};

struct MagailResult {
  ProxyPolicy proxies;
  Discriminators discriminators;
  std::vector<MagailCurvePoint> curve;
  Vec final_agreement;
};

namespace detail {
/// On-policy pairs with the proxy (sampling from its softmax) acting for
/// `agent` and the victim acting for everyone else, in the clean environment.
inline std::vector<ExpertPair> proxy_rollouts(const Env& env, const VictimPolicy& victim, const Network& proxy,
                                              std::size_t agent, std::size_t episodes, Rng& rng,
                                              std::uint64_t seed) {
  const auto& spec = env.spec();
  std::vector<ExpertPair> out;
  std::vector<std::size_t> joint(spec.n_agents);
  for (std::size_t e = 0; e < episodes; ++e) {
    GlobalState s = env.reset(derive_seed(seed, e));
    for (;;) {
      for (std::size_t j = 0; j < spec.n_agents; ++j) {
        Vec o = env.observe(s, j).vector;
        if (j == agent) {
          joint[j] = rng.categorical(softmax(proxy.forward(o)));
          if (env.active(s, j)) out.push_back({std::move(o), joint[j]});
        } else {
          joint[j] = victim.act(j, o);
        }
      }
      StepResult r = env.step(s, joint);
      s = std::move(r.next_state);
      if (r.done) break;
    }
  }
  return out;
}
}  // namespace detail

/// Behavior-cloning warm start (optional) followed by alternating
/// discriminator / generator updates per agent. Throws TrainingFailure when a
/// proxy's held-out agreement ends below `min_agreement`.
inline MagailResult train_magail(const Env& env, const VictimPolicy& victim, const ExpertDataset& expert,
                                 const MagailConfig& cfg) {
  cfg.validate();
  const auto& spec = env.spec();
  const std::size_t n = spec.n_agents, A = spec.action_count;
  if (expert.train.size() != n || expert.heldout.size() != n) throw ArgumentError("expert data does not match env");

  auto make_spec = [&](std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    MlpSpec s;
    s.layer_sizes.push_back(in);
    s.layer_sizes.insert(s.layer_sizes.end(), hidden.begin(), hidden.end());
    s.layer_sizes.push_back(out);
    s.hidden = cfg.activation;
    return s;
  };
  std::vector<Trainable> proxies, discs;
  for (std::size_t i = 0; i < n; ++i) {
    proxies.emplace_back(Network::create(make_spec(spec.obs_dim, cfg.proxy_hidden, A), derive_seed(cfg.seed, 0x9a, i)));
    discs.emplace_back(Network::create(make_spec(spec.obs_dim + A, cfg.disc_hidden, 1), derive_seed(cfg.seed, 0xd1, i)));
  }
  Rng rng(derive_seed(cfg.seed, 0x6a1));
  MagailResult res;

  auto snapshot = [&](std::string phase, std::size_t epoch) {
    MagailCurvePoint pt{std::move(phase), epoch, {}, {}, {}, {}};
    for (std::size_t i = 0; i < n; ++i) {
      pt.expert_ce.push_back(expert_cross_entropy(proxies[i].net, expert.train[i]));
      pt.agreement.push_back(expert.heldout[i].empty() ? 0.0
                                                       : agreement(proxies[i].net, victim, i, expert.heldout[i]));
    }
    return pt;
  };

  if (cfg.bc_warm_start) {
    MlpTrace tr;
    for (std::size_t ep = 0; ep < cfg.bc_epochs; ++ep) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto& data = expert.train[i];
        if (data.empty()) continue;
        std::vector<std::size_t> order(data.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
        for (std::size_t start = 0; start < order.size(); start += cfg.bc_batch) {
          std::size_t end = std::min(order.size(), start + cfg.bc_batch);
          ParameterSet g = proxies[i].net.params.zeros_like();
          const double w = 1.0 / static_cast<double>(end - start);
          for (std::size_t k = start; k < end; ++k) {
            const auto& p = data[order[k]];
            proxies[i].net.forward(p.obs, tr);
            HeadValue hv = evaluate_head(CrossEntropyHead{p.action}, tr.logits(), {});
            for (auto& d : hv.d_logits) d *= w;
            mlp_backward(proxies[i].net.params, proxies[i].net.spec, tr, hv.d_logits, &g);
          }
          proxies[i].step(g, cfg.bc_lr);
        }
      }
      res.curve.push_back(snapshot("bc", ep));
    }
  }

  std::vector<double> baselines(n, 0.0);
  for (std::size_t ep = 0; ep < cfg.adversarial_epochs; ++ep) {
    Vec dl(n, 0.0), ir(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto gen_batch = detail::proxy_rollouts(env, victim, proxies[i].net, i, cfg.rollout_episodes, rng,
                                              derive_seed(cfg.seed, 0x90, ep * n + i));
      if (gen_batch.empty() || expert.train[i].empty()) continue;
      std::vector<ExpertPair> exp_batch;
      for (std::size_t k = 0; k < gen_batch.size(); ++k)
        exp_batch.push_back(expert.train[i][rng.index(expert.train[i].size())]);
      for (std::size_t k = 0; k < cfg.disc_steps; ++k)
        dl[i] = discriminator_update(discs[i], exp_batch, gen_batch, cfg.disc_lr);
      ir[i] = generator_update(proxies[i], discs[i].net, gen_batch, baselines[i], cfg.gen_lr, cfg.entropy_weight)
                  .mean_imitation_reward;
    }
    auto pt = snapshot("gail", ep);
    pt.disc_loss = dl;
    pt.mean_imitation_reward = ir;
    res.curve.push_back(std::move(pt));
  }

  for (std::size_t i = 0; i < n; ++i) {
    res.proxies.agents.push_back(proxies[i].net);
    res.discriminators.agents.push_back(discs[i].net);
    res.final_agreement.push_back(expert.heldout[i].empty() ? 0.0
                                                            : agreement(proxies[i].net, victim, i, expert.heldout[i]));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (res.final_agreement[i] < cfg.min_agreement) {
      json m{{"agreement", res.final_agreement}, {"min_agreement", cfg.min_agreement}};
      throw TrainingFailure("proxy agreement below gate", m.dump());
    }
  }
  return res;
}

}  // namespace adapam
