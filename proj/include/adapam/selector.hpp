#pragma once

// Adaptive selection policy: a pair of hierarchical classifiers choosing the
// attacked agent i and the malicious action a from the global state, trained
// with discrete soft actor-critic (twin critics, Polyak-averaged targets).
//
//   pi(i, a | s) = softmax(C1(s))[i] * softmax(C2(s ++ onehot(i)))[a]
//
// Critics output one value per flattened pair k = i * |A| + a. Expectations
// over the next pair are computed exactly over all n * |A| pairs by default.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "adapam/envs.hpp"
#include "adapam/ndmath.hpp"
#include "adapam/perturber.hpp"
#include "adapam/proxy.hpp"
#include "adapam/replay.hpp"
#include "adapam/victim.hpp"

namespace adapam {

struct AttackDecision {
  std::size_t agent = 0;
  std::size_t action = 0;
  bool operator==(const AttackDecision&) const = default;
};

struct SelectorPolicy {
  Network agent_head;   // C1: state -> n logits
  Network action_head;  // C2: state ++ onehot(i) -> |A| logits

  std::size_t n_agents() const { return agent_head.spec.output_dim(); }
  std::size_t n_actions() const { return action_head.spec.output_dim(); }
  std::size_t state_dim() const { return agent_head.spec.input_dim(); }
  std::size_t pairs() const { return n_agents() * n_actions(); }

  static SelectorPolicy create(std::size_t state_dim, std::size_t n, std::size_t A,
                               const std::vector<std::size_t>& hidden, Activation act, std::uint64_t seed) {
    auto mk = [&](std::size_t in, std::size_t out) {
      MlpSpec s{{in}, act};
      s.layer_sizes.insert(s.layer_sizes.end(), hidden.begin(), hidden.end());
      s.layer_sizes.push_back(out);
      return s;
    };
    return {Network::create(mk(state_dim, n), derive_seed(seed, 0xc1)),
            Network::create(mk(state_dim + n, A), derive_seed(seed, 0xc2))};
  }
  bool operator==(const SelectorPolicy&) const = default;
};

inline Vec with_onehot(std::span<const double> s, std::size_t i, std::size_t n) {
  Vec x(s.begin(), s.end());
  x.resize(s.size() + n, 0.0);
  x[s.size() + i] = 1.0;
  return x;
}

/// Forward pass of both classifiers for one state, kept for backward.
struct SelectorTrace {
  MlpTrace agent;
  std::vector<MlpTrace> action;  // one per agent choice
  Vec p_agent;                   // softmax(C1)
  std::vector<Vec> p_action;     // softmax(C2 | i)
  Vec joint;                     // n * |A|, row-major (i, a)
  Vec log_joint;
};

inline void selector_forward(const SelectorPolicy& sel, std::span<const double> s, SelectorTrace& tr) {
  if (s.size() != sel.state_dim()) throw ShapeError("selector state has wrong dimension");
  const std::size_t n = sel.n_agents(), A = sel.n_actions();
  sel.agent_head.forward(s, tr.agent);
  tr.p_agent = softmax(tr.agent.logits());
  Vec lp1 = log_softmax(tr.agent.logits());
  tr.action.resize(n);
  tr.p_action.resize(n);
  tr.joint.assign(n * A, 0.0);
  tr.log_joint.assign(n * A, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    sel.action_head.forward(with_onehot(s, i, n), tr.action[i]);
    tr.p_action[i] = softmax(tr.action[i].logits());
    Vec lp2 = log_softmax(tr.action[i].logits());
    for (std::size_t a = 0; a < A; ++a) {
      tr.joint[i * A + a] = tr.p_agent[i] * tr.p_action[i][a];
      tr.log_joint[i * A + a] = lp1[i] + lp2[a];
    }
  }
}

/// n x |A| matrix (row-major) of pi(i, a | s).
inline Vec joint_prob(const SelectorPolicy& sel, std::span<const double> s) {
  SelectorTrace tr;
  selector_forward(sel, s, tr);
  return tr.joint;
}

/// Samples i from softmax(C1), then a from softmax(C2 | i).
inline AttackDecision select(const SelectorPolicy& sel, std::span<const double> s, Rng& rng) {
  if (s.size() != sel.state_dim()) throw ShapeError("selector state has wrong dimension");
  const std::size_t n = sel.n_agents();
  std::size_t i = rng.categorical(softmax(sel.agent_head.forward(s)));
  std::size_t a = rng.categorical(softmax(sel.action_head.forward(with_onehot(s, i, n))));
  return {i, a};
}

/// Argmax of joint_prob; ties go to the lowest flattened index.
inline AttackDecision select_greedy(const SelectorPolicy& sel, std::span<const double> s) {
  Vec p = joint_prob(sel, s);
  std::size_t k = argmax(p);
  return {k / sel.n_actions(), k % sel.n_actions()};
}

/// Backward of sum_k dJ/dp_k through the hierarchical factorization.
/// `d_joint` is dJ/d(joint probability) for each flattened pair.
inline void selector_backward(const SelectorPolicy& sel, std::span<const double>, const SelectorTrace& tr,
                              std::span<const double> d_joint, ParameterSet& g_agent, ParameterSet& g_action) {
  const std::size_t n = sel.n_agents(), A = sel.n_actions();
  Vec d_p1(n, 0.0);
  Vec d_p2(A);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < A; ++a) {
      d_p1[i] += d_joint[i * A + a] * tr.p_action[i][a];
      d_p2[a] = d_joint[i * A + a] * tr.p_agent[i];
    }
    Vec dz2 = softmax_backward(tr.p_action[i], d_p2);
    mlp_backward(sel.action_head.params, sel.action_head.spec, tr.action[i], dz2, &g_action);
  }
  Vec dz1 = softmax_backward(tr.p_agent, d_p1);
  mlp_backward(sel.agent_head.params, sel.agent_head.spec, tr.agent, dz1, &g_agent);
}

struct TwinCritics {
  Network q1, q2, target1, target2;

  static TwinCritics create(std::size_t state_dim, std::size_t pairs, const std::vector<std::size_t>& hidden,
                            Activation act, std::uint64_t seed) {
    MlpSpec s{{state_dim}, act};
    s.layer_sizes.insert(s.layer_sizes.end(), hidden.begin(), hidden.end());
    s.layer_sizes.push_back(pairs);
    TwinCritics c{Network::create(s, derive_seed(seed, 0x01)), Network::create(s, derive_seed(seed, 0x02)), {}, {}};
    c.target1 = c.q1;
    c.target2 = c.q2;
    return c;
  }
  bool operator==(const TwinCritics&) const = default;
};

struct Transition {
  Vec state;  // normalized features
  std::size_t agent = 0;
  std::size_t action = 0;
  double reward = 0.0;  // attack reward
  Vec next_state;
  bool done = false;
};

/// Attack reward: the negated team reward.
inline double attack_reward(double team_reward) {
  if (!std::isfinite(team_reward)) throw NumericError("team reward is not finite");
  return -team_reward;
}

inline Vec elementwise_min(std::span<const double> a, std::span<const double> b) {
  Vec m(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) m[k] = std::min(a[k], b[k]);
  return m;
}

/// Soft Bellman targets
///   y = r + gamma (1 - done) E_{k ~ pi(.|s')} [min(target1, target2)(s', k) - alpha log pi(k|s')]
/// with the expectation summed exactly over every pair.
inline Vec critic_target(std::span<const Transition> batch, const TwinCritics& critics, const SelectorPolicy& sel,
                         double gamma, double alpha) {
  Vec y;
  y.reserve(batch.size());
  SelectorTrace tr;
  for (const auto& t : batch) {
    double v = t.reward;
    if (!t.done && gamma != 0.0) {
      if (t.next_state.size() != sel.state_dim()) throw ShapeError("transition state has wrong dimension");
      selector_forward(sel, t.next_state, tr);
      Vec qmin = elementwise_min(critics.target1.forward(t.next_state), critics.target2.forward(t.next_state));
      double e = 0.0;
      for (std::size_t k = 0; k < qmin.size(); ++k) e += tr.joint[k] * (qmin[k] - alpha * tr.log_joint[k]);
      v += gamma * e;
    }
    y.push_back(v);
  }
  return y;
}

/// Single-sample variant of critic_target (one pair drawn from pi per transition).
inline Vec critic_target_sampled(std::span<const Transition> batch, const TwinCritics& critics,
                                 const SelectorPolicy& sel, double gamma, double alpha, Rng& rng) {
  Vec y;
  SelectorTrace tr;
  for (const auto& t : batch) {
    double v = t.reward;
    if (!t.done && gamma != 0.0) {
      selector_forward(sel, t.next_state, tr);
      std::size_t k = rng.categorical(tr.joint);
      double q = std::min(critics.target1.forward(t.next_state)[k], critics.target2.forward(t.next_state)[k]);
      v += gamma * (q - alpha * tr.log_joint[k]);
    }
    y.push_back(v);
  }
  return y;
}

inline std::size_t pair_index(const Transition& t, std::size_t A) { return t.agent * A + t.action; }

/// J_Q = mean 0.5 (Q(s, i, a) - y)^2 with `y` held constant. Accumulates the
/// parameter gradient into `grad` when given.
inline double critic_loss(std::span<const Transition> batch, const Network& q, std::span<const double> y,
                          std::size_t n_actions, ParameterSet* grad = nullptr) {
  if (y.size() != batch.size()) throw ShapeError("critic targets do not match batch");
  if (batch.empty()) return 0.0;
  MlpTrace tr;
  double loss = 0.0;
  const double w = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& t = batch[b];
    std::size_t k = pair_index(t, n_actions);
    if (k >= q.spec.output_dim()) throw ShapeError("transition pair outside critic head");
    q.forward(t.state, tr);
    HeadValue hv = evaluate_head(MseHead{k, y[b]}, tr.logits(), {});
    loss += w * hv.loss;
    if (grad) {
      hv.d_logits[k] *= w;
      mlp_backward(q.params, q.spec, tr, hv.d_logits, grad);
    }
  }
  return loss;
}

/// J_pi = mean_s sum_k pi(k|s) (alpha log pi(k|s) - min(Q1, Q2)(s, k)), the
/// expectation taken exactly over every pair. Critics are constants.
/// Accumulates gradients for both classifiers when given.
inline double policy_loss(std::span<const Transition> batch, const SelectorPolicy& sel, const TwinCritics& critics,
                          double alpha, ParameterSet* g_agent = nullptr, ParameterSet* g_action = nullptr,
                          double* mean_entropy = nullptr) {
  if (batch.empty()) return 0.0;
  SelectorTrace tr;
  double loss = 0.0, ent = 0.0;
  const double w = 1.0 / static_cast<double>(batch.size());
  const std::size_t K = sel.pairs();
  Vec d_joint(K);
  for (const auto& t : batch) {
    selector_forward(sel, t.state, tr);
    Vec qmin = elementwise_min(critics.q1.forward(t.state), critics.q2.forward(t.state));
    if (qmin.size() != K) throw ShapeError("critic head does not match selector pairs");
    double j = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      j += tr.joint[k] * (alpha * tr.log_joint[k] - qmin[k]);
      ent -= w * tr.joint[k] * tr.log_joint[k];
      d_joint[k] = w * (alpha * (tr.log_joint[k] + 1.0) - qmin[k]);
    }
    loss += w * j;
    if (g_agent && g_action) selector_backward(sel, t.state, tr, d_joint, *g_agent, *g_action);
  }
  if (mean_entropy) *mean_entropy = ent;
  return loss;
}

struct SacConfig {
  double gamma = 0.99;
  double alpha = 0.05;
  double mu = 0.005;
  std::size_t replay_capacity = 50000;
  std::size_t batch_size = 64;
  std::size_t steps_per_iteration = 25;
  std::size_t gradient_steps = 25;
  std::size_t total_env_steps = 20000;
  std::size_t warmup_steps = 500;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  double grad_clip = 10.0;
  std::vector<std::size_t> selector_hidden = {64};
  std::vector<std::size_t> critic_hidden = {64};
  Activation activation = Activation::tanh;
  bool exact_expectation = true;
  std::size_t log_every_steps = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("sac: gamma must lie in (0,1]");
    if (!(alpha > 0.0)) throw ConfigError("sac: alpha must be positive");
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("sac: mu must lie in [0,1]");
    if (replay_capacity == 0 || batch_size == 0 || steps_per_iteration == 0 || total_env_steps == 0 ||
        log_every_steps == 0)
      throw ConfigError("sac: counts must be positive");
    if (!(actor_lr > 0.0 && critic_lr > 0.0)) throw ConfigError("sac: learning rates must be positive");
  }
};

struct SacCurvePoint {
  std::size_t env_step;
  double attacker_return;  // mean over episodes finished in the window
  double critic1_loss;
  double critic2_loss;
  double policy_loss;
  double policy_entropy;
  double cw_success_rate;  // on the proxy
};

/// Learner state for one run of adaptive selection policy training.
struct SacLearner {
  SacConfig cfg;
  Trainable agent_head, action_head, q1, q2;
  Network target1, target2;

  SacLearner(const SacConfig& c, SelectorPolicy sel, TwinCritics critics)
      : cfg(c),
        agent_head(std::move(sel.agent_head)),
        action_head(std::move(sel.action_head)),
        q1(std::move(critics.q1)),
        q2(std::move(critics.q2)),
        target1(std::move(critics.target1)),
        target2(std::move(critics.target2)) {}

  SelectorPolicy selector() const { return {agent_head.net, action_head.net}; }
  TwinCritics critics() const { return {q1.net, q2.net, target1, target2}; }

  struct StepLosses {
    double q1 = 0, q2 = 0, pi = 0, entropy = 0;
  };

  /// One gradient step: both critics, then the policy, then both targets.
  StepLosses gradient_step(std::span<const Transition> batch, Rng& rng) {
    StepLosses out;
    const std::size_t A = action_head.net.spec.output_dim();
    TwinCritics cr = critics();
    SelectorPolicy sel = selector();
    Vec y = cfg.exact_expectation ? critic_target(batch, cr, sel, cfg.gamma, cfg.alpha)
                                  : critic_target_sampled(batch, cr, sel, cfg.gamma, cfg.alpha, rng);
    for (Trainable* q : {&q1, &q2}) {
      ParameterSet g = q->net.params.zeros_like();
      double l = critic_loss(batch, q->net, y, A, &g);
      if (!std::isfinite(l)) throw TrainingFailure("critic loss diverged", json{{"loss", "nan"}}.dump());
      clip_grad_norm(g, cfg.grad_clip);
      q->step(g, cfg.critic_lr);
      (q == &q1 ? out.q1 : out.q2) = l;
    }
    cr.q1 = q1.net;
    cr.q2 = q2.net;
    ParameterSet ga = agent_head.net.params.zeros_like(), gb = action_head.net.params.zeros_like();
    out.pi = policy_loss(batch, sel, cr, cfg.alpha, &ga, &gb, &out.entropy);
    if (!std::isfinite(out.pi)) throw TrainingFailure("policy loss diverged", json{{"loss", "nan"}}.dump());
    clip_grad_norm(ga, cfg.grad_clip);
    clip_grad_norm(gb, cfg.grad_clip);
    agent_head.step(ga, cfg.actor_lr);
    action_head.step(gb, cfg.actor_lr);
    target1.params = polyak_update(target1.params, q1.net.params, cfg.mu);
    target2.params = polyak_update(target2.params, q2.net.params, cfg.mu);
    return out;
  }
};

struct AttackerTrainResult {
  SelectorPolicy selector;
  TwinCritics critics;
  std::vector<SacCurvePoint> curve;
  std::size_t replay_size = 0;
};

/// Adaptive selection policy learning. Every environment step samples
/// (i, a) ~ pi(.|s), perturbs agent i's observation toward a with C&W on its
/// proxy, lets the victim act on the injected observations, and stores
/// (s, i, a, -r, s'). Each iteration then runs `gradient_steps` SAC updates.
/// When C&W misses the target the best-found observation is injected anyway.
inline AttackerTrainResult train_attacker(const Env& env, const VictimPolicy& victim, const ProxyPolicy& proxies,
                                          const PerturbBudget& budget, const CwConfig& cw, const SacConfig& cfg) {
  cfg.validate();
  const auto& spec = env.spec();
  const std::size_t n = spec.n_agents, A = spec.action_count;
  if (proxies.agents.size() != n) throw ConfigError("attacker training needs one proxy per agent");
  if (victim.n_agents() != n) throw ConfigError("victim does not match environment");

  SacLearner learner(cfg,
                     SelectorPolicy::create(spec.state_dim, n, A, cfg.selector_hidden, cfg.activation,
                                            derive_seed(cfg.seed, 0x5e)),
                     TwinCritics::create(spec.state_dim, n * A, cfg.critic_hidden, cfg.activation,
                                         derive_seed(cfg.seed, 0xc7)));
  Rng rng(derive_seed(cfg.seed, 0x5ac));
  RingBuffer<Transition> replay(cfg.replay_capacity);
  AttackerTrainResult res;

  std::size_t episode = 0;
  GlobalState s = env.reset(derive_seed(cfg.seed, 0xa7, episode));
  double ep_return = 0.0;
  Vec window_returns;
  std::size_t window_cw = 0, window_cw_ok = 0;
  SacLearner::StepLosses window_loss;
  std::size_t window_grad = 0;
  std::vector<Transition> batch;

  for (std::size_t step = 0; step < cfg.total_env_steps;) {
    for (std::size_t k = 0; k < cfg.steps_per_iteration && step < cfg.total_env_steps; ++k, ++step) {
      Vec feat = env.features(s);
      AttackDecision d = select(learner.selector(), feat, rng);
      std::vector<std::size_t> joint(n);
      for (std::size_t i = 0; i < n; ++i) {
        Vec o = env.observe(s, i).vector;
        if (i == d.agent) {
          PerturbResult pr = cw_attack(proxies.agents[i], o, d.action, budget, cw);
          ++window_cw;
          window_cw_ok += pr.success_on_proxy ? 1 : 0;
          o = std::move(pr.perturbed);
        }
        joint[i] = victim.act(i, o);
      }
      StepResult r = env.step(s, joint);
      double ra = attack_reward(r.reward);
      ep_return += ra;
      replay.push({std::move(feat), d.agent, d.action, ra, env.features(r.next_state), r.done});
      s = std::move(r.next_state);
      if (r.done) {
        window_returns.push_back(ep_return);
        ep_return = 0.0;
        s = env.reset(derive_seed(cfg.seed, 0xa7, ++episode));
      }
      if ((step + 1) % cfg.log_every_steps == 0) {
        double g = std::max<std::size_t>(1, window_grad);
        res.curve.push_back({step + 1, stats::mean(window_returns), window_loss.q1 / g, window_loss.q2 / g,
                             window_loss.pi / g, window_loss.entropy / g,
                             window_cw ? static_cast<double>(window_cw_ok) / static_cast<double>(window_cw) : 0.0});
        window_returns.clear();
        window_cw = window_cw_ok = window_grad = 0;
        window_loss = {};
      }
    }
    if (replay.size() < std::max(cfg.batch_size, cfg.warmup_steps)) continue;
    for (std::size_t g = 0; g < cfg.gradient_steps; ++g) {
      batch.clear();
      for (auto idx : replay.sample(rng, cfg.batch_size)) batch.push_back(replay[idx]);
      auto l = learner.gradient_step(batch, rng);
      window_loss.q1 += l.q1;
      window_loss.q2 += l.q2;
      window_loss.pi += l.pi;
      window_loss.entropy += l.entropy;
      ++window_grad;
    }
  }
  res.selector = learner.selector();
  res.critics = learner.critics();
  res.replay_size = replay.size();
  return res;
}

}  // namespace adapam
