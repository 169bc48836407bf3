#pragma once

// Attack-time orchestration and the three evaluation axes: performance
// degradation, perturbation magnitude, and detectability.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "adapam/envs.hpp"
#include "adapam/episode.hpp"
#include "adapam/perturber.hpp"
#include "adapam/proxy.hpp"
#include "adapam/selector.hpp"
#include "adapam/stats.hpp"
#include "adapam/victim.hpp"

namespace adapam {

enum class Method { none, adapam, random_all, fixed_targeted, direct_control };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::none: return "none";
    case Method::adapam: return "adapam";
    case Method::random_all: return "random_all";
    case Method::fixed_targeted: return "fixed_targeted";
    case Method::direct_control: return "direct_control";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::none, Method::adapam, Method::random_all, Method::fixed_targeted, Method::direct_control})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown attack method: " + s);
}

struct AttackRunConfig {
  Method method = Method::none;
  double rate = 1.0;
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  double epsilon = 0.3;
  CwConfig cw;
  bool greedy_selector = true;

  void validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("perturbation rate must lie in [0,1]");
    if (episodes == 0) throw ConfigError("attack run needs at least one episode");
    PerturbBudget{epsilon}.validate();
    cw.validate();
  }
};

/// Trained artifacts an attack may need. Non-owning.
struct AttackArtifacts {
  const SelectorPolicy* selector = nullptr;
  const ProxyPolicy* proxies = nullptr;
};

struct RunSummary {
  Method method = Method::none;
  double rate = 0.0;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  Vec episode_rewards;
  std::vector<int> episode_wins;  // empty when the env has no win flag
  double mean_reward = 0.0;
  double stderr_reward = 0.0;
  std::optional<double> win_rate;
  std::size_t attacked_pairs = 0;
  std::size_t targeted_attacks = 0;  // attacks with a malicious action and an injected observation
  double proxy_success_rate = 0.0;
  double victim_success_rate = 0.0;
  std::vector<EpisodeLog> logs;
};

namespace detail {

class MethodHook : public AttackHook {
 public:
  MethodHook(const Env& env, const AttackRunConfig& cfg, const AttackArtifacts& art)
      : env_(env), cfg_(cfg), art_(art), gate_(0), noise_(0) {}

  void begin_episode(std::size_t, std::uint64_t ep_seed) override {
    // The gate stream depends only on the episode seed, so every method
    // attacks the same timesteps.
    gate_ = Rng(derive_seed(ep_seed, 0x6a7e));
    noise_ = Rng(derive_seed(ep_seed, 0x401e, static_cast<std::uint64_t>(cfg_.method)));
  }

  void on_observe(const GlobalState& s, std::vector<Vec>& obs, std::vector<AttackNote>& notes) override {
    fired_ = gate_.bernoulli(cfg_.rate);
    if (!fired_) return;
    const PerturbBudget budget{cfg_.epsilon};
    switch (cfg_.method) {
      case Method::adapam: {
        Vec feat = env_.features(s);
        AttackDecision d = cfg_.greedy_selector ? select_greedy(*art_.selector, feat)
                                                : select(*art_.selector, feat, noise_);
        targeted(d.agent, d.action, obs, notes, budget);
        break;
      }
      case Method::fixed_targeted: {
        std::size_t a = argmin(softmax(art_.proxies->agents[0].forward(obs[0])));
        targeted(0, a, obs, notes, budget);
        break;
      }
      case Method::random_all: {
        for (std::size_t i = 0; i < obs.size(); ++i) {
          Vec clean = obs[i];
          for (auto& x : obs[i]) x = budget.apply(x, noise_.uniform(-cfg_.epsilon, cfg_.epsilon));
          AttackNote n;
          n.agent = i;
          n.linf = linf_distance(clean, obs[i]);
          n.l2 = l2_distance(clean, obs[i]);
          n.perturbed_obs = obs[i];
          notes.push_back(std::move(n));
        }
        break;
      }
      default: break;
    }
  }

  void on_act(const GlobalState&, std::vector<std::size_t>& actions, std::vector<AttackNote>& notes) override {
    if (!fired_ || cfg_.method != Method::direct_control) return;
    std::size_t a = noise_.index(env_.spec().action_count);
    actions[0] = a;
    AttackNote n;
    n.agent = 0;
    n.malicious_action = a;
    n.action_override = true;
    notes.push_back(std::move(n));
  }

 private:
  void targeted(std::size_t agent, std::size_t action, std::vector<Vec>& obs, std::vector<AttackNote>& notes,
                const PerturbBudget& budget) {
    PerturbResult pr = cw_attack(art_.proxies->agents[agent], obs[agent], action, budget, cfg_.cw);
    AttackNote n;
    n.agent = agent;
    n.malicious_action = action;
    n.linf = pr.linf;
    n.l2 = pr.l2;
    n.success_proxy = pr.success_on_proxy;
    n.perturbed_obs = pr.perturbed;
    obs[agent] = std::move(pr.perturbed);
    notes.push_back(std::move(n));
  }

  const Env& env_;
  const AttackRunConfig& cfg_;
  const AttackArtifacts& art_;
  Rng gate_, noise_;
  bool fired_ = false;
};

}  // namespace detail

/// Aggregates recomputed from per-episode records.
inline void summarize_run(RunSummary& r) {
  r.episode_rewards.clear();
  r.episode_wins.clear();
  std::size_t targeted = 0, proxy_ok = 0, victim_ok = 0, attacked = 0;
  for (const auto& ep : r.logs) {
    r.episode_rewards.push_back(ep.total_reward);
    if (ep.win) r.episode_wins.push_back(*ep.win ? 1 : 0);
    for (const auto& st : ep.steps) {
      attacked += st.attacks.size();
      for (const auto& a : st.attacks) {
        if (!a.malicious_action || a.action_override) continue;
        ++targeted;
        proxy_ok += a.success_proxy;
        victim_ok += a.success_victim;
      }
    }
  }
  r.mean_reward = stats::mean(r.episode_rewards);
  r.stderr_reward = stats::stderr_of_mean(r.episode_rewards);
  r.win_rate.reset();
  if (!r.episode_wins.empty()) {
    double w = 0.0;
    for (int x : r.episode_wins) w += x;
    r.win_rate = w / static_cast<double>(r.episode_wins.size());
  }
  r.attacked_pairs = attacked;
  r.targeted_attacks = targeted;
  r.proxy_success_rate = targeted ? static_cast<double>(proxy_ok) / static_cast<double>(targeted) : 0.0;
  r.victim_success_rate = targeted ? static_cast<double>(victim_ok) / static_cast<double>(targeted) : 0.0;
}

inline bool self_consistent(const RunSummary& r) {
  RunSummary c;
  c.logs = r.logs;
  summarize_run(c);
  return c.episode_rewards == r.episode_rewards && c.episode_wins == r.episode_wins &&
         c.mean_reward == r.mean_reward && c.stderr_reward == r.stderr_reward && c.win_rate == r.win_rate &&
         c.attacked_pairs == r.attacked_pairs && c.targeted_attacks == r.targeted_attacks &&
         c.proxy_success_rate == r.proxy_success_rate && c.victim_success_rate == r.victim_success_rate;
}

/// Runs one (method, rate, seed) cell. Each timestep an independent
/// Bernoulli(rate) gate decides whether the method attacks.
inline RunSummary run_attack(const Env& env, const VictimPolicy& victim, const AttackRunConfig& cfg,
                             const AttackArtifacts& art = {}) {
  cfg.validate();
  if (cfg.method == Method::adapam && (!art.selector || !art.proxies))
    throw ConfigError("adapam needs a trained selector and proxies");
  if (cfg.method == Method::fixed_targeted && !art.proxies) throw ConfigError("fixed_targeted needs trained proxies");
  if (art.proxies && art.proxies->agents.size() != env.spec().n_agents)
    throw ConfigError("proxy count does not match environment");

  RunSummary r;
  r.method = cfg.method;
  r.rate = cfg.rate;
  r.epsilon = cfg.epsilon;
  r.seed = cfg.seed;
  if (cfg.method == Method::none) {
    r.logs = rollout(env, victim, cfg.episodes, cfg.seed).episodes;
  } else {
    detail::MethodHook hook(env, cfg, art);
    r.logs = rollout(env, victim, cfg.episodes, cfg.seed, &hook).episodes;
  }
  summarize_run(r);
  return r;
}

// ---------------------------------------------------------------------------
// Stealth

struct StealthReport {
  Method method = Method::none;
  Vec linf;
  Vec l2;
  double mean_linf = 0.0;
  double p50_linf = 0.0;
  double p95_linf = 0.0;
  double max_linf = 0.0;
  double mean_l2 = 0.0;
};

/// Perturbation magnitudes of every injected observation in the run.
inline StealthReport stealth_report(const RunSummary& r) {
  StealthReport s;
  s.method = r.method;
  for (const auto& ep : r.logs)
    for (const auto& st : ep.steps)
      for (const auto& a : st.attacks)
        if (a.perturbed_obs) {
          s.linf.push_back(linf_distance(st.observations[a.agent], *a.perturbed_obs));
          s.l2.push_back(a.l2);
        }
  if (!s.linf.empty()) {
    s.mean_linf = stats::mean(s.linf);
    s.p50_linf = stats::quantile(s.linf, 0.5);
    s.p95_linf = stats::quantile(s.linf, 0.95);
    s.max_linf = *std::max_element(s.linf.begin(), s.linf.end());
    s.mean_l2 = stats::mean(s.l2);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Detection

struct DetectorConfig {
  std::vector<std::size_t> hidden = {64};
  Activation activation = Activation::tanh;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double validation_fraction = 0.2;
  double fp_quantile = 0.05;
  std::size_t min_episodes = 10;
  std::uint64_t seed = 0;
};

/// Per-agent classifiers predicting the victim's action from the global
/// state; a pair is flagged when the executed action's predicted
/// probability falls below `threshold`.
struct Detector {
  std::vector<Network> agents;
  double threshold = 0.0;
  Vec validation_scores;
  Vec validation_accuracy;  // per agent, top-1
  bool operator==(const Detector& o) const { return agents == o.agents && threshold == o.threshold; }
};

inline double normality_score(const Detector& det, std::span<const double> features, std::size_t agent,
                              std::size_t action) {
  return softmax(det.agents.at(agent).forward(features))[action];
}

inline Detector train_detector(const Env& env, const std::vector<EpisodeLog>& clean, const DetectorConfig& cfg) {
  if (clean.size() < cfg.min_episodes) throw ArgumentError("not enough clean episodes to train the detector");
  const auto& spec = env.spec();
  const std::size_t n = spec.n_agents;
  struct Sample {
    Vec x;
    std::size_t agent, action;
  };
  std::vector<std::size_t> order(clean.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 0xde7));
  for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
  auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.validation_fraction *
                                                                              static_cast<double>(clean.size()))));
  std::vector<Sample> train, val;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dest = k < n_val ? val : train;
    for (const auto& st : clean[order[k]].steps) {
      Vec f = env.features(GlobalState{st.state, st.t});
      for (std::size_t i = 0; i < n; ++i)
        if (st.active[i]) dest.push_back({f, i, st.actions[i]});
    }
  }

  MlpSpec ms{{spec.state_dim}, cfg.activation};
  ms.layer_sizes.insert(ms.layer_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  ms.layer_sizes.push_back(spec.action_count);
  std::vector<Trainable> nets;
  for (std::size_t i = 0; i < n; ++i) nets.emplace_back(Network::create(ms, derive_seed(cfg.seed, 0xde, i)));

  std::vector<std::vector<std::size_t>> per_agent(n);
  for (std::size_t k = 0; k < train.size(); ++k) per_agent[train[k].agent].push_back(k);
  MlpTrace tr;
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    for (std::size_t i = 0; i < n; ++i) {
      auto& idx = per_agent[i];
      for (std::size_t k = idx.size(); k > 1; --k) std::swap(idx[k - 1], idx[rng.index(k)]);
      for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
        std::size_t end = std::min(idx.size(), start + cfg.batch_size);
        ParameterSet g = nets[i].net.params.zeros_like();
        const double w = 1.0 / static_cast<double>(end - start);
        for (std::size_t k = start; k < end; ++k) {
          const auto& smp = train[idx[k]];
          nets[i].net.forward(smp.x, tr);
          HeadValue hv = evaluate_head(CrossEntropyHead{smp.action}, tr.logits(), {});
          for (auto& d : hv.d_logits) d *= w;
          mlp_backward(nets[i].net.params, ms, tr, hv.d_logits, &g);
        }
        nets[i].step(g, cfg.learning_rate);
      }
    }
  }

  Detector det;
  for (auto& t : nets) det.agents.push_back(t.net);
  Vec hits(n, 0.0), counts(n, 0.0);
  for (const auto& smp : val) {
    Vec p = softmax(det.agents[smp.agent].forward(smp.x));
    det.validation_scores.push_back(p[smp.action]);
    hits[smp.agent] += argmax(p) == smp.action ? 1.0 : 0.0;
    counts[smp.agent] += 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) det.validation_accuracy.push_back(counts[i] > 0 ? hits[i] / counts[i] : 0.0);
  if (det.validation_scores.empty()) throw ArgumentError("detector validation split is empty");
  det.threshold = stats::quantile(det.validation_scores, cfg.fp_quantile);
  return det;
}

struct DetectionReport {
  double threshold = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  Vec scores;
};

/// F1 over every (agent, timestep) pair of living agents. Positives are the
/// pairs annotated as attacked. With no true positives F1 is 0.
inline DetectionReport detect(const Detector& det, const Env& env, const std::vector<EpisodeLog>& logs) {
  if (logs.empty()) throw ArgumentError("detect needs annotated episode logs");
  DetectionReport r;
  r.threshold = det.threshold;
  const std::size_t n = env.spec().n_agents;
  for (const auto& ep : logs) {
    for (const auto& st : ep.steps) {
      if (st.active.size() != n || st.actions.size() != n) throw ArgumentError("episode log lacks per-agent records");
      Vec f = env.features(GlobalState{st.state, st.t});
      for (std::size_t i = 0; i < n; ++i) {
        if (!st.active[i]) continue;
        bool positive = std::any_of(st.attacks.begin(), st.attacks.end(), [&](const AttackNote& a) { return a.agent == i; });
        double score = normality_score(det, f, i, st.actions[i]);
        r.scores.push_back(score);
        bool flagged = score < det.threshold;
        if (flagged && positive) ++r.tp;
        else if (flagged) ++r.fp;
        else if (positive) ++r.fn;
        else ++r.tn;
      }
    }
  }
  r.precision = r.tp + r.fp ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  r.recall = r.tp + r.fn ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
  r.f1 = r.tp ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Worker pool and sweeps

/// Runs fn(0..count-1) on up to `workers` threads; results keep index order.
template <class R>
std::vector<R> parallel_map(std::size_t count, std::size_t workers, const std::function<R(std::size_t)>& fn) {
  std::vector<R> out(count);
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = fn(i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < count;) {
        try {
          out[i] = fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct SweepRow {
  Method method;
  double rate;
  Vec decrease_per_seed;  // clean mean - attacked mean, same episode seeds
  double mean_decrease = 0.0;
  double stderr_decrease = 0.0;
  Vec win_rate_decrease_per_seed;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::map<std::uint64_t, RunSummary> clean;  // by seed, logs dropped
};

inline SweepResult sweep_rate(const Env& env, const VictimPolicy& victim, const std::vector<Method>& methods,
                              const Vec& rates, const std::vector<std::uint64_t>& seeds, const AttackRunConfig& base,
                              const AttackArtifacts& art, std::size_t workers = 1) {
  SweepResult res;
  for (auto seed : seeds) {
    AttackRunConfig c = base;
    c.method = Method::none;
    c.seed = seed;
    auto r = run_attack(env, victim, c, art);
    r.logs.clear();
    res.clean[seed] = std::move(r);
  }
  struct Cell {
    Method m;
    double rate;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto m : methods)
    for (double rate : rates)
      for (auto seed : seeds) cells.push_back({m, rate, seed});
  auto runs = parallel_map<RunSummary>(cells.size(), workers, [&](std::size_t k) {
    AttackRunConfig c = base;
    c.method = cells[k].m;
    c.rate = cells[k].rate;
    c.seed = cells[k].seed;
    auto r = run_attack(env, victim, c, art);
    r.logs.clear();
    return r;
  });
  std::size_t k = 0;
  for (auto m : methods)
    for (double rate : rates) {
      SweepRow row{m, rate, {}, 0.0, 0.0, {}};
      for (auto seed : seeds) {
        const auto& clean = res.clean.at(seed);
        const auto& r = runs[k++];
        row.decrease_per_seed.push_back(clean.mean_reward - r.mean_reward);
        if (clean.win_rate && r.win_rate) row.win_rate_decrease_per_seed.push_back(*clean.win_rate - *r.win_rate);
      }
      row.mean_decrease = stats::mean(row.decrease_per_seed);
      row.stderr_decrease = stats::stderr_of_mean(row.decrease_per_seed);
      res.rows.push_back(std::move(row));
    }
  return res;
}

}  // namespace adapam
