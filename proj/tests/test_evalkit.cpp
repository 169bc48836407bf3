#include <gtest/gtest.h>

#include <set>
#include <stdexcept>

#include "adapam/evalkit.hpp"
#include "support.hpp"

using namespace adapam;
using namespace adapam::testing;

namespace {

struct Fixture {
  Env env = Env::make("coop_spread");
  VictimPolicy victim;
  ProxyPolicy proxies;
  SelectorPolicy selector;

  Fixture() {
    const auto& s = env.spec();
    std::vector<Network> v, p;
    for (std::size_t i = 0; i < s.n_agents; ++i) {
      v.push_back(Network::create(small_spec(s.obs_dim, s.action_count), derive_seed(1, i)));
      p.push_back(Network::create(small_spec(s.obs_dim, s.action_count), derive_seed(2, i)));
    }
    victim = VictimPolicy::from_networks(v);
    proxies.agents = p;
    selector = SelectorPolicy::create(s.state_dim, s.n_agents, s.action_count, {8}, Activation::tanh, 3);
  }

  AttackArtifacts artifacts() const { return {&selector, &proxies}; }

  RunSummary run(Method m, double rate, std::size_t episodes = 6, std::uint64_t seed = 5) const {
    AttackRunConfig c;
    c.method = m;
    c.rate = rate;
    c.episodes = episodes;
    c.seed = seed;
    c.cw.max_iters = 30;
    return run_attack(env, victim, c, artifacts());
  }
};

std::set<std::pair<std::size_t, int>> attacked_steps(const RunSummary& r) {
  std::set<std::pair<std::size_t, int>> out;
  for (std::size_t e = 0; e < r.logs.size(); ++e)
    for (const auto& st : r.logs[e].steps)
      if (!st.attacks.empty()) out.insert({e, st.t});
  return out;
}

}  // namespace

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::none, Method::adapam, Method::random_all, Method::fixed_targeted, Method::direct_control})
    EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("fgsm"), ConfigError);
}

TEST(RunAttack, GateSelectsTheSameTimestepsForEveryMethod) {
  Fixture f;
  auto reference = attacked_steps(f.run(Method::random_all, 0.4));
  EXPECT_GT(reference.size(), 20u);
  EXPECT_LT(reference.size(), 100u);
  for (Method m : {Method::adapam, Method::fixed_targeted, Method::direct_control})
    EXPECT_EQ(attacked_steps(f.run(m, 0.4)), reference) << to_string(m);
}

TEST(RunAttack, RateEndpoints) {
  Fixture f;
  RunSummary clean = f.run(Method::none, 1.0);
  RunSummary zero = f.run(Method::adapam, 0.0);
  EXPECT_EQ(zero.attacked_pairs, 0u);
  EXPECT_EQ(zero.episode_rewards, clean.episode_rewards);
  RunSummary full = f.run(Method::adapam, 1.0);
  EXPECT_EQ(full.attacked_pairs, 6u * 25u);
  EXPECT_EQ(full.targeted_attacks, full.attacked_pairs);
  RunSummary noise = f.run(Method::random_all, 1.0);
  EXPECT_EQ(noise.attacked_pairs, 3u * 6u * 25u);
  EXPECT_EQ(noise.targeted_attacks, 0u);
}

TEST(RunAttack, PerturbationsRespectBudgetAndStealthReportMatchesLogs) {
  Fixture f;
  for (Method m : {Method::adapam, Method::random_all, Method::fixed_targeted}) {
    RunSummary r = f.run(m, 0.7);
    StealthReport s = stealth_report(r);
    ASSERT_FALSE(s.linf.empty());
    EXPECT_LE(s.max_linf, 0.3);
    EXPECT_LE(s.p50_linf, s.p95_linf);
    EXPECT_LE(s.p95_linf, s.max_linf);
    for (const auto& ep : r.logs)
      for (const auto& st : ep.steps)
        for (const auto& a : st.attacks) EXPECT_NEAR(a.linf, linf_distance(st.observations[a.agent], *a.perturbed_obs), 1e-15);
  }
  EXPECT_TRUE(stealth_report(f.run(Method::direct_control, 1.0)).linf.empty());
}

TEST(RunAttack, FixedTargetedAlwaysHitsAgentZero) {
  Fixture f;
  RunSummary r = f.run(Method::fixed_targeted, 1.0);
  for (const auto& ep : r.logs)
    for (const auto& st : ep.steps) {
      ASSERT_EQ(st.attacks.size(), 1u);
      EXPECT_EQ(st.attacks[0].agent, 0u);
      EXPECT_EQ(*st.attacks[0].malicious_action,
                argmin(softmax(f.proxies.agents[0].forward(st.observations[0]))));
    }
}

TEST(RunAttack, DirectControlOverridesActionAndIsNotScoredAsTargeted) {
  Fixture f;
  RunSummary r = f.run(Method::direct_control, 1.0);
  for (const auto& ep : r.logs)
    for (const auto& st : ep.steps) {
      ASSERT_EQ(st.attacks.size(), 1u);
      EXPECT_TRUE(st.attacks[0].action_override);
      EXPECT_EQ(st.actions[0], *st.attacks[0].malicious_action);
    }
  EXPECT_EQ(r.targeted_attacks, 0u);
}

TEST(RunAttack, DeterministicSelfConsistentAndValidated) {
  Fixture f;
  RunSummary a = f.run(Method::adapam, 0.5), b = f.run(Method::adapam, 0.5);
  EXPECT_EQ(a.logs, b.logs);
  EXPECT_TRUE(self_consistent(a));
  a.mean_reward += 1e-9;
  EXPECT_FALSE(self_consistent(a));

  AttackRunConfig c;
  c.method = Method::adapam;
  EXPECT_THROW(run_attack(f.env, f.victim, c, {}), ConfigError);
  c.method = Method::fixed_targeted;
  EXPECT_THROW(run_attack(f.env, f.victim, c, {}), ConfigError);
  c.rate = 1.5;
  EXPECT_THROW(run_attack(f.env, f.victim, c, f.artifacts()), ConfigError);
}

TEST(Detector, ConfusionCountsMatchHandTally) {
  Fixture f;
  const auto& s = f.env.spec();
  Detector det;
  for (std::size_t i = 0; i < s.n_agents; ++i) {
    Network n = Network::create(small_spec(s.state_dim, s.action_count), 9);
    n.params.at(n.params.size() - 2).data.assign(n.params.at(n.params.size() - 2).size(), 0.0);
    det.agents.push_back(n);
  }
  RunSummary r = f.run(Method::fixed_targeted, 0.5);
  const std::size_t pairs = 6 * 25 * 3;

  det.threshold = 0.5;  // every uniform score 1/6 is flagged
  DetectionReport all = detect(det, f.env, r.logs);
  EXPECT_EQ(all.tp, r.attacked_pairs);
  EXPECT_EQ(all.fp, pairs - r.attacked_pairs);
  EXPECT_EQ(all.fn + all.tn, 0u);
  double precision = static_cast<double>(r.attacked_pairs) / pairs;
  EXPECT_NEAR(all.f1, 2.0 * precision / (precision + 1.0), 1e-12);

  det.threshold = 0.1;  // nothing flagged
  DetectionReport none = detect(det, f.env, r.logs);
  EXPECT_EQ(none.tp + none.fp, 0u);
  EXPECT_EQ(none.fn, r.attacked_pairs);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_THROW(detect(det, f.env, {}), ArgumentError);
}

TEST(Detector, ThresholdIsLowQuantileOfCleanValidationScores) {
  Fixture f;
  auto clean = rollout(f.env, f.victim, 30, 11).episodes;
  DetectorConfig cfg;
  cfg.epochs = 10;
  cfg.hidden = {16};
  cfg.seed = 2;
  Detector det = train_detector(f.env, clean, cfg);
  EXPECT_DOUBLE_EQ(det.threshold, stats::quantile(det.validation_scores, 0.05));
  EXPECT_EQ(det.validation_scores.size(), 6u * 25u * 3u);
  for (double a : det.validation_accuracy) EXPECT_GT(a, 0.3);

  DetectionReport r = detect(det, f.env, rollout(f.env, f.victim, 20, 12).episodes);
  EXPECT_EQ(r.tp, 0u);
  EXPECT_EQ(r.f1, 0.0);
  double fpr = static_cast<double>(r.fp) / static_cast<double>(r.fp + r.tn);
  EXPECT_LT(fpr, 0.2);

  clean.resize(5);
  EXPECT_THROW(train_detector(f.env, clean, cfg), ArgumentError);
}

TEST(ParallelMap, KeepsOrderAndPropagatesErrors) {
  std::function<int(std::size_t)> sq = [](std::size_t i) { return static_cast<int>(i * i); };
  auto serial = parallel_map<int>(50, 1, sq);
  auto threaded = parallel_map<int>(50, 4, sq);
  EXPECT_EQ(serial, threaded);
  EXPECT_EQ(threaded[7], 49);
  std::function<int(std::size_t)> boom = [](std::size_t i) -> int {
    if (i == 3) throw std::runtime_error("cell 3");
    return 0;
  };
  EXPECT_THROW(parallel_map<int>(10, 3, boom), std::runtime_error);
}

TEST(Sweep, RowsMatchIndividualRunsAndWorkerCountIsIrrelevant) {
  Fixture f;
  AttackRunConfig base;
  base.episodes = 3;
  base.cw.max_iters = 20;
  std::vector<Method> methods{Method::random_all, Method::adapam};
  Vec rates{0.5, 1.0};
  std::vector<std::uint64_t> seeds{1, 2};
  SweepResult one = sweep_rate(f.env, f.victim, methods, rates, seeds, base, f.artifacts(), 1);
  SweepResult two = sweep_rate(f.env, f.victim, methods, rates, seeds, base, f.artifacts(), 2);
  ASSERT_EQ(one.rows.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(one.rows[k].decrease_per_seed, two.rows[k].decrease_per_seed);

  AttackRunConfig c = base;
  c.method = Method::adapam;
  c.rate = 0.5;
  c.seed = 2;
  double attacked = run_attack(f.env, f.victim, c, f.artifacts()).mean_reward;
  EXPECT_DOUBLE_EQ(one.rows[2].decrease_per_seed[1], one.clean.at(2).mean_reward - attacked);
}
