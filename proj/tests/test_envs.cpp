#include <gtest/gtest.h>

#include "adapam/envs.hpp"

using namespace adapam;

namespace {

GlobalState coop_state() {
  // agents (0.1,0.1) (0.15,0.1) (0.9,0.9); landmarks (0.1,0.1) (0.5,0.5) (0.9,0.2)
  return {{0.1, 0.1, 0.15, 0.1, 0.9, 0.9, 0.1, 0.1, 0.5, 0.5, 0.9, 0.2}, 0};
}

/// Units as (x, y, hp, alive) blocks: three allies then three enemies.
GlobalState grid_state(std::vector<std::array<double, 4>> units, int t = 0) {
  GlobalState s{Vec(24, 0.0), t};
  for (std::size_t u = 0; u < units.size(); ++u)
    for (std::size_t k = 0; k < 4; ++k) s.vector[4 * u + k] = units[u][k];
  return s;
}

void expect_in_box(const Vec& v) {
  for (double x : v) {
    EXPECT_GE(x, kObsLow);
    EXPECT_LE(x, kObsHigh);
  }
}

}  // namespace

TEST(CoopSpread, RewardMatchesHandComputation) {
  CoopSpread env;
  // Reference: sum of per-landmark nearest distances plus one colliding pair.
  EXPECT_NEAR(CoopSpread::reward_of(coop_state().vector), -1.7315072906367326, 1e-12);
  std::vector<std::size_t> joint{3, 0, 2};  // +y, stay, -x
  StepResult r = env.step(coop_state(), joint);
  EXPECT_NEAR(r.reward, -1.7832907330176424, 1e-12);
  EXPECT_NEAR(r.next_state.vector[1], 0.15, 1e-15);
  EXPECT_NEAR(r.next_state.vector[4], 0.85, 1e-15);
  EXPECT_FALSE(r.done);
  EXPECT_FALSE(r.win.has_value());
}

TEST(CoopSpread, PositionsClipToUnitSquareAndHorizonEnds) {
  CoopSpread env;
  GlobalState s = coop_state();
  s.vector[0] = 1.0;
  s.t = 24;
  StepResult r = env.step(s, std::vector<std::size_t>{1, 0, 0});
  EXPECT_EQ(r.next_state.vector[0], 1.0);
  EXPECT_TRUE(r.done);
}

TEST(CoopSpread, ObservationLayout) {
  CoopSpread env;
  Observation o = env.observe(coop_state(), 1);
  ASSERT_EQ(o.vector.size(), 12u);
  EXPECT_NEAR(o.vector[0], -0.7, 1e-12);
  EXPECT_NEAR(o.vector[2], -0.05, 1e-12);    // landmark 0 relative x
  EXPECT_NEAR(o.vector[8], -0.05, 1e-12);    // agent 0 relative x
  EXPECT_NEAR(o.vector[10], 0.75, 1e-12);    // agent 2 relative x
  EXPECT_THROW(env.observe(coop_state(), 3), ArgumentError);
}

TEST(Envs, RandomRollouts_ObservationsAndFeaturesStayInBox) {
  for (const char* name : {"coop_spread", "grid_battle"}) {
    Env env = Env::make(name);
    const auto& spec = env.spec();
    Rng rng(3);
    for (int ep = 0; ep < 30; ++ep) {
      GlobalState s = env.reset(rng.bits());
      for (int t = 0; t < spec.horizon; ++t) {
        for (const auto& o : env.observe_all(s)) {
          ASSERT_EQ(o.vector.size(), spec.obs_dim);
          expect_in_box(o.vector);
        }
        Vec f = env.features(s);
        ASSERT_EQ(f.size(), spec.state_dim);
        expect_in_box(f);
        std::vector<std::size_t> joint(spec.n_agents);
        for (auto& a : joint) a = rng.index(spec.action_count);
        StepResult r = env.step(s, joint);
        ASSERT_TRUE(std::isfinite(r.reward));
        s = r.next_state;
        if (r.done) break;
      }
    }
  }
}

TEST(Envs, ResetIsDeterministicPerSeed) {
  for (const char* name : {"coop_spread", "grid_battle"}) {
    Env env = Env::make(name);
    EXPECT_EQ(env.reset(17), env.reset(17));
    EXPECT_FALSE(env.reset(17) == env.reset(18));
  }
  EXPECT_THROW(Env::make("smac"), ConfigError);
}

TEST(Envs, JointActionValidation) {
  Env env = Env::make("grid_battle");
  GlobalState s = env.reset(1);
  EXPECT_THROW(env.step(s, std::vector<std::size_t>{0, 0}), ArgumentError);
  EXPECT_THROW(env.step(s, std::vector<std::size_t>{0, 0, 6}), ArgumentError);
}

TEST(GridBattle, ResetPlacesTeamsOnTheirSides) {
  GridBattle env;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Vec v = env.reset(seed).vector;
    for (std::size_t u = 0; u < 6; ++u) {
      EXPECT_EQ(GridBattle::hp(v, u), 3);
      EXPECT_TRUE(GridBattle::alive(v, u));
      if (u < 3) EXPECT_LE(GridBattle::x(v, u), 1);
      else EXPECT_GE(GridBattle::x(v, u), 6);
    }
  }
}

TEST(GridBattle, AttackHitsNearestEnemyInRange) {
  GridBattle env;
  // Ally 0 at (3,3) next to enemy 3 at (4,4); enemy 4 two cells away.
  GlobalState s = grid_state({{3, 3, 3, 1}, {0, 0, 3, 1}, {0, 7, 3, 1}, {4, 4, 3, 1}, {5, 3, 3, 1}, {7, 7, 3, 1}});
  StepResult r = env.step(s, std::vector<std::size_t>{GridBattle::kAttack, 0, 0});
  EXPECT_EQ(GridBattle::hp(r.next_state.vector, 3), 2);
  EXPECT_EQ(GridBattle::hp(r.next_state.vector, 4), 3);
  // Enemy 3 strikes back; enemy 4 is out of range and closes in along x.
  EXPECT_EQ(GridBattle::hp(r.next_state.vector, 0), 2);
  EXPECT_EQ(GridBattle::x(r.next_state.vector, 4), 4);
  EXPECT_DOUBLE_EQ(r.reward, 0.0);
}

TEST(GridBattle, AttackOutOfRangeDoesNothing) {
  GridBattle env;
  GlobalState s = grid_state({{0, 0, 3, 1}, {0, 2, 3, 1}, {0, 4, 3, 1}, {7, 7, 3, 1}, {7, 6, 3, 1}, {7, 5, 3, 1}});
  StepResult r = env.step(s, std::vector<std::size_t>{GridBattle::kAttack, 0, 0});
  EXPECT_DOUBLE_EQ(r.reward, 0.0);
  for (std::size_t e = 3; e < 6; ++e) EXPECT_EQ(GridBattle::hp(r.next_state.vector, e), 3);
}

TEST(GridBattle, EnemiesStepAlongLongerAxisAndMovesIntoOccupiedCellsAreNoOps) {
  GridBattle env;
  GlobalState s = grid_state({{0, 0, 3, 1}, {1, 0, 3, 1}, {0, 7, 3, 1}, {5, 1, 3, 1}, {7, 7, 3, 1}, {7, 6, 3, 1}});
  // Ally 0 tries to move right into ally 1: blocked.
  StepResult r = env.step(s, std::vector<std::size_t>{GridBattle::kRight, 0, 0});
  const Vec& v = r.next_state.vector;
  EXPECT_EQ(GridBattle::x(v, 0), 0);
  // Enemy 3 at (5,1): nearest ally is 1 at (1,0); |dx|=4 > |dy|=1 so it steps -x.
  EXPECT_EQ(GridBattle::x(v, 3), 4);
  EXPECT_EQ(GridBattle::y(v, 3), 1);
}

TEST(GridBattle, KillingLastEnemyWinsWithBonus) {
  GridBattle env;
  GlobalState s = grid_state({{3, 3, 3, 1}, {0, 0, 3, 1}, {0, 7, 3, 1}, {4, 3, 1, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  StepResult r = env.step(s, std::vector<std::size_t>{GridBattle::kAttack, 0, 0});
  EXPECT_TRUE(r.done);
  ASSERT_TRUE(r.win.has_value());
  EXPECT_TRUE(*r.win);
  EXPECT_DOUBLE_EQ(r.reward, 11.0);
}

TEST(GridBattle, LosingLastAllyCostsBonusAndTimeoutIsALoss) {
  GridBattle env;
  GlobalState s = grid_state({{3, 3, 1, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}, {4, 3, 3, 1}, {7, 7, 3, 1}, {7, 6, 3, 1}});
  StepResult r = env.step(s, std::vector<std::size_t>{GridBattle::kStay, 0, 0});
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(*r.win);
  EXPECT_DOUBLE_EQ(r.reward, -11.0);

  GlobalState late = grid_state({{0, 0, 3, 1}, {0, 2, 3, 1}, {0, 4, 3, 1}, {7, 7, 3, 1}, {7, 6, 3, 1}, {7, 5, 3, 1}}, 39);
  StepResult end = env.step(late, std::vector<std::size_t>{0, 0, 0});
  EXPECT_TRUE(end.done);
  EXPECT_FALSE(*end.win);
  EXPECT_DOUBLE_EQ(end.reward, 0.0);
}

TEST(GridBattle, DeadAlliesIgnoreActionsAndAreInactive) {
  GridBattle env;
  GlobalState s = grid_state({{0, 0, 3, 1}, {2, 2, 0, 0}, {0, 4, 3, 1}, {7, 7, 3, 1}, {7, 6, 3, 1}, {7, 5, 3, 1}});
  EXPECT_FALSE(env.active(s, 1));
  StepResult r = env.step(s, std::vector<std::size_t>{0, GridBattle::kUp, 0});
  EXPECT_EQ(GridBattle::y(r.next_state.vector, 1), 2);
  Observation o = env.observe(s, 0);
  EXPECT_EQ(o.vector[3], 0.0);  // dead teammate block is zeroed
  EXPECT_EQ(o.vector[6], 0.0);
}
