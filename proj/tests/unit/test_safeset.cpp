#include <cmath>
#include <memory>
#include <sstream>

#include "doctest.h"
#include "lmpc/oracles.hpp"
#include "lmpc/safeset.hpp"

using namespace lmpc;

namespace {

GoalRegion origin_goal() {
  GoalRegion g;
  g.id = "G0";
  g.center = {0.0, 0.0};
  g.radius = 1.0;
  g.state_dim = 4;
  return g;
}

Trajectory line(double x0, int n, const GoalRegion& g, double y = 0.0) {
  Trajectory t;
  for (int i = 0; i <= n; ++i) {
    t.states.push_back(StateVec{x0 + i, y, 1.0, 0.0});
    if (i < n) {
      t.controls.push_back(ControlVec{0.0, 0.0});
      t.disturbances.push_back(DisturbanceVec{0.0, 0.0});
    }
  }
  relabel(t, g);
  return t;
}

}  // namespace

TEST_CASE("store grows by whole trajectories") {
  auto env = std::make_shared<PointMassEnv>();
  SafeSetStore store(env);
  const auto g = origin_goal();
  std::vector<Trajectory> batch;
  for (int r = 0; r < 5; ++r) batch.push_back(line(-50.0 - r, 50, g, 12.0));
  CHECK(store.add_rollouts("G0", 0, batch) == 5 * 51);
  CHECK(store.size("G0") == 255);
  CHECK(store.add_rollouts("G0", 1, std::span<const Trajectory>{}) == 0);
  CHECK(store.size("G0") == 255);
  CHECK(store.size("G0", 0) == 255);
  CHECK(store.size("G1") == 0);
  CHECK_FALSE(store.has_goal("G1"));
}

TEST_CASE("store rejects violating states and keeps iteration order") {
  auto env = std::make_shared<PointMassEnv>();
  SafeSetStore store(env);
  const auto g = origin_goal();
  std::vector<Trajectory> a{line(-40.0, 30, g)};  // crosses the obstacle
  const auto added = store.add_rollouts("G0", 0, a);
  CHECK(added < 31);
  for (const auto& s : store.states("G0")) CHECK(env->state_ok(s));
  std::vector<Trajectory> b{line(5.0, 3, g)};
  store.add_rollouts("G0", 2, b);
  CHECK(store.size("G0", 1) == added);
  CHECK(store.last_iteration("G0") == 2);
  std::vector<Trajectory> c{line(5.0, 3, g)};
  CHECK_THROWS_AS(store.add_rollouts("G0", 1, c), ContractViolation);
}

TEST_CASE("store csv round trip") {
  auto env = std::make_shared<PointMassEnv>();
  SafeSetStore store(env);
  const auto g = origin_goal();
  std::vector<Trajectory> batch{line(-60.0, 5, g), line(1.0 / 3.0, 4, g)};
  store.add_rollouts("G0", 0, batch);
  std::stringstream ss;
  store.write_csv(ss);
  const auto back = SafeSetStore::read_csv(ss, env);
  REQUIRE(back.size("G0") == store.size("G0"));
  for (std::size_t i = 0; i < store.size("G0"); ++i) {
    CHECK(back.states("G0")[i] == store.states("G0")[i]);
  }
}

TEST_CASE("tophat density boundaries") {
  auto env = std::make_shared<PointMassEnv>();
  SafeSetStore store(env);
  const StateVec s{-50.0, 0.0, 0.0, 0.0};
  std::vector<StateVec> one{s};
  store.add_states("G0", 0, one);
  DensityModel d(store, "G0", 0, 2.0, origin_goal());
  CHECK(d.is_safe(s));
  CHECK(d.is_safe(StateVec{-48.0, 0.0, 0.0, 0.0}));
  CHECK_FALSE(d.is_safe(StateVec{-48.0 + 1e-6, 0.0, 0.0, 0.0}));
  CHECK(d.is_safe(StateVec{0.2, 0.2, 9.0, 9.0}));  // goal branch
  CHECK(d.density(StateVec{0.0, 0.0, 0.0, 0.0}) == 1.0);
  // velocity counts in the metric
  CHECK_FALSE(d.is_safe(StateVec{-50.0, 0.0, 2.5, 0.0}));
}

TEST_CASE("density model ignores later iterations") {
  auto env = std::make_shared<PointMassEnv>();
  SafeSetStore store(env);
  std::vector<StateVec> a{StateVec{-50.0, 0.0, 0.0, 0.0}}, b{StateVec{-60.0, 0.0, 0.0, 0.0}};
  store.add_states("G0", 0, a);
  store.add_states("G0", 1, b);
  DensityModel d0(store, "G0", 0, 2.0, std::nullopt);
  DensityModel d1(store, "G0", 1, 2.0, std::nullopt);
  CHECK_FALSE(d0.is_safe(b[0]));
  CHECK(d1.is_safe(b[0]));
  CHECK(d1.is_safe(a[0]));
}

TEST_CASE("density agrees with a linear scan") {
  auto env = std::make_shared<PointMassEnv>();
  SafeSetStore store(env);
  RngStream rng(11, "scan");
  std::vector<StateVec> states;
  for (int i = 0; i < 500; ++i) {
    states.push_back(StateVec{-60 + 60 * rng.uniform(), 12 + 5 * rng.uniform(),
                              4 * rng.uniform() - 2, 4 * rng.uniform() - 2});
  }
  store.add_states("G0", 0, states);
  const auto g = origin_goal();
  DensityModel d(store, "G0", 0, 2.0, g);
  const auto stored = store.states("G0");
  for (int q = 0; q < 1000; ++q) {
    StateVec x{-62 + 64 * rng.uniform(), 10 + 8 * rng.uniform(), 4 * rng.uniform() - 2,
               4 * rng.uniform() - 2};
    const auto n = oracle::count_within(*env, stored, x.span(), 2.0);
    CHECK(d.index().count_within(x.span(), 2.0) == n);
    CHECK(d.is_safe(x) == oracle::is_safe(*env, stored, g, x.span(), 2.0));
  }
}

TEST_CASE("goal-conditioned prefixes") {
  auto g = origin_goal();
  SUBCASE("entering at step 12 of 50 keeps 13 states") {
    auto t = line(-13.0, 50, g);
    std::vector<Trajectory> v{t};
    const auto p = goal_conditioned_prefixes(v, g);
    REQUIRE(p.size() == 1);
    CHECK(p[0].states.size() == 13);
    CHECK(p[0].states.back()[0] == doctest::Approx(-1.0));
  }
  SUBCASE("never entering is dropped") {
    std::vector<Trajectory> v{line(-100.0, 20, g)};
    CHECK(goal_conditioned_prefixes(v, g).empty());
  }
  SUBCASE("lengths match a first-entry scan") {
    GoalRegion g1 = g;
    g1.id = "G1";
    g1.center = {-25.0, 0.0};
    g1.radius = 3.0;
    RngStream rng(5, "prefix");
    std::vector<Trajectory> v;
    for (int k = 0; k < 40; ++k) v.push_back(line(-60.0 + 40.0 * rng.uniform(), 50, g));
    const auto p = goal_conditioned_prefixes(v, g1);
    std::size_t i = 0;
    for (const auto& t : v) {
      const int e = oracle::first_entry(t, g1);
      if (e < 0) continue;
      REQUIRE(i < p.size());
      CHECK(p[i].states.size() == static_cast<std::size_t>(e) + 1);
      CHECK(p[i].goal_id == "G1");
      if (e > 0) CHECK(p[i].stage_costs.back() == 1.0);
      ++i;
    }
    CHECK(i == p.size());
  }
}
