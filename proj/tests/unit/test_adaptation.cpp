#include <cmath>
#include <memory>
#include <sstream>

#include "doctest.h"
#include "lmpc/adaptation.hpp"
#include "lmpc/oracles.hpp"

using namespace lmpc;

namespace {

GoalRegion origin_goal(const std::string& id = "G0") {
  GoalRegion g;
  g.id = id;
  g.center = {0.0, 0.0};
  g.radius = 1.0;
  g.state_dim = 4;
  return g;
}

std::shared_ptr<PointMassEnv> quiet_point_mass() {
  PointMassEnv::Params p;
  p.sigma = 0.0;
  return std::make_shared<PointMassEnv>(p);
}

ExpansionSpec toward(double x, double y) {
  ExpansionSpec s;
  s.target = StateVec{x, y, 0.0, 0.0};
  return s;
}

// Walks along y = 12 from x0 to the goal column, then drops into the goal.
Trajectory walk(double x0, int n, const GoalRegion& g, int iteration) {
  Trajectory t;
  for (int i = 0; i <= n; ++i) {
    const double x = std::min(0.0, x0 + 2.0 * i);
    const double y = x < 0.0 ? 12.0 : 0.0;
    t.states.push_back(StateVec{x, y, 0.0, 0.0});
    if (i < n) {
      t.controls.push_back(ControlVec{0.0, 0.0});
      t.disturbances.push_back(DisturbanceVec(4, 0.0));
    }
  }
  relabel(t, g);
  t.iteration = iteration;
  return t;
}

CemParams small_cem() {
  CemParams p;
  p.pop_size = 200;
  p.num_elites = 20;
  p.num_iters = 4;
  p.num_noise_rollouts = 1;
  return p;
}

}  // namespace

TEST_CASE("candidate start is the stored state closest to the target") {
  auto env = quiet_point_mass();
  SafeSetStore store(env);
  std::vector<StateVec> two{StateVec{0, 0, 0, 0}, StateVec{-10, 0, 0, 0}};
  store.add_states("G0", 0, two);
  CHECK(select_candidate_start(store, "G0", toward(-70, 0)) == StateVec{-10, 0, 0, 0});

  SafeSetStore single(env);
  std::vector<StateVec> one{StateVec{5, 5, 1, 1}};
  single.add_states("G0", 0, one);
  CHECK(select_candidate_start(single, "G0", toward(-70, 0)) == one[0]);

  SafeSetStore many(env);
  RngStream rng(31, "cand");
  std::vector<StateVec> pts;
  for (int i = 0; i < 200; ++i) {
    pts.push_back(StateVec{-60 + 60 * rng.uniform(), 20 * rng.uniform() - 10, 0.0, 0.0});
  }
  pts.push_back(pts[17]);  // duplicate: tie goes to the earlier index
  many.add_states("G0", 0, pts);
  const auto spec = toward(-70, 0);
  std::vector<double> cost;
  for (const auto& p : many.states("G0")) cost.push_back(expansion_cost(*env, spec, p.span()));
  const auto ranked = rank_candidate_starts(many, "G0", spec, 5);
  CHECK(ranked.front() == oracle::argmin_scan(cost));
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(cost[ranked[i - 1]] <= cost[ranked[i]]);

  SafeSetStore empty(env);
  CHECK_THROWS_AS(select_candidate_start(empty, "G0", spec), ConfigError);
}

TEST_CASE("expansion cost metrics") {
  auto env = quiet_point_mass();
  CHECK(expansion_cost(*env, toward(-70, 0), std::vector<double>{-67, 4, 9, 9}) ==
        doctest::Approx(5.0));
  PendulumEnv pend;
  ExpansionSpec a;
  a.metric = ExpansionMetric::Angle;
  a.target = StateVec{0.0, 0.0};
  CHECK(expansion_cost(pend, a, std::vector<double>{6.0, 3.0}) ==
        doctest::Approx(2 * std::numbers::pi - 6.0));
  ReacherEnv reacher;
  ExpansionSpec e;
  e.metric = ExpansionMetric::EndEffector;
  e.target = StateVec(7, 0.0);
  std::vector<double> up(7, 0.0);
  up[0] = std::numbers::pi / 2;
  CHECK(expansion_cost(reacher, e, up) == doctest::Approx(std::sqrt(98.0)));
}

TEST_CASE("exploration objective matches an independent simulation") {
  auto env = quiet_point_mass();
  SafeSetStore store(env);
  std::vector<StateVec> band;
  for (int i = 0; i < 60; ++i) band.push_back(StateVec{-70.0 + 0.5 * i, 1.33, 0.0, 0.0});
  store.add_states("G0", 0, band);
  auto density = std::make_shared<DensityModel>(store, "G0", 0, 2.0, origin_goal());
  auto spec = toward(-70, 0);
  spec.exploration_horizon = 10;
  const StateVec start{-42.3, 1.33, 0.0, 0.0};
  RngStream rng(32, "explore");
  const auto plan = exploration_optimize(env, density, spec, start, small_cem(), rng);

  auto simulate = [&](const ControlSequence& useq) {
    double px = start[0], py = start[1], vx = 0.0, vy = 0.0, cost = 0.0;
    for (const auto& u : useq) {
      cost += std::hypot(px + 70.0, py);
      double fx = u[0], fy = u[1];
      const double n = std::hypot(fx, fy);
      if (n > 1.0) fx /= n, fy /= n;
      const double nvx = vx + fx - 0.2 * vx, nvy = vy + fy - 0.2 * vy;
      px += vx;
      py += vy;
      vx = nvx;
      vy = nvy;
    }
    double best = 1e300;
    for (const auto& s : band) {
      best = std::min(best, std::pow(px - s[0], 2) + std::pow(py - s[1], 2) + vx * vx + vy * vy);
    }
    return std::pair{cost + (best <= 4.0 ? 0.0 : kTerminalPenalty), px};
  };
  const auto [cost, final_x] = simulate(plan.controls);
  CHECK(plan.objective == doctest::Approx(cost).epsilon(1e-12));
  const auto [stay, stay_x] = simulate(ControlSequence(10, ControlVec(2, 0.0)));
  CHECK(plan.objective < stay);
  CHECK(final_x < stay_x);
  CHECK(plan.breakdown.terminal_misses == 0);
}

TEST_CASE("target already in the safe set is accepted at once") {
  auto env = quiet_point_mass();
  SafeSetStore store(env);
  std::vector<StateVec> pts{StateVec{-50, 0, 0, 0}, StateVec{-70, 0, 0, 0}};
  store.add_states("G0", 0, pts);
  const auto g = origin_goal();
  auto density = std::make_shared<DensityModel>(store, "G0", 0, 2.0, g);
  auto spec = toward(-70, 0);
  spec.exploration_horizon = 5;
  spec.batch = 3;
  RngStream rng(33, "accept");
  const auto out = attempt_expansion(env, store, g, density, spec, small_cem(), 15,
                                     StateVec{-50, 0, 0, 0}, rng);
  CHECK(out.accepted);
  CHECK(std::hypot(out.candidate[0] + 70.0, out.candidate[1]) <= 2.0);
  CHECK(out.mean_exploration_cost < 1.0);
  CHECK(out.exploration.size() == 3);
  CHECK(expansion_batch_safe(*env, *density, out.exploration));
  CHECK(density->is_safe(out.next_start));
}

TEST_CASE("batch with an unsafe terminal is rejected") {
  auto env = quiet_point_mass();
  SafeSetStore store(env);
  std::vector<StateVec> pts{StateVec{-50, 0, 0, 0}};
  store.add_states("G0", 0, pts);
  DensityModel density(store, "G0", 0, 2.0, origin_goal());
  Trajectory ok, off;
  ok.states = {StateVec{-51, 0, 0, 0}, StateVec{-50, 0, 0, 0}};
  off.states = {StateVec{-50, 0, 0, 0}, StateVec{-60, 0, 0, 0}};
  for (auto* t : {&ok, &off}) {
    t->controls = {ControlVec(2, 0.0)};
    t->disturbances = {DisturbanceVec(4, 0.0)};
    t->stage_costs = {1.0};
  }
  std::vector<Trajectory> good{ok}, bad{ok, off};
  CHECK(expansion_batch_safe(*env, density, good));
  CHECK_FALSE(expansion_batch_safe(*env, density, bad));
  CHECK_FALSE(expansion_batch_safe(*env, density, std::span<const Trajectory>{}));
}

TEST_CASE("self-transfer reproduces the stored value") {
  auto env = quiet_point_mass();
  const auto g0 = origin_goal();
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 6; ++k) trajs.push_back(walk(-40.0 + k, 30, g0, k / 3));
  SafeSetStore store(env);
  ValueFunctionBank bank(50.0);
  bank.set_goal(g0);
  ValueConfig vc;
  vc.kind = ValueKind::Nonparametric;
  for (int it = 0; it < 2; ++it) {
    std::span<const Trajectory> group(trajs.data() + 3 * it, 3);
    store.add_rollouts("G0", it, group);
    RngStream r(34, "fit");
    bank.add("G0", it, fit_iteration_value(env, group, g0, vc, r));
  }
  const auto g1 = origin_goal("G1");
  RngStream rng(35, "transfer");
  const auto res = transfer_goal(store, bank, g1, trajs, vc, 2.0, rng);
  REQUIRE(res.prefixes.size() == trajs.size());
  CHECK_FALSE(res.needs_expansion);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const int e = oracle::first_entry(trajs[i], g0);
    CHECK(res.prefixes[i].states.size() == static_cast<std::size_t>(e) + 1);
  }
  for (const auto& t : trajs) {
    for (const auto& s : t.states) {
      const double a = bank.evaluate_V("G0", s.span(), 1);
      const double b = bank.evaluate_V("G1", s.span(), 1);
      CHECK(std::fabs(a - b) <= 2.0);
    }
  }
  CHECK_THROWS_AS(transfer_goal(store, bank, g1, trajs, vc, 2.0, rng), ContractViolation);
}

TEST_CASE("transfer to an unreached goal needs expansion") {
  auto env = quiet_point_mass();
  const auto g0 = origin_goal();
  std::vector<Trajectory> trajs{walk(-40.0, 30, g0, 0)};
  SafeSetStore store(env);
  store.add_rollouts("G0", 0, trajs);
  ValueFunctionBank bank(50.0);
  bank.set_goal(g0);
  GoalRegion far = origin_goal("far");
  far.center = {100.0, 100.0};
  RngStream rng(36, "far");
  const auto res = transfer_goal(store, bank, far, trajs, ValueConfig{}, 2.0, rng);
  CHECK(res.prefixes.empty());
  CHECK(res.needs_expansion);
  CHECK(res.density->is_safe(StateVec{100, 100, 0, 0}));
  CHECK_FALSE(res.density->is_safe(StateVec{-40, 12, 0, 0}));
}

TEST_CASE("exploration augmentation") {
  auto env = quiet_point_mass();
  const auto g = origin_goal();
  SafeSetStore store(env);
  auto task = walk(-10.0, 10, g, 1);  // reaches the goal after 5 steps
  Trajectory head;
  for (int i = 0; i <= 3; ++i) {
    head.states.push_back(StateVec{-16.0 + 2.0 * i, 12.0, 0.0, 0.0});
    if (i < 3) {
      head.controls.push_back(ControlVec(2, 0.0));
      head.disturbances.push_back(DisturbanceVec(4, 0.0));
    }
  }
  relabel(head, g);
  task.states.front() = head.states.back();
  std::vector<StateVec> known{StateVec{-10, 12, 0, 0}};
  store.add_states("G0", 0, known);
  DensityModel density(store, "G0", 0, 2.0, g);
  std::vector<Trajectory> ex{head}, tasks{task};

  SUBCASE("disabled leaves the store untouched") {
    std::stringstream before, after;
    store.write_csv(before);
    const auto r = augment_with_exploration(store, g, 1, density, ex, tasks, false);
    store.write_csv(after);
    CHECK(before.str() == after.str());
    CHECK(r.composed.empty());
    CHECK(r.states_added == 0);
  }
  SUBCASE("labels count steps outside the goal to the composed end") {
    const auto r = augment_with_exploration(store, g, 1, density, ex, tasks, true);
    REQUIRE(r.composed.size() == 1);
    CHECK(r.composed[0].states.size() == 3 + 11);
    REQUIRE(r.exploration_labels.labels.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(r.exploration_labels.labels[i] == 3 - i + 5);
    CHECK(r.states_added == 4);
  }
  SUBCASE("unsafe exploration terminal is rejected") {
    std::vector<Trajectory> stray{head};
    stray[0].states.back() = StateVec{-30, 30, 0, 0};
    std::vector<Trajectory> t2{task};
    t2[0].states.front() = stray[0].states.back();
    const auto r = augment_with_exploration(store, g, 1, density, stray, t2, true);
    CHECK(r.rejected == 1);
    CHECK(r.composed.empty());
  }
}

TEST_CASE("compose requires matching endpoints") {
  const auto g = origin_goal();
  auto a = walk(-10.0, 3, g, 0);
  auto b = walk(-20.0, 3, g, 0);
  CHECK_THROWS_AS(compose_trajectories(a, b), ContractViolation);
  auto c = walk(-4.0, 3, g, 0);
  const auto ac = compose_trajectories(a, c);
  CHECK(ac.states.size() == 7);
  CHECK(ac.length() == 6);
}
