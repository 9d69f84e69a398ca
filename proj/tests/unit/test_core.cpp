#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "lmpc/core.hpp"

using namespace lmpc;

namespace {

GoalRegion unit_ball() {
  GoalRegion g;
  g.id = "G0";
  g.center = {0.0, 0.0};
  g.radius = 1.0;
  g.state_dim = 4;
  return g;
}

// Trajectory of n steps whose position jumps to the origin at step k.
Trajectory entering_at(int n, int k, const GoalRegion& g) {
  Trajectory t;
  for (int i = 0; i <= n; ++i) {
    const double x = i >= k ? 0.0 : -10.0;
    t.states.push_back(StateVec{x, 0.0, 0.0, 0.0});
    if (i < n) {
      t.controls.push_back(ControlVec{0.0, 0.0});
      t.disturbances.push_back(DisturbanceVec{0.0, 0.0});
    }
  }
  relabel(t, g);
  return t;
}

}  // namespace

TEST_CASE("goal membership for position goals") {
  const auto g = unit_ball();
  CHECK(goal_contains(g, StateVec{0.0, 0.0, 0.0, 0.0}));
  CHECK_FALSE(goal_contains(g, StateVec{-50.0, 0.0, 0.0, 0.0}));
  CHECK(goal_contains(g, StateVec{0.6, 0.6, 30.0, -30.0}));
  CHECK(stage_cost(g, StateVec{0.0, 0.0, 0.0, 0.0}) == 0.0);
  CHECK(stage_cost(g, StateVec{2.0, 0.0, 0.0, 0.0}) == 1.0);
}

TEST_CASE("angle goal uses wrapped distance") {
  GoalRegion g;
  g.id = "up";
  g.feature = GoalFeature::Angle;
  g.center = {0.0};
  g.radius = std::numbers::pi / 4;
  g.state_dim = 2;
  const double deg30 = std::numbers::pi / 6;
  CHECK(goal_contains(g, StateVec{deg30, 5.0}));
  CHECK(goal_contains(g, StateVec{2 * std::numbers::pi - deg30, -5.0}));
  CHECK_FALSE(goal_contains(g, StateVec{std::numbers::pi / 2, 0.0}));
}

TEST_CASE("end-effector goal follows the planar chain") {
  GoalRegion g;
  g.id = "ee";
  g.feature = GoalFeature::EndEffector;
  g.center = {0.0, 7.0};
  g.radius = 0.5;
  g.state_dim = 7;
  StateVec up(7, 0.0);
  up[0] = std::numbers::pi / 2;
  CHECK(goal_contains(g, up));
  CHECK_FALSE(goal_contains(g, StateVec(7, 0.0)));
}

TEST_CASE("cost-to-go labels") {
  const auto g = unit_ball();
  SUBCASE("entering at step k and staying gives max(k - t, 0)") {
    const auto t = entering_at(20, 7, g);
    const auto labels = cost_to_go_labels(t, g);
    REQUIRE(labels.size() == 21);
    for (int i = 0; i <= 20; ++i) CHECK(labels[i] == std::max(7 - i, 0));
  }
  SUBCASE("never reaching over T = 50 costs 50") {
    const auto t = entering_at(50, 1000, g);
    CHECK(t.total_cost() == 50.0);
    CHECK(cost_to_go_labels(t, g)[0] == 50.0);
  }
  SUBCASE("random stage costs match a hand suffix sum") {
    RngStream rng(3, "labels");
    Trajectory t;
    for (int i = 0; i <= 10; ++i) {
      const bool in = rng.uniform() < 0.5;
      t.states.push_back(StateVec{in ? 0.0 : 5.0, 0.0, 0.0, 0.0});
      if (i < 10) {
        t.controls.push_back(ControlVec{0.0, 0.0});
        t.disturbances.push_back(DisturbanceVec{0.0, 0.0});
      }
    }
    relabel(t, g);
    const auto labels = cost_to_go_labels(t, g);
    for (int s = 0; s < 10; ++s) {
      double expect = 0.0;
      for (int i = s; i < 10; ++i) expect += t.states[i][0] == 0.0 ? 0.0 : 1.0;
      CHECK(labels[s] == expect);
    }
    CHECK(labels[10] == (t.states[10][0] == 0.0 ? 0.0 : 1.0));
  }
}

TEST_CASE("wrap_angle and angle_distance") {
  const double pi = std::numbers::pi;
  CHECK(wrap_angle(-0.5) == doctest::Approx(2 * pi - 0.5));
  CHECK(wrap_angle(2 * pi) == 0.0);
  CHECK(wrap_angle(-1e-18) < 2 * pi);
  CHECK(angle_distance(0.1, 2 * pi - 0.1) == doctest::Approx(0.2));
  CHECK(angle_distance(0.0, pi) == doctest::Approx(pi));
}

TEST_CASE("rng streams are keyed by seed and label") {
  RngStream a(5, "x"), b(5, "x"), c(5, "y");
  const auto va = a.next_u64();
  CHECK(va == b.next_u64());
  CHECK(va != c.next_u64());
  RngStream d(5, "x");
  auto child = d.child("sub");
  CHECK(d.next_u64() == va);  // child() consumed nothing
  CHECK(child.next_u64() != va);
  CHECK(derive_seed(5, "x") == derive_seed(5, "x"));
  CHECK(derive_seed(5, "x") != derive_seed(6, "x"));
}

TEST_CASE("trajectory csv round trip is exact") {
  const auto g = unit_ball();
  RngStream rng(9, "csv");
  Trajectory t;
  for (int i = 0; i <= 5; ++i) {
    t.states.push_back(StateVec{rng.normal(), rng.normal(), rng.normal() * 1e-9, 1.0 / 3.0});
    if (i < 5) {
      t.controls.push_back(ControlVec{rng.normal(), rng.uniform()});
      t.disturbances.push_back(DisturbanceVec{rng.normal() * 0.01, 0.1});
    }
  }
  relabel(t, g);
  t.iteration = 4;
  std::stringstream ss;
  write_trajectory_csv(ss, t);
  const auto back = read_trajectories_csv(ss, 4, 2, 2);
  REQUIRE(back.size() == 1);
  CHECK(back[0].states == t.states);
  CHECK(back[0].controls == t.controls);
  CHECK(back[0].disturbances == t.disturbances);
  CHECK(back[0].stage_costs == t.stage_costs);
  CHECK(back[0].iteration == 4);
  CHECK(back[0].goal_id == "G0");
}

TEST_CASE("malformed trajectories are rejected") {
  Trajectory t;
  t.states = {StateVec{0.0}, StateVec{1.0}};
  CHECK_THROWS_AS(t.check_shape(), ContractViolation);
}
