#include <algorithm>
#include <cmath>

#include "lmpc/runner.hpp"

namespace lmpc {

namespace {

struct DemoState {
  std::size_t waypoint = 0;
  RngStream noise;
};

ControlVec navigation_control(const DemoSpec& spec, const GoalRegion& goal, DemoState& st,
                              const StateVec& x) {
  const double px = x[0], py = x[1], vx = x[2], vy = x[3];
  while (st.waypoint < spec.waypoints.size()) {
    const auto& wp = spec.waypoints[st.waypoint];
    if (std::hypot(wp[0] - px, wp[1] - py) > spec.switch_radius) break;
    ++st.waypoint;
  }
  ControlVec u(2, 0.0);
  if (st.waypoint < spec.waypoints.size()) {
    const auto& wp = spec.waypoints[st.waypoint];
    u[0] = spec.gain * (wp[0] - px) - spec.damping * vx;
    u[1] = spec.gain * (wp[1] - py) - spec.damping * vy;
  } else {
    u[0] = spec.feedback[0] * (goal.center[0] - px) - spec.feedback[1] * vx;
    u[1] = spec.feedback[0] * (goal.center[1] - py) - spec.feedback[1] * vy;
  }
  return u;
}

ControlVec reacher_control(const DemoSpec& spec, DemoState& st, const StateVec& x) {
  auto gap = [&](const std::vector<double>& wp) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::fabs(wp[i] - x[i]));
    return m;
  };
  while (st.waypoint + 1 < spec.waypoints.size() &&
         gap(spec.waypoints[st.waypoint]) <= spec.switch_radius) {
    ++st.waypoint;
  }
  const auto& wp = spec.waypoints[st.waypoint];
  ControlVec u(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) u[i] = spec.gain * (wp[i] - x[i]);
  return u;
}

}  // namespace

Policy make_demo_policy(std::shared_ptr<const Environment> env, const DemoSpec& spec,
                        const GoalRegion& goal, RngStream noise) {
  const bool reacher = env->name() == "reacher";
  if (reacher && spec.waypoints.empty()) {
    throw ConfigError("reacher demonstrator needs at least one waypoint");
  }
  for (const auto& wp : spec.waypoints) {
    if (wp.size() != (reacher ? env->state_dim() : 2)) {
      throw ConfigError("demo waypoint has the wrong dimension");
    }
  }
  auto st = std::make_shared<DemoState>(DemoState{0, std::move(noise)});
  return [env, spec, goal, reacher, st](const StateVec& x, int t) {
    if (t == 0) st->waypoint = 0;
    ControlVec u = reacher ? reacher_control(spec, *st, x) : navigation_control(spec, goal, *st, x);
    for (auto& v : u) v += spec.noise * st->noise.normal();
    env->clip_control(u.span());
    return u;
  };
}

std::vector<Trajectory> generate_demos(std::shared_ptr<const Environment> env,
                                       const DemoSpec& spec, const GoalRegion& goal,
                                       const StateVec& start, RngStream& rng) {
  if (spec.count < 1) throw ContractViolation("generate_demos: count must be >= 1");
  if (env->name() != "point_mass" && env->name() != "reacher") {
    throw ConfigError("no scripted demonstrator for environment '" + std::string(env->name()) + "'");
  }
  std::vector<Trajectory> demos;
  int attempts = 0;
  while (static_cast<int>(demos.size()) < spec.count) {
    if (attempts++ >= spec.count + spec.max_retries) {
      throw ConfigError("demonstrator exhausted its retry budget");
    }
    const std::uint64_t seed = rng.next_u64();
    Policy policy = make_demo_policy(env, spec, goal, RngStream(seed, "demo_noise"));
    RngStream disturbance(seed, "disturbance");
    Trajectory traj = rollout_closed_loop(*env, policy, start, env->horizon(), goal, disturbance);
    const bool reached = std::any_of(traj.states.begin(), traj.states.end(),
                                     [&](const StateVec& x) { return goal_contains(goal, x); });
    if (!reached || count_violations(*env, traj) > 0) continue;
    traj.iteration = 0;
    demos.push_back(std::move(traj));
  }
  return demos;
}

}  // namespace lmpc
