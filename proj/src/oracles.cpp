#include "lmpc/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lmpc/mpc.hpp"
#include "lmpc/runner.hpp"
#include "lmpc/safeset.hpp"
#include "lmpc/value.hpp"

namespace lmpc::oracle {

std::size_t count_within(const Environment& env, std::span<const StateVec> states,
                         std::span<const double> x, double alpha) {
  std::size_t n = 0;
  for (const auto& s : states) {
    if (env.state_distance_sq(s.span(), x) <= alpha * alpha) ++n;
  }
  return n;
}

bool is_safe(const Environment& env, std::span<const StateVec> states, const GoalRegion& goal,
             std::span<const double> x, double alpha) {
  return goal_contains(goal, x) || count_within(env, states, x, alpha) > 0;
}

std::vector<double> suffix_sums(const Trajectory& traj, const GoalRegion& goal) {
  const std::size_t T = traj.states.size();
  std::vector<double> out(T, 0.0);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    double s = 0.0;
    for (std::size_t i = t; i + 1 < T; ++i) s += traj.stage_costs[i];
    out[t] = s;
  }
  out[T - 1] = goal_contains(goal, traj.states.back()) ? 0.0 : 1.0;
  return out;
}

int first_entry(const Trajectory& traj, const GoalRegion& goal) {
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    if (goal_contains(goal, traj.states[t])) return static_cast<int>(t);
  }
  return -1;
}

bool reacher_collides_dense(const ReacherEnv& env, std::span<const double> angles, int n) {
  const auto& p = env.params();
  const double total = p.link_length * static_cast<double>(p.num_links);
  for (int k = 0; k < n; ++k) {
    double s = total * k / (n - 1);
    double x = 0.0, y = 0.0, heading = 0.0;
    for (std::size_t i = 0; i < p.num_links && s > 0.0; ++i) {
      heading += angles[i];
      const double step = std::min(s, p.link_length);
      x += step * std::cos(heading);
      y += step * std::sin(heading);
      s -= step;
    }
    if (std::hypot(x - p.obstacle.center[0], y - p.obstacle.center[1]) <= p.obstacle.radius) {
      return true;
    }
  }
  return false;
}

std::size_t argmin_scan(std::span<const double> costs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < costs.size(); ++i) {
    if (costs[i] < costs[best]) best = i;
  }
  return best;
}

bool replay_matches(const Environment& env, const Trajectory& traj, const GoalRegion& goal) {
  RngStream rng(traj.seed, "disturbance");
  StateVec x = traj.states.front();
  for (std::size_t t = 0; t < traj.length(); ++t) {
    DisturbanceVec w = env.sample_disturbance(rng);
    if (!(w == traj.disturbances[t])) return false;
    if (stage_cost(goal, x) != traj.stage_costs[t]) return false;
    x = env.step(x, traj.controls[t], w);
    if (!(x == traj.states[t + 1])) return false;
  }
  return true;
}

// ---------------------------------------------------------------- suite

namespace {

StateVec random_state(const Environment& env, RngStream& rng) {
  StateVec x(env.state_dim(), 0.0);
  if (env.name() == "point_mass") {
    x[0] = -60.0 + 70.0 * rng.uniform();
    x[1] = -20.0 + 40.0 * rng.uniform();
    x[2] = -2.0 + 4.0 * rng.uniform();
    x[3] = -2.0 + 4.0 * rng.uniform();
  } else if (env.name() == "pendulum") {
    x[0] = 2.0 * std::numbers::pi * rng.uniform();
    x[1] = -8.0 + 16.0 * rng.uniform();
  } else {
    for (auto& v : x) v = -std::numbers::pi + 2.0 * std::numbers::pi * rng.uniform();
  }
  return x;
}

GoalRegion goal_for(const Environment& env) {
  GoalRegion g;
  g.id = "G";
  g.state_dim = env.state_dim();
  if (env.name() == "pendulum") {
    g.feature = GoalFeature::Angle;
    g.center = {0.0};
    g.radius = std::numbers::pi / 4;
  } else {
    g.center = {0.0, 0.0};
    g.radius = 1.0;
  }
  return g;
}

Trajectory random_walk(const Environment& env, const GoalRegion& goal, std::size_t T,
                       RngStream& rng, int iteration) {
  Trajectory t;
  t.goal_id = goal.id;
  t.iteration = iteration;
  t.seed = rng.next_u64();
  RngStream dist(t.seed, "disturbance");
  t.states.push_back(random_state(env, rng));
  const auto lo = env.control_lower(), hi = env.control_upper();
  for (std::size_t i = 0; i < T; ++i) {
    ControlVec u(env.control_dim(), 0.0);
    for (std::size_t k = 0; k < u.size(); ++k) u[k] = lo[k] + (hi[k] - lo[k]) * rng.uniform();
    env.clip_control(u.span());
    DisturbanceVec w = env.sample_disturbance(dist);
    t.stage_costs.push_back(stage_cost(goal, t.states.back()));
    t.states.push_back(env.step(t.states.back(), u, w));
    t.controls.push_back(u);
    t.disturbances.push_back(w);
  }
  return t;
}

/// Walk towards the goal centre so that some trajectories enter the goal.
Trajectory homing_walk(const PointMassEnv& env, const GoalRegion& goal, RngStream& rng,
                       int iteration) {
  Trajectory t;
  t.goal_id = goal.id;
  t.iteration = iteration;
  t.seed = rng.next_u64();
  RngStream dist(t.seed, "disturbance");
  StateVec x{-6.0 + 12.0 * rng.uniform(), -6.0 + 12.0 * rng.uniform(), 0.0, 0.0};
  t.states.push_back(x);
  const double gain = 0.05 + 0.2 * rng.uniform();
  for (int i = 0; i < 30; ++i) {
    const auto& s = t.states.back();
    ControlVec u{-gain * s[0] - 0.5 * s[2] + 0.3 * rng.normal(),
                 -gain * s[1] - 0.5 * s[3] + 0.3 * rng.normal()};
    env.clip_control(u.span());
    DisturbanceVec w = env.sample_disturbance(dist);
    t.stage_costs.push_back(stage_cost(goal, s));
    t.states.push_back(env.step(s, u, w));
    t.controls.push_back(u);
    t.disturbances.push_back(w);
  }
  return t;
}

Check check_density(std::uint64_t seed) {
  Check c{"density model == linear scan (1000 queries per environment)", true, ""};
  for (const char* name : {"point_mass", "pendulum"}) {
    auto env = make_environment({{"name", name}});
    const GoalRegion goal = goal_for(*env);
    RngStream rng(seed, std::string("density/") + name);
    SafeSetStore store(env);
    std::vector<StateVec> states;
    for (int i = 0; i < 600; ++i) {
      StateVec x = random_state(*env, rng);
      if (!env->state_ok(x)) continue;
      states.push_back(x);
    }
    store.add_states(goal.id, 0, states);
    const double alpha = 2.0;
    DensityModel model(store, goal.id, 0, alpha, goal);
    std::size_t mismatches = 0;
    for (int q = 0; q < 1000; ++q) {
      StateVec x = random_state(*env, rng);
      const bool want = is_safe(*env, states, goal, x.span(), alpha);
      const double want_density =
          goal_contains(goal, x) ? 1.0
                                 : static_cast<double>(count_within(*env, states, x.span(), alpha)) /
                                       static_cast<double>(states.size());
      if (model.is_safe(x) != want || model.density(x.span()) != want_density) ++mismatches;
    }
    if (mismatches) {
      c.passed = false;
      c.detail += std::string(name) + ": " + std::to_string(mismatches) + " mismatches; ";
    }
  }
  if (c.passed) c.detail = "0 mismatches";
  return c;
}

Check check_labels(std::uint64_t seed) {
  Check c{"cost-to-go labels == suffix sums", true, "0 mismatches"};
  auto env = std::make_shared<PointMassEnv>();
  const GoalRegion goal = goal_for(*env);
  RngStream rng(seed, "labels");
  int bad = 0;
  for (int i = 0; i < 200; ++i) {
    Trajectory t = homing_walk(*env, goal, rng, 0);
    if (cost_to_go_labels(t, goal) != suffix_sums(t, goal)) ++bad;
  }
  if (bad) {
    c.passed = false;
    c.detail = std::to_string(bad) + " of 200 trajectories differ";
  }
  return c;
}

class Quadratic final : public SequenceObjective {
 public:
  Quadratic(std::vector<double> target, std::size_t m) : u_(std::move(target)), m_(m) {}
  std::size_t horizon() const override { return u_.size() / m_; }
  std::size_t control_dim() const override { return m_; }
  double evaluate(std::span<const double> u) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - u_[i]) * (u[i] - u_[i]);
    return s;
  }

 private:
  std::vector<double> u_;
  std::size_t m_;
};

Check check_cem_quadratic(std::uint64_t seed) {
  Check c{"CEM recovers separable quadratic minimiser within 0.05", true, ""};
  RngStream rng(seed, "cem_quadratic");
  const std::size_t H = 5, m = 2;
  std::vector<double> target(H * m);
  for (auto& v : target) v = -0.8 + 1.6 * rng.uniform();
  Quadratic q(target, m);
  CemParams p;
  p.pop_size = 400;
  p.num_elites = 40;
  p.num_iters = 5;
  p.horizon = static_cast<int>(H);
  p.lower = {-1.0, -1.0};
  p.upper = {1.0, 1.0};
  p.init_variance = {1.0, 1.0};
  ControlSequence init(H, ControlVec(m, 0.0));
  auto plan = cem_optimize(q, p, init, rng);
  const auto flat = flatten(plan.controls);
  double worst = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i) worst = std::max(worst, std::fabs(flat[i] - target[i]));
  c.passed = worst <= 0.05;
  c.detail = "max deviation " + format_double(worst);
  return c;
}

Check check_elite_trace(std::uint64_t seed) {
  Check c{"elite-mean trace non-increasing (fixed disturbance samples)", true, ""};
  auto env = std::make_shared<PointMassEnv>();
  const GoalRegion goal = goal_for(*env);
  RngStream rng(seed, "elite_trace");
  SafeSetStore store(env);
  std::vector<StateVec> states;
  for (int i = 0; i < 20; ++i) states.push_back(StateVec{-5.0 + 0.5 * i, 0.0, 0.0, 0.0});
  store.add_states(goal.id, 0, states);
  auto density = std::make_shared<DensityModel>(store, goal.id, 0, 2.0, goal);
  int bad = 0;
  for (int trial = 0; trial < 10; ++trial) {
    StateVec x0{-12.0 + 4.0 * rng.uniform(), -2.0 + 4.0 * rng.uniform(), 0.0, 0.0};
    auto w = sample_disturbance_sequences(*env, 5, 15, rng);
    auto stage = [&goal](std::span<const double> x) { return stage_cost(goal, x); };
    auto terminal = [](std::span<const double>) { return 0.0; };
    RolloutObjective obj(env, x0, w, density, stage, terminal, 50.0);
    CemParams p;
    p.pop_size = 200;
    p.horizon = 15;
    auto plan = cem_optimize(obj, p.resolved(*env), ControlSequence(15, ControlVec(2, 0.0)), rng);
    for (std::size_t k = 1; k < plan.elite_trace.size(); ++k) {
      if (plan.elite_trace[k] > plan.elite_trace[k - 1]) ++bad;
    }
  }
  c.passed = bad == 0;
  c.detail = std::to_string(bad) + " increases over 10 solves";
  return c;
}

Check check_monotone_store(std::uint64_t seed) {
  Check c{"safe-set slices nested across iterations", true, ""};
  auto env = std::make_shared<PointMassEnv>();
  const GoalRegion goal = goal_for(*env);
  RngStream rng(seed, "monotone_store");
  SafeSetStore store(env);
  int bad = 0;
  for (int j = 0; j < 15; ++j) {
    std::vector<Trajectory> batch;
    for (int r = 0; r < 5; ++r) batch.push_back(random_walk(*env, goal, 20, rng, j));
    store.add_rollouts(goal.id, j, batch);
  }
  for (int j = 0; j + 1 < 15; ++j) {
    auto a = store.states(goal.id, j);
    auto b = store.states(goal.id, j + 1);
    std::vector<std::vector<double>> sa, sb;
    for (const auto& x : a) sa.push_back(x.values());
    for (const auto& x : b) sb.push_back(x.values());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (!std::includes(sb.begin(), sb.end(), sa.begin(), sa.end())) ++bad;
  }
  c.passed = bad == 0;
  c.detail = std::to_string(bad) + " violations over 14 consecutive pairs";
  return c;
}

Check check_value_monotone(std::uint64_t seed) {
  Check c{"bank V non-increasing in up_to at 100 probes", true, ""};
  auto env = std::make_shared<PointMassEnv>();
  const GoalRegion goal = goal_for(*env);
  RngStream rng(seed, "value_monotone");
  ValueFunctionBank bank(50.0);
  bank.set_goal(goal);
  ValueConfig cfg;
  cfg.kind = ValueKind::Nonparametric;
  cfg.alpha = 4.0;
  const int K = 6;
  for (int k = 0; k < K; ++k) {
    std::vector<Trajectory> batch;
    for (int r = 0; r < 20; ++r) batch.push_back(homing_walk(*env, goal, rng, k));
    bank.add(goal.id, k, fit_iteration_value(env, batch, goal, cfg, rng));
  }
  int bad = 0;
  for (int p = 0; p < 100; ++p) {
    StateVec x{-6.0 + 12.0 * rng.uniform(), -6.0 + 12.0 * rng.uniform(), -0.5 + rng.uniform(),
               -0.5 + rng.uniform()};
    for (int k = 0; k + 1 < K; ++k) {
      if (bank.min_prediction(goal.id, x.span(), k + 1) > bank.min_prediction(goal.id, x.span(), k)) {
        ++bad;
      }
    }
  }
  c.passed = bad == 0;
  c.detail = std::to_string(bad) + " increases";
  return c;
}

Check check_prefixes(std::uint64_t seed) {
  Check c{"goal-conditioned prefixes == first-entry scan", true, ""};
  auto env = std::make_shared<PointMassEnv>();
  GoalRegion goal = goal_for(*env);
  GoalRegion next = goal;
  next.id = "H";
  next.center = {1.5, -1.0};
  next.radius = 2.0;
  RngStream rng(seed, "prefixes");
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 200; ++i) trajs.push_back(homing_walk(*env, goal, rng, i / 20));
  auto got = goal_conditioned_prefixes(trajs, next);
  std::vector<Trajectory> want;
  for (const auto& t : trajs) {
    const int k = first_entry(t, next);
    if (k < 0) continue;
    Trajectory p;
    p.goal_id = next.id;
    p.iteration = t.iteration;
    p.seed = t.seed;
    p.states.assign(t.states.begin(), t.states.begin() + k + 1);
    p.controls.assign(t.controls.begin(), t.controls.begin() + k);
    p.disturbances.assign(t.disturbances.begin(), t.disturbances.begin() + k);
    for (int i = 0; i < k; ++i) p.stage_costs.push_back(1.0);
    want.push_back(std::move(p));
  }
  bool same = got.size() == want.size();
  for (std::size_t i = 0; same && i < got.size(); ++i) {
    same = got[i].states == want[i].states && got[i].controls == want[i].controls &&
           got[i].stage_costs == want[i].stage_costs && got[i].iteration == want[i].iteration &&
           cost_to_go_labels(got[i], next) == suffix_sums(want[i], next);
  }
  c.passed = same;
  c.detail = std::to_string(want.size()) + " intersecting trajectories of 200";
  return c;
}

Check check_reacher_collision(std::uint64_t seed) {
  Check c{"reacher collision == 1000-point dense sampling (500 configs)", true, ""};
  ReacherEnv env;
  RngStream rng(seed, "reacher_collision");
  int bad = 0, colliding = 0;
  for (int i = 0; i < 500; ++i) {
    std::vector<double> q(env.params().num_links);
    for (auto& v : q) v = -std::numbers::pi / 2 + std::numbers::pi * rng.uniform();
    const bool dense = reacher_collides_dense(env, q);
    colliding += dense;
    if (dense == env.state_ok(q)) ++bad;
  }
  c.passed = bad == 0;
  c.detail = std::to_string(bad) + " disagreements (" + std::to_string(colliding) + " colliding)";
  return c;
}

Check check_replay(std::uint64_t seed) {
  Check c{"replay of logged trajectories is bit-exact", true, ""};
  ExperimentConfig cfg;
  cfg.name = "replay";
  cfg.env = {{"name", "point_mass"}};
  GoalStage stage;
  stage.goal = goal_for(*make_environment(cfg.env));
  cfg.goals = {stage};
  cfg.start = StateVec{-50.0, 0.0, 0.0, 0.0};
  DemoSpec demos;
  demos.count = 5;
  demos.noise = 0.1;
  demos.waypoints = {{-40.0, 14.0}, {-10.0, 14.0}};
  cfg.demos = demos;
  cfg.task_cem.pop_size = 60;
  cfg.task_cem.num_elites = 6;
  cfg.task_cem.num_iters = 2;
  cfg.task_cem.num_noise_rollouts = 2;
  cfg.rollouts = 2;
  cfg.iterations = 1;
  cfg.seed = seed;
  cfg.value.kind = ValueKind::Nonparametric;
  Learner learner(cfg);
  learner.initialize();
  learner.run_iteration(1);
  int bad = 0;
  const auto env = learner.env();
  for (const auto& t : learner.history()) {
    // Through the CSV round trip as well as in memory.
    std::stringstream ss;
    write_trajectory_csv(ss, t);
    auto back = read_trajectories_csv(ss, env->state_dim(), env->control_dim(),
                                      env->disturbance_dim());
    back.front().seed = t.seed;
    if (!replay_matches(*env, t, stage.goal) || !replay_matches(*env, back.front(), stage.goal)) {
      ++bad;
    }
  }
  c.passed = bad == 0 && !learner.history().empty();
  c.detail = std::to_string(learner.history().size()) + " trajectories, " + std::to_string(bad) +
             " mismatches";
  return c;
}

}  // namespace

std::vector<Check> run_property_suite(std::uint64_t seed) {
  return {check_density(seed),        check_labels(seed),         check_cem_quadratic(seed),
          check_elite_trace(seed),    check_monotone_store(seed), check_value_monotone(seed),
          check_prefixes(seed),       check_reacher_collision(seed), check_replay(seed)};
}

}  // namespace lmpc::oracle
