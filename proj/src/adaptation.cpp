#include "lmpc/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lmpc {

std::string_view to_string(ExpansionMetric m) {
  switch (m) {
    case ExpansionMetric::Position: return "position";
    case ExpansionMetric::EndEffector: return "end_effector";
    case ExpansionMetric::Angle: return "angle";
  }
  return "position";
}

ExpansionMetric expansion_metric_from_string(std::string_view s) {
  if (s == "position") return ExpansionMetric::Position;
  if (s == "end_effector") return ExpansionMetric::EndEffector;
  if (s == "angle") return ExpansionMetric::Angle;
  throw ConfigError("unknown expansion metric '" + std::string(s) + "'");
}

void ExpansionSpec::validate() const {
  if (exploration_horizon < 1 || batch < 1) throw ConfigError("expansion: H' and R must be >= 1");
  if (max_candidates < 1) throw ConfigError("expansion: max_candidates must be >= 1");
  if (target.empty()) throw ConfigError("expansion: empty target state");
}

void to_json(nlohmann::json& j, const ExpansionSpec& s) {
  j = {{"target", s.target.values()},
       {"metric", std::string(to_string(s.metric))},
       {"exploration_horizon", s.exploration_horizon},
       {"batch", s.batch},
       {"max_candidates", s.max_candidates},
       {"stop_tolerance", s.stop_tolerance},
       {"replan", s.replan}};
}

void from_json(const nlohmann::json& j, ExpansionSpec& s) {
  s = ExpansionSpec{};
  s.target = StateVec(j.at("target").get<std::vector<double>>());
  s.metric = expansion_metric_from_string(j.value("metric", std::string("position")));
  s.exploration_horizon = j.value("exploration_horizon", s.exploration_horizon);
  s.batch = j.value("batch", s.batch);
  s.max_candidates = j.value("max_candidates", s.max_candidates);
  s.stop_tolerance = j.value("stop_tolerance", s.stop_tolerance);
  s.replan = j.value("replan", s.replan);
}

double expansion_cost(const Environment& env, const ExpansionSpec& spec,
                      std::span<const double> x) {
  const auto& t = spec.target;
  switch (spec.metric) {
    case ExpansionMetric::Position:
      return std::hypot(x[0] - t[0], x[1] - t[1]);
    case ExpansionMetric::EndEffector: {
      const auto* reacher = dynamic_cast<const ReacherEnv*>(&env);
      const double link = reacher ? reacher->params().link_length : 1.0;
      auto [ax, ay] = planar_chain_endpoint(x, link);
      auto [bx, by] = planar_chain_endpoint(t.span(), link);
      return std::hypot(ax - bx, ay - by);
    }
    case ExpansionMetric::Angle:
      return angle_distance(x[0], t[0]);
  }
  return 0.0;
}

std::vector<std::size_t> rank_candidate_starts(const SafeSetStore& store, const GoalId& goal_id,
                                               const ExpansionSpec& spec, std::size_t limit) {
  auto states = store.states(goal_id);
  if (states.empty()) throw ConfigError("no stored states for goal '" + goal_id + "'");
  std::vector<double> cost(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    cost[i] = expansion_cost(*store.env(), spec, states[i].span());
  }
  std::vector<std::size_t> order(states.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Stored iterations are non-decreasing, so index order is (iteration, insertion) order.
  const std::size_t keep = std::min(limit, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return cost[a] < cost[b] || (cost[a] == cost[b] && a < b);
                    });
  order.resize(keep);
  return order;
}

StateVec select_candidate_start(const SafeSetStore& store, const GoalId& goal_id,
                                const ExpansionSpec& spec) {
  return store.states(goal_id)[rank_candidate_starts(store, goal_id, spec, 1).front()];
}

PlanResult exploration_optimize(std::shared_ptr<const Environment> env,
                                std::shared_ptr<const DensityModel> density,
                                const ExpansionSpec& spec, const StateVec& start,
                                const CemParams& cem, RngStream& rng) {
  CemParams p = cem;
  p.horizon = spec.exploration_horizon;
  p = p.resolved(*env);
  auto w = sample_disturbance_sequences(*env, p.num_noise_rollouts, p.horizon, rng);
  const Environment* raw = env.get();
  auto stage = [raw, spec](std::span<const double> x) { return expansion_cost(*raw, spec, x); };
  auto terminal = [](std::span<const double>) { return 0.0; };
  RolloutObjective objective(env, start, std::move(w), std::move(density), stage, terminal, 0.0);
  ControlSequence init(static_cast<std::size_t>(p.horizon), ControlVec(env->control_dim(), 0.0));
  return cem_optimize(objective, p, init, rng);
}

bool expansion_batch_safe(const Environment& env, const DensityModel& density,
                          std::span<const Trajectory> rollouts) {
  for (const auto& r : rollouts) {
    if (!density.is_safe(r.states.back())) return false;
    if (count_violations(env, r) > 0) return false;
  }
  return !rollouts.empty();
}

namespace {

std::vector<Trajectory> run_exploration(std::shared_ptr<const Environment> env,
                                        std::shared_ptr<const DensityModel> density,
                                        const ExpansionSpec& spec, const CemParams& cem,
                                        const GoalRegion& goal, const StateVec& start,
                                        const PlanResult& plan, RngStream& rng) {
  std::vector<Trajectory> rollouts;
  for (int r = 0; r < spec.batch; ++r) {
    RngStream noise = rng.child("rollout/" + std::to_string(r));
    RngStream disturbance(noise.next_u64(), "disturbance");
    Policy policy;
    if (spec.replan) {
      auto replan_rng = std::make_shared<RngStream>(noise.child("replan"));
      policy = [=, &plan](const StateVec& x, int t) {
        if (t == 0) return plan.controls.front();
        ExpansionSpec rest = spec;
        rest.exploration_horizon = spec.exploration_horizon - t;
        return exploration_optimize(env, density, rest, x, cem, *replan_rng).controls.front();
      };
    } else {
      policy = [&plan](const StateVec&, int t) { return plan.controls[static_cast<std::size_t>(t)]; };
    }
    rollouts.push_back(
        rollout_closed_loop(*env, policy, start, spec.exploration_horizon, goal, disturbance));
  }
  return rollouts;
}

}  // namespace

ExpansionOutcome attempt_expansion(std::shared_ptr<const Environment> env,
                                   const SafeSetStore& store, const GoalRegion& goal,
                                   std::shared_ptr<const DensityModel> density,
                                   const ExpansionSpec& spec, const CemParams& cem,
                                   int task_horizon, const StateVec& current_start,
                                   RngStream& rng) {
  spec.validate();
  ExpansionOutcome out;
  out.next_start = current_start;
  const auto ranked = rank_candidate_starts(store, goal.id, spec,
                                            static_cast<std::size_t>(spec.max_candidates));
  auto states = store.states(goal.id);
  RngStream pick = rng.child("next_start");
  for (std::size_t c = 0; c < ranked.size(); ++c) {
    RngStream crng = rng.child("candidate/" + std::to_string(c));
    const StateVec& candidate = states[ranked[c]];
    out.candidate = candidate;
    out.candidates_tried = static_cast<int>(c) + 1;
    out.plan = exploration_optimize(env, density, spec, candidate, cem, crng);
    out.exploration = run_exploration(env, density, spec, cem, goal, candidate, out.plan, crng);

    double total = 0.0;
    for (const auto& r : out.exploration) {
      for (std::size_t t = 0; t + 1 < r.states.size(); ++t) {
        total += expansion_cost(*env, spec, r.states[t].span());
      }
    }
    out.mean_exploration_cost = total / static_cast<double>(out.exploration.size());

    if (!expansion_batch_safe(*env, *density, out.exploration)) continue;
    out.accepted = true;
    std::vector<const StateVec*> pool;
    const int first = std::max(0, spec.exploration_horizon - task_horizon);
    for (const auto& r : out.exploration) {
      for (std::size_t t = static_cast<std::size_t>(first); t < r.states.size(); ++t) {
        pool.push_back(&r.states[t]);
      }
    }
    out.next_start = *pool[pick.index(pool.size())];
    return out;
  }
  return out;
}

TransferResult transfer_goal(SafeSetStore& store, ValueFunctionBank& bank,
                             const GoalRegion& new_goal, std::span<const Trajectory> all_trajs,
                             const ValueConfig& value_config, double alpha, RngStream& rng) {
  new_goal.validate();
  if (store.has_goal(new_goal.id) || bank.has_goal(new_goal.id)) {
    throw ContractViolation("transfer_goal: goal '" + new_goal.id + "' already exists");
  }
  TransferResult out;
  out.prefixes = goal_conditioned_prefixes(all_trajs, new_goal);
  std::stable_sort(out.prefixes.begin(), out.prefixes.end(),
                   [](const Trajectory& a, const Trajectory& b) { return a.iteration < b.iteration; });
  bank.set_goal(new_goal);
  int last = 0;
  for (std::size_t i = 0; i < out.prefixes.size();) {
    std::size_t j = i;
    const int k = out.prefixes[i].iteration;
    while (j < out.prefixes.size() && out.prefixes[j].iteration == k) ++j;
    std::span<const Trajectory> group(out.prefixes.data() + i, j - i);
    store.add_rollouts(new_goal.id, k, group);
    RngStream vrng = rng.child("value/" + std::to_string(k));
    bank.add(new_goal.id, k, fit_iteration_value(store.env(), group, new_goal, value_config, vrng));
    last = k;
    i = j;
  }
  out.needs_expansion = out.prefixes.empty();
  out.density = std::make_shared<DensityModel>(store, new_goal.id, last, alpha, new_goal);
  bank.set_density(new_goal.id, out.density);
  return out;
}

Trajectory compose_trajectories(const Trajectory& head, const Trajectory& tail) {
  head.check_shape();
  tail.check_shape();
  if (!(head.states.back() == tail.states.front())) {
    throw ContractViolation("compose_trajectories: tail does not start at head's final state");
  }
  Trajectory out = head;
  out.states.insert(out.states.end(), tail.states.begin() + 1, tail.states.end());
  out.controls.insert(out.controls.end(), tail.controls.begin(), tail.controls.end());
  out.disturbances.insert(out.disturbances.end(), tail.disturbances.begin(), tail.disturbances.end());
  out.stage_costs.insert(out.stage_costs.end(), tail.stage_costs.begin(), tail.stage_costs.end());
  return out;
}

AugmentResult augment_with_exploration(SafeSetStore& store, const GoalRegion& goal, int iteration,
                                       const DensityModel& density,
                                       std::span<const Trajectory> exploration,
                                       std::span<const Trajectory> task_rollouts, bool enabled) {
  AugmentResult out;
  if (!enabled) return out;
  if (exploration.size() != task_rollouts.size()) {
    throw ContractViolation("augment_with_exploration: one task rollout per exploration rollout");
  }
  for (std::size_t i = 0; i < exploration.size(); ++i) {
    if (!density.is_safe(exploration[i].states.back())) {
      ++out.rejected;
      continue;
    }
    Trajectory composed = compose_trajectories(exploration[i], task_rollouts[i]);
    relabel(composed, goal);
    const auto labels = cost_to_go_labels(composed, goal);
    const std::size_t seg = exploration[i].length();
    for (std::size_t t = 0; t < seg; ++t) {
      out.exploration_labels.states.push_back(composed.states[t]);
      out.exploration_labels.labels.push_back(labels[t]);
    }
    out.states_added += store.add_states(
        goal.id, iteration,
        std::span<const StateVec>(exploration[i].states.data(), exploration[i].states.size()));
    out.composed.push_back(std::move(composed));
  }
  return out;
}

}  // namespace lmpc
