#include "lmpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lmpc/parallel.hpp"

namespace lmpc {

void CemParams::validate() const {
  if (pop_size <= 0 || num_elites <= 0 || num_elites > pop_size) {
    throw ConfigError("CEM: need 0 < num_elites <= pop_size");
  }
  if (num_iters < 1 || horizon < 1 || num_noise_rollouts < 1) {
    throw ConfigError("CEM: num_iters, horizon and num_noise_rollouts must be >= 1");
  }
  if (lower.size() != upper.size()) throw ConfigError("CEM: bound dimensions differ");
  for (double v : init_variance) {
    if (!(v >= 0.0)) throw ConfigError("CEM: negative initial variance");
  }
}

CemParams CemParams::resolved(const Environment& env) const {
  CemParams p = *this;
  if (p.lower.empty()) p.lower = env.control_lower();
  if (p.upper.empty()) p.upper = env.control_upper();
  if (p.init_variance.empty()) {
    for (std::size_t i = 0; i < p.lower.size(); ++i) {
      const double half = 0.5 * (p.upper[i] - p.lower[i]);
      p.init_variance.push_back(half * half);
    }
  }
  if (p.lower.size() != env.control_dim() || p.init_variance.size() != env.control_dim()) {
    throw ConfigError("CEM: bounds or variances do not match the control dimension");
  }
  p.validate();
  return p;
}

void to_json(nlohmann::json& j, const CemParams& p) {
  j = {{"pop_size", p.pop_size},
       {"num_elites", p.num_elites},
       {"num_iters", p.num_iters},
       {"plan_hor", p.horizon},
       {"num_noise_rollouts", p.num_noise_rollouts},
       {"init_variance", p.init_variance},
       {"lower", p.lower},
       {"upper", p.upper},
       {"variance_floor", p.variance_floor}};
}

void from_json(const nlohmann::json& j, CemParams& p) {
  p = CemParams{};
  p.pop_size = j.value("pop_size", p.pop_size);
  p.num_elites = j.value("num_elites", p.num_elites);
  p.num_iters = j.value("num_iters", p.num_iters);
  p.horizon = j.value("plan_hor", p.horizon);
  p.num_noise_rollouts = j.value("num_noise_rollouts", p.num_noise_rollouts);
  p.init_variance = j.value("init_variance", p.init_variance);
  p.lower = j.value("lower", p.lower);
  p.upper = j.value("upper", p.upper);
  p.variance_floor = j.value("variance_floor", p.variance_floor);
}

ObjectiveBreakdown SequenceObjective::evaluate_detailed(std::span<const double> useq) const {
  ObjectiveBreakdown b;
  b.objective = evaluate(useq);
  return b;
}

// ----------------------------------------------------------- RolloutObjective

RolloutObjective::RolloutObjective(std::shared_ptr<const Environment> env, StateVec x0,
                                   std::vector<std::vector<DisturbanceVec>> w_samples,
                                   std::shared_ptr<const DensityModel> density, StateFn stage,
                                   StateFn terminal, double unsafe_terminal_value)
    : env_(std::move(env)),
      x0_(std::move(x0)),
      w_(std::move(w_samples)),
      density_(std::move(density)),
      stage_(std::move(stage)),
      terminal_(std::move(terminal)),
      unsafe_terminal_value_(unsafe_terminal_value) {
  if (w_.empty()) throw ContractViolation("RolloutObjective: no disturbance samples");
  horizon_ = w_.front().size();
  for (const auto& seq : w_) {
    if (seq.size() != horizon_) throw ContractViolation("RolloutObjective: ragged samples");
  }
  if (x0_.size() != env_->state_dim()) throw ContractViolation("RolloutObjective: x0 dimension");
}

ObjectiveBreakdown RolloutObjective::evaluate_detailed(std::span<const double> useq) const {
  const std::size_t m = env_->control_dim();
  const std::size_t n = env_->state_dim();
  if (useq.size() != horizon_ * m) throw ContractViolation("control sequence has wrong length");
  std::vector<double> x(n), next(n);
  ObjectiveBreakdown b;
  b.rollouts = static_cast<int>(w_.size());
  for (const auto& seq : w_) {
    std::copy(x0_.begin(), x0_.end(), x.begin());
    double cost = 0.0;
    bool violated = false;
    for (std::size_t i = 0; i < horizon_; ++i) {
      cost += stage_(x);
      env_->step_into(x, useq.subspan(i * m, m), seq[i].span(), next);
      if (!violated && !env_->state_ok(next)) violated = true;
      std::swap(x, next);
    }
    const bool safe = !density_ || density_->is_safe(x);
    const double terminal = safe ? terminal_(x) : unsafe_terminal_value_;
    b.stage_cost += cost;
    b.terminal_value += terminal;
    if (!safe) ++b.terminal_misses;
    if (violated) ++b.constraint_violations;
  }
  const double S = static_cast<double>(w_.size());
  b.stage_cost /= S;
  b.terminal_value /= S;
  b.objective = b.stage_cost + b.terminal_value + kConstraintPenalty * b.constraint_violations / S +
                kTerminalPenalty * b.terminal_misses / S;
  return b;
}

double RolloutObjective::evaluate(std::span<const double> useq) const {
  return evaluate_detailed(useq).objective;
}

std::vector<std::vector<DisturbanceVec>> sample_disturbance_sequences(const Environment& env,
                                                                      int S, int H,
                                                                      RngStream& rng) {
  std::vector<std::vector<DisturbanceVec>> out(static_cast<std::size_t>(S));
  for (auto& seq : out) {
    seq.reserve(static_cast<std::size_t>(H));
    for (int i = 0; i < H; ++i) seq.push_back(env.sample_disturbance(rng));
  }
  return out;
}

RolloutObjective make_task_objective(std::shared_ptr<const Environment> env,
                                     std::shared_ptr<const ValueFunctionBank> bank,
                                     const GoalRegion& goal, int value_up_to,
                                     std::shared_ptr<const DensityModel> density, StateVec x0,
                                     std::vector<std::vector<DisturbanceVec>> w_samples) {
  const double max_value = bank ? bank->horizon() : static_cast<double>(env->horizon());
  auto stage = [goal](std::span<const double> x) { return stage_cost(goal, x); };
  auto terminal = [goal, bank, value_up_to, max_value](std::span<const double> x) {
    if (goal_contains(goal, x)) return 0.0;
    if (!bank) return max_value;
    const double v = bank->min_prediction(goal.id, x, value_up_to);
    return v == kOutOfSet ? max_value : v;
  };
  return RolloutObjective(std::move(env), std::move(x0), std::move(w_samples), std::move(density),
                          stage, terminal, max_value);
}

double mpc_objective(std::shared_ptr<const Environment> env,
                     std::shared_ptr<const ValueFunctionBank> bank, const GoalRegion& goal,
                     int value_up_to, std::shared_ptr<const DensityModel> density,
                     const StateVec& x0, const ControlSequence& useq,
                     const std::vector<std::vector<DisturbanceVec>>& w_samples) {
  auto obj = make_task_objective(std::move(env), std::move(bank), goal, value_up_to,
                                 std::move(density), x0, w_samples);
  return obj.evaluate(flatten(useq));
}

std::vector<double> flatten(const ControlSequence& useq) {
  std::vector<double> flat;
  for (const auto& u : useq) flat.insert(flat.end(), u.begin(), u.end());
  return flat;
}

ControlSequence unflatten(std::span<const double> flat, std::size_t control_dim) {
  ControlSequence out;
  for (std::size_t i = 0; i + control_dim <= flat.size(); i += control_dim) {
    out.emplace_back(flat.subspan(i, control_dim));
  }
  return out;
}

// ------------------------------------------------------------------------ CEM

PlanResult cem_optimize(const SequenceObjective& objective, const CemParams& params,
                        const ControlSequence& init_mean, RngStream& rng) {
  params.validate();
  const std::size_t H = objective.horizon();
  const std::size_t m = objective.control_dim();
  if (init_mean.size() != H) throw ContractViolation("cem_optimize: init_mean length != horizon");
  if (params.lower.size() != m || params.init_variance.size() != m) {
    throw ContractViolation("cem_optimize: unresolved bounds (call CemParams::resolved)");
  }
  const std::size_t dim = H * m;
  std::vector<double> mean = flatten(init_mean);
  std::vector<double> var(dim), lo(dim), hi(dim);
  std::vector<bool> floored(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    var[i] = params.init_variance[i % m];
    lo[i] = params.lower[i % m];
    hi[i] = params.upper[i % m];
    floored[i] = var[i] > 0.0;
  }

  const auto pop = static_cast<std::size_t>(params.pop_size);
  const auto n_elite = static_cast<std::size_t>(params.num_elites);
  struct Candidate {
    double cost;
    std::vector<double> seq;
  };
  std::vector<Candidate> elites;
  Candidate best{std::numeric_limits<double>::infinity(), mean};

  auto checked = [](double c) {
    if (!std::isfinite(c)) throw ContractViolation("cem_optimize: objective returned non-finite");
    return c;
  };

  PlanResult result;
  for (int it = 0; it < params.num_iters; ++it) {
    std::vector<Candidate> samples(pop);
    for (auto& s : samples) {
      s.seq.resize(dim);
      for (std::size_t i = 0; i < dim; ++i) {
        const double sd = std::sqrt(var[i]);
        double v = mean[i];
        if (sd > 0.0) {
          int tries = 0;
          do {
            v = mean[i] + sd * rng.normal();
          } while ((v < lo[i] || v > hi[i]) && ++tries < 16);
        }
        s.seq[i] = std::clamp(v, lo[i], hi[i]);
      }
    }
    // The initial mean itself competes in the first round, so a warm start is
    // never lost to sampling noise.
    if (it == 0) {
      samples.front().seq = mean;
      for (std::size_t i = 0; i < dim; ++i) samples.front().seq[i] = std::clamp(mean[i], lo[i], hi[i]);
    }
    parallel_for(pop, [&](std::size_t k) { samples[k].cost = checked(objective.evaluate(samples[k].seq)); });

    // Previous elites first so ties keep the incumbent.
    std::vector<Candidate> pool = std::move(elites);
    pool.insert(pool.end(), std::make_move_iterator(samples.begin()),
                std::make_move_iterator(samples.end()));
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Candidate& a, const Candidate& b) { return a.cost < b.cost; });
    pool.resize(std::min(n_elite, pool.size()));
    elites = std::move(pool);
    if (elites.front().cost < best.cost) best = elites.front();

    double trace = 0.0;
    for (const auto& e : elites) trace += e.cost;
    result.elite_trace.push_back(trace / static_cast<double>(elites.size()));

    const double ne = static_cast<double>(elites.size());
    for (std::size_t i = 0; i < dim; ++i) {
      double mu = 0.0;
      for (const auto& e : elites) mu += e.seq[i];
      mu /= ne;
      double v = 0.0;
      for (const auto& e : elites) v += (e.seq[i] - mu) * (e.seq[i] - mu);
      v /= ne;
      mean[i] = mu;
      var[i] = floored[i] ? std::max(v, params.variance_floor) : 0.0;
    }
  }

  ObjectiveBreakdown mean_eval = objective.evaluate_detailed(mean);
  checked(mean_eval.objective);
  std::vector<double> plan = mean;
  if (best.cost < mean_eval.objective) {
    plan = best.seq;
    mean_eval = objective.evaluate_detailed(plan);
  }
  result.controls = unflatten(plan, m);
  result.objective = mean_eval.objective;
  result.breakdown = mean_eval;
  return result;
}

// -------------------------------------------------------------- MpcController

MpcController::MpcController(std::shared_ptr<const Environment> env,
                             std::shared_ptr<const ValueFunctionBank> bank, GoalRegion goal,
                             int value_up_to, std::shared_ptr<const DensityModel> density,
                             CemParams params)
    : env_(std::move(env)),
      bank_(std::move(bank)),
      goal_(std::move(goal)),
      value_up_to_(value_up_to),
      density_(std::move(density)),
      params_(params.resolved(*env_)) {}

ControlSequence MpcController::initial_mean() const {
  const auto H = static_cast<std::size_t>(params_.horizon);
  if (!warm_) return ControlSequence(H, ControlVec(env_->control_dim(), 0.0));
  ControlSequence shifted(warm_->begin() + 1, warm_->end());
  shifted.push_back(warm_->back());
  return shifted;
}

std::pair<ControlVec, PlanResult> MpcController::step(const StateVec& x, RngStream& rng) {
  auto w = sample_disturbance_sequences(*env_, params_.num_noise_rollouts, params_.horizon, rng);
  auto objective = make_task_objective(env_, bank_, goal_, value_up_to_, density_, x, std::move(w));
  PlanResult plan = cem_optimize(objective, params_, initial_mean(), rng);
  warm_ = plan.controls;
  ControlVec u = plan.controls.front();
  env_->clip_control(u.span());
  return {u, std::move(plan)};
}

// ------------------------------------------------------------------- rollouts

Trajectory rollout_closed_loop(const Environment& env, const Policy& policy, const StateVec& x0,
                               int T, const GoalRegion& goal, RngStream& disturbance_rng) {
  if (T < 1) throw ContractViolation("rollout_closed_loop: T must be >= 1");
  if (x0.size() != env.state_dim()) throw ContractViolation("rollout_closed_loop: x0 dimension");
  Trajectory traj;
  traj.goal_id = goal.id;
  traj.seed = disturbance_rng.seed();
  traj.states.push_back(x0);
  for (int t = 0; t < T; ++t) {
    const StateVec& x = traj.states.back();
    ControlVec u = policy(x, t);
    env.clip_control(u.span());
    DisturbanceVec w = env.sample_disturbance(disturbance_rng);
    traj.stage_costs.push_back(stage_cost(goal, x));
    StateVec next = env.step(x, u, w);
    traj.controls.push_back(std::move(u));
    traj.disturbances.push_back(std::move(w));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

int count_violations(const Environment& env, const Trajectory& traj) {
  int n = 0;
  for (const auto& x : traj.states) {
    if (!env.state_ok(x)) ++n;
  }
  return n;
}

}  // namespace lmpc
