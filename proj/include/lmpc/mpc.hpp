#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "lmpc/core.hpp"
#include "lmpc/envs.hpp"
#include "lmpc/safeset.hpp"
#include "lmpc/value.hpp"

namespace lmpc {

inline constexpr double kTerminalPenalty = 1e6;
inline constexpr double kConstraintPenalty = 1e8;

struct CemParams {
  int pop_size = 400;
  int num_elites = 40;
  int num_iters = 5;
  int horizon = 15;
  int num_noise_rollouts = 5;
  /// Per control dimension; empty means (control range / 2)^2.
  std::vector<double> init_variance;
  /// Sampling box per control dimension; empty means the environment's box.
  std::vector<double> lower, upper;
  double variance_floor = 1e-6;

  void validate() const;
  /// Copy with empty bounds and variances filled from env.
  CemParams resolved(const Environment& env) const;
};

void to_json(nlohmann::json& j, const CemParams& p);
void from_json(const nlohmann::json& j, CemParams& p);

using ControlSequence = std::vector<ControlVec>;

/// Averages over the sampled disturbance sequences; counts are raw totals.
struct ObjectiveBreakdown {
  double objective = 0.0;
  double stage_cost = 0.0;      // mean summed stage cost
  double terminal_value = 0.0;  // mean terminal value
  int terminal_misses = 0;      // rollouts whose terminal state fails the density test
  int constraint_violations = 0;  // rollouts with any constraint-violating state
  int rollouts = 0;
};

struct PlanResult {
  ControlSequence controls;
  double objective = 0.0;
  ObjectiveBreakdown breakdown;
  std::vector<double> elite_trace;  // mean elite objective after each CEM round
};

/// Cost of a flattened (horizon x control_dim) control sequence.
class SequenceObjective {
 public:
  virtual ~SequenceObjective() = default;
  virtual std::size_t horizon() const = 0;
  virtual std::size_t control_dim() const = 0;
  /// Must be safe to call concurrently.
  virtual double evaluate(std::span<const double> useq) const = 0;
  virtual ObjectiveBreakdown evaluate_detailed(std::span<const double> useq) const;
};

/// Simulates a control sequence from x0 under S fixed disturbance sequences
/// and prices it as
///   mean_s [sum_{i<H} stage(x_i) + terminal(x_H)]
///   + 1e8 * (#rollouts with a violating state) / S
///   + 1e6 * (#rollouts whose terminal state fails the density test) / S.
class RolloutObjective final : public SequenceObjective {
 public:
  using StateFn = std::function<double(std::span<const double>)>;

  RolloutObjective(std::shared_ptr<const Environment> env, StateVec x0,
                   std::vector<std::vector<DisturbanceVec>> w_samples,
                   std::shared_ptr<const DensityModel> density, StateFn stage, StateFn terminal,
                   double unsafe_terminal_value);

  std::size_t horizon() const override { return horizon_; }
  std::size_t control_dim() const override { return env_->control_dim(); }
  double evaluate(std::span<const double> useq) const override;
  ObjectiveBreakdown evaluate_detailed(std::span<const double> useq) const override;

 private:
  std::shared_ptr<const Environment> env_;
  StateVec x0_;
  std::vector<std::vector<DisturbanceVec>> w_;
  std::shared_ptr<const DensityModel> density_;
  StateFn stage_, terminal_;
  double unsafe_terminal_value_;
  std::size_t horizon_;
};

/// Draws S disturbance sequences of length H.
std::vector<std::vector<DisturbanceVec>> sample_disturbance_sequences(const Environment& env,
                                                                      int S, int H,
                                                                      RngStream& rng);

/// Objective of the learning MPC problem: goal-indicator stage costs and the
/// bank minimum V as terminal cost (V = horizon where undefined).
RolloutObjective make_task_objective(std::shared_ptr<const Environment> env,
                                     std::shared_ptr<const ValueFunctionBank> bank,
                                     const GoalRegion& goal, int value_up_to,
                                     std::shared_ptr<const DensityModel> density, StateVec x0,
                                     std::vector<std::vector<DisturbanceVec>> w_samples);

double mpc_objective(std::shared_ptr<const Environment> env,
                     std::shared_ptr<const ValueFunctionBank> bank, const GoalRegion& goal,
                     int value_up_to, std::shared_ptr<const DensityModel> density,
                     const StateVec& x0, const ControlSequence& useq,
                     const std::vector<std::vector<DisturbanceVec>>& w_samples);

std::vector<double> flatten(const ControlSequence& useq);
ControlSequence unflatten(std::span<const double> flat, std::size_t control_dim);

/// Cross-entropy method over control sequences. Elites of the previous round
/// compete with each new population, so the elite trace never increases on a
/// deterministic objective. The plan is the final elite mean unless the best
/// sample seen scores strictly lower.
PlanResult cem_optimize(const SequenceObjective& objective, const CemParams& params,
                        const ControlSequence& init_mean, RngStream& rng);

/// Receding-horizon controller: warm-started CEM solve, first control applied.
class MpcController {
 public:
  MpcController(std::shared_ptr<const Environment> env,
                std::shared_ptr<const ValueFunctionBank> bank, GoalRegion goal,
                int value_up_to, std::shared_ptr<const DensityModel> density, CemParams params);

  std::pair<ControlVec, PlanResult> step(const StateVec& x, RngStream& rng);
  /// Shift-and-repeat warm start, or zeros before the first solve.
  ControlSequence initial_mean() const;
  void reset() { warm_.reset(); }

 private:
  std::shared_ptr<const Environment> env_;
  std::shared_ptr<const ValueFunctionBank> bank_;
  GoalRegion goal_;
  int value_up_to_;
  std::shared_ptr<const DensityModel> density_;
  CemParams params_;
  std::optional<ControlSequence> warm_;
};

using Policy = std::function<ControlVec(const StateVec& x, int t)>;

/// Runs policy for T steps with fresh disturbances from rng, logging everything.
/// Constraint violations are recorded by the caller, never raised.
Trajectory rollout_closed_loop(const Environment& env, const Policy& policy, const StateVec& x0,
                               int T, const GoalRegion& goal, RngStream& disturbance_rng);

/// Number of states in traj that violate the environment constraint.
int count_violations(const Environment& env, const Trajectory& traj);

}  // namespace lmpc
