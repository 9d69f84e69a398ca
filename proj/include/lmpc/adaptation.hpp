#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lmpc/core.hpp"
#include "lmpc/envs.hpp"
#include "lmpc/mpc.hpp"
#include "lmpc/safeset.hpp"
#include "lmpc/value.hpp"

namespace lmpc {

/// Distance C_E between a state and the target start.
enum class ExpansionMetric {
  Position,     // Euclidean over (x, y)
  EndEffector,  // Euclidean between end-effector positions
  Angle,        // wrapped difference of x[0]
};

std::string_view to_string(ExpansionMetric m);
ExpansionMetric expansion_metric_from_string(std::string_view s);

struct ExpansionSpec {
  StateVec target;
  ExpansionMetric metric = ExpansionMetric::Position;
  int exploration_horizon = 15;  // H'
  int batch = 5;                 // R
  int max_candidates = 25;       // candidates tried per iteration before giving up
  double stop_tolerance = 2.0;   // no further expansion once C_E(start) <= this
  bool replan = false;           // re-optimise at every exploration step

  void validate() const;
};

void to_json(nlohmann::json& j, const ExpansionSpec& s);
void from_json(const nlohmann::json& j, ExpansionSpec& s);

/// C_E(x) for the spec's metric and target.
double expansion_cost(const Environment& env, const ExpansionSpec& spec, std::span<const double> x);

struct ExpansionOutcome {
  StateVec candidate;
  bool accepted = false;
  std::vector<Trajectory> exploration;  // rollouts of the last candidate tried
  StateVec next_start;
  double mean_exploration_cost = 0.0;
  int candidates_tried = 0;
  PlanResult plan;
};

/// Stored states of goal_id ordered best-first under C_E (ties: earlier
/// iteration, then insertion order). At most limit indices are returned.
std::vector<std::size_t> rank_candidate_starts(const SafeSetStore& store, const GoalId& goal_id,
                                               const ExpansionSpec& spec, std::size_t limit);

StateVec select_candidate_start(const SafeSetStore& store, const GoalId& goal_id,
                                const ExpansionSpec& spec);

/// CEM over H'-step sequences minimising the mean summed C_E of the states
/// x_0..x_{H'-1}, with the task's constraint and terminal-density penalties.
PlanResult exploration_optimize(std::shared_ptr<const Environment> env,
                                std::shared_ptr<const DensityModel> density,
                                const ExpansionSpec& spec, const StateVec& start,
                                const CemParams& cem, RngStream& rng);

/// Tries candidate starts best-first until R exploration rollouts from one of
/// them all end in the safe set without constraint violations. The next start
/// is drawn uniformly from the last task_horizon steps of the accepted rollouts.
ExpansionOutcome attempt_expansion(std::shared_ptr<const Environment> env,
                                   const SafeSetStore& store, const GoalRegion& goal,
                                   std::shared_ptr<const DensityModel> density,
                                   const ExpansionSpec& spec, const CemParams& cem,
                                   int task_horizon, const StateVec& current_start,
                                   RngStream& rng);

/// Re-checks the acceptance predicate from logged rollouts.
bool expansion_batch_safe(const Environment& env, const DensityModel& density,
                          std::span<const Trajectory> rollouts);

struct TransferResult {
  std::vector<Trajectory> prefixes;
  std::shared_ptr<const DensityModel> density;
  /// No prior trajectory reaches the new goal: its safe set is the goal alone
  /// and the controller domain has to be grown from there.
  bool needs_expansion = false;
};

/// Rebuilds safe set and value functions for new_goal from the prefixes of
/// all_trajs that enter it. Entries of other goals are left untouched.
TransferResult transfer_goal(SafeSetStore& store, ValueFunctionBank& bank,
                             const GoalRegion& new_goal, std::span<const Trajectory> all_trajs,
                             const ValueConfig& value_config, double alpha, RngStream& rng);

struct AugmentResult {
  std::vector<Trajectory> composed;  // exploration segment followed by task rollout
  LabelledStates exploration_labels;  // labels of the exploration segment states
  std::size_t states_added = 0;
  std::size_t rejected = 0;
};

/// Adds exploration-visited states to the safe set and labels them with the
/// cost-to-go of the composed rollout. Exploration trajectories whose terminal
/// state fails the density test are rejected. Disabled: returns immediately.
AugmentResult augment_with_exploration(SafeSetStore& store, const GoalRegion& goal, int iteration,
                                       const DensityModel& density,
                                       std::span<const Trajectory> exploration,
                                       std::span<const Trajectory> task_rollouts, bool enabled);

/// Concatenates head and tail (tail.states[0] must equal head's final state).
Trajectory compose_trajectories(const Trajectory& head, const Trajectory& tail);

}  // namespace lmpc
