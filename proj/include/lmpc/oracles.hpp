#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmpc/core.hpp"
#include "lmpc/envs.hpp"

namespace lmpc::oracle {

// Brute-force reference implementations. They share no code path with the
// library beyond the environment's own metric and dynamics.

/// Number of states within alpha of x under env's metric, by linear scan.
std::size_t count_within(const Environment& env, std::span<const StateVec> states,
                         std::span<const double> x, double alpha);

/// Safe-set membership: inside goal, or some stored state within alpha.
bool is_safe(const Environment& env, std::span<const StateVec> states, const GoalRegion& goal,
             std::span<const double> x, double alpha);

/// label[t] = sum_{t <= i < T} stage_costs[i]; label[T] = indicator of the final state.
std::vector<double> suffix_sums(const Trajectory& traj, const GoalRegion& goal);

/// Index of the first state in the goal, or -1.
int first_entry(const Trajectory& traj, const GoalRegion& goal);

/// Reacher collision by sampling n points evenly along the whole chain.
bool reacher_collides_dense(const ReacherEnv& env, std::span<const double> angles, int n = 1000);

/// Index minimising dist(states[i]) with ties to the lowest index.
std::size_t argmin_scan(std::span<const double> costs);

/// Bit-exact re-simulation of a trajectory from its logged controls and seed.
bool replay_matches(const Environment& env, const Trajectory& traj, const GoalRegion& goal);

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Deterministic property suite comparing library results with the oracles above.
std::vector<Check> run_property_suite(std::uint64_t seed);

}  // namespace lmpc::oracle
