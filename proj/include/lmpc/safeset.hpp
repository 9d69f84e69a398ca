#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "lmpc/core.hpp"
#include "lmpc/envs.hpp"
#include "lmpc/neighbor_index.hpp"

namespace lmpc {

/// Visited states grouped by goal, in non-decreasing iteration order.
///
/// Only grows: the slice up to iteration j is always a prefix of the slice up
/// to any later iteration. States violating the environment constraint are
/// never stored.
class SafeSetStore {
 public:
  explicit SafeSetStore(std::shared_ptr<const Environment> env);

  /// Appends every visited state of trajs under (goal_id, iteration).
  /// Returns the number of states stored.
  std::size_t add_rollouts(const GoalId& goal_id, int iteration,
                           std::span<const Trajectory> trajs);
  /// Appends raw states; used by reload and exploration augmentation.
  std::size_t add_states(const GoalId& goal_id, int iteration, std::span<const StateVec> states);

  bool has_goal(const GoalId& goal_id) const;
  std::vector<GoalId> goals() const;
  std::size_t size(const GoalId& goal_id) const;
  /// Number of states logged at iterations <= up_to.
  std::size_t size(const GoalId& goal_id, int up_to) const;
  std::span<const StateVec> states(const GoalId& goal_id) const;
  std::span<const StateVec> states(const GoalId& goal_id, int up_to) const;
  std::span<const int> iterations(const GoalId& goal_id) const;
  /// Largest iteration stored for the goal, or nullopt.
  std::optional<int> last_iteration(const GoalId& goal_id) const;

  const std::shared_ptr<const Environment>& env() const { return env_; }

  /// CSV rows goal_id,iteration,x0,...
  void write_csv(std::ostream& os) const;
  static SafeSetStore read_csv(std::istream& is, std::shared_ptr<const Environment> env);

 private:
  struct Slice {
    std::vector<StateVec> states;
    std::vector<int> iterations;
  };
  const Slice* find(const GoalId& goal_id) const;

  std::shared_ptr<const Environment> env_;
  std::map<GoalId, Slice> slices_;
};

/// Tophat kernel density over a store slice plus the goal region.
///
/// density(x) is the fraction of stored states within alpha of x (1 inside the
/// goal); is_safe(x) is density(x) > delta. With delta = 0 this is "some
/// stored state within alpha, or x in the goal".
class DensityModel {
 public:
  DensityModel(const SafeSetStore& store, const GoalId& goal_id, int up_to_iteration,
               double alpha, std::optional<GoalRegion> goal, double delta = 0.0);

  bool is_safe(std::span<const double> x) const;
  bool is_safe(const StateVec& x) const { return is_safe(x.span()); }
  double density(std::span<const double> x) const;

  double alpha() const { return alpha_; }
  double delta() const { return delta_; }
  std::size_t size() const { return index_.size(); }
  const std::optional<GoalRegion>& goal() const { return goal_; }
  const NeighborIndex& index() const { return index_; }

 private:
  NeighborIndex index_;
  double alpha_;
  double delta_;
  std::optional<GoalRegion> goal_;
};

/// Prefix of every trajectory up to and including its first state in
/// new_goal, relabelled against new_goal. Trajectories that never enter are dropped.
std::vector<Trajectory> goal_conditioned_prefixes(std::span<const Trajectory> trajs,
                                                  const GoalRegion& new_goal);

}  // namespace lmpc
