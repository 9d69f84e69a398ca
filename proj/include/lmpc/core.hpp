#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lmpc {

/// Raised when a caller breaks an operation's preconditions.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised for unusable configurations (empty data, missing models, bad files).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fixed-length real vector tagged by its role so states, controls and
/// disturbances cannot be mixed up at call sites.
template <class Tag>
class TaggedVec {
 public:
  TaggedVec() = default;
  explicit TaggedVec(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  TaggedVec(std::initializer_list<double> init) : values_(init) {}
  explicit TaggedVec(std::vector<double> values) : values_(std::move(values)) {}
  explicit TaggedVec(std::span<const double> values) : values_(values.begin(), values.end()) {}

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  std::span<const double> span() const { return values_; }
  std::span<double> span() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool all_finite() const;

  friend bool operator==(const TaggedVec&, const TaggedVec&) = default;

 private:
  std::vector<double> values_;
};

using StateVec = TaggedVec<struct StateTag>;
using ControlVec = TaggedVec<struct ControlTag>;
using DisturbanceVec = TaggedVec<struct DisturbanceTag>;

template <class Tag>
bool TaggedVec<Tag>::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

using GoalId = std::string;

/// Feature extracted from a state before measuring distance to a goal center.
enum class GoalFeature {
  Position,     // (x[0], x[1])
  EndEffector,  // endpoint of a planar chain whose joint angles are the state
  Angle,        // x[0], compared with wrapped angular distance
};

std::string_view to_string(GoalFeature f);
GoalFeature goal_feature_from_string(std::string_view s);

struct GoalRegion {
  GoalId id;
  GoalFeature feature = GoalFeature::Position;
  std::vector<double> center;
  double radius = 1.0;
  std::size_t state_dim = 0;  // expected input dimension
  double link_length = 1.0;   // EndEffector only

  /// Feature-space coordinates of a state (angle features are wrapped to [0, 2pi)).
  std::vector<double> project(std::span<const double> x) const;
  /// Feature-space distance between a state and the center.
  double distance(std::span<const double> x) const;
  /// Throws ContractViolation when the region itself is malformed.
  void validate() const;
};

bool goal_contains(const GoalRegion& goal, std::span<const double> x);
inline bool goal_contains(const GoalRegion& goal, const StateVec& x) {
  return goal_contains(goal, x.span());
}

/// Indicator task cost 1{x not in goal}. The control is accepted but unused.
double stage_cost(const GoalRegion& goal, std::span<const double> x,
                  std::span<const double> u = {});
inline double stage_cost(const GoalRegion& goal, const StateVec& x) {
  return stage_cost(goal, x.span());
}

/// Closed-loop rollout log. states has one more entry than controls.
struct Trajectory {
  std::vector<StateVec> states;
  std::vector<ControlVec> controls;
  std::vector<DisturbanceVec> disturbances;
  std::vector<double> stage_costs;
  GoalId goal_id;
  int iteration = 0;
  std::uint64_t seed = 0;

  std::size_t length() const { return controls.size(); }
  double total_cost() const;
  /// Throws ContractViolation when list lengths are inconsistent.
  void check_shape() const;
};

/// Recompute stage costs of every state but the last against goal and set goal_id.
void relabel(Trajectory& traj, const GoalRegion& goal);

/// Monte-Carlo cost-to-go: label[t] = sum of stage_costs[t..T-1] for t < T,
/// and label[T] is the final state's own indicator.
std::vector<double> cost_to_go_labels(const Trajectory& traj, const GoalRegion& goal);

double wrap_angle(double a);                    // -> [0, 2pi)
double angle_distance(double a, double b);      // -> [0, pi]

/// Endpoint of a planar chain of equal links with relative joint angles.
std::pair<double, double> planar_chain_endpoint(std::span<const double> angles,
                                                double link_length);

/// Deterministic random stream keyed by (seed, label).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  double uniform();  // [0, 1)
  double normal();   // N(0, 1)
  std::size_t index(std::size_t n);  // uniform in [0, n)
  std::uint64_t next_u64() { return engine_(); }

  /// Independent child stream; does not consume draws from this one.
  RngStream child(std::string_view sublabel) const;

 private:
  std::uint64_t seed_;
  std::string label_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

/// CSV rows: iteration,t,x0..,u0..,w0..,stage_cost,goal_id. The final row
/// (t = T) leaves the control, disturbance and stage_cost cells empty.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, bool header = true);
void write_trajectories_csv(std::ostream& os, std::span<const Trajectory> trajs);
std::vector<Trajectory> read_trajectories_csv(std::istream& is, std::size_t state_dim,
                                              std::size_t control_dim,
                                              std::size_t disturbance_dim);

}  // namespace lmpc
