#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lmpc/adaptation.hpp"
#include "lmpc/core.hpp"
#include "lmpc/envs.hpp"
#include "lmpc/mpc.hpp"
#include "lmpc/safeset.hpp"
#include "lmpc/value.hpp"

namespace lmpc {

void to_json(nlohmann::json& j, const GoalRegion& g);
void from_json(const nlohmann::json& j, GoalRegion& g);

/// Scripted demonstrator. Navigation: proportional-derivative waypoint
/// tracking in position space, then linear feedback onto the goal centre.
/// Reacher: bounded joint-space steps through waypoint configurations, ending
/// at the last one. Gaussian action noise is added before clipping.
struct DemoSpec {
  int count = 0;
  std::string policy = "waypoint";
  double noise = 0.0;  // action noise standard deviation
  int max_retries = 200;
  std::vector<std::vector<double>> waypoints;
  double gain = 0.1;           // proportional gain towards the active waypoint
  double damping = 0.5;        // velocity damping (navigation)
  double switch_radius = 3.0;  // waypoint reached when this close
  std::vector<double> feedback = {0.2, 0.6};  // final (position, velocity) gains
};

void to_json(nlohmann::json& j, const DemoSpec& d);
void from_json(const nlohmann::json& j, DemoSpec& d);

/// Goal schedule entry. The goal becomes active at activation_iteration, or
/// earlier if a trigger region is given and the current start state lies in it.
struct GoalStage {
  GoalRegion goal;
  int activation_iteration = 0;
  std::optional<GoalRegion> trigger;
};

struct ExperimentConfig {
  std::string name = "experiment";
  nlohmann::json env = {{"name", "point_mass"}};
  std::vector<GoalStage> goals;
  StateVec start;
  std::optional<DemoSpec> demos;
  CemParams task_cem;
  CemParams exploration_cem;
  std::optional<ExpansionSpec> expansion;
  bool augment_exploration = false;
  int rollouts = 5;  // R
  int iterations = 10;
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: no artifacts
  ValueConfig value;
  double alpha = 2.0;  // density kernel width
  bool plot = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ExpansionLog {
  StateVec candidate;
  bool accepted = false;
  StateVec next_start;
  double mean_exploration_cost = 0.0;
  int candidates_tried = 0;
  /// Terminal states of the accepted batch, all inside the safe set.
  std::vector<StateVec> terminals;
};

struct IterationRecord {
  int iteration = 0;
  GoalId goal_id;
  StateVec start;
  std::vector<double> costs;  // one per task rollout
  std::vector<std::uint64_t> seeds;
  int violations = 0;
  std::size_t safe_set_size = 0;
  double seconds = 0.0;
  std::optional<ExpansionLog> expansion;

  double mean_cost() const;
  double std_cost() const;
};

std::vector<Trajectory> generate_demos(std::shared_ptr<const Environment> env,
                                       const DemoSpec& spec, const GoalRegion& goal,
                                       const StateVec& start, RngStream& rng);

/// One noisy demonstrator policy; the noise stream is owned by the policy.
Policy make_demo_policy(std::shared_ptr<const Environment> env, const DemoSpec& spec,
                        const GoalRegion& goal, RngStream noise);

/// Re-simulates traj from its first state, logged controls and disturbance seed.
Trajectory replay_trajectory(const Environment& env, const Trajectory& traj,
                             const GoalRegion& goal);

/// Seed of the disturbance stream of task rollout r at iteration j.
std::uint64_t rollout_seed(std::uint64_t master, int iteration, int rollout);
/// The stream rollout_closed_loop consumed for a trajectory with this seed.
RngStream disturbance_stream(std::uint64_t seed);

/// Learning state carried across iterations.
class Learner {
 public:
  explicit Learner(ExperimentConfig config);

  /// Demos (or the bare goal region) become iteration 0. Returns the demo
  /// record, or nullopt when the run starts without demos.
  std::optional<IterationRecord> initialize();
  IterationRecord run_iteration(int j);

  const ExperimentConfig& config() const { return config_; }
  std::shared_ptr<const Environment> env() const { return env_; }
  const SafeSetStore& store() const { return store_; }
  const ValueFunctionBank& bank() const { return *bank_; }
  const GoalRegion& active_goal() const { return config_.goals[stage_].goal; }
  std::shared_ptr<const DensityModel> density() const { return density_; }
  const StateVec& start() const { return start_; }
  /// Every task-phase trajectory so far (demos included), in logging order.
  const std::vector<Trajectory>& history() const { return history_; }
  /// Trajectories logged at the last initialize()/run_iteration() call.
  const std::vector<Trajectory>& last_rollouts() const { return last_; }
  const std::vector<Trajectory>& last_exploration() const { return last_exploration_; }
  bool transfer_warning() const { return transfer_warning_; }

 private:
  void maybe_switch_goal(int j);
  void learn_from(int j, const std::vector<Trajectory>& trajs,
                  const std::vector<Trajectory>& extra_value_data);
  void rebuild_density(int up_to);
  std::optional<ExpansionLog> expand(int j);

  ExperimentConfig config_;
  std::shared_ptr<const Environment> env_;
  SafeSetStore store_;
  std::shared_ptr<ValueFunctionBank> bank_;
  std::shared_ptr<const DensityModel> density_;
  std::size_t stage_ = 0;
  StateVec start_;
  std::vector<Trajectory> history_;
  std::vector<Trajectory> last_;
  std::vector<Trajectory> last_exploration_;
  bool transfer_warning_ = false;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Runs all iterations; writes artifacts under config.out_dir when set.
std::vector<IterationRecord> run_experiment(const ExperimentConfig& config,
                                            const IterationCallback& on_iteration = {});

}  // namespace lmpc
