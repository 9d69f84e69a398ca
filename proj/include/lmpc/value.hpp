#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "lmpc/core.hpp"
#include "lmpc/envs.hpp"
#include "lmpc/neighbor_index.hpp"
#include "lmpc/safeset.hpp"

namespace lmpc {

/// Returned where no value function is defined (the "+infinity" branch).
inline constexpr double kOutOfSet = std::numeric_limits<double>::infinity();

struct ValueMemberSpec {
  std::size_t ensemble_size = 5;
  std::vector<std::size_t> hidden = {500, 500, 500};
  double learning_rate = 1e-3;
  int epochs = 10;
  std::size_t batch_size = 32;
  // Soft bounds on the predicted log-variance (normalised label units).
  double min_logvar = -10.0;
  double max_logvar = 2.0;
};

enum class ValueKind { Ensemble, Nonparametric };

struct ValueConfig {
  ValueKind kind = ValueKind::Ensemble;
  ValueMemberSpec member;
  double alpha = 2.0;  // neighbourhood radius for the nonparametric fallback
};

void to_json(nlohmann::json& j, const ValueConfig& c);
void from_json(const nlohmann::json& j, ValueConfig& c);

struct GaussianPrediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// One fitted cost-to-go function for a single (goal, iteration).
class CostToGoModel {
 public:
  virtual ~CostToGoModel() = default;
  /// Mean cost-to-go at x, or kOutOfSet where the model is undefined.
  virtual double predict(std::span<const double> x) const = 0;
  virtual ValueKind kind() const = 0;
  /// Writes parameter files next to stem and returns the manifest entry.
  virtual nlohmann::json save(const std::filesystem::path& dir, const std::string& stem) const = 0;
};

/// Feed-forward network emitting the mean and log-variance of a Gaussian.
class GaussianMlp {
 public:
  GaussianMlp() = default;
  GaussianMlp(std::size_t in, const std::vector<std::size_t>& hidden, double min_logvar,
              double max_logvar, RngStream& rng);

  /// Columns of x are samples. Returns (mean row, logvar row).
  std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> forward(const Eigen::MatrixXd& x) const;
  /// Mean Gaussian negative log-likelihood (without the constant) on a batch.
  double loss(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y) const;
  /// One Adam step on a batch; returns the batch loss before the step.
  double train_step(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y, double lr);

  std::vector<Eigen::MatrixXd>& weights() { return w_; }
  std::vector<Eigen::VectorXd>& biases() { return b_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return w_; }
  const std::vector<Eigen::VectorXd>& biases() const { return b_; }
  double min_logvar() const { return min_logvar_; }
  double max_logvar() const { return max_logvar_; }
  void set_logvar_bounds(double lo, double hi) {
    min_logvar_ = lo;
    max_logvar_ = hi;
  }

 private:
  std::vector<Eigen::MatrixXd> w_;
  std::vector<Eigen::VectorXd> b_;
  std::vector<Eigen::MatrixXd> mw_, vw_;
  std::vector<Eigen::VectorXd> mb_, vb_;
  long adam_t_ = 0;
  double min_logvar_ = -10.0;
  double max_logvar_ = 2.0;
};

/// Bootstrapped probabilistic ensemble over environment value features.
class ProbabilisticEnsemble final : public CostToGoModel {
 public:
  ProbabilisticEnsemble(std::shared_ptr<const Environment> env, std::vector<GaussianMlp> members,
                        Eigen::VectorXd in_mean, Eigen::VectorXd in_std, double out_mean,
                        double out_std, std::uint64_t seed);

  double predict(std::span<const double> x) const override;
  GaussianPrediction predict_distribution(std::span<const double> x) const;
  ValueKind kind() const override { return ValueKind::Ensemble; }
  nlohmann::json save(const std::filesystem::path& dir, const std::string& stem) const override;
  static std::shared_ptr<ProbabilisticEnsemble> load(std::shared_ptr<const Environment> env,
                                                     const std::filesystem::path& dir,
                                                     const nlohmann::json& manifest);

  std::size_t size() const { return members_.size(); }
  /// Per member: loss on its bootstrap before training, then after each epoch.
  std::vector<std::vector<double>> training_losses;

 private:
  std::shared_ptr<const Environment> env_;
  std::vector<GaussianMlp> members_;
  Eigen::VectorXd in_mean_, in_std_;
  double out_mean_, out_std_;
  std::uint64_t seed_;
};

/// Average label of the states within alpha of a query; undefined elsewhere.
class NearestNeighborValue final : public CostToGoModel {
 public:
  NearestNeighborValue(std::shared_ptr<const Environment> env, std::vector<StateVec> states,
                       std::vector<double> labels, double alpha);

  double predict(std::span<const double> x) const override;
  ValueKind kind() const override { return ValueKind::Nonparametric; }
  nlohmann::json save(const std::filesystem::path& dir, const std::string& stem) const override;
  static std::shared_ptr<NearestNeighborValue> load(std::shared_ptr<const Environment> env,
                                                    const std::filesystem::path& dir,
                                                    const nlohmann::json& manifest);

  double alpha() const { return alpha_; }

 private:
  NeighborIndex index_;
  std::vector<double> labels_;
  double alpha_;
};

/// Training pairs (state, Monte-Carlo cost-to-go) for a goal.
struct LabelledStates {
  std::vector<StateVec> states;
  std::vector<double> labels;
};
LabelledStates collect_labels(std::span<const Trajectory> trajs, const GoalRegion& goal);

/// Fits one cost-to-go model on trajectories already labelled against goal.
std::shared_ptr<const CostToGoModel> fit_iteration_value(
    std::shared_ptr<const Environment> env, std::span<const Trajectory> trajs,
    const GoalRegion& goal, const ValueConfig& config, RngStream& rng);

std::shared_ptr<ProbabilisticEnsemble> fit_ensemble(std::shared_ptr<const Environment> env,
                                                    const LabelledStates& data,
                                                    const ValueMemberSpec& spec, RngStream& rng);

/// Per-goal, per-iteration cost-to-go functions and their pointwise minimum V.
class ValueFunctionBank {
 public:
  explicit ValueFunctionBank(double horizon) : horizon_(horizon) {}

  void set_goal(const GoalRegion& goal);
  void set_density(const GoalId& goal_id, std::shared_ptr<const DensityModel> density);
  void add(const GoalId& goal_id, int iteration, std::shared_ptr<const CostToGoModel> model);

  /// 0 inside the goal; kOutOfSet outside the attached density model's safe
  /// set or where no model is defined; otherwise the minimum over iterations
  /// k <= up_to of each model's prediction, clamped to [0, horizon].
  double evaluate_V(const GoalId& goal_id, std::span<const double> x, int up_to_iteration) const;

  /// evaluate_V without the goal and density checks.
  double min_prediction(const GoalId& goal_id, std::span<const double> x,
                        int up_to_iteration) const;

  bool has_goal(const GoalId& goal_id) const { return goals_.count(goal_id) > 0; }
  const GoalRegion& goal(const GoalId& goal_id) const;
  std::size_t model_count(const GoalId& goal_id) const;
  const std::map<int, std::shared_ptr<const CostToGoModel>>& models(const GoalId& goal_id) const;
  double horizon() const { return horizon_; }

  /// Writes one parameter set per model plus manifest.json under dir.
  void save(const std::filesystem::path& dir) const;

 private:
  double horizon_;
  std::map<GoalId, GoalRegion> goals_;
  std::map<GoalId, std::shared_ptr<const DensityModel>> densities_;
  std::map<GoalId, std::map<int, std::shared_ptr<const CostToGoModel>>> models_;
};

/// Reloads one model from a manifest entry written by CostToGoModel::save.
std::shared_ptr<const CostToGoModel> load_value_model(std::shared_ptr<const Environment> env,
                                                      const std::filesystem::path& dir,
                                                      const nlohmann::json& entry);

}  // namespace lmpc
