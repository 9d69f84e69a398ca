#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lmpc/core.hpp"

namespace lmpc {

/// Zero-mean Gaussian N(0, sigma^2 I) conditioned on the box [-sigma, sigma]^dim.
struct TruncGaussSpec {
  double sigma = 0.0;
  std::size_t dim = 0;

  void sample_into(RngStream& rng, std::span<double> out) const;
  DisturbanceVec sample(RngStream& rng) const;
  /// Per-coordinate variance of the truncated law.
  double variance() const;
};

/// Known stochastic dynamics x+ = f(x, u, w) with state constraints.
///
/// Implementations are immutable; every method is const and thread-safe.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string_view name() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual std::size_t control_dim() const = 0;
  std::size_t disturbance_dim() const { return noise_.dim; }
  const TruncGaussSpec& noise() const { return noise_; }
  int horizon() const { return horizon_; }

  /// Box used by the sampler; the admissible set may be smaller (see clip_control).
  virtual std::vector<double> control_lower() const = 0;
  virtual std::vector<double> control_upper() const = 0;
  /// Project a control onto the admissible set U.
  virtual void clip_control(std::span<double> u) const = 0;

  /// Unchecked transition for hot loops. Clips u internally; out may not alias x.
  virtual void step_into(std::span<const double> x, std::span<const double> u,
                         std::span<const double> w, std::span<double> out) const = 0;

  /// Checked transition: dimensions and finiteness are validated.
  StateVec step(const StateVec& x, const ControlVec& u, const DisturbanceVec& w) const;

  DisturbanceVec sample_disturbance(RngStream& rng) const { return noise_.sample(rng); }

  virtual bool state_ok(std::span<const double> x) const = 0;
  bool state_ok(const StateVec& x) const { return state_ok(x.span()); }

  /// Squared distance used by the safe-set density model.
  virtual double state_distance_sq(std::span<const double> a, std::span<const double> b) const;
  /// Period of each state coordinate under state_distance_sq (0 = not periodic).
  virtual std::vector<double> state_periods() const;
  /// Input features for parametric value functions.
  virtual std::vector<double> value_features(std::span<const double> x) const;

  virtual nlohmann::json to_json() const = 0;

 protected:
  TruncGaussSpec noise_;
  int horizon_ = 50;
};

struct Rect {
  std::array<double, 2> center{};
  std::array<double, 2> half_extents{};
};

struct Circle {
  std::array<double, 2> center{};
  double radius = 1.0;
};

/// 2-D point mass with linear drag; state (x, y, vx, vy), control (fx, fy).
class PointMassEnv final : public Environment {
 public:
  struct Params {
    double drag = 0.2;
    double sigma = 0.05;
    double max_force = 1.0;
    Rect obstacle{{-25.0, 0.0}, {10.0, 10.0}};
    int horizon = 50;
  };

  PointMassEnv() : PointMassEnv(Params{}) {}
  explicit PointMassEnv(Params p);

  std::string_view name() const override { return "point_mass"; }
  std::size_t state_dim() const override { return 4; }
  std::size_t control_dim() const override { return 2; }
  std::vector<double> control_lower() const override;
  std::vector<double> control_upper() const override;
  void clip_control(std::span<double> u) const override;
  void step_into(std::span<const double> x, std::span<const double> u,
                 std::span<const double> w, std::span<double> out) const override;
  bool state_ok(std::span<const double> x) const override;
  nlohmann::json to_json() const override;

  const Params& params() const { return p_; }

 private:
  Params p_;
};

/// Kinematic planar chain commanded in delta joint angles.
class ReacherEnv final : public Environment {
 public:
  struct Params {
    std::size_t num_links = 7;
    double link_length = 1.0;
    double sigma = 0.03;
    double max_delta = 0.15;
    Circle obstacle{{2.0, 2.0}, 1.0};
    int horizon = 50;
  };

  ReacherEnv() : ReacherEnv(Params{}) {}
  explicit ReacherEnv(Params p);

  std::string_view name() const override { return "reacher"; }
  std::size_t state_dim() const override { return p_.num_links; }
  std::size_t control_dim() const override { return p_.num_links; }
  std::vector<double> control_lower() const override;
  std::vector<double> control_upper() const override;
  void clip_control(std::span<double> u) const override;
  void step_into(std::span<const double> x, std::span<const double> u,
                 std::span<const double> w, std::span<double> out) const override;
  bool state_ok(std::span<const double> x) const override;
  nlohmann::json to_json() const override;

  /// Smallest distance from any link segment to the obstacle center.
  double obstacle_clearance(std::span<const double> angles) const;
  const Params& params() const { return p_; }

 private:
  Params p_;
};

/// End-effector position of the chain.
std::array<double, 2> forward_kinematics(const ReacherEnv& env, std::span<const double> angles);

/// Torque-driven pendulum, angle measured from upright (0) counterclockwise.
class PendulumEnv final : public Environment {
 public:
  struct Params {
    double gravity = 10.0;
    double mass = 1.0;
    double length = 1.0;
    double dt = 0.05;
    double max_torque = 2.0;
    double max_speed = 8.0;
    double sigma = 0.5;
    int horizon = 40;
  };

  PendulumEnv() : PendulumEnv(Params{}) {}
  explicit PendulumEnv(Params p);

  std::string_view name() const override { return "pendulum"; }
  std::size_t state_dim() const override { return 2; }
  std::size_t control_dim() const override { return 1; }
  std::vector<double> control_lower() const override;
  std::vector<double> control_upper() const override;
  void clip_control(std::span<double> u) const override;
  void step_into(std::span<const double> x, std::span<const double> u,
                 std::span<const double> w, std::span<double> out) const override;
  bool state_ok(std::span<const double>) const override { return true; }
  double state_distance_sq(std::span<const double> a, std::span<const double> b) const override;
  std::vector<double> state_periods() const override;
  std::vector<double> value_features(std::span<const double> x) const override;
  nlohmann::json to_json() const override;

  const Params& params() const { return p_; }

 private:
  Params p_;
};

/// Build an environment from {"name": ..., <overrides>}.
std::shared_ptr<const Environment> make_environment(const nlohmann::json& j);

/// Distance from point p to segment [a, b].
double point_segment_distance(std::array<double, 2> p, std::array<double, 2> a,
                              std::array<double, 2> b);

}  // namespace lmpc
