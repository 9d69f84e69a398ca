#include "lmpc/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lmpc {

void TruncGaussSpec::sample_into(RngStream& rng, std::span<double> out) const {
  for (std::size_t i = 0; i < dim; ++i) {
    if (sigma == 0.0) {
      out[i] = 0.0;
      continue;
    }
    double z;
    do {
      z = rng.normal();
    } while (std::fabs(z) > 1.0);
    out[i] = sigma * z;
  }
}

DisturbanceVec TruncGaussSpec::sample(RngStream& rng) const {
  DisturbanceVec w(dim);
  sample_into(rng, w.span());
  return w;
}

double TruncGaussSpec::variance() const {
  // Standard normal truncated to [-1, 1]: 1 - 2 phi(1) / (Phi(1) - Phi(-1)).
  const double phi1 = std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi);
  const double mass = std::erf(1.0 / std::numbers::sqrt2);
  return sigma * sigma * (1.0 - 2.0 * phi1 / mass);
}

StateVec Environment::step(const StateVec& x, const ControlVec& u,
                           const DisturbanceVec& w) const {
  if (x.size() != state_dim() || u.size() != control_dim() || w.size() != disturbance_dim()) {
    throw ContractViolation(std::string(name()) + "::step: dimension mismatch");
  }
  if (!x.all_finite() || !u.all_finite() || !w.all_finite()) {
    throw ContractViolation(std::string(name()) + "::step: non-finite input");
  }
  StateVec out(state_dim());
  step_into(x.span(), u.span(), w.span(), out.span());
  return out;
}

double Environment::state_distance_sq(std::span<const double> a,
                                      std::span<const double> b) const {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<double> Environment::state_periods() const {
  return std::vector<double>(state_dim(), 0.0);
}

std::vector<double> Environment::value_features(std::span<const double> x) const {
  return {x.begin(), x.end()};
}

double point_segment_distance(std::array<double, 2> p, std::array<double, 2> a,
                              std::array<double, 2> b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double len2 = dx * dx + dy * dy;
  double s = 0.0;
  if (len2 > 0.0) {
    s = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2;
    s = std::clamp(s, 0.0, 1.0);
  }
  return std::hypot(p[0] - (a[0] + s * dx), p[1] - (a[1] + s * dy));
}

// ---------------------------------------------------------------- point mass

PointMassEnv::PointMassEnv(Params p) : p_(p) {
  noise_ = {p_.sigma, 4};
  horizon_ = p_.horizon;
}

std::vector<double> PointMassEnv::control_lower() const { return {-p_.max_force, -p_.max_force}; }
std::vector<double> PointMassEnv::control_upper() const { return {p_.max_force, p_.max_force}; }

void PointMassEnv::clip_control(std::span<double> u) const {
  const double n = std::hypot(u[0], u[1]);
  if (n > p_.max_force) {
    u[0] *= p_.max_force / n;
    u[1] *= p_.max_force / n;
  }
}

void PointMassEnv::step_into(std::span<const double> x, std::span<const double> u,
                             std::span<const double> w, std::span<double> out) const {
  double fx = u[0], fy = u[1];
  const double n = std::hypot(fx, fy);
  if (n > p_.max_force) {
    fx *= p_.max_force / n;
    fy *= p_.max_force / n;
  }
  // The noise has the full state dimension; only the velocity entries enter.
  out[0] = x[0] + x[2];
  out[1] = x[1] + x[3];
  out[2] = x[2] + fx - p_.drag * x[2] + w[2];
  out[3] = x[3] + fy - p_.drag * x[3] + w[3];
}

bool PointMassEnv::state_ok(std::span<const double> x) const {
  const auto& ob = p_.obstacle;
  const bool inside = std::fabs(x[0] - ob.center[0]) <= ob.half_extents[0] &&
                      std::fabs(x[1] - ob.center[1]) <= ob.half_extents[1];
  return !inside;
}

nlohmann::json PointMassEnv::to_json() const {
  return {{"name", "point_mass"},
          {"drag", p_.drag},
          {"sigma", p_.sigma},
          {"max_force", p_.max_force},
          {"obstacle_center", p_.obstacle.center},
          {"obstacle_half_extents", p_.obstacle.half_extents},
          {"horizon", p_.horizon}};
}

// ------------------------------------------------------------------- reacher

ReacherEnv::ReacherEnv(Params p) : p_(p) {
  if (p_.num_links == 0) throw ConfigError("reacher needs at least one link");
  noise_ = {p_.sigma, p_.num_links};
  horizon_ = p_.horizon;
}

std::vector<double> ReacherEnv::control_lower() const {
  return std::vector<double>(p_.num_links, -p_.max_delta);
}
std::vector<double> ReacherEnv::control_upper() const {
  return std::vector<double>(p_.num_links, p_.max_delta);
}

void ReacherEnv::clip_control(std::span<double> u) const {
  for (double& v : u) v = std::clamp(v, -p_.max_delta, p_.max_delta);
}

void ReacherEnv::step_into(std::span<const double> x, std::span<const double> u,
                           std::span<const double> w, std::span<double> out) const {
  for (std::size_t i = 0; i < p_.num_links; ++i) {
    out[i] = x[i] + std::clamp(u[i], -p_.max_delta, p_.max_delta) + w[i];
  }
}

double ReacherEnv::obstacle_clearance(std::span<const double> angles) const {
  std::array<double, 2> a{0.0, 0.0};
  double heading = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p_.num_links; ++i) {
    heading += angles[i];
    const std::array<double, 2> b{a[0] + p_.link_length * std::cos(heading),
                                  a[1] + p_.link_length * std::sin(heading)};
    best = std::min(best, point_segment_distance(p_.obstacle.center, a, b));
    a = b;
  }
  return best;
}

bool ReacherEnv::state_ok(std::span<const double> x) const {
  return obstacle_clearance(x) > p_.obstacle.radius;
}

nlohmann::json ReacherEnv::to_json() const {
  return {{"name", "reacher"},
          {"num_links", p_.num_links},
          {"link_length", p_.link_length},
          {"sigma", p_.sigma},
          {"max_delta", p_.max_delta},
          {"obstacle_center", p_.obstacle.center},
          {"obstacle_radius", p_.obstacle.radius},
          {"horizon", p_.horizon}};
}

std::array<double, 2> forward_kinematics(const ReacherEnv& env, std::span<const double> angles) {
  if (angles.size() != env.params().num_links) {
    throw ContractViolation("forward_kinematics: wrong number of joint angles");
  }
  auto [x, y] = planar_chain_endpoint(angles, env.params().link_length);
  return {x, y};
}

// ------------------------------------------------------------------ pendulum

PendulumEnv::PendulumEnv(Params p) : p_(p) {
  noise_ = {p_.sigma, 1};
  horizon_ = p_.horizon;
}

std::vector<double> PendulumEnv::control_lower() const { return {-p_.max_torque}; }
std::vector<double> PendulumEnv::control_upper() const { return {p_.max_torque}; }

void PendulumEnv::clip_control(std::span<double> u) const {
  u[0] = std::clamp(u[0], -p_.max_torque, p_.max_torque);
}

void PendulumEnv::step_into(std::span<const double> x, std::span<const double> u,
                            std::span<const double> w, std::span<double> out) const {
  const double torque = std::clamp(u[0], -p_.max_torque, p_.max_torque);
  const double accel = 3.0 * p_.gravity / (2.0 * p_.length) * std::sin(x[0]) +
                       3.0 / (p_.mass * p_.length * p_.length) * torque;
  out[0] = wrap_angle(x[0] + x[1] * p_.dt);
  out[1] = std::clamp(x[1] + accel * p_.dt + w[0], -p_.max_speed, p_.max_speed);
}

double PendulumEnv::state_distance_sq(std::span<const double> a,
                                      std::span<const double> b) const {
  const double da = angle_distance(a[0], b[0]);
  const double dv = a[1] - b[1];
  return da * da + dv * dv;
}

std::vector<double> PendulumEnv::state_periods() const {
  return {2.0 * std::numbers::pi, 0.0};
}

std::vector<double> PendulumEnv::value_features(std::span<const double> x) const {
  return {std::sin(x[0]), std::cos(x[0]), x[1]};
}

nlohmann::json PendulumEnv::to_json() const {
  return {{"name", "pendulum"},
          {"gravity", p_.gravity},
          {"mass", p_.mass},
          {"length", p_.length},
          {"dt", p_.dt},
          {"max_torque", p_.max_torque},
          {"max_speed", p_.max_speed},
          {"sigma", p_.sigma},
          {"horizon", p_.horizon}};
}

// ------------------------------------------------------------------- factory

std::shared_ptr<const Environment> make_environment(const nlohmann::json& j) {
  const std::string name = j.value("name", "");
  if (name == "point_mass") {
    PointMassEnv::Params p;
    p.drag = j.value("drag", p.drag);
    p.sigma = j.value("sigma", p.sigma);
    p.max_force = j.value("max_force", p.max_force);
    p.obstacle.center = j.value("obstacle_center", p.obstacle.center);
    p.obstacle.half_extents = j.value("obstacle_half_extents", p.obstacle.half_extents);
    p.horizon = j.value("horizon", p.horizon);
    return std::make_shared<PointMassEnv>(p);
  }
  if (name == "reacher") {
    ReacherEnv::Params p;
    p.num_links = j.value("num_links", p.num_links);
    p.link_length = j.value("link_length", p.link_length);
    p.sigma = j.value("sigma", p.sigma);
    p.max_delta = j.value("max_delta", p.max_delta);
    p.obstacle.center = j.value("obstacle_center", p.obstacle.center);
    p.obstacle.radius = j.value("obstacle_radius", p.obstacle.radius);
    p.horizon = j.value("horizon", p.horizon);
    return std::make_shared<ReacherEnv>(p);
  }
  if (name == "pendulum") {
    PendulumEnv::Params p;
    p.gravity = j.value("gravity", p.gravity);
    p.mass = j.value("mass", p.mass);
    p.length = j.value("length", p.length);
    p.dt = j.value("dt", p.dt);
    p.max_torque = j.value("max_torque", p.max_torque);
    p.max_speed = j.value("max_speed", p.max_speed);
    p.sigma = j.value("sigma", p.sigma);
    p.horizon = j.value("horizon", p.horizon);
    return std::make_shared<PendulumEnv>(p);
  }
  throw ConfigError("unknown environment '" + name + "'");
}

}  // namespace lmpc
