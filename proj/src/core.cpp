#include "lmpc/core.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace lmpc {

std::string_view to_string(GoalFeature f) {
  switch (f) {
    case GoalFeature::Position: return "position";
    case GoalFeature::EndEffector: return "end_effector";
    case GoalFeature::Angle: return "angle";
  }
  return "position";
}

GoalFeature goal_feature_from_string(std::string_view s) {
  if (s == "position") return GoalFeature::Position;
  if (s == "end_effector") return GoalFeature::EndEffector;
  if (s == "angle") return GoalFeature::Angle;
  throw ConfigError("unknown goal feature '" + std::string(s) + "'");
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a, two_pi);
  if (r < 0.0) r += two_pi;
  // fmod of a tiny negative value can round up to exactly 2pi
  if (r >= two_pi) r = 0.0;
  return r;
}

double angle_distance(double a, double b) {
  double d = std::fabs(wrap_angle(a) - wrap_angle(b));
  return std::min(d, 2.0 * std::numbers::pi - d);
}

std::pair<double, double> planar_chain_endpoint(std::span<const double> angles,
                                                double link_length) {
  double x = 0.0, y = 0.0, heading = 0.0;
  for (double a : angles) {
    heading += a;
    x += link_length * std::cos(heading);
    y += link_length * std::sin(heading);
  }
  return {x, y};
}

void GoalRegion::validate() const {
  if (!(radius > 0.0)) throw ContractViolation("goal '" + id + "': radius must be positive");
  const std::size_t want = feature == GoalFeature::Angle ? 1 : 2;
  if (center.size() != want) {
    throw ContractViolation("goal '" + id + "': center has wrong dimension");
  }
}

std::vector<double> GoalRegion::project(std::span<const double> x) const {
  if (state_dim != 0 && x.size() != state_dim) {
    throw ContractViolation("goal '" + id + "': state dimension " + std::to_string(x.size()) +
                            " != " + std::to_string(state_dim));
  }
  switch (feature) {
    case GoalFeature::Position:
      if (x.size() < 2) throw ContractViolation("position goal needs a state of dimension >= 2");
      return {x[0], x[1]};
    case GoalFeature::EndEffector: {
      if (x.empty()) throw ContractViolation("end-effector goal needs joint angles");
      auto [ex, ey] = planar_chain_endpoint(x, link_length);
      return {ex, ey};
    }
    case GoalFeature::Angle:
      if (x.empty()) throw ContractViolation("angle goal needs a state of dimension >= 1");
      return {wrap_angle(x[0])};
  }
  return {};
}

double GoalRegion::distance(std::span<const double> x) const {
  const auto f = project(x);
  if (feature == GoalFeature::Angle) return angle_distance(f[0], center[0]);
  return std::hypot(f[0] - center[0], f[1] - center[1]);
}

bool goal_contains(const GoalRegion& goal, std::span<const double> x) {
  return goal.distance(x) <= goal.radius;
}

double stage_cost(const GoalRegion& goal, std::span<const double> x,
                  std::span<const double> /*u*/) {
  return goal_contains(goal, x) ? 0.0 : 1.0;
}

double Trajectory::total_cost() const {
  double s = 0.0;
  for (double c : stage_costs) s += c;
  return s;
}

void Trajectory::check_shape() const {
  if (states.empty()) throw ContractViolation("trajectory has no states");
  const std::size_t T = controls.size();
  if (states.size() != T + 1 || disturbances.size() != T || stage_costs.size() != T) {
    throw ContractViolation("trajectory lists have inconsistent lengths");
  }
}

void relabel(Trajectory& traj, const GoalRegion& goal) {
  traj.stage_costs.resize(traj.controls.size());
  traj.check_shape();
  for (std::size_t t = 0; t < traj.stage_costs.size(); ++t) {
    traj.stage_costs[t] = stage_cost(goal, traj.states[t]);
  }
  traj.goal_id = goal.id;
}

std::vector<double> cost_to_go_labels(const Trajectory& traj, const GoalRegion& goal) {
  traj.check_shape();
  if (traj.goal_id != goal.id) {
    throw ContractViolation("trajectory labelled for goal '" + traj.goal_id + "', not '" +
                            goal.id + "'");
  }
  const std::size_t T = traj.length();
  std::vector<double> labels(T + 1);
  // The final state contributes only its own label, so label[0] is the
  // trajectory cost and never exceeds the horizon.
  labels[T] = stage_cost(goal, traj.states[T]);
  double tail = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    tail += traj.stage_costs[t];
    labels[t] = tail;
  }
  return labels;
}

// splitmix64 finalizer over an FNV-1a hash of the label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::string_view label)
    : seed_(seed), label_(label), engine_(derive_seed(seed, label)) {}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::normal() { return normal_(engine_); }

std::size_t RngStream::index(std::size_t n) {
  if (n == 0) throw ContractViolation("RngStream::index on empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

RngStream RngStream::child(std::string_view sublabel) const {
  std::string l = label_;
  l += '/';
  l += sublabel;
  return RngStream(seed_, l);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

void write_header(std::ostream& os, const Trajectory& traj) {
  const std::size_t n = traj.states.front().size();
  const std::size_t m = traj.controls.empty() ? 0 : traj.controls.front().size();
  const std::size_t d = traj.disturbances.empty() ? 0 : traj.disturbances.front().size();
  os << "iteration,t";
  for (std::size_t i = 0; i < n; ++i) os << ",x" << i;
  for (std::size_t i = 0; i < m; ++i) os << ",u" << i;
  for (std::size_t i = 0; i < d; ++i) os << ",w" << i;
  os << ",stage_cost,goal_id\n";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc()) throw ConfigError("bad number in CSV: '" + s + "'");
  return v;
}

}  // namespace

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, bool header) {
  traj.check_shape();
  if (header) write_header(os, traj);
  const std::size_t T = traj.length();
  const std::size_t m = T ? traj.controls.front().size() : 0;
  const std::size_t d = T ? traj.disturbances.front().size() : 0;
  for (std::size_t t = 0; t <= T; ++t) {
    os << traj.iteration << ',' << t;
    for (double v : traj.states[t]) os << ',' << format_double(v);
    if (t < T) {
      for (double v : traj.controls[t]) os << ',' << format_double(v);
      for (double v : traj.disturbances[t]) os << ',' << format_double(v);
      os << ',' << format_double(traj.stage_costs[t]);
    } else {
      for (std::size_t i = 0; i < m + d + 1; ++i) os << ',';
    }
    os << ',' << traj.goal_id << '\n';
  }
}

void write_trajectories_csv(std::ostream& os, std::span<const Trajectory> trajs) {
  bool first = true;
  for (const auto& t : trajs) {
    write_trajectory_csv(os, t, first);
    first = false;
  }
}

std::vector<Trajectory> read_trajectories_csv(std::istream& is, std::size_t n, std::size_t m,
                                              std::size_t d) {
  std::vector<Trajectory> out;
  std::string line;
  if (!std::getline(is, line)) return out;  // header
  const std::size_t width = 2 + n + m + d + 2;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != width) throw ConfigError("trajectory CSV row has wrong width");
    const int iteration = std::stoi(cells[0]);
    const std::size_t t = std::stoul(cells[1]);
    if (t == 0) {
      out.emplace_back();
      out.back().iteration = iteration;
      out.back().goal_id = cells.back();
    }
    if (out.empty()) throw ConfigError("trajectory CSV does not start at t = 0");
    Trajectory& traj = out.back();
    StateVec x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = parse_double(cells[2 + i]);
    traj.states.push_back(std::move(x));
    if (!cells[2 + n].empty() || m == 0) {
      if (cells[2 + n + m + d].empty()) continue;  // final row of a control-free trajectory
      ControlVec u(m);
      DisturbanceVec w(d);
      for (std::size_t i = 0; i < m; ++i) u[i] = parse_double(cells[2 + n + i]);
      for (std::size_t i = 0; i < d; ++i) w[i] = parse_double(cells[2 + n + m + i]);
      traj.controls.push_back(std::move(u));
      traj.disturbances.push_back(std::move(w));
      traj.stage_costs.push_back(parse_double(cells[2 + n + m + d]));
    }
  }
  for (const auto& t : out) t.check_shape();
  return out;
}

}  // namespace lmpc
