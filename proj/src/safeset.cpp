#include "lmpc/safeset.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

namespace lmpc {

SafeSetStore::SafeSetStore(std::shared_ptr<const Environment> env) : env_(std::move(env)) {
  if (!env_) throw ContractViolation("SafeSetStore needs an environment");
}

std::size_t SafeSetStore::add_states(const GoalId& goal_id, int iteration,
                                     std::span<const StateVec> states) {
  auto last = last_iteration(goal_id);
  if (last && iteration < *last) {
    throw ContractViolation("SafeSetStore: iteration " + std::to_string(iteration) +
                            " added after iteration " + std::to_string(*last));
  }
  Slice& slice = slices_[goal_id];
  std::size_t added = 0;
  for (const auto& x : states) {
    if (x.size() != env_->state_dim()) throw ContractViolation("SafeSetStore: state dimension");
    if (!env_->state_ok(x)) continue;
    slice.states.push_back(x);
    slice.iterations.push_back(iteration);
    ++added;
  }
  return added;
}

std::size_t SafeSetStore::add_rollouts(const GoalId& goal_id, int iteration,
                                       std::span<const Trajectory> trajs) {
  for (const auto& t : trajs) {
    if (t.goal_id != goal_id) {
      throw ContractViolation("add_rollouts: trajectory for goal '" + t.goal_id +
                              "' added under '" + goal_id + "'");
    }
  }
  std::size_t added = 0;
  for (const auto& t : trajs) added += add_states(goal_id, iteration, t.states);
  return added;
}

const SafeSetStore::Slice* SafeSetStore::find(const GoalId& goal_id) const {
  auto it = slices_.find(goal_id);
  return it == slices_.end() ? nullptr : &it->second;
}

bool SafeSetStore::has_goal(const GoalId& goal_id) const { return find(goal_id) != nullptr; }

std::vector<GoalId> SafeSetStore::goals() const {
  std::vector<GoalId> out;
  for (const auto& [g, _] : slices_) out.push_back(g);
  return out;
}

std::size_t SafeSetStore::size(const GoalId& goal_id) const {
  const Slice* s = find(goal_id);
  return s ? s->states.size() : 0;
}

std::size_t SafeSetStore::size(const GoalId& goal_id, int up_to) const {
  const Slice* s = find(goal_id);
  if (!s) return 0;
  return static_cast<std::size_t>(
      std::upper_bound(s->iterations.begin(), s->iterations.end(), up_to) - s->iterations.begin());
}

std::span<const StateVec> SafeSetStore::states(const GoalId& goal_id) const {
  const Slice* s = find(goal_id);
  if (!s) return {};
  return s->states;
}

std::span<const StateVec> SafeSetStore::states(const GoalId& goal_id, int up_to) const {
  return states(goal_id).first(size(goal_id, up_to));
}

std::span<const int> SafeSetStore::iterations(const GoalId& goal_id) const {
  const Slice* s = find(goal_id);
  if (!s) return {};
  return s->iterations;
}

std::optional<int> SafeSetStore::last_iteration(const GoalId& goal_id) const {
  const Slice* s = find(goal_id);
  if (!s || s->iterations.empty()) return std::nullopt;
  return s->iterations.back();
}

void SafeSetStore::write_csv(std::ostream& os) const {
  os << "goal_id,iteration";
  for (std::size_t i = 0; i < env_->state_dim(); ++i) os << ",x" << i;
  os << '\n';
  for (const auto& [goal, slice] : slices_) {
    for (std::size_t k = 0; k < slice.states.size(); ++k) {
      os << goal << ',' << slice.iterations[k];
      for (double v : slice.states[k]) os << ',' << format_double(v);
      os << '\n';
    }
  }
}

SafeSetStore SafeSetStore::read_csv(std::istream& is, std::shared_ptr<const Environment> env) {
  SafeSetStore store(std::move(env));
  const std::size_t n = store.env_->state_dim();
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != n + 2) throw ConfigError("safe-set CSV row has wrong width");
    StateVec x(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = cells[2 + i];
      auto res = std::from_chars(c.data(), c.data() + c.size(), x[i]);
      if (res.ec != std::errc()) throw ConfigError("bad number in safe-set CSV");
    }
    store.add_states(cells[0], std::stoi(cells[1]), std::span<const StateVec>(&x, 1));
  }
  return store;
}

DensityModel::DensityModel(const SafeSetStore& store, const GoalId& goal_id,
                           int up_to_iteration, double alpha, std::optional<GoalRegion> goal,
                           double delta)
    : alpha_(alpha), delta_(delta), goal_(std::move(goal)) {
  if (!(alpha > 0.0)) throw ConfigError("density kernel width must be positive");
  auto slice = store.states(goal_id, up_to_iteration);
  if (slice.empty() && !goal_) {
    throw ConfigError("density model for '" + goal_id + "' has neither states nor a goal region");
  }
  index_ = NeighborIndex(store.env(), std::vector<StateVec>(slice.begin(), slice.end()));
}

double DensityModel::density(std::span<const double> x) const {
  if (goal_ && goal_contains(*goal_, x)) return 1.0;
  if (index_.empty()) return 0.0;
  return static_cast<double>(index_.count_within(x, alpha_)) /
         static_cast<double>(index_.size());
}

bool DensityModel::is_safe(std::span<const double> x) const {
  if (goal_ && goal_contains(*goal_, x)) return true;
  if (delta_ == 0.0) return index_.any_within(x, alpha_);
  return density(x) > delta_;
}

std::vector<Trajectory> goal_conditioned_prefixes(std::span<const Trajectory> trajs,
                                                  const GoalRegion& new_goal) {
  std::vector<Trajectory> out;
  for (const auto& traj : trajs) {
    traj.check_shape();
    std::size_t entry = traj.states.size();
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
      if (goal_contains(new_goal, traj.states[t])) {
        entry = t;
        break;
      }
    }
    if (entry == traj.states.size()) continue;
    Trajectory p;
    p.states.assign(traj.states.begin(), traj.states.begin() + entry + 1);
    p.controls.assign(traj.controls.begin(), traj.controls.begin() + entry);
    p.disturbances.assign(traj.disturbances.begin(), traj.disturbances.begin() + entry);
    p.stage_costs.assign(entry, 0.0);
    p.iteration = traj.iteration;
    p.seed = traj.seed;
    relabel(p, new_goal);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace lmpc
