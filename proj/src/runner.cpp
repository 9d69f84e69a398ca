#include "lmpc/runner.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "lmpc/report.hpp"

namespace lmpc {

// ---------------------------------------------------------------- JSON

void to_json(nlohmann::json& j, const GoalRegion& g) {
  j = {{"id", g.id},
       {"feature", std::string(to_string(g.feature))},
       {"center", g.center},
       {"radius", g.radius},
       {"state_dim", g.state_dim},
       {"link_length", g.link_length}};
}

void from_json(const nlohmann::json& j, GoalRegion& g) {
  g = GoalRegion{};
  g.id = j.at("id").get<std::string>();
  g.feature = goal_feature_from_string(j.value("feature", std::string("position")));
  g.center = j.at("center").get<std::vector<double>>();
  g.radius = j.value("radius", g.radius);
  g.state_dim = j.value("state_dim", g.state_dim);
  g.link_length = j.value("link_length", g.link_length);
}

void to_json(nlohmann::json& j, const DemoSpec& d) {
  j = {{"count", d.count},         {"policy", d.policy},
       {"noise", d.noise},         {"max_retries", d.max_retries},
       {"waypoints", d.waypoints}, {"gain", d.gain},
       {"damping", d.damping},     {"switch_radius", d.switch_radius},
       {"feedback", d.feedback}};
}

void from_json(const nlohmann::json& j, DemoSpec& d) {
  d = DemoSpec{};
  d.count = j.value("count", d.count);
  d.policy = j.value("policy", d.policy);
  d.noise = j.value("noise", d.noise);
  d.max_retries = j.value("max_retries", d.max_retries);
  d.waypoints = j.value("waypoints", d.waypoints);
  d.gain = j.value("gain", d.gain);
  d.damping = j.value("damping", d.damping);
  d.switch_radius = j.value("switch_radius", d.switch_radius);
  d.feedback = j.value("feedback", d.feedback);
  if (d.feedback.size() != 2) throw ConfigError("demos.feedback needs two gains");
}

void ExperimentConfig::validate() const {
  if (goals.empty()) throw ConfigError("config: goal schedule is empty");
  if (goals.front().activation_iteration != 0) {
    throw ConfigError("config: first goal must activate at iteration 0");
  }
  for (std::size_t i = 1; i < goals.size(); ++i) {
    if (goals[i].activation_iteration <= goals[i - 1].activation_iteration) {
      throw ConfigError("config: goal activation iterations must be strictly increasing");
    }
  }
  for (const auto& g : goals) {
    try {
      g.goal.validate();
      if (g.trigger) g.trigger->validate();
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
  }
  if (rollouts < 1 || iterations < 0) throw ConfigError("config: need rollouts >= 1, iterations >= 0");
  if (!(alpha > 0.0)) throw ConfigError("config: alpha must be positive");
  if (demos && demos->count < 1) throw ConfigError("config: demo count must be >= 1");
  task_cem.validate();
  exploration_cem.validate();
  if (expansion) expansion->validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json goals = nlohmann::json::array();
  for (const auto& g : c.goals) {
    nlohmann::json e = {{"goal", g.goal}, {"activation_iteration", g.activation_iteration}};
    if (g.trigger) e["trigger"] = *g.trigger;
    goals.push_back(std::move(e));
  }
  j = {{"name", c.name},
       {"env", c.env},
       {"goals", goals},
       {"start", c.start.values()},
       {"task_cem", c.task_cem},
       {"exploration_cem", c.exploration_cem},
       {"augment_exploration", c.augment_exploration},
       {"rollouts", c.rollouts},
       {"iterations", c.iterations},
       {"seed", c.seed},
       {"out_dir", c.out_dir},
       {"value", c.value},
       {"alpha", c.alpha},
       {"plot", c.plot}};
  j["demos"] = c.demos ? nlohmann::json(*c.demos) : nlohmann::json(nullptr);
  j["expansion"] = c.expansion ? nlohmann::json(*c.expansion) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  c.name = j.value("name", c.name);
  c.env = j.at("env");
  const auto env = make_environment(c.env);
  for (const auto& e : j.at("goals")) {
    GoalStage s;
    s.goal = e.at("goal").get<GoalRegion>();
    if (s.goal.state_dim == 0) s.goal.state_dim = env->state_dim();
    s.activation_iteration = e.value("activation_iteration", 0);
    if (e.contains("trigger") && !e["trigger"].is_null()) {
      s.trigger = e["trigger"].get<GoalRegion>();
      if (s.trigger->state_dim == 0) s.trigger->state_dim = env->state_dim();
    }
    c.goals.push_back(std::move(s));
  }
  c.start = StateVec(j.at("start").get<std::vector<double>>());
  if (c.start.size() != env->state_dim()) throw ConfigError("config: start has the wrong dimension");
  if (j.contains("demos") && !j["demos"].is_null()) c.demos = j["demos"].get<DemoSpec>();
  if (j.contains("task_cem")) c.task_cem = j["task_cem"].get<CemParams>();
  c.exploration_cem = j.contains("exploration_cem") ? j["exploration_cem"].get<CemParams>()
                                                     : c.task_cem;
  if (j.contains("expansion") && !j["expansion"].is_null()) {
    c.expansion = j["expansion"].get<ExpansionSpec>();
  }
  c.augment_exploration = j.value("augment_exploration", false);
  c.rollouts = j.value("rollouts", c.rollouts);
  c.iterations = j.value("iterations", c.iterations);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (j.contains("value")) c.value = j["value"].get<ValueConfig>();
  c.alpha = j.value("alpha", c.alpha);
  c.plot = j.value("plot", c.plot);
  c.validate();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  try {
    return j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------- records

double IterationRecord::mean_cost() const {
  if (costs.empty()) return 0.0;
  return std::accumulate(costs.begin(), costs.end(), 0.0) / static_cast<double>(costs.size());
}

double IterationRecord::std_cost() const {
  if (costs.empty()) return 0.0;
  const double m = mean_cost();
  double ss = 0.0;
  for (double c : costs) ss += (c - m) * (c - m);
  return std::sqrt(ss / static_cast<double>(costs.size()));
}

// ---------------------------------------------------------------- seeds

std::uint64_t rollout_seed(std::uint64_t master, int iteration, int rollout) {
  return derive_seed(master, "iter/" + std::to_string(iteration) + "/rollout/" +
                                 std::to_string(rollout));
}

RngStream disturbance_stream(std::uint64_t seed) { return RngStream(seed, "disturbance"); }

Trajectory replay_trajectory(const Environment& env, const Trajectory& traj,
                             const GoalRegion& goal) {
  traj.check_shape();
  RngStream rng = disturbance_stream(traj.seed);
  Policy policy = [&traj](const StateVec&, int t) {
    return traj.controls[static_cast<std::size_t>(t)];
  };
  Trajectory out = rollout_closed_loop(env, policy, traj.states.front(),
                                       static_cast<int>(traj.length()), goal, rng);
  out.iteration = traj.iteration;
  return out;
}

// ---------------------------------------------------------------- learner

Learner::Learner(ExperimentConfig config)
    : config_(std::move(config)),
      env_(make_environment(config_.env)),
      store_(env_),
      bank_(std::make_shared<ValueFunctionBank>(env_->horizon())),
      start_(config_.start) {
  config_.validate();
}

void Learner::rebuild_density(int up_to) {
  const auto& goal = active_goal();
  density_ = std::make_shared<DensityModel>(store_, goal.id, up_to, config_.alpha, goal);
  bank_->set_density(goal.id, density_);
}

std::optional<IterationRecord> Learner::initialize() {
  const auto& goal = active_goal();
  bank_->set_goal(goal);
  last_.clear();
  if (!config_.demos) {
    rebuild_density(0);
    return std::nullopt;
  }
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(config_.seed, "demos");
  last_ = generate_demos(env_, *config_.demos, goal, start_, rng);
  learn_from(0, last_, {});
  history_.insert(history_.end(), last_.begin(), last_.end());

  IterationRecord rec;
  rec.iteration = 0;
  rec.goal_id = goal.id;
  rec.start = start_;
  for (const auto& t : last_) {
    rec.costs.push_back(t.total_cost());
    rec.seeds.push_back(t.seed);
    rec.violations += count_violations(*env_, t);
  }
  rec.safe_set_size = store_.size(goal.id);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

void Learner::learn_from(int j, const std::vector<Trajectory>& trajs,
                         const std::vector<Trajectory>& extra_value_data) {
  const auto& goal = active_goal();
  store_.add_rollouts(goal.id, j, trajs);
  std::vector<Trajectory> data = trajs;
  data.insert(data.end(), extra_value_data.begin(), extra_value_data.end());
  RngStream rng(config_.seed, "value/" + goal.id + "/" + std::to_string(j));
  bank_->add(goal.id, j, fit_iteration_value(env_, data, goal, config_.value, rng));
  rebuild_density(j);
}

void Learner::maybe_switch_goal(int j) {
  if (stage_ + 1 >= config_.goals.size()) return;
  const auto& next = config_.goals[stage_ + 1];
  const bool due = j >= next.activation_iteration;
  const bool triggered = next.trigger && goal_contains(*next.trigger, start_);
  if (!due && !triggered) return;
  ++stage_;
  RngStream rng(config_.seed, "transfer/" + std::to_string(j));
  auto result = transfer_goal(store_, *bank_, next.goal, history_, config_.value, config_.alpha, rng);
  density_ = result.density;
  transfer_warning_ = result.needs_expansion;
}

std::optional<ExpansionLog> Learner::expand(int j) {
  last_exploration_.clear();
  if (!config_.expansion) return std::nullopt;
  const auto& spec = *config_.expansion;
  if (expansion_cost(*env_, spec, start_.span()) <= spec.stop_tolerance) return std::nullopt;
  RngStream rng(config_.seed, "expansion/" + std::to_string(j));
  auto out = attempt_expansion(env_, store_, active_goal(), density_, spec, config_.exploration_cem,
                               config_.task_cem.horizon, start_, rng);
  ExpansionLog log;
  log.candidate = out.candidate;
  log.accepted = out.accepted;
  log.next_start = out.next_start;
  log.mean_exploration_cost = out.mean_exploration_cost;
  log.candidates_tried = out.candidates_tried;
  if (out.accepted) {
    for (const auto& r : out.exploration) log.terminals.push_back(r.states.back());
    last_exploration_ = std::move(out.exploration);
    start_ = out.next_start;
  }
  return log;
}

IterationRecord Learner::run_iteration(int j) {
  if (j < 1) throw ContractViolation("run_iteration: iterations are numbered from 1");
  const auto t0 = std::chrono::steady_clock::now();
  maybe_switch_goal(j);
  const GoalRegion goal = active_goal();
  const int up_to = j - 1;

  IterationRecord rec;
  rec.iteration = j;
  rec.goal_id = goal.id;
  rec.start = start_;

  auto run_task = [&](const StateVec& x0, const std::string& label, std::uint64_t seed) {
    MpcController ctrl(env_, bank_, goal, up_to, density_, config_.task_cem);
    RngStream cem_rng(config_.seed, label + "/cem");
    Policy policy = [&](const StateVec& x, int) { return ctrl.step(x, cem_rng).first; };
    RngStream disturbance = disturbance_stream(seed);
    Trajectory traj = rollout_closed_loop(*env_, policy, x0, env_->horizon(), goal, disturbance);
    traj.iteration = j;
    return traj;
  };

  last_.clear();
  for (int r = 0; r < config_.rollouts; ++r) {
    const std::string label = "iter/" + std::to_string(j) + "/rollout/" + std::to_string(r);
    Trajectory traj = run_task(start_, label, rollout_seed(config_.seed, j, r));
    rec.costs.push_back(traj.total_cost());
    rec.seeds.push_back(traj.seed);
    rec.violations += count_violations(*env_, traj);
    last_.push_back(std::move(traj));
  }

  // The store and density take the new rollouts before expansion; the value
  // fit waits for the optional exploration-composed data.
  store_.add_rollouts(goal.id, j, last_);
  rebuild_density(j);
  rec.expansion = expand(j);

  std::vector<Trajectory> composed;
  if (config_.augment_exploration && !last_exploration_.empty()) {
    std::vector<Trajectory> tails;
    for (std::size_t i = 0; i < last_exploration_.size(); ++i) {
      const std::string label = "iter/" + std::to_string(j) + "/augment/" + std::to_string(i);
      tails.push_back(run_task(last_exploration_[i].states.back(), label,
                               derive_seed(config_.seed, label)));
    }
    auto aug = augment_with_exploration(store_, goal, j, *density_, last_exploration_, tails, true);
    composed = std::move(aug.composed);
  }
  std::vector<Trajectory> data = last_;
  data.insert(data.end(), composed.begin(), composed.end());
  RngStream vrng(config_.seed, "value/" + goal.id + "/" + std::to_string(j));
  bank_->add(goal.id, j, fit_iteration_value(env_, data, goal, config_.value, vrng));
  rebuild_density(j);

  history_.insert(history_.end(), last_.begin(), last_.end());
  rec.safe_set_size = store_.size(goal.id);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------- experiment

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

template <class Fn>
std::string render(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

}  // namespace

std::vector<IterationRecord> run_experiment(const ExperimentConfig& config,
                                            const IterationCallback& on_iteration) {
  Learner learner(config);
  std::vector<IterationRecord> records;
  const bool persist = !config.out_dir.empty();
  const std::filesystem::path out = config.out_dir;
  std::ofstream timing;
  nlohmann::json seed_index = nlohmann::json::object();

  auto persist_iteration = [&](const IterationRecord& rec) {
    if (!persist) {
      if (on_iteration) on_iteration(rec);
      return;
    }
    const auto& trajs = learner.last_rollouts();
    char name[32];
    std::snprintf(name, sizeof name, "iter_%03d.csv", rec.iteration);
    write_file(out / "trajectories" / name, render([&](std::ostream& os) {
                 write_trajectories_csv(os, trajs);
               }));
    seed_index[std::to_string(rec.iteration)] = rec.seeds;
    write_file(out / "trajectories" / "seeds.json", seed_index.dump(2) + "\n");
    write_file(out / "summary.csv", render([&](std::ostream& os) { write_summary_csv(os, records); }));
    write_file(out / "rollouts.csv", render([&](std::ostream& os) { write_rollouts_csv(os, records); }));
    write_file(out / "expansion.csv",
               render([&](std::ostream& os) { write_expansion_csv(os, records); }));
    write_file(out / "safeset.csv", render([&](std::ostream& os) { learner.store().write_csv(os); }));
    if (on_iteration) on_iteration(rec);
    timing << rec.iteration << ' ' << std::fixed << std::setprecision(3) << rec.seconds << "s\n"
           << std::flush;
  };

  if (persist) {
    std::filesystem::create_directories(out / "trajectories");
    write_file(out / "config.json", nlohmann::json(config).dump(2) + "\n");
    timing.open(out / "timing.log");
  }
  if (auto demo = learner.initialize()) {
    records.push_back(*demo);
    persist_iteration(records.back());
  }
  for (int j = 1; j <= config.iterations; ++j) {
    records.push_back(learner.run_iteration(j));
    persist_iteration(records.back());
  }
  if (persist) {
    learner.bank().save(out / "values");
    if (config.plot && !records.empty()) {
      std::vector<SummaryRow> rows;
      for (const auto& r : records) rows.push_back(summarize(r));
      write_file(out / "learning_curve.svg",
                 learning_curve_svg(rows, config.name, learner.env()->horizon()));
    }
  }
  return records;
}

}  // namespace lmpc
