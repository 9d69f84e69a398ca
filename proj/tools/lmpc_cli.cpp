// Command-line front end: run experiments, inspect demos, replay logs, plot,
// and run the brute-force property checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "lmpc/oracles.hpp"
#include "lmpc/report.hpp"
#include "lmpc/runner.hpp"

namespace fs = std::filesystem;
using namespace lmpc;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> iterations;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Override the master seed");
  cmd->add_option("--out", o.out, "Override the output directory");
  cmd->add_option("--iterations", o.iterations, "Override the iteration count");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.iterations) cfg.iterations = *o.iterations;
  cfg.validate();
  return cfg;
}

int cmd_run(const Overrides& o) {
  const auto cfg = resolve(o);
  std::printf("%-9s %-6s %9s %8s %10s %9s  %s\n", "iteration", "goal", "mean", "std", "violations",
              "safe_set", "start");
  run_experiment(cfg, [](const IterationRecord& r) {
    std::printf("%-9d %-6s %9.2f %8.2f %10d %9zu  %s\n", r.iteration, r.goal_id.c_str(),
                r.mean_cost(), r.std_cost(), r.violations, r.safe_set_size,
                join_state(r.start.span(), ' ').c_str());
    std::fflush(stdout);
  });
  if (!cfg.out_dir.empty()) std::printf("artifacts written to %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_demos(const Overrides& o, int count) {
  auto cfg = resolve(o);
  if (!cfg.demos) throw ConfigError("config has no demo spec");
  if (count > 0) cfg.demos->count = count;
  auto env = make_environment(cfg.env);
  RngStream rng(cfg.seed, "demos");
  const auto& goal = cfg.goals.front().goal;
  auto demos = generate_demos(env, *cfg.demos, goal, cfg.start, rng);
  IterationRecord rec;
  for (const auto& d : demos) rec.costs.push_back(d.total_cost());
  std::printf("%zu demos: mean cost %.2f, std %.2f\n", demos.size(), rec.mean_cost(),
              rec.std_cost());
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "demos.csv");
    write_trajectories_csv(out, demos);
    if (!out) throw std::runtime_error("cannot write demos.csv");
  }
  return 0;
}

int cmd_replay(const std::string& run_dir, std::optional<int> only) {
  const fs::path dir = run_dir;
  const auto cfg = load_config(dir / "config.json");
  auto env = make_environment(cfg.env);
  std::ifstream seeds_in(dir / "trajectories" / "seeds.json");
  if (!seeds_in) throw ConfigError("no trajectories/seeds.json under " + run_dir);
  nlohmann::json seeds;
  seeds_in >> seeds;
  int checked = 0, bad = 0;
  for (const auto& [key, list] : seeds.items()) {
    const int it = std::stoi(key);
    if (only && *only != it) continue;
    char name[32];
    std::snprintf(name, sizeof name, "iter_%03d.csv", it);
    std::ifstream in(dir / "trajectories" / name);
    if (!in) throw ConfigError(std::string("missing trajectory file ") + name);
    auto trajs = read_trajectories_csv(in, env->state_dim(), env->control_dim(),
                                       env->disturbance_dim());
    for (std::size_t r = 0; r < trajs.size(); ++r) {
      auto& t = trajs[r];
      t.seed = list.at(r).get<std::uint64_t>();
      const GoalRegion* goal = nullptr;
      for (const auto& g : cfg.goals) {
        if (g.goal.id == t.goal_id) goal = &g.goal;
      }
      if (!goal) throw ConfigError("trajectory goal '" + t.goal_id + "' not in config");
      const bool ok = oracle::replay_matches(*env, t, *goal);
      ++checked;
      bad += !ok;
      if (!ok) std::printf("iteration %d rollout %zu: replay differs\n", it, r);
    }
  }
  std::printf("replayed %d trajectories, %d mismatches\n", checked, bad);
  return bad == 0 ? 0 : 1;
}

int cmd_plot(const std::string& summary, const std::string& out, const std::string& title,
             double max_cost) {
  std::ifstream in(summary);
  if (!in) throw ConfigError("cannot open " + summary);
  const auto rows = read_summary_csv(in);
  std::ofstream os(out);
  os << learning_curve_svg(rows, title, max_cost);
  if (!os) throw std::runtime_error("cannot write " + out);
  return 0;
}

int cmd_oracle(std::uint64_t seed) {
  int failed = 0;
  for (const auto& c : oracle::run_property_suite(seed)) {
    std::printf("[%s] %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    failed += !c.passed;
  }
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning MPC with safe-set expansion and goal transfer"};
  app.require_subcommand(1);

  Overrides run_o, demo_o;
  auto* run = app.add_subcommand("run", "Run an experiment");
  add_common(run, run_o);

  auto* demos = app.add_subcommand("demos", "Generate demonstrations and report their cost");
  add_common(demos, demo_o);
  int demo_count = 0;
  demos->add_option("--count", demo_count, "Override the demo count");

  auto* replay = app.add_subcommand("replay", "Re-simulate logged trajectories of a run");
  std::string run_dir;
  std::optional<int> replay_iter;
  replay->add_option("--run", run_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);
  replay->add_option("--iteration", replay_iter, "Only this iteration");

  auto* plot = app.add_subcommand("plot", "Render summary.csv as an SVG learning curve");
  std::string summary, svg_out, title = "learning curve";
  double max_cost = 50.0;
  plot->add_option("--summary", summary, "summary.csv")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", svg_out, "Output SVG")->required();
  plot->add_option("--title", title, "Plot title");
  plot->add_option("--max-cost", max_cost, "Top of the cost axis");

  auto* orc = app.add_subcommand("oracle", "Compare library results with brute-force oracles");
  std::uint64_t oracle_seed = 7;
  orc->add_option("--seed", oracle_seed, "Seed of the random instances");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_o);
    if (*demos) return cmd_demos(demo_o, demo_count);
    if (*replay) return cmd_replay(run_dir, replay_iter);
    if (*plot) return cmd_plot(summary, svg_out, title, max_cost);
    if (*orc) return cmd_oracle(oracle_seed);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
