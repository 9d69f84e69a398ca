// Runs the shipped experiment configs and prints one PASS/FAIL line per
// acceptance criterion. Progress goes to stderr.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lmpc/oracles.hpp"
#include "lmpc/runner.hpp"

using namespace lmpc;

namespace {

const std::string kConfigDir = LMPC_CONFIG_DIR;

struct Run {
  std::vector<IterationRecord> records;  // demo record first when present
  double seconds = 0.0;
  int violations = 0;

  const IterationRecord& at(int iteration) const {
    for (const auto& r : records) {
      if (r.iteration == iteration) return r;
    }
    throw std::runtime_error("no record for iteration " + std::to_string(iteration));
  }
};

using Inspect = std::function<void(const Learner&, const IterationRecord&)>;

Run run_config(const std::string& file, const Inspect& inspect = {}) {
  ExperimentConfig cfg = load_config(kConfigDir + "/" + file);
  cfg.out_dir.clear();
  const auto t0 = std::chrono::steady_clock::now();
  Learner learner(cfg);
  Run run;
  auto log = [&](const IterationRecord& r) {
    std::fprintf(stderr, "  %s it %2d goal %s mean %6.2f std %5.2f viol %d\n", file.c_str(),
                 r.iteration, r.goal_id.c_str(), r.mean_cost(), r.std_cost(), r.violations);
  };
  if (auto demo = learner.initialize()) {
    run.records.push_back(*demo);
    log(*demo);
  }
  for (int j = 1; j <= cfg.iterations; ++j) {
    run.records.push_back(learner.run_iteration(j));
    const auto& r = run.records.back();
    run.violations += r.violations;
    log(r);
    if (inspect) inspect(learner, r);
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// Verdicts are printed in criterion order once every run has finished.
std::map<int, std::pair<bool, std::string>> verdicts;

void report(int id, bool passed, const std::string& detail) {
  std::fprintf(stderr, "criterion %d %s\n", id, passed ? "PASS" : "FAIL");
  verdicts[id] = {passed, detail};
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double band_mean(const Run& run, int from, int to) {
  double s = 0.0;
  for (int j = from; j <= to; ++j) s += run.at(j).mean_cost();
  return s / (to - from + 1);
}

// Demo level, two milestones and the monotone band of a fixed-start run.
void fixed_start_criterion(int id, const Run& run, double demo_target, double early_bound,
                           int early_iteration, double final_bound, double max_seconds) {
  const double demo = run.at(0).mean_cost();
  const double early = run.at(early_iteration).mean_cost();
  const double last = run.at(10).mean_cost();
  const double band = band_mean(run, 8, 10);
  const double first = run.at(1).mean_cost();
  const bool demo_ok = std::fabs(demo - demo_target) <= 8.0;
  const bool early_ok = early_iteration == 0 || early <= early_bound;
  const bool last_ok = last <= final_bound;
  const bool band_ok = band <= first;
  std::string detail = "demos " + fmt("%.2f", demo) + " (target " + fmt("%.2f", demo_target) +
                       " +-8)";
  if (early_iteration > 0) {
    detail += ", iteration " + std::to_string(early_iteration) + " " + fmt("%.2f", early) +
              " (<= " + fmt("%.0f", early_bound) + ")";
  }
  detail += ", iteration 10 " + fmt("%.2f", last) + " (<= " + fmt("%.0f", final_bound) + ")";
  detail += ", mean(8..10) " + fmt("%.2f", band) + " vs iteration 1 " + fmt("%.2f", first) +
            (band_ok ? "" : " [monotone band violated]");
  const bool time_ok = run.seconds <= max_seconds;
  detail += ", " + fmt("%.0f", run.seconds) + " s";
  if (max_seconds < 1e9) detail += " (<= " + fmt("%.0f", max_seconds) + " s)";
  report(id, demo_ok && early_ok && last_ok && band_ok && time_ok, detail);
}

}  // namespace

int main() {
  int task_violations = 0;

  // 1. Navigation, fixed start and goal.
  const Run nav = run_config("nav_fixed.json");
  task_violations += nav.violations;
  fixed_start_criterion(1, nav, 42.58, 30.0, 3, 25.0, 20 * 60);

  // 2. Reacher, fixed start and goal.
  const Run reacher = run_config("reacher_fixed.json");
  task_violations += reacher.violations;
  fixed_start_criterion(2, reacher, 37.77, 0.0, 0, 28.0, 1e18);

  // 4. Start-state expansion toward (-70, 0).
  int unsafe_terminals = 0, accepted = 0;
  const Run expand = run_config("nav_expand.json", [&](const Learner& l, const IterationRecord& r) {
    if (!r.expansion || !r.expansion->accepted) return;
    ++accepted;
    // The batch was checked against the safe set built from iterations <= r.iteration.
    const auto stored = l.store().states(r.goal_id, r.iteration);
    for (const auto& x : r.expansion->terminals) {
      if (!oracle::is_safe(*l.env(), stored, l.active_goal(), x.span(), l.config().alpha)) {
        ++unsafe_terminals;
      }
    }
  });
  task_violations += expand.violations;
  {
    const auto& last = expand.records.back();
    const double dist = std::hypot(last.start[0] + 70.0, last.start[1]);
    const bool ok = last.iteration == 25 && dist <= 3.0 && unsafe_terminals == 0 && accepted > 0 &&
                    last.mean_cost() <= 38.0;
    report(4, ok,
           "final start (" + fmt("%.2f", last.start[0]) + ", " + fmt("%.2f", last.start[1]) +
               ") at distance " + fmt("%.2f", dist) + " (<= 3), " + std::to_string(accepted) +
               " accepted batches with " + std::to_string(unsafe_terminals) +
               " unsafe terminals, cost from final start " + fmt("%.2f", last.mean_cost()) +
               " (<= 38)");
  }

  // 5. Goal transfer at iteration 3.
  int reached = -1, rollouts = 0;
  const Run transfer = run_config("nav_transfer.json", [&](const Learner& l, const IterationRecord& r) {
    if (r.iteration != 3) return;
    reached = 0;
    for (const auto& t : l.last_rollouts()) {
      ++rollouts;
      reached += oracle::first_entry(t, l.active_goal()) >= 0;
    }
  });
  task_violations += transfer.violations;
  {
    const auto& first = transfer.at(3);
    const bool ok = first.goal_id == "G1" && rollouts > 0 && reached == rollouts;
    report(5, ok,
           "iteration 3 goal " + first.goal_id + ", " + std::to_string(reached) + "/" +
               std::to_string(rollouts) + " rollouts reach G1 within T, mean cost " +
               fmt("%.2f", first.mean_cost()));
  }

  // 6. Pendulum swing-up without demos.
  const Run pendulum = run_config("pendulum_swingup.json");
  task_violations += pendulum.violations;
  {
    const auto& last = pendulum.records.back();
    const bool ok = last.iteration == 30 && last.goal_id == "G1" && last.mean_cost() <= 5.0;
    report(6, ok,
           "iteration 30 goal " + last.goal_id + ", mean cost " + fmt("%.2f", last.mean_cost()) +
               " +- " + fmt("%.2f", last.std_cost()) + " (<= 5)");
  }

  // 3. Task-phase violations across the runs above.
  report(3, task_violations == 0,
         std::to_string(task_violations) + " task-phase constraint violations (exactly 0 required)");

  // 7. Brute-force property suite.
  {
    const auto t0 = std::chrono::steady_clock::now();
    const auto checks = oracle::run_property_suite(7);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    int failed = 0;
    std::string names;
    for (const auto& c : checks) {
      if (!c.passed) {
        ++failed;
        names += " " + c.name + " (" + c.detail + ")";
      }
    }
    report(7, failed == 0 && secs < 120.0,
           std::to_string(checks.size() - failed) + "/" + std::to_string(checks.size()) +
               " checks agree with their oracles in " + fmt("%.1f", secs) + " s (< 120)" + names);
  }

  int failures = 0;
  for (const auto& [id, v] : verdicts) {
    std::printf("criterion %d %s: %s\n", id, v.first ? "PASS" : "FAIL", v.second.c_str());
    failures += !v.first;
  }
  std::printf("%d of %zu criteria failed\n", failures, verdicts.size());
  return failures == 0 ? 0 : 1;
}
