#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lmpc/runner.hpp"

namespace lmpc {

/// One row of summary.csv.
struct SummaryRow {
  int iteration = 0;
  GoalId goal_id;
  double mean_cost = 0.0;
  double std_cost = 0.0;  // population standard deviation over the rollouts
  int violations = 0;
  std::size_t safe_set_size = 0;
  std::vector<double> start_state;
};

SummaryRow summarize(const IterationRecord& record);

/// Columns: iteration,goal_id,mean_cost,std_cost,violations,safe_set_size,start_state
/// with the start state's components separated by ';'.
void write_summary_csv(std::ostream& os, std::span<const IterationRecord> records);
std::vector<SummaryRow> read_summary_csv(std::istream& is);

/// Columns: iteration,goal_id,rollout,seed,cost,violations
void write_rollouts_csv(std::ostream& os, std::span<const IterationRecord> records);

/// Columns: iteration,candidate,accepted,next_start,mean_exploration_cost
void write_expansion_csv(std::ostream& os, std::span<const IterationRecord> records);

/// Learning curve (mean cost with a +-std band per goal) as a standalone SVG.
std::string learning_curve_svg(std::span<const SummaryRow> rows, const std::string& title,
                               double max_cost);

std::string join_state(std::span<const double> x, char sep = ';');
std::vector<double> split_state(const std::string& s, char sep = ';');

}  // namespace lmpc
