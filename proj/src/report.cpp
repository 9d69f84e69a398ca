#include "lmpc/report.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace lmpc {

std::string join_state(std::span<const double> x, char sep) {
  std::string out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (i) out += sep;
    out += format_double(x[i]);
  }
  return out;
}

std::vector<double> split_state(const std::string& s, char sep) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, sep)) {
    if (!cell.empty()) out.push_back(std::stod(cell));
  }
  return out;
}

SummaryRow summarize(const IterationRecord& r) {
  return {r.iteration, r.goal_id,         r.mean_cost(),        r.std_cost(),
          r.violations, r.safe_set_size, r.start.values()};
}

void write_summary_csv(std::ostream& os, std::span<const IterationRecord> records) {
  os << "iteration,goal_id,mean_cost,std_cost,violations,safe_set_size,start_state\n";
  for (const auto& r : records) {
    const auto s = summarize(r);
    os << s.iteration << ',' << s.goal_id << ',' << format_double(s.mean_cost) << ','
       << format_double(s.std_cost) << ',' << s.violations << ',' << s.safe_set_size << ','
       << join_state(s.start_state) << '\n';
  }
}

std::vector<SummaryRow> read_summary_csv(std::istream& is) {
  std::vector<SummaryRow> rows;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 6) throw ConfigError("summary.csv: malformed row '" + line + "'");
    SummaryRow r;
    r.iteration = std::stoi(cells[0]);
    r.goal_id = cells[1];
    r.mean_cost = std::stod(cells[2]);
    r.std_cost = std::stod(cells[3]);
    r.violations = std::stoi(cells[4]);
    r.safe_set_size = std::stoul(cells[5]);
    if (cells.size() > 6) r.start_state = split_state(cells[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_rollouts_csv(std::ostream& os, std::span<const IterationRecord> records) {
  os << "iteration,goal_id,rollout,seed,cost,violations\n";
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.costs.size(); ++i) {
      os << r.iteration << ',' << r.goal_id << ',' << i << ','
         << (i < r.seeds.size() ? r.seeds[i] : 0) << ',' << format_double(r.costs[i]) << ','
         << r.violations << '\n';
    }
  }
}

void write_expansion_csv(std::ostream& os, std::span<const IterationRecord> records) {
  os << "iteration,candidate,accepted,next_start,mean_exploration_cost\n";
  for (const auto& r : records) {
    if (!r.expansion) continue;
    const auto& e = *r.expansion;
    os << r.iteration << ',' << join_state(e.candidate.span()) << ',' << (e.accepted ? 1 : 0)
       << ',' << join_state(e.next_start.span()) << ',' << format_double(e.mean_exploration_cost)
       << '\n';
  }
}

std::string learning_curve_svg(std::span<const SummaryRow> rows, const std::string& title,
                               double max_cost) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  int max_iter = 1;
  for (const auto& r : rows) max_iter = std::max(max_iter, r.iteration);
  auto sx = [&](double it) { return L + (W - L - R) * it / max_iter; };
  auto sy = [&](double c) { return H - B - (H - T - B) * std::clamp(c / max_cost, 0.0, 1.0); };

  std::map<GoalId, std::vector<const SummaryRow*>> by_goal;
  std::vector<GoalId> order;
  for (const auto& r : rows) {
    if (!by_goal.count(r.goal_id)) order.push_back(r.goal_id);
    by_goal[r.goal_id].push_back(&r);
  }
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double c = max_cost * k / 5.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << sy(c) + 4 << "\" text-anchor=\"end\">"
       << format_double(std::round(c * 10) / 10) << "</text>\n";
  }
  const int step = std::max(1, max_iter / 10);
  for (int it = 0; it <= max_iter; it += step) {
    os << "<text x=\"" << sx(it) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << it
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\">iteration</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\" text-anchor=\"middle\">trajectory cost</text>\n";

  for (std::size_t g = 0; g < order.size(); ++g) {
    const auto& pts = by_goal[order[g]];
    const char* color = colors[g % 4];
    std::ostringstream band, line;
    for (const auto* p : pts) band << sx(p->iteration) << ',' << sy(p->mean_cost + p->std_cost) << ' ';
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
      band << sx((*it)->iteration) << ',' << sy((*it)->mean_cost - (*it)->std_cost) << ' ';
    }
    for (const auto* p : pts) line << sx(p->iteration) << ',' << sy(p->mean_cost) << ' ';
    os << "<polygon points=\"" << band.str() << "\" fill=\"" << color
       << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 + 16 * static_cast<double>(g)
       << "\" text-anchor=\"end\" fill=\"" << color << "\">" << order[g] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace lmpc
