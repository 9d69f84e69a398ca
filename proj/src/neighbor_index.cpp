#include "lmpc/neighbor_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lmpc {

namespace {
constexpr std::size_t kLeafSize = 12;

double wrap_to_period(double v, double period) {
  double r = std::fmod(v, period);
  if (r < 0.0) r += period;
  if (r >= period) r = 0.0;
  return r;
}
}  // namespace

NeighborIndex::NeighborIndex(std::shared_ptr<const Environment> env, std::vector<StateVec> points)
    : env_(std::move(env)), points_(std::move(points)) {
  if (!env_) throw ContractViolation("NeighborIndex needs an environment metric");
  dim_ = env_->state_dim();
  periods_ = env_->state_periods();
  keys_.resize(points_.size() * dim_);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (points_[i].size() != dim_) throw ContractViolation("NeighborIndex: point dimension");
    for (std::size_t d = 0; d < dim_; ++d) {
      const double v = points_[i][d];
      keys_[i * dim_ + d] = periods_[d] > 0.0 ? wrap_to_period(v, periods_[d]) : v;
    }
  }
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) build(0, points_.size());
}

int NeighborIndex::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1});
  box_lo_.resize(nodes_.size() * dim_);
  box_hi_.resize(nodes_.size() * dim_);
  double* lo = &box_lo_[id * dim_];
  double* hi = &box_hi_[id * dim_];
  std::fill(lo, lo + dim_, std::numeric_limits<double>::infinity());
  std::fill(hi, hi + dim_, -std::numeric_limits<double>::infinity());
  for (std::size_t k = begin; k < end; ++k) {
    const double* key = &keys_[order_[k] * dim_];
    for (std::size_t d = 0; d < dim_; ++d) {
      lo[d] = std::min(lo[d], key[d]);
      hi[d] = std::max(hi[d], key[d]);
    }
  }
  if (end - begin <= kLeafSize) return id;

  std::size_t split_dim = 0;
  double spread = -1.0;
  for (std::size_t d = 0; d < dim_; ++d) {
    if (hi[d] - lo[d] > spread) {
      spread = hi[d] - lo[d];
      split_dim = d;
    }
  }
  if (spread <= 0.0) return id;  // all keys identical

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::size_t a, std::size_t b) {
                     return keys_[a * dim_ + split_dim] < keys_[b * dim_ + split_dim];
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double NeighborIndex::lower_bound_sq(const Node&, std::size_t node_id,
                                     std::span<const double> q) const {
  const double* lo = &box_lo_[node_id * dim_];
  const double* hi = &box_hi_[node_id * dim_];
  double s = 0.0;
  for (std::size_t d = 0; d < dim_; ++d) {
    double gap;
    if (periods_[d] > 0.0) {
      const double p = periods_[d];
      const double v = wrap_to_period(q[d], p);
      gap = std::numeric_limits<double>::infinity();
      for (double shift : {-p, 0.0, p}) {
        const double vs = v + shift;
        const double g = vs < lo[d] ? lo[d] - vs : (vs > hi[d] ? vs - hi[d] : 0.0);
        gap = std::min(gap, g);
      }
    } else {
      gap = q[d] < lo[d] ? lo[d] - q[d] : (q[d] > hi[d] ? q[d] - hi[d] : 0.0);
    }
    s += gap * gap;
  }
  return s;
}

template <class Visit>
bool NeighborIndex::search(std::span<const double> q, double radius, Visit&& visit) const {
  if (nodes_.empty()) return false;
  if (q.size() != dim_) throw ContractViolation("NeighborIndex: query dimension");
  const double r2 = radius * radius;
  // Slack keeps pruning conservative against rounding in the bound.
  const double prune = r2 * (1.0 + 1e-9) + 1e-12;
  std::size_t stack[128];
  std::size_t top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const std::size_t id = stack[--top];
    const Node& node = nodes_[id];
    if (lower_bound_sq(node, id, q) > prune) continue;
    if (node.left < 0) {
      for (std::size_t k = node.begin; k < node.end; ++k) {
        const std::size_t i = order_[k];
        if (env_->state_distance_sq(q, points_[i].span()) <= r2) {
          if (visit(i)) return true;
        }
      }
      continue;
    }
    stack[top++] = static_cast<std::size_t>(node.right);
    stack[top++] = static_cast<std::size_t>(node.left);
  }
  return false;
}

bool NeighborIndex::any_within(std::span<const double> q, double radius) const {
  return search(q, radius, [](std::size_t) { return true; });
}

void NeighborIndex::for_each_within(std::span<const double> q, double radius,
                                    const std::function<void(std::size_t)>& fn) const {
  search(q, radius, [&](std::size_t i) {
    fn(i);
    return false;
  });
}

std::size_t NeighborIndex::count_within(std::span<const double> q, double radius) const {
  std::size_t n = 0;
  search(q, radius, [&](std::size_t) {
    ++n;
    return false;
  });
  return n;
}

}  // namespace lmpc
