#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "lmpc/envs.hpp"

namespace lmpc {

/// Exact fixed-radius neighbour search under an environment's state metric.
///
/// A kd-tree over the stored points prunes with axis-aligned bounds (periodic
/// coordinates are bounded by their nearest image); every candidate that
/// survives pruning is tested with Environment::state_distance_sq, so answers
/// match a linear scan with the same metric bit for bit.
class NeighborIndex {
 public:
  NeighborIndex() = default;
  NeighborIndex(std::shared_ptr<const Environment> env, std::vector<StateVec> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const StateVec& point(std::size_t i) const { return points_[i]; }

  /// True iff some point lies within distance radius of q.
  bool any_within(std::span<const double> q, double radius) const;
  /// Calls fn(i) for every point i within distance radius of q.
  void for_each_within(std::span<const double> q, double radius,
                       const std::function<void(std::size_t)>& fn) const;
  std::size_t count_within(std::span<const double> q, double radius) const;

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end);
  double lower_bound_sq(const Node& node, std::size_t node_id, std::span<const double> q) const;
  template <class Visit>
  bool search(std::span<const double> q, double radius, Visit&& visit) const;

  std::shared_ptr<const Environment> env_;
  std::vector<StateVec> points_;
  std::vector<double> keys_;        // wrapped coordinates, row-major
  std::vector<double> periods_;
  std::size_t dim_ = 0;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::vector<double> box_lo_, box_hi_;  // per node, row-major
};

}  // namespace lmpc
