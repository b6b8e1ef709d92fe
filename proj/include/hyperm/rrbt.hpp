#pragma once

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

#include "hyperm/dynamics.hpp"
#include "hyperm/errors.hpp"
#include "hyperm/geometry.hpp"
#include "hyperm/rng.hpp"

namespace hyperm {

struct RrbtNode {
  Vec2 position;
  std::vector<int> regions;  // sorted ids of the regions containing the node
  int parent = -1;           // -1 for the root
  int edge_region = -1;      // region whose local controller realises the edge to the parent
  double cost_to_root = 0.0;
};

/// Rapidly-exploring random boundary tree: every non-root node lies on a
/// region boundary and every edge is a time-optimal transit inside one region.
class RrbtTree {
 public:
  RrbtTree(const Partition& partition, const Vec2& root, int root_target = -1)
      : partition_(&partition), root_target_(root_target), by_region_(partition.size()) {
    RrbtNode n;
    n.position = root;
    n.regions = partition.locate_or_throw(root);
    add_node(std::move(n));
  }

  const std::vector<RrbtNode>& nodes() const { return nodes_; }
  const std::vector<int>& active_regions() const { return active_; }
  int root_target() const { return root_target_; }
  const Vec2& root() const { return nodes_.front().position; }
  bool is_active(int region) const { return std::binary_search(active_.begin(), active_.end(), region); }

  /// Runs the sample / connect / activate loop for a number of iterations.
  void grow(std::size_t iterations, Rng& rng) {
    for (std::size_t it = 0; it < iterations; ++it) {
      const int r = active_[uniform_index(rng, active_.size())];
      const Vec2 b = partition_->sample_boundary(r, rng);
      auto regions = partition_->locate(b);
      if (regions.empty()) continue;
      if (is_duplicate(b, regions)) continue;
      const Best best = best_parent(b, regions);
      RrbtNode n;
      n.position = b;
      n.regions = std::move(regions);
      n.parent = best.node;
      n.edge_region = best.region;
      n.cost_to_root = best.cost;
      add_node(std::move(n));
    }
  }

  struct Path {
    std::vector<Vec2> waypoints;    // query point first, root last
    std::vector<int> leg_regions;   // region of each leg, size waypoints - 1
    std::vector<int> node_ids;      // tree node per waypoint, -1 for the query point
    double cost = 0.0;
  };

  /// Connects an arbitrary point of an active region to the root.
  Path connect(const Vec2& y) const {
    Path path;
    if ((y - root()).norm() <= kGeoTol) {
      path.waypoints.push_back(root());
      path.node_ids.push_back(0);
      return path;
    }
    const auto regions = partition_->locate(y);
    const Best best = best_parent(y, regions);
    if (best.node < 0) {
      throw UnreachableError("point (" + std::to_string(y.x()) + ", " + std::to_string(y.y()) +
                             ") lies in no active region of the tree");
    }
    path.cost = best.cost;
    path.waypoints.push_back(y);
    path.node_ids.push_back(-1);
    path.leg_regions.push_back(best.region);
    for (int id = best.node; id >= 0; id = nodes_[static_cast<std::size_t>(id)].parent) {
      const auto& n = nodes_[static_cast<std::size_t>(id)];
      path.waypoints.push_back(n.position);
      path.node_ids.push_back(id);
      if (n.parent >= 0) path.leg_regions.push_back(n.edge_region);
    }
    return path;
  }

 private:
  struct Best {
    int node = -1;
    int region = -1;
    double cost = std::numeric_limits<double>::infinity();
  };

  // Minimises transit + cost-to-root over the neighbourhood N(b): all nodes
  // sharing a region with b. Ties go to the lowest node index.
  Best best_parent(const Vec2& b, const std::vector<int>& regions) const {
    Best best;
    for (int r : regions) {
      const Vec2& d = partition_->region(r).drift();
      for (int id : by_region_[static_cast<std::size_t>(r)]) {
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        const double c = min_transit_time(b, n.position, d) + n.cost_to_root;
        if (c < best.cost || (c == best.cost && id < best.node)) best = Best{id, r, c};
      }
    }
    return best;
  }

  bool is_duplicate(const Vec2& b, const std::vector<int>& regions) const {
    for (int r : regions) {
      for (int id : by_region_[static_cast<std::size_t>(r)]) {
        if ((nodes_[static_cast<std::size_t>(id)].position - b).norm() <= kGeoTol) return true;
      }
    }
    return false;
  }

  void add_node(RrbtNode n) {
    const int id = static_cast<int>(nodes_.size());
    for (int r : n.regions) {
      by_region_[static_cast<std::size_t>(r)].push_back(id);
      auto it = std::lower_bound(active_.begin(), active_.end(), r);
      if (it == active_.end() || *it != r) active_.insert(it, r);
    }
    nodes_.push_back(std::move(n));
  }

  const Partition* partition_;
  int root_target_;
  std::vector<RrbtNode> nodes_;
  std::vector<int> active_;
  std::vector<std::vector<int>> by_region_;
};

inline RrbtTree grow_tree(const Vec2& root, const Partition& partition, std::size_t max_iter, Rng& rng,
                          int root_target = -1) {
  RrbtTree tree(partition, root, root_target);
  tree.grow(max_iter, rng);
  return tree;
}

/// Default iteration budget: 300 per region.
inline std::size_t default_rrbt_iterations(const Partition& partition) { return 300 * partition.size(); }

/// Directed target-to-target travel costs. Entry (j, i) is the cost of
/// connecting target j to the tree rooted at target i.
struct DistanceMatrix {
  Eigen::MatrixXd cost;
  std::vector<std::vector<RrbtTree::Path>> paths;  // paths[j][i]
};

inline DistanceMatrix distance_matrix(const std::vector<Vec2>& targets, const std::vector<RrbtTree>& trees) {
  const std::size_t k = targets.size();
  DistanceMatrix out;
  out.cost = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  out.paths.assign(k, std::vector<RrbtTree::Path>(k));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) {
        out.paths[j][i].waypoints = {targets[i]};
        out.paths[j][i].node_ids = {0};
        continue;
      }
      try {
        out.paths[j][i] = trees[i].connect(targets[j]);
      } catch (const UnreachableError&) {
        throw UnreachableError("target " + std::to_string(j) + " cannot reach target " + std::to_string(i));
      }
      out.cost(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = out.paths[j][i].cost;
    }
  }
  return out;
}

/// Grows one tree per target (seeded stream per target id) and connects every pair.
inline DistanceMatrix distance_matrix(const std::vector<Vec2>& targets, const Partition& partition,
                                      std::size_t max_iter, std::uint64_t seed,
                                      std::vector<RrbtTree>* trees_out = nullptr) {
  if (targets.size() < 2) throw Error("distance_matrix needs at least two targets");
  std::vector<RrbtTree> trees;
  trees.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Rng rng = make_stream(seed, "rrbt", i);
    trees.push_back(grow_tree(targets[i], partition, max_iter, rng, static_cast<int>(i)));
  }
  auto out = distance_matrix(targets, trees);
  if (trees_out) *trees_out = std::move(trees);
  return out;
}

}  // namespace hyperm
