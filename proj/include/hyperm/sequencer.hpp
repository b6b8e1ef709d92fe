#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hyperm/dynamics.hpp"
#include "hyperm/errors.hpp"
#include "hyperm/estimation.hpp"
#include "hyperm/geometry.hpp"
#include "hyperm/log.hpp"
#include "hyperm/rrbt.hpp"

namespace hyperm {

/// Cyclic visiting order over all targets, rotated to start at the lowest id.
struct VisitingSequence {
  std::vector<int> order;
  double cost = 0.0;
};

/// Cost of the closed directed tour.
inline double tour_cost(const Eigen::MatrixXd& d, const std::vector<int>& tour) {
  double c = 0.0;
  for (std::size_t k = 0; k < tour.size(); ++k) c += d(tour[k], tour[(k + 1) % tour.size()]);
  return c;
}

namespace detail {

inline void check_distance_matrix(const Eigen::MatrixXd& d) {
  if (d.rows() != d.cols() || d.rows() == 0) throw Error("solve_tsp: distance matrix must be square and nonempty");
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      if (!std::isfinite(d(i, j))) {
        throw UnreachableError("solve_tsp: missing arc " + std::to_string(i) + " -> " + std::to_string(j));
      }
    }
  }
}

inline std::vector<int> canonical_rotation(std::vector<int> tour) {
  auto it = std::min_element(tour.begin(), tour.end());
  std::rotate(tour.begin(), it, tour.end());
  return tour;
}

}  // namespace detail

/// Exact directed Held-Karp dynamic programme over subsets, O(2^K K^2).
inline std::vector<int> held_karp(const Eigen::MatrixXd& d) {
  const int k = static_cast<int>(d.rows());
  if (k <= 2) {
    std::vector<int> t(static_cast<std::size_t>(k));
    std::iota(t.begin(), t.end(), 0);
    return t;
  }
  const int full = 1 << k;
  const double inf = std::numeric_limits<double>::infinity();
  // best[S][j]: cheapest path from 0 through set S (containing 0 and j) ending at j.
  std::vector<double> best(static_cast<std::size_t>(full) * k, inf);
  std::vector<int> pred(static_cast<std::size_t>(full) * k, -1);
  auto at = [k](int s, int j) { return static_cast<std::size_t>(s) * k + j; };
  best[at(1, 0)] = 0.0;
  for (int s = 1; s < full; s += 2) {
    for (int j = 0; j < k; ++j) {
      const double base = best[at(s, j)];
      if (!(s & (1 << j)) || base == inf) continue;
      for (int n = 1; n < k; ++n) {
        if (s & (1 << n)) continue;
        const int s2 = s | (1 << n);
        const double c = base + d(j, n);
        if (c < best[at(s2, n)] || (c == best[at(s2, n)] && j < pred[at(s2, n)])) {
          best[at(s2, n)] = c;
          pred[at(s2, n)] = j;
        }
      }
    }
  }
  int last = -1;
  double total = inf;
  for (int j = 1; j < k; ++j) {
    const double c = best[at(full - 1, j)] + d(j, 0);
    if (c < total) {
      total = c;
      last = j;
    }
  }
  std::vector<int> tour;
  int s = full - 1;
  for (int j = last; j != 0;) {
    tour.push_back(j);
    const int p = pred[at(s, j)];
    s &= ~(1 << j);
    j = p;
  }
  tour.push_back(0);
  std::reverse(tour.begin(), tour.end());
  return tour;
}

inline std::vector<int> nearest_neighbor_tour(const Eigen::MatrixXd& d) {
  const int k = static_cast<int>(d.rows());
  std::vector<int> tour{0};
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  used[0] = true;
  for (int step = 1; step < k; ++step) {
    const int cur = tour.back();
    int next = -1;
    for (int j = 0; j < k; ++j) {
      if (!used[static_cast<std::size_t>(j)] && (next < 0 || d(cur, j) < d(cur, next))) next = j;
    }
    used[static_cast<std::size_t>(next)] = true;
    tour.push_back(next);
  }
  return tour;
}

/// Best-improvement directed 2-opt: reversing tour[i..j] is scored on the
/// full directed cost, since reversed arcs change cost in an asymmetric matrix.
inline std::vector<int> two_opt(const Eigen::MatrixXd& d, std::vector<int> tour) {
  const std::size_t k = tour.size();
  double cost = tour_cost(d, tour);
  for (bool improved = true; improved;) {
    improved = false;
    double best = cost;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 1; i + 1 < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        std::reverse(tour.begin() + static_cast<long>(i), tour.begin() + static_cast<long>(j) + 1);
        const double c = tour_cost(d, tour);
        std::reverse(tour.begin() + static_cast<long>(i), tour.begin() + static_cast<long>(j) + 1);
        if (c < best - 1e-12) {
          best = c;
          bi = i;
          bj = j;
        }
      }
    }
    if (bj > 0) {
      std::reverse(tour.begin() + static_cast<long>(bi), tour.begin() + static_cast<long>(bj) + 1);
      cost = best;
      improved = true;
    }
  }
  return tour;
}

/// Exact for K <= 12, nearest neighbour + directed 2-opt above.
inline VisitingSequence solve_tsp(const Eigen::MatrixXd& d) {
  detail::check_distance_matrix(d);
  std::vector<int> tour = d.rows() <= 12 ? held_karp(d) : two_opt(d, nearest_neighbor_tour(d));
  tour = detail::canonical_rotation(std::move(tour));
  return VisitingSequence{tour, tour_cost(d, tour)};
}

/// Boundary-to-boundary transit between two consecutive target regions.
struct SwitchingSegment {
  int from = -1;  // target ids
  int to = -1;
  Vec2 exit;   // on the boundary of the region of `from`
  Vec2 entry;  // on the boundary of the region of `to`
  std::vector<Vec2> waypoints;
  std::vector<TransitPlan> legs;
  double duration = 0.0;
  bool clips_other_target = false;
};

/// One monitoring leg of the cycle, inside the region of `target`.
struct MonitorLeg {
  int target = -1;
  int region = -1;
  Vec2 entry;
  Vec2 exit;
  double min_duration = 0.0;
};

/// Periodic plan: monitor sequence[k], then switch to sequence[k+1].
struct CyclePlan {
  std::vector<int> sequence;
  std::vector<MonitorLeg> monitors;
  std::vector<SwitchingSegment> switching;

  std::size_t size() const { return sequence.size(); }
  double switching_time() const {
    double t = 0.0;
    for (const auto& s : switching) t += s.duration;
    return t;
  }
};

namespace detail {

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double l2 = ab.squaredNorm();
  const double t = l2 > 0.0 ? std::clamp((p - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

inline bool contains_id(const std::vector<int>& ids, int id) {
  return std::binary_search(ids.begin(), ids.end(), id);
}

}  // namespace detail

/// Cuts the target-to-target path down to its boundary-to-boundary part: from
/// the last waypoint on the source region to the first later one on the
/// destination region. Travel inside both target regions belongs to monitoring.
inline SwitchingSegment make_switching_segment(const RrbtTree::Path& path, const Target& from, const Target& to,
                                               const Partition& partition, const std::vector<Target>& targets) {
  const auto& w = path.waypoints;
  if (w.size() < 2) throw Error("switching path needs at least two waypoints");
  std::size_t exit = 0;
  for (std::size_t n = 1; n + 1 < w.size(); ++n) {
    if (detail::contains_id(partition.locate(w[n]), from.region)) exit = n;
  }
  std::size_t entry = w.size() - 1;
  for (std::size_t n = exit; n + 1 < w.size(); ++n) {
    if (n > 0 && detail::contains_id(partition.locate(w[n]), to.region)) {
      entry = n;
      break;
    }
  }
  if (exit == 0 || entry == w.size() - 1) {
    throw Error("switching path between targets " + std::to_string(from.id) + " and " + std::to_string(to.id) +
                " does not cross the target region boundaries");
  }
  SwitchingSegment seg;
  seg.from = from.id;
  seg.to = to.id;
  seg.exit = w[exit];
  seg.entry = w[entry];
  for (std::size_t n = exit; n <= entry; ++n) seg.waypoints.push_back(w[n]);
  for (std::size_t n = exit; n < entry; ++n) {
    const Region& r = partition.region(path.leg_regions[n]);
    seg.legs.push_back(transit_plan(w[n], w[n + 1], r));
    seg.duration += seg.legs.back().duration;
  }
  for (const auto& t : targets) {
    if (t.id == from.id || t.id == to.id) continue;
    for (const auto& leg : seg.legs) {
      if (detail::point_segment_distance(t.position, leg.start, leg.end) < t.quality.rho) {
        seg.clips_other_target = true;
        logger().warn("switching path {} -> {} passes through the sensing support of target {}", from.id, to.id,
                      t.id);
      }
    }
  }
  return seg;
}

/// Closest point on the region boundary to p.
inline Vec2 nearest_boundary_point(const Region& r, const Vec2& p) {
  const auto& poly = r.polygon();
  Vec2 best = poly.front();
  double dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % poly.size()];
    const Vec2 ab = b - a;
    const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    const Vec2 q = a + t * ab;
    if ((q - p).norm() < dist) {
      dist = (q - p).norm();
      best = q;
    }
  }
  return best;
}

/// Switching segment k runs from target order[k] to order[k+1] (cyclic).
inline std::vector<SwitchingSegment> build_switching_segments(const VisitingSequence& seq, const DistanceMatrix& dist,
                                                              const Partition& partition,
                                                              const std::vector<Target>& targets) {
  std::vector<SwitchingSegment> out;
  const std::size_t k = seq.order.size();
  if (k == 1) {
    // A single target never leaves its region: one degenerate segment at the
    // boundary point closest to the target.
    const Target& t = targets[static_cast<std::size_t>(seq.order[0])];
    const Vec2 p = nearest_boundary_point(partition.region(t.region), t.position);
    SwitchingSegment s;
    s.from = s.to = t.id;
    s.exit = s.entry = p;
    s.waypoints = {p};
    out.push_back(s);
    return out;
  }
  for (std::size_t n = 0; n < k; ++n) {
    const auto from = static_cast<std::size_t>(seq.order[n]);
    const auto to = static_cast<std::size_t>(seq.order[(n + 1) % k]);
    out.push_back(make_switching_segment(dist.paths[from][to], targets[from], targets[to], partition, targets));
  }
  return out;
}

/// Assembles the periodic plan from a visiting order and the target-to-target paths.
inline CyclePlan build_cycle_plan(const VisitingSequence& seq, const DistanceMatrix& dist,
                                  const Partition& partition, const std::vector<Target>& targets) {
  CyclePlan plan;
  plan.sequence = seq.order;
  plan.switching = build_switching_segments(seq, dist, partition, targets);
  const std::size_t k = seq.order.size();
  for (std::size_t n = 0; n < k; ++n) {
    const Target& t = targets[static_cast<std::size_t>(seq.order[n])];
    MonitorLeg m;
    m.target = t.id;
    m.region = t.region;
    m.entry = plan.switching[(n + k - 1) % k].entry;
    m.exit = plan.switching[n].exit;
    m.min_duration = min_transit_time(m.entry, m.exit, partition.region(t.region).drift());
    plan.monitors.push_back(m);
  }
  return plan;
}

}  // namespace hyperm
