#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"
#include "hyperm/sequencer.hpp"

using namespace hyperm;
using namespace hyperm::testing;

namespace {

double brute_force(const Eigen::MatrixXd& d) {
  std::vector<int> rest(static_cast<std::size_t>(d.rows() - 1));
  std::iota(rest.begin(), rest.end(), 1);
  double best = std::numeric_limits<double>::infinity();
  do {
    std::vector<int> tour{0};
    tour.insert(tour.end(), rest.begin(), rest.end());
    best = std::min(best, tour_cost(d, tour));
  } while (std::next_permutation(rest.begin(), rest.end()));
  return best;
}

Eigen::MatrixXd random_matrix(int k, Rng& rng) {
  Eigen::MatrixXd d(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) d(i, j) = i == j ? 0.0 : uniform(rng, 0.1, 10.0);
  return d;
}

bool is_permutation_of_ids(std::vector<int> t, int k) {
  std::sort(t.begin(), t.end());
  for (int i = 0; i < k; ++i)
    if (t[static_cast<std::size_t>(i)] != i) return false;
  return static_cast<int>(t.size()) == k;
}

}  // namespace

TEST(Tsp, ThreeCycleSymmetric) {
  Eigen::MatrixXd d(3, 3);
  d << 0, 1, 2, 1, 0, 1, 2, 1, 0;
  const auto s = solve_tsp(d);
  EXPECT_DOUBLE_EQ(s.cost, 4.0);
  EXPECT_EQ(s.order.front(), 0);
}

TEST(Tsp, ExactMatchesBruteForce) {
  Rng rng = make_stream(17, "tsp");
  for (int inst = 0; inst < 100; ++inst) {
    const int k = 3 + inst % 6;
    const Eigen::MatrixXd d = random_matrix(k, rng);
    const auto s = solve_tsp(d);
    ASSERT_TRUE(is_permutation_of_ids(s.order, k));
    EXPECT_EQ(s.order.front(), 0);
    EXPECT_NEAR(s.cost, tour_cost(d, s.order), 1e-12);
    EXPECT_DOUBLE_EQ(s.cost, brute_force(d));
  }
}

TEST(Tsp, ExactDominatesHeuristic) {
  Rng rng = make_stream(3, "tsp");
  for (int inst = 0; inst < 20; ++inst) {
    const Eigen::MatrixXd d = random_matrix(8, rng);
    const auto heuristic = two_opt(d, nearest_neighbor_tour(d));
    EXPECT_LE(solve_tsp(d).cost, tour_cost(d, heuristic) + 1e-12);
  }
}

TEST(Tsp, TwoOptResultIsLocallyOptimal) {
  Rng rng = make_stream(4, "tsp");
  const Eigen::MatrixXd d = random_matrix(16, rng);
  const auto s = solve_tsp(d);
  ASSERT_TRUE(is_permutation_of_ids(s.order, 16));
  const double c = s.cost;
  // Directed 2-opt move: reverse the inner section.
  for (std::size_t i = 1; i < s.order.size(); ++i) {
    for (std::size_t j = i + 1; j < s.order.size(); ++j) {
      auto t = s.order;
      std::reverse(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(j) + 1);
      EXPECT_GE(tour_cost(d, t), c - 1e-12);
    }
  }
}

TEST(Tsp, RejectsInfiniteEntry) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Ones(3, 3);
  d.diagonal().setZero();
  d(0, 2) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(solve_tsp(d), Error);
}

TEST(SwitchingSegments, AdjacentRegionsGiveZeroDuration) {
  const Partition p = two_half_square();
  std::vector<Target> targets{scalar_target(0, Vec2(0.25, 0.5)), scalar_target(1, Vec2(0.75, 0.5))};
  targets[0].region = 0;
  targets[1].region = 1;
  const DistanceMatrix dist = distance_matrix({targets[0].position, targets[1].position}, p, 2000, 3);
  const auto seq = solve_tsp(dist.cost);
  const CyclePlan plan = build_cycle_plan(seq, dist, p, targets);
  ASSERT_EQ(plan.size(), 2u);
  for (const auto& s : plan.switching) {
    EXPECT_EQ(s.waypoints.size(), 1u);
    EXPECT_EQ(s.duration, 0.0);
    EXPECT_NEAR(s.exit.x(), 0.5, 1e-12);
    EXPECT_EQ(s.exit, s.entry);
  }
  for (const auto& m : plan.monitors) {
    EXPECT_NEAR(m.min_duration, (m.exit - m.entry).norm(), 1e-12);
  }
}

TEST(SwitchingSegments, IntermediateLegUsesEuclideanLength) {
  // Three vertical strips; targets in the outer ones, the middle strip is empty.
  const Box box{Vec2(0, 0), Vec2(3, 1)};
  auto strip = [&](int id, double lo, double hi) {
    auto hs = box.halfspaces();
    hs.push_back(Halfspace::make(Vec2(-1, 0), -lo));
    hs.push_back(Halfspace::make(Vec2(1, 0), hi));
    return Region(id, hs, Vec2::Zero(), box);
  };
  const Partition p(box, {strip(0, 0, 1), strip(1, 1, 2), strip(2, 2, 3)});
  std::vector<Target> targets{scalar_target(0, Vec2(0.5, 0.5)), scalar_target(1, Vec2(2.5, 0.5))};
  targets[0].region = 0;
  targets[1].region = 2;
  const DistanceMatrix dist = distance_matrix({targets[0].position, targets[1].position}, p, 4000, 5);
  const CyclePlan plan = build_cycle_plan(solve_tsp(dist.cost), dist, p, targets);
  double total = 0.0;
  for (const auto& s : plan.switching) {
    EXPECT_NEAR(s.exit.x(), s.from == 0 ? 1.0 : 2.0, 1e-12);
    EXPECT_NEAR(s.entry.x(), s.to == 0 ? 1.0 : 2.0, 1e-12);
    EXPECT_NEAR(s.duration, (s.entry - s.exit).norm(), 1e-12);
    double legs = 0.0;
    for (const auto& l : s.legs) legs += l.duration;
    EXPECT_NEAR(s.duration, legs, 1e-12);
    total += s.duration;
  }
  EXPECT_NEAR(plan.switching_time(), total, 1e-9);
}

TEST(SwitchingSegments, SingleTargetIsDegenerate) {
  const Partition p = two_half_square();
  std::vector<Target> targets{scalar_target(0, Vec2(0.2, 0.5))};
  targets[0].region = 0;
  const VisitingSequence seq{{0}, 0.0};
  const auto segs = build_switching_segments(seq, DistanceMatrix{}, p, targets);
  ASSERT_EQ(segs.size(), 1u);
  EXPECT_EQ(segs[0].duration, 0.0);
  EXPECT_EQ(segs[0].exit, segs[0].entry);
}
