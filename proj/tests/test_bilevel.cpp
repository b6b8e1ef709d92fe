#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "hyperm/bilevel.hpp"
#include "hyperm/sequencer.hpp"

using namespace hyperm;
using namespace hyperm::testing;

namespace {

struct MiniCycle {
  Partition partition = two_half_square();
  std::vector<Target> targets;
  CyclePlan plan;
};

// One target per half of the unit square; the agent crosses the middle facet.
MiniCycle mini_cycle(const Vec2& far_quality = Vec2(-1, -1)) {
  MiniCycle m;
  m.targets = {scalar_target(0, Vec2(0.25, 0.5), 1.0, 1.0, 1.0, 0.15, 0.3),
               scalar_target(1, Vec2(0.75, 0.5), 1.0, 1.0, 1.0, 0.15, 0.3)};
  m.targets[0].region = 0;
  m.targets[1].region = 1;
  if (far_quality.x() >= 0.0) m.targets[1].quality.center = far_quality;
  const DistanceMatrix dist =
      distance_matrix({m.targets[0].position, m.targets[1].position}, m.partition, 500, 3);
  m.plan = build_cycle_plan(solve_tsp(dist.cost), dist, m.partition, m.targets);
  return m;
}

CycleState steady_state(const MiniCycle& m, const std::vector<double>& tau, std::vector<CovMatrix> omega,
                        int max_cycles = 100) {
  CycleState st = simulate_cycle(m.plan, m.partition, m.targets, tau, omega);
  for (int c = 0; c < max_cycles && st.periodicity_gap() >= 1e-10; ++c) {
    st = simulate_cycle(m.plan, m.partition, m.targets, tau, st.omega_end, {}, &st);
  }
  return st;
}

MonitorProblem hover_problem(double tau, double omega_other) {
  const Partition part = two_half_square();
  const Vec2 c(0.25, 0.5);
  return MonitorProblem{part.region(0),
                        {scalar_target(0, c), scalar_target(1, Vec2(0.75, 0.5))},
                        0,
                        c,
                        c,
                        tau,
                        {cov(10.0), cov(omega_other)}};
}

}  // namespace

TEST(CycleGradient, ScalarExample) {
  // M(tau) = tau, S = 2, switching time 1, tau = 1: J = (tau + 2) / (tau + 1).
  CycleState st;
  st.tau = {1.0};
  st.total_cost = 3.0;
  st.period = 2.0;
  const auto g = cycle_gradient(st, {1.0});
  ASSERT_EQ(g.size(), 1u);
  EXPECT_DOUBLE_EQ(g[0], -0.25);
  EXPECT_THROW(cycle_gradient(st, {1.0, 2.0}), Error);
}

TEST(CycleGradient, VanishesWhenSensitivityEqualsAverageCost) {
  CycleState st;
  st.tau = {0.7, 1.3, 2.0};
  st.total_cost = 11.0;
  st.period = 5.5;
  const double j = st.total_cost / st.period;
  for (double g : cycle_gradient(st, {j, j, j})) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Projection, ClampsBelowOnly) {
  const auto p = project({0.5, 2.0, -1.0}, {1.0, 1.5, 0.0});
  EXPECT_EQ(p, std::vector<double>({1.0, 2.0, 0.0}));
}

TEST(Sensitivity, LeibnizRuleWithoutSensing) {
  // Sensing support far away: M(tau) = sum_i (w_i tau + tau^2 / 2), dM/dtau = sum_i (w_i + tau).
  const Partition part = two_half_square();
  std::vector<Target> targets{scalar_target(0, Vec2(0.25, 0.5)), scalar_target(1, Vec2(0.75, 0.5))};
  targets[0].quality.center = Vec2(5, 5);
  targets[1].quality.center = Vec2(-5, 5);
  for (double tau : {0.8, 1.5, 3.0}) {
    const MonitorProblem p{part.region(0), targets, 0, Vec2(0.5, 0.2), Vec2(0.5, 0.6), tau, {cov(1.5), cov(0.5)}};
    const MonitorSolution s = solve_monitor(p);
    ASSERT_TRUE(s.ok());
    const Sensitivity d = sensitivity(p, s);
    EXPECT_FALSE(d.one_sided);
    const double exact = 1.5 + 0.5 + 2 * tau;
    EXPECT_LT(std::abs(d.value - exact) / exact, 1e-4) << "tau " << tau;
  }
}

TEST(Sensitivity, HoveringLimitMatchesSteadyStateOracle) {
  // Hovering on the resident peak: the resident sits at Omega* = 1, the other
  // target grows linearly, so dM/dtau -> (w_other + tau) + 1.
  const double tau = 8.0;
  const MonitorProblem p = hover_problem(tau, 0.5);
  const MonitorSolution s = solve_monitor(p);
  ASSERT_TRUE(s.ok()) << to_string(s.status);
  const double oracle = 0.5 + tau + 1.0;
  EXPECT_LT(std::abs(sensitivity(p, s).value - oracle) / oracle, 1e-3);
}

TEST(Sensitivity, CentralDifferenceIsSecondOrder) {
  const MonitorProblem p = hover_problem(1.0, 0.5);
  MonitorOptions opt;
  opt.tol_stat = 1e-9;
  const MonitorSolution s = solve_monitor(p, opt);
  ASSERT_TRUE(s.ok());
  const double h = 0.08;
  const double d1 = sensitivity(p, s, opt, h).value;
  const double d2 = sensitivity(p, s, opt, h / 2).value;
  const double d4 = sensitivity(p, s, opt, h / 4).value;
  const double ratio = (d1 - d2) / (d2 - d4);
  EXPECT_GT(ratio, 3.0) << d1 << " " << d2 << " " << d4;
  EXPECT_LT(ratio, 5.0) << d1 << " " << d2 << " " << d4;
}

TEST(Sensitivity, OneSidedAtTheLowerBound) {
  const Partition part = two_half_square();
  const Vec2 e(0.5, 0.2), x(0.5, 0.8);
  const MonitorProblem p{part.region(0), {scalar_target(0, Vec2(0.25, 0.5))}, 0, e, x, 0.6, {cov(1.0)}};
  const MonitorSolution s = solve_monitor(p);
  EXPECT_TRUE(sensitivity(p, s).one_sided);
}

TEST(SimulateCycle, BookkeepingIdentities) {
  const MiniCycle m = mini_cycle();
  ASSERT_EQ(m.plan.size(), 2u);
  const auto tau = initial_durations(m.plan, 0.5);
  const CycleState st = simulate_cycle(m.plan, m.partition, m.targets, tau, {cov(1.0), cov(2.0)});
  double total = 0.0;
  double period = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    total += st.monitors[k].cost + st.switching[k].cost;
    period += tau[k] + st.switching[k].duration;
  }
  EXPECT_NEAR(st.total_cost, total, 1e-12);
  EXPECT_NEAR(st.period, period, 1e-12);
  EXPECT_NEAR(st.cost * st.period, st.total_cost, 1e-8 * st.total_cost);
  // Trapezoidal re-integration of the sampled traces reproduces the RK4 quadrature.
  const CycleTrace tr = cycle_trace(st, m.plan);
  EXPECT_NEAR(accumulate_cost(tr.times, tr.traces), st.total_cost, 1e-3 * st.total_cost);
  for (const auto& u : tr.controls) EXPECT_LE(u.norm(), 1.0 + 1e-8);
}

TEST(SimulateCycle, UnsensedTargetGrowsByThePeriod) {
  // Target 1 is never sensed: Lyapunov with A = 0, Q = 1 adds T per cycle and never settles.
  const MiniCycle m = mini_cycle(Vec2(5, 5));
  const auto tau = initial_durations(m.plan, 0.5);
  CycleState st = simulate_cycle(m.plan, m.partition, m.targets, tau, {cov(1.0), cov(1.0)});
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(st.omega_end[1](0, 0) - st.omega_start[1](0, 0), st.period, 1e-9);
    EXPECT_GE(st.periodicity_gap(), st.period - 1e-9);
    st = simulate_cycle(m.plan, m.partition, m.targets, tau, st.omega_end, {}, &st);
  }
}

TEST(SimulateCycle, PeriodicFixedPointIsUniqueAndAttracting) {
  const MiniCycle m = mini_cycle();
  const auto tau = initial_durations(m.plan, 0.5);
  const CycleState a = steady_state(m, tau, {cov(0.1), cov(0.1)});
  const CycleState b = steady_state(m, tau, {cov(20.0), cov(5.0)});
  ASSERT_LT(a.periodicity_gap(), 1e-8);
  ASSERT_LT(b.periodicity_gap(), 1e-8);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(a.omega_start[i](0, 0), b.omega_start[i](0, 0), 1e-6);
  EXPECT_NEAR(a.cost, b.cost, 1e-6 * a.cost);
}

TEST(SimulateCycle, RejectsMismatchedInputs) {
  const MiniCycle m = mini_cycle();
  EXPECT_THROW(simulate_cycle(m.plan, m.partition, m.targets, {1.0}, {cov(1.0), cov(1.0)}), Error);
  const auto tau = initial_durations(m.plan, 0.5);
  EXPECT_THROW(simulate_cycle(m.plan, m.partition, m.targets, tau, {cov(1.0)}), Error);
  EXPECT_THROW(simulate_cycle(m.plan, m.partition, m.targets, tau, {cov(1.0), cov(-1.0)}), Error);
}

TEST(Optimize, HistoryAndProjectionInvariants) {
  const MiniCycle m = mini_cycle();
  OptimizerConfig cfg;
  cfg.variant = Variant::per_cycle_update;
  cfg.max_cycles = 4;
  cfg.tau_init_offset = 0.05;
  const OptimizeResult r = optimize(m.plan, m.partition, m.targets, {cov(1.0), cov(1.0)}, cfg);
  ASSERT_EQ(r.history.size(), 5u);
  const auto lo = minimum_durations(m.plan);
  for (std::size_t n = 0; n < r.history.size(); ++n) {
    const HistoryRow& row = r.history[n];
    EXPECT_EQ(row.cycle, static_cast<int>(n));
    EXPECT_EQ(row.variant, 2);
    for (std::size_t k = 0; k < lo.size(); ++k) EXPECT_GE(row.tau[k], lo[k]);
    if (n + 1 < r.history.size()) {
      ASSERT_EQ(row.grad.size(), lo.size());
      // One projected step alpha0 / sqrt(n + 1) separates consecutive rows.
      const double alpha = r.alpha0 / std::sqrt(static_cast<double>(n + 1));
      const auto next = project(
          [&] {
            auto t = row.tau;
            for (std::size_t k = 0; k < t.size(); ++k) t[k] -= alpha * row.grad[k];
            return t;
          }(),
          lo);
      for (std::size_t k = 0; k < lo.size(); ++k) EXPECT_NEAR(r.history[n + 1].tau[k], next[k], 1e-15);
    }
  }
}

TEST(Optimize, ZeroCyclesOnlyEvaluatesTheStart) {
  const MiniCycle m = mini_cycle();
  OptimizerConfig cfg;
  cfg.max_cycles = 0;
  const OptimizeResult r = optimize(m.plan, m.partition, m.targets, {cov(1.0), cov(1.0)}, cfg);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_TRUE(r.history[0].grad.empty());
  EXPECT_EQ(r.updates, 0);
  EXPECT_EQ(r.history[0].tau, initial_durations(m.plan, cfg.tau_init_offset));
}

TEST(Optimize, RejectsNonPositiveSteps) {
  const MiniCycle m = mini_cycle();
  OptimizerConfig cfg;
  cfg.alpha0 = 0.0;
  EXPECT_THROW(optimize(m.plan, m.partition, m.targets, {cov(1.0), cov(1.0)}, cfg), Error);
}
