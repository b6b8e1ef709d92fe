#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hyperm/errors.hpp"
#include "hyperm/estimation.hpp"
#include "hyperm/geometry.hpp"
#include "hyperm/log.hpp"
#include "hyperm/monitor_ocp.hpp"
#include "hyperm/sequencer.hpp"

namespace hyperm {

/// Covariance propagation over one switching segment (no measurements).
struct SwitchingResult {
  double duration = 0.0;
  double cost = 0.0;  // S_k
  std::vector<double> target_costs;
  std::vector<CovMatrix> omega_end;
  CovTrace trace;
  std::vector<int> regions;     // per trace sample, region of the following step
  std::vector<Vec2> controls;   // per trace sample, control of the following step
};

inline constexpr int kSwitchingSteps = 200;

/// Integrates the Lyapunov equations of all targets along the switching legs
/// with RK4, splitting `steps` over the legs in proportion to their duration.
inline SwitchingResult propagate_switching(const SwitchingSegment& seg, const std::vector<Target>& targets,
                                           const std::vector<CovMatrix>& omega, int steps = kSwitchingSteps) {
  SwitchingResult out;
  out.duration = seg.duration;
  out.omega_end = omega;
  out.target_costs.assign(targets.size(), 0.0);
  out.trace.traces.assign(targets.size(), {});
  const Vec2 start = seg.legs.empty() ? seg.exit : seg.legs.front().start;
  out.trace.times.push_back(0.0);
  out.trace.positions.push_back(start);
  for (std::size_t i = 0; i < targets.size(); ++i) out.trace.traces[i].push_back(omega[i].trace());
  double t0 = 0.0;
  for (const auto& leg : seg.legs) {
    if (!(leg.duration > 0.0)) continue;
    const int n = std::max(1, static_cast<int>(std::lround(steps * leg.duration / seg.duration)));
    const double h = leg.duration / n;
    out.regions.push_back(leg.region);
    out.controls.push_back(leg.control);
    for (int s = 0; s < n; ++s) {
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const RiccatiStep st = riccati_step(out.omega_end[i], targets[i], 0.0, h);
        out.omega_end[i] = st.omega;
        out.target_costs[i] += st.trace_integral;
        out.trace.traces[i].push_back(st.omega.trace());
      }
      out.trace.times.push_back(t0 + (s + 1) * h);
      out.trace.positions.push_back(leg.position((s + 1) * h));
      if (s + 1 < n) {
        out.regions.push_back(leg.region);
        out.controls.push_back(leg.control);
      }
    }
    t0 += leg.duration;
  }
  // The last sample starts the next monitoring segment; it carries no step.
  const int last_region = seg.legs.empty() ? -1 : seg.legs.back().region;
  out.regions.push_back(last_region);
  out.controls.push_back(Vec2::Zero());
  for (double c : out.target_costs) out.cost += c;
  return out;
}

/// One simulated cycle: monitor sequence[0], switch, monitor sequence[1], ...
struct CycleState {
  std::vector<double> tau;
  std::vector<double> tau_min;  // delta_k, the projection bounds
  std::vector<MonitorProblem> problems;
  std::vector<MonitorSolution> monitors;
  std::vector<SwitchingResult> switching;
  std::vector<CovMatrix> omega_start;  // per target id
  std::vector<CovMatrix> omega_end;
  double total_cost = 0.0;  // sum_k (M*_k + S_k)
  double period = 0.0;      // T
  double cost = 0.0;        // J = total / T

  /// Largest Frobenius change of a cycle-start covariance over this cycle.
  double periodicity_gap() const {
    double g = 0.0;
    for (std::size_t i = 0; i < omega_start.size(); ++i) g = std::max(g, (omega_end[i] - omega_start[i]).norm());
    return g;
  }
};

inline std::vector<double> minimum_durations(const CyclePlan& plan) {
  std::vector<double> out;
  for (const auto& m : plan.monitors) out.push_back(m.min_duration);
  return out;
}

/// Solves the monitoring problems in sequence, each starting from the
/// covariances left by its predecessor. `warm` (the previous cycle) provides
/// warm starts per segment.
inline CycleState simulate_cycle(const CyclePlan& plan, const Partition& partition, const std::vector<Target>& targets,
                                 const std::vector<double>& tau, const std::vector<CovMatrix>& omega_start,
                                 const MonitorOptions& opt = {}, const CycleState* warm = nullptr) {
  const std::size_t k = plan.size();
  if (tau.size() != k) throw Error("simulate_cycle: one duration per monitoring segment required");
  if (omega_start.size() != targets.size()) throw Error("simulate_cycle: one covariance per target required");
  for (std::size_t i = 0; i < omega_start.size(); ++i) {
    if (Eigen::LLT<CovMatrix>(omega_start[i]).info() != Eigen::Success) {
      throw Error("simulate_cycle: initial covariance of target " + std::to_string(i) + " is not positive definite");
    }
  }
  CycleState st;
  st.tau = tau;
  st.tau_min = minimum_durations(plan);
  st.omega_start = omega_start;
  std::vector<CovMatrix> omega = omega_start;
  for (std::size_t n = 0; n < k; ++n) {
    const MonitorLeg& leg = plan.monitors[n];
    MonitorProblem p{partition.region(leg.region), targets, leg.target, leg.entry, leg.exit, tau[n], omega};
    const MonitorSolution* w = warm && warm->monitors.size() == k ? &warm->monitors[n] : nullptr;
    MonitorSolution sol;
    try {
      sol = solve_monitor(p, opt, w);
    } catch (const SolverError&) {
      throw;
    } catch (const Error& e) {
      throw SolverError(std::string("monitoring segment ") + std::to_string(n) + ": " + e.what(), static_cast<int>(n));
    }
    if (!sol.ok()) {
      if (sol.stationarity > 1e-4) {
        throw SolverError("monitoring segment " + std::to_string(n) + ": inner solver " + to_string(sol.status) +
                              " (stationarity " + std::to_string(sol.stationarity) + ")",
                          static_cast<int>(n));
      }
      logger().warn("monitoring segment {}: inner solver {} with stationarity {:.3e}", n, to_string(sol.status),
                    sol.stationarity);
    }
    omega = sol.omega_end;
    st.problems.push_back(std::move(p));
    st.monitors.push_back(std::move(sol));
    SwitchingResult sw = propagate_switching(plan.switching[n], targets, omega);
    omega = sw.omega_end;
    st.switching.push_back(std::move(sw));
  }
  st.omega_end = omega;
  for (std::size_t n = 0; n < k; ++n) {
    st.total_cost += st.monitors[n].cost + st.switching[n].cost;
    st.period += tau[n] + st.switching[n].duration;
  }
  st.cost = st.total_cost / st.period;
  return st;
}

/// dJ/dtau_k = (dM*_k/dtau_k T - sum_j (M*_j + S_j)) / T^2.
inline std::vector<double> cycle_gradient(const CycleState& state, const std::vector<double>& sensitivities) {
  if (sensitivities.size() != state.tau.size()) throw Error("cycle_gradient: one sensitivity per segment required");
  const double t = state.period;
  std::vector<double> g;
  for (double s : sensitivities) g.push_back((s * t - state.total_cost) / (t * t));
  return g;
}

/// Sensitivities of every monitoring segment of the cycle; stored in the
/// solutions as a side effect.
inline std::vector<double> segment_sensitivities(CycleState& state, const MonitorOptions& opt = {}) {
  std::vector<double> out;
  for (std::size_t n = 0; n < state.monitors.size(); ++n) {
    try {
      const Sensitivity s = sensitivity(state.problems[n], state.monitors[n], opt);
      state.monitors[n].sensitivity = s.value;
      state.monitors[n].sensitivity_one_sided = s.one_sided;
      out.push_back(s.value);
    } catch (const Error& e) {
      throw SolverError("sensitivity of segment " + std::to_string(n) + ": " + e.what(), static_cast<int>(n));
    }
  }
  return out;
}

/// Componentwise clamp to [lo_k, inf).
inline std::vector<double> project(std::vector<double> tau, const std::vector<double>& lo) {
  for (std::size_t k = 0; k < tau.size(); ++k) tau[k] = std::max(tau[k], lo[k]);
  return tau;
}

enum class Variant { steady_state_update = 1, per_cycle_update = 2 };

struct OptimizerConfig {
  Variant variant = Variant::steady_state_update;
  /// Initial step; when unset, alpha0 = alpha_scale * T / ||grad||_inf at the first update.
  std::optional<double> alpha0;
  double alpha_scale = 0.1;
  double eps_ss = 1e-4;
  double eps_tau = 1e-4;
  int max_cycles = 2000;
  int max_steady_state_cycles = 200;
  double tau_init_offset = 1.0;
  MonitorOptions monitor;
};

struct HistoryRow {
  int cycle = 0;
  int variant = 1;
  double cost = 0.0;
  double period = 0.0;
  std::vector<double> tau;
  std::vector<double> grad;  // empty when no gradient was computed this cycle
  bool steady_state = false;
};

struct OptimizeResult {
  CycleState final_state;
  std::vector<HistoryRow> history;
  bool converged = false;
  int cycles = 0;   // simulated cycles
  int updates = 0;  // tau updates
  double alpha0 = 0.0;
  std::vector<double> best_tau;
  double best_cost = std::numeric_limits<double>::infinity();
};

inline std::vector<double> initial_durations(const CyclePlan& plan, double offset) {
  std::vector<double> tau = minimum_durations(plan);
  for (double& t : tau) t += offset;
  return tau;
}

/// Projected gradient descent on the monitoring durations with step
/// alpha_n = alpha0 / sqrt(n). Variant 1 simulates to steady state before
/// every update, variant 2 updates after every cycle. `on_cycle` sees every
/// history row as soon as it is produced.
inline OptimizeResult optimize(const CyclePlan& plan, const Partition& partition, const std::vector<Target>& targets,
                               const std::vector<CovMatrix>& omega0, const OptimizerConfig& cfg,
                               std::optional<std::vector<double>> tau_init = std::nullopt,
                               const std::function<void(const HistoryRow&)>& on_cycle = {}) {
  if (!(cfg.eps_ss > 0.0) || !(cfg.eps_tau > 0.0) || !(cfg.alpha_scale > 0.0) ||
      (cfg.alpha0 && !(*cfg.alpha0 > 0.0))) {
    throw Error("optimize: tolerances and step sizes must be positive");
  }
  const std::vector<double> lo = minimum_durations(plan);
  std::vector<double> tau = project(tau_init.value_or(initial_durations(plan, cfg.tau_init_offset)), lo);
  const int variant = static_cast<int>(cfg.variant);

  OptimizeResult res;
  CycleState state = simulate_cycle(plan, partition, targets, tau, omega0, cfg.monitor);
  res.cycles = 1;
  int cycle = 0;
  int since_update = 0;
  double alpha0 = cfg.alpha0.value_or(0.0);
  while (true) {
    const bool steady = state.periodicity_gap() < cfg.eps_ss;
    bool update = cfg.variant == Variant::per_cycle_update || steady;
    if (!update && since_update + 1 >= cfg.max_steady_state_cycles) {
      logger().warn("variant 1: no steady state after {} cycles, updating anyway", cfg.max_steady_state_cycles);
      update = true;
    }
    if (cycle >= cfg.max_cycles) update = false;

    HistoryRow row;
    row.cycle = cycle;
    row.variant = variant;
    row.cost = state.cost;
    row.period = state.period;
    row.tau = tau;
    row.steady_state = cfg.variant == Variant::steady_state_update ? (update && steady) : steady;
    if (steady && state.cost < res.best_cost) {
      res.best_cost = state.cost;
      res.best_tau = tau;
    }

    std::vector<double> next;
    if (update) {
      row.grad = cycle_gradient(state, segment_sensitivities(state, cfg.monitor));
      double gmax = 0.0;
      for (double g : row.grad) gmax = std::max(gmax, std::abs(g));
      if (alpha0 == 0.0) alpha0 = gmax > 0.0 ? cfg.alpha_scale * state.period / gmax : 1.0;
      ++res.updates;
      const double alpha = alpha0 / std::sqrt(static_cast<double>(res.updates));
      next = tau;
      for (std::size_t k = 0; k < tau.size(); ++k) next[k] -= alpha * row.grad[k];
      next = project(std::move(next), lo);
    }
    res.history.push_back(row);
    if (on_cycle) on_cycle(row);

    if (cycle >= cfg.max_cycles) break;
    if (update) {
      double step = 0.0;
      for (std::size_t k = 0; k < tau.size(); ++k) step = std::max(step, std::abs(next[k] - tau[k]));
      const bool settled = cfg.variant == Variant::steady_state_update || steady;
      if (step < cfg.eps_tau && settled) {
        res.converged = true;
        break;
      }
      tau = std::move(next);
      since_update = 0;
    } else {
      ++since_update;
    }
    state = simulate_cycle(plan, partition, targets, tau, state.omega_end, cfg.monitor, &state);
    ++res.cycles;
    ++cycle;
  }
  res.alpha0 = alpha0;
  if (res.best_tau.empty()) {
    res.best_tau = tau;
    res.best_cost = state.cost;
  }
  res.final_state = std::move(state);
  return res;
}

/// Dense samples of one cycle: agent position, region, applied control and
/// every target's tr(Omega).
struct CycleTrace {
  std::vector<double> times;
  std::vector<Vec2> positions;
  std::vector<int> regions;
  std::vector<Vec2> controls;
  std::vector<std::vector<double>> traces;  // [target][sample]
  std::vector<int> segments;                // 2k for monitoring k, 2k + 1 for switching k
};

inline CycleTrace cycle_trace(const CycleState& state, const CyclePlan& plan) {
  CycleTrace out;
  const std::size_t nt = state.omega_start.size();
  out.traces.assign(nt, {});
  double t0 = 0.0;
  auto append = [&](const CovTrace& tr, const std::vector<int>& regions, const std::vector<Vec2>& controls,
                    int segment) {
    const std::size_t first = out.times.empty() ? 0 : 1;  // junction sample already present
    if (first == 1 && !tr.times.empty()) {
      // The junction takes the region and control of the segment that starts there.
      out.regions.back() = regions.front();
      out.controls.back() = controls.front();
      out.segments.back() = segment;
    }
    for (std::size_t n = first; n < tr.times.size(); ++n) {
      out.times.push_back(t0 + tr.times[n]);
      out.positions.push_back(tr.positions[n]);
      out.regions.push_back(regions[n]);
      out.controls.push_back(controls[n]);
      out.segments.push_back(segment);
      for (std::size_t i = 0; i < nt; ++i) out.traces[i].push_back(tr.traces[i][n]);
    }
    if (!tr.times.empty()) t0 += tr.times.back();
  };
  for (std::size_t k = 0; k < state.monitors.size(); ++k) {
    const MonitorSolution& m = state.monitors[k];
    const int per = static_cast<int>(m.trace.times.size() - 1) / static_cast<int>(m.controls.size());
    std::vector<int> regions(m.trace.times.size(), plan.monitors[k].region);
    std::vector<Vec2> controls;
    for (std::size_t n = 0; n < m.trace.times.size(); ++n) {
      const std::size_t j = std::min(n / static_cast<std::size_t>(per), m.controls.size() - 1);
      controls.push_back(m.controls[j]);
    }
    append(m.trace, regions, controls, static_cast<int>(2 * k));
    const SwitchingResult& s = state.switching[k];
    if (s.trace.times.size() > 1) append(s.trace, s.regions, s.controls, static_cast<int>(2 * k + 1));
  }
  return out;
}

}  // namespace hyperm
