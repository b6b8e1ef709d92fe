#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyperm/bilevel.hpp"
#include "hyperm/monitor_ocp.hpp"
#include "hyperm/rrbt.hpp"
#include "hyperm/scenario.hpp"
#include "hyperm/sequencer.hpp"

namespace hyperm {

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

}  // namespace detail

inline json tree_to_json(const RrbtTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes()) {
    nodes.push_back({{"position", detail::to_json(n.position)},
                     {"regions", n.regions},
                     {"parent", n.parent},
                     {"edge_region", n.edge_region},
                     {"cost_to_root", n.cost_to_root}});
  }
  return {{"root_target", tree.root_target()}, {"active_regions", tree.active_regions()}, {"nodes", nodes}};
}

inline json plan_to_json(const PlanResult& r, const Scenario& s) {
  const CyclePlan& p = r.plan;
  json monitors = json::array();
  for (const auto& m : p.monitors) {
    monitors.push_back({{"target", m.target},
                        {"region", m.region},
                        {"entry", detail::to_json(m.entry)},
                        {"exit", detail::to_json(m.exit)},
                        {"min_duration", m.min_duration}});
  }
  json switching = json::array();
  for (const auto& sw : p.switching) {
    json legs = json::array();
    for (const auto& l : sw.legs) {
      legs.push_back({{"start", detail::to_json(l.start)},
                      {"end", detail::to_json(l.end)},
                      {"region", l.region},
                      {"duration", l.duration},
                      {"control", detail::to_json(l.control)},
                      {"drift", detail::to_json(l.drift)}});
    }
    json wps = json::array();
    for (const auto& w : sw.waypoints) wps.push_back(detail::to_json(w));
    switching.push_back({{"from", sw.from},
                         {"to", sw.to},
                         {"exit", detail::to_json(sw.exit)},
                         {"entry", detail::to_json(sw.entry)},
                         {"waypoints", wps},
                         {"legs", legs},
                         {"duration", sw.duration},
                         {"clips_other_target", sw.clips_other_target}});
  }
  json dist = json::array();
  for (Eigen::Index i = 0; i < r.distances.cost.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.distances.cost.cols(); ++j) row.push_back(r.distances.cost(i, j));
    dist.push_back(row);
  }
  return {{"scenario", scenario_to_json(s)},
          {"sequence", p.sequence},
          {"tour_cost", r.sequence.cost},
          {"distance_matrix", dist},
          {"monitors", monitors},
          {"switching", switching}};
}

inline CyclePlan plan_from_json(const json& j) {
  try {
    CyclePlan p;
    p.sequence = j.at("sequence").get<std::vector<int>>();
    for (const json& m : j.at("monitors")) {
      MonitorLeg leg;
      leg.target = m.at("target").get<int>();
      leg.region = m.at("region").get<int>();
      leg.entry = detail::vec2_from(m.at("entry"), "monitor entry");
      leg.exit = detail::vec2_from(m.at("exit"), "monitor exit");
      leg.min_duration = m.at("min_duration").get<double>();
      p.monitors.push_back(leg);
    }
    for (const json& s : j.at("switching")) {
      SwitchingSegment seg;
      seg.from = s.at("from").get<int>();
      seg.to = s.at("to").get<int>();
      seg.exit = detail::vec2_from(s.at("exit"), "switching exit");
      seg.entry = detail::vec2_from(s.at("entry"), "switching entry");
      for (const json& w : s.at("waypoints")) seg.waypoints.push_back(detail::vec2_from(w, "waypoint"));
      for (const json& l : s.at("legs")) {
        TransitPlan t;
        t.start = detail::vec2_from(l.at("start"), "leg start");
        t.end = detail::vec2_from(l.at("end"), "leg end");
        t.region = l.at("region").get<int>();
        t.duration = l.at("duration").get<double>();
        t.control = detail::vec2_from(l.at("control"), "leg control");
        t.drift = detail::vec2_from(l.at("drift"), "leg drift");
        seg.legs.push_back(t);
      }
      seg.duration = s.at("duration").get<double>();
      seg.clips_other_target = s.value("clips_other_target", false);
      p.switching.push_back(std::move(seg));
    }
    if (p.monitors.size() != p.sequence.size() || p.switching.size() != p.sequence.size()) {
      throw ScenarioError("plan: sequence, monitors and switching differ in length");
    }
    return p;
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("malformed plan JSON: ") + e.what());
  }
}

/// Cycle-start state for resuming or replaying a cycle.
inline json cycle_state_to_json(const CycleState& st) {
  json omegas = json::array();
  for (const auto& w : st.omega_start) omegas.push_back(detail::to_json_matrix(w));
  json omegas_end = json::array();
  for (const auto& w : st.omega_end) omegas_end.push_back(detail::to_json_matrix(w));
  json segs = json::array();
  for (std::size_t k = 0; k < st.monitors.size(); ++k) {
    const auto& m = st.monitors[k];
    json nodes = json::array();
    for (const auto& a : m.nodes) nodes.push_back(detail::to_json(a));
    json controls = json::array();
    for (const auto& u : m.controls) controls.push_back(detail::to_json(u));
    segs.push_back({{"tau", st.tau[k]},
                    {"tau_min", st.tau_min[k]},
                    {"monitor_cost", m.cost},
                    {"switching_cost", st.switching[k].cost},
                    {"switching_duration", st.switching[k].duration},
                    {"sensitivity", std::isnan(m.sensitivity) ? json(nullptr) : json(m.sensitivity)},
                    {"status", to_string(m.status)},
                    {"iterations", m.iterations},
                    {"stationarity", m.stationarity},
                    {"nodes", nodes},
                    {"controls", controls}});
  }
  return {{"tau", st.tau},
          {"J", st.cost},
          {"T", st.period},
          {"total_cost", st.total_cost},
          {"periodicity_gap", st.periodicity_gap()},
          {"omega_start", omegas},
          {"omega_end", omegas_end},
          {"segments", segs}};
}

inline std::vector<CovMatrix> covariances_from_json(const json& j) {
  std::vector<CovMatrix> out;
  for (const json& w : j) out.push_back(detail::matrix_from(w, "covariance"));
  return out;
}

inline std::string history_header(std::size_t k) {
  std::string h = "cycle,variant,J,T";
  for (std::size_t i = 1; i <= k; ++i) h += ",tau_" + std::to_string(i);
  for (std::size_t i = 1; i <= k; ++i) h += ",grad_" + std::to_string(i);
  return h + ",steady_state_flag";
}

inline std::string history_line(const HistoryRow& r) {
  std::string s = std::to_string(r.cycle) + "," + std::to_string(r.variant) + "," + detail::fmt_double(r.cost) +
                  "," + detail::fmt_double(r.period);
  for (double t : r.tau) s += "," + detail::fmt_double(t);
  for (std::size_t i = 0; i < r.tau.size(); ++i) {
    s += "," + (r.grad.empty() ? std::string("nan") : detail::fmt_double(r.grad[i]));
  }
  return s + "," + (r.steady_state ? "1" : "0");
}

inline void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& rows, std::size_t k) {
  os << history_header(k) << '\n';
  for (const auto& r : rows) os << history_line(r) << '\n';
}

/// Dense cycle trace; `cycle` prefixes each row when several cycles are written.
inline void write_trace_header(std::ostream& os, std::size_t num_targets) {
  os << "cycle,t,x,y,region,segment,ux,uy,u_norm";
  for (std::size_t i = 0; i < num_targets; ++i) os << ",tr_" << i;
  os << '\n';
}

inline void write_trace_rows(std::ostream& os, const CycleTrace& tr, int cycle, double t_offset = 0.0) {
  for (std::size_t n = 0; n < tr.times.size(); ++n) {
    os << cycle << ',' << detail::fmt_double(t_offset + tr.times[n]) << ',' << detail::fmt_double(tr.positions[n].x())
       << ',' << detail::fmt_double(tr.positions[n].y()) << ',' << tr.regions[n] << ',' << tr.segments[n] << ','
       << detail::fmt_double(tr.controls[n].x()) << ',' << detail::fmt_double(tr.controls[n].y()) << ','
       << detail::fmt_double(tr.controls[n].norm());
    for (const auto& t : tr.traces) os << ',' << detail::fmt_double(t[n]);
    os << '\n';
  }
}

/// Monitoring solution dump: grid, positions, controls and per-target traces.
inline json monitor_solution_to_json(const MonitorSolution& m) {
  json nodes = json::array();
  for (const auto& a : m.nodes) nodes.push_back(detail::to_json(a));
  json controls = json::array();
  for (const auto& u : m.controls) controls.push_back(detail::to_json(u));
  json positions = json::array();
  for (const auto& p : m.trace.positions) positions.push_back(detail::to_json(p));
  return {{"status", to_string(m.status)},
          {"tau", m.tau},
          {"cost", m.cost},
          {"target_costs", m.target_costs},
          {"sensitivity", std::isnan(m.sensitivity) ? json(nullptr) : json(m.sensitivity)},
          {"iterations", m.iterations},
          {"stationarity", m.stationarity},
          {"complementarity", m.complementarity},
          {"nodes", nodes},
          {"controls", controls},
          {"times", m.trace.times},
          {"positions", positions},
          {"traces", m.trace.traces}};
}

}  // namespace hyperm
