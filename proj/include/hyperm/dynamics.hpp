#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "hyperm/errors.hpp"
#include "hyperm/geometry.hpp"

namespace hyperm {

/// Minimum time to steer from x to y under constant drift d with ||u|| <= 1.
///
/// With r = y - x the agent flies the constant heading u = (r - dT)/T, so T is
/// the positive root of (1 - |d|^2) T^2 + 2 (r.d) T - |r|^2 = 0.
inline double min_transit_time(const Vec2& x, const Vec2& y, const Vec2& d) {
  const double dd = d.squaredNorm();
  if (!(dd < 1.0)) throw UnreachableError("drift norm >= 1: target point unreachable");
  const Vec2 r = y - x;
  const double rr = r.squaredNorm();
  if (rr == 0.0) return 0.0;
  const double rd = r.dot(d);
  const double a = 1.0 - dd;
  const double disc = std::sqrt(rd * rd + a * rr);
  // Two algebraically equal forms; pick the one without cancellation.
  return rd >= 0.0 ? rr / (rd + disc) : (disc - rd) / a;
}

/// Straight-line time-optimal transit inside one region.
struct TransitPlan {
  Vec2 start;
  Vec2 end;
  int region = -1;
  double duration = 0.0;
  Vec2 control = Vec2::Zero();
  Vec2 drift = Vec2::Zero();

  Vec2 position(double t) const { return start + t * (drift + control); }
  Vec2 velocity() const { return drift + control; }
};

inline TransitPlan transit_plan(const Vec2& x, const Vec2& y, const Region& region) {
  if (!region.contains(x) || !region.contains(y)) {
    throw GeometryError("transit endpoints must lie in region " + std::to_string(region.id()));
  }
  TransitPlan plan{x, y, region.id(), min_transit_time(x, y, region.drift()), Vec2::Zero(), region.drift()};
  if (plan.duration > 0.0) {
    plan.control = ((y - x) - region.drift() * plan.duration) / plan.duration;
    plan.control.normalize();
  }
  return plan;
}

/// Sampled agent trajectory.
struct PathTrace {
  std::vector<double> times;
  std::vector<Vec2> positions;
  std::vector<int> regions;
  std::vector<Vec2> controls;

  std::size_t size() const { return times.size(); }
};

using ControlLaw = std::function<Vec2(double)>;

namespace detail {

inline Vec2 rk4_drift_step(const Vec2& x, double t, double h, const Vec2& d, const ControlLaw& u) {
  const Vec2 k1 = d + u(t);
  const Vec2 k2 = d + u(t + 0.5 * h);
  const Vec2 k3 = k2;  // right-hand side does not depend on x
  const Vec2 k4 = d + u(t + h);
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Region the trajectory moves into from p, among the candidates containing p.
inline int entered_region(const Partition& partition, const Vec2& p, double t, const ControlLaw& u,
                          int exclude) {
  constexpr double probe = 1e-7;
  for (int id : partition.locate(p)) {
    if (id == exclude) continue;
    const Region& r = partition.region(id);
    if (r.contains(p + probe * (r.drift() + u(t)))) return id;
  }
  return -1;
}

}  // namespace detail

/// Fixed-step RK4 integration of a' = d_i + u(t) across regions. Crossings are
/// located by bisection on the step length and the drift switches there.
inline PathTrace integrate_path(const Vec2& start, const ControlLaw& control, const Partition& partition,
                                double t_end, double dt, double event_tol = 1e-10) {
  if (!(dt > 0.0)) throw Error("integrate_path: dt must be positive");
  PathTrace trace;
  int region = detail::entered_region(partition, start, 0.0, control, -1);
  if (region < 0) {
    const auto ids = partition.locate_or_throw(start);
    region = ids.front();
  }
  auto record = [&](double t, const Vec2& x) {
    const Vec2 u = control(t);
    if (u.norm() > 1.0 + 1e-9) throw Error("integrate_path: control norm exceeds 1");
    trace.times.push_back(t);
    trace.positions.push_back(x);
    trace.regions.push_back(region);
    trace.controls.push_back(u);
  };
  double t = 0.0;
  Vec2 x = start;
  record(t, x);
  while (t < t_end - 1e-14) {
    double h = std::min(dt, t_end - t);
    const Region* r = &partition.region(region);
    Vec2 next = detail::rk4_drift_step(x, t, h, r->drift(), control);
    if (!r->contains(next)) {
      double lo = 0.0;
      double hi = h;
      while (hi - lo > event_tol) {
        const double mid = 0.5 * (lo + hi);
        if (r->contains(detail::rk4_drift_step(x, t, mid, r->drift(), control))) lo = mid;
        else hi = mid;
      }
      const double te = t + hi;
      const Vec2 xe = detail::rk4_drift_step(x, t, hi, r->drift(), control);
      const int next_region = detail::entered_region(partition, xe, te, control, region);
      if (next_region < 0) {
        const Vec2 ahead = xe + 1e-7 * (r->drift() + control(te));
        if (partition.locate(ahead, 0.0).empty()) throw GeometryError("integrate_path: trajectory leaves the mission space");
        throw Error("integrate_path: no transversal crossing found (sliding motion)");
      }
      t = te;
      x = xe;
      region = next_region;
      record(t, x);
      continue;
    }
    t += h;
    x = next;
    record(t, x);
  }
  return trace;
}

inline void write_csv(std::ostream& os, const PathTrace& trace) {
  os << "t,x,y,region,ux,uy\n";
  os.precision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    os << trace.times[i] << ',' << trace.positions[i].x() << ',' << trace.positions[i].y() << ','
       << trace.regions[i] << ',' << trace.controls[i].x() << ',' << trace.controls[i].y() << '\n';
  }
}

}  // namespace hyperm
