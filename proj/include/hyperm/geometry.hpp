#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hyperm/errors.hpp"
#include "hyperm/rng.hpp"

namespace hyperm {

using Vec2 = Eigen::Vector2d;

/// Absolute tolerance (space units) for point-on-facet classification.
inline constexpr double kGeoTol = 1e-9;

/// Closed halfspace {x : normal . x <= offset} with a unit normal.
struct Halfspace {
  Vec2 normal;
  double offset = 0.0;

  /// Builds a halfspace from an arbitrary nonzero normal, rescaling both
  /// normal and offset so that ||normal|| = 1.
  static Halfspace make(const Vec2& g, double b) {
    const double n = g.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw GeometryError("halfspace normal must be nonzero");
    return Halfspace{g / n, b / n};
  }

  /// Nonnegative inside, negative outside.
  double slack(const Vec2& p) const { return offset - normal.dot(p); }
};

struct Box {
  Vec2 lo;
  Vec2 hi;

  bool contains(const Vec2& p, double tol = kGeoTol) const {
    return p.x() >= lo.x() - tol && p.y() >= lo.y() - tol && p.x() <= hi.x() + tol &&
           p.y() <= hi.y() + tol;
  }

  std::vector<Halfspace> halfspaces() const {
    return {Halfspace::make({-1, 0}, -lo.x()), Halfspace::make({1, 0}, hi.x()),
            Halfspace::make({0, -1}, -lo.y()), Halfspace::make({0, 1}, hi.y())};
  }
};

/// Piece of a region boundary, annotated with every region containing it.
struct BoundarySegment {
  std::vector<int> regions;  // sorted, 1 or 2 entries
  Vec2 a;
  Vec2 b;
  double length = 0.0;
};

namespace detail {

// Sutherland-Hodgman step for a convex polygon against one halfspace.
inline std::vector<Vec2> clip(const std::vector<Vec2>& poly, const Halfspace& h) {
  std::vector<Vec2> out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    const double sp = h.slack(p);
    const double sq = h.slack(q);
    if (sp >= 0) out.push_back(p);
    if ((sp >= 0) != (sq >= 0)) {
      const double t = sp / (sp - sq);
      out.push_back(p + t * (q - p));
    }
  }
  // Drop near-duplicate consecutive vertices.
  std::vector<Vec2> dedup;
  for (const auto& v : out) {
    if (dedup.empty() || (v - dedup.back()).norm() > kGeoTol) dedup.push_back(v);
  }
  while (dedup.size() > 1 && (dedup.front() - dedup.back()).norm() <= kGeoTol) dedup.pop_back();
  return dedup;
}

inline std::vector<Vec2> box_polygon(const Box& box) {
  return {box.lo, {box.hi.x(), box.lo.y()}, box.hi, {box.lo.x(), box.hi.y()}};
}

inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

}  // namespace detail

/// Convex polygonal cell of the mission space with constant drift.
class Region {
 public:
  Region(int id, std::vector<Halfspace> halfspaces, Vec2 drift, const Box& bbox)
      : id_(id), halfspaces_(std::move(halfspaces)), drift_(std::move(drift)) {
    if (!(drift_.norm() < 1.0)) {
      throw ScenarioError("region " + std::to_string(id_) + ": drift norm must be < 1");
    }
    // Clip a much larger box so that a region escaping the mission box is detected.
    const Vec2 margin = (bbox.hi - bbox.lo) * 10.0 + Vec2::Ones();
    std::vector<Vec2> poly = detail::box_polygon(Box{bbox.lo - margin, bbox.hi + margin});
    for (const auto& h : halfspaces_) poly = detail::clip(poly, h);
    if (poly.size() < 3 || detail::polygon_area(poly) <= kGeoTol) {
      throw GeometryError("region " + std::to_string(id_) + " is empty or degenerate");
    }
    for (const auto& v : poly) {
      if (!bbox.contains(v, 1e-7)) {
        throw GeometryError("region " + std::to_string(id_) + " is unbounded or leaves the bounding box");
      }
    }
    polygon_ = std::move(poly);
  }

  int id() const { return id_; }
  const std::vector<Halfspace>& halfspaces() const { return halfspaces_; }
  const Vec2& drift() const { return drift_; }
  const std::optional<int>& target_id() const { return target_id_; }
  void set_target_id(std::optional<int> t) { target_id_ = t; }

  /// Vertices in counter-clockwise order.
  const std::vector<Vec2>& polygon() const { return polygon_; }

  bool contains(const Vec2& p, double tol = kGeoTol) const {
    return std::all_of(halfspaces_.begin(), halfspaces_.end(),
                       [&](const Halfspace& h) { return h.slack(p) >= -tol; });
  }

  /// Distance from an interior point to the region boundary (negative outside).
  double boundary_distance(const Vec2& p) const {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& h : halfspaces_) d = std::min(d, h.slack(p));
    return d;
  }

  Vec2 centroid() const {
    double a = 0.0;
    Vec2 c = Vec2::Zero();
    for (std::size_t i = 0; i < polygon_.size(); ++i) {
      const Vec2& p = polygon_[i];
      const Vec2& q = polygon_[(i + 1) % polygon_.size()];
      const double w = p.x() * q.y() - q.x() * p.y();
      a += w;
      c += w * (p + q);
    }
    return c / (3.0 * a);
  }

 private:
  int id_;
  std::vector<Halfspace> halfspaces_;
  Vec2 drift_;
  std::optional<int> target_id_;
  std::vector<Vec2> polygon_;
};

/// Mission space S as a union of convex regions with disjoint interiors.
class Partition {
 public:
  Partition(Box bbox, std::vector<Region> regions) : bbox_(std::move(bbox)), regions_(std::move(regions)) {
    if (regions_.empty()) throw GeometryError("partition needs at least one region");
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      if (regions_[i].id() != static_cast<int>(i)) throw GeometryError("region ids must be 0..P-1");
    }
    segments_.resize(regions_.size());
    for (std::size_t i = 0; i < regions_.size(); ++i) segments_[i] = compute_segments(static_cast<int>(i));
  }

  const Box& bbox() const { return bbox_; }
  const std::vector<Region>& regions() const { return regions_; }
  const Region& region(int id) const { return regions_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return regions_.size(); }

  void assign_target(int region_id, int target_id) {
    regions_.at(static_cast<std::size_t>(region_id)).set_target_id(target_id);
  }

  /// Sorted ids of all regions containing p within tol. Empty iff p lies outside S.
  std::vector<int> locate(const Vec2& p, double tol = kGeoTol) const {
    std::vector<int> ids;
    for (const auto& r : regions_) {
      if (r.contains(p, tol)) ids.push_back(r.id());
    }
    return ids;
  }

  /// As locate, but a point outside S is an error.
  std::vector<int> locate_or_throw(const Vec2& p) const {
    auto ids = locate(p);
    if (ids.empty()) {
      throw GeometryError("point (" + std::to_string(p.x()) + ", " + std::to_string(p.y()) +
                          ") lies outside the mission space");
    }
    return ids;
  }

  const std::vector<BoundarySegment>& boundary_segments(int region_id) const {
    return segments_.at(static_cast<std::size_t>(region_id));
  }

  /// Boundary point of a region drawn with density proportional to arc length.
  Vec2 sample_boundary(int region_id, Rng& rng) const {
    const auto& segs = boundary_segments(region_id);
    double total = 0.0;
    for (const auto& s : segs) total += s.length;
    double pick = uniform01(rng) * total;
    const BoundarySegment* chosen = &segs.back();
    for (const auto& s : segs) {
      if (pick < s.length) {
        chosen = &s;
        break;
      }
      pick -= s.length;
    }
    const double t = uniform01(rng);
    return chosen->a + t * (chosen->b - chosen->a);
  }

 private:
  std::vector<BoundarySegment> compute_segments(int id) const {
    const auto& poly = regions_[static_cast<std::size_t>(id)].polygon();
    std::vector<BoundarySegment> out;
    for (std::size_t e = 0; e < poly.size(); ++e) {
      const Vec2 a = poly[e];
      const Vec2 b = poly[(e + 1) % poly.size()];
      const Vec2 ab = b - a;
      const double len = ab.norm();
      if (len <= kGeoTol) continue;
      const Vec2 dir = ab / len;
      // Split the edge wherever a vertex of another region touches it, so that
      // every piece has a single set of neighbours.
      std::vector<double> cuts{0.0, len};
      for (const auto& other : regions_) {
        if (other.id() == id) continue;
        for (const auto& v : other.polygon()) {
          const Vec2 av = v - a;
          const double t = av.dot(dir);
          const double off = std::abs(dir.x() * av.y() - dir.y() * av.x());
          if (off <= 1e-8 && t > 1e-8 && t < len - 1e-8) cuts.push_back(t);
        }
      }
      std::sort(cuts.begin(), cuts.end());
      cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double x, double y) { return y - x <= 1e-8; }),
                 cuts.end());
      cuts.back() = len;
      for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        const Vec2 p = a + cuts[c] * dir;
        const Vec2 q = (c + 2 == cuts.size()) ? b : Vec2(a + cuts[c + 1] * dir);
        const double l = (q - p).norm();
        if (l <= kGeoTol) continue;
        auto ids = locate(0.5 * (p + q), 1e-7);
        if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.insert(std::lower_bound(ids.begin(), ids.end(), id), id);
        if (!out.empty() && out.back().regions == ids && (out.back().b - p).norm() <= kGeoTol &&
            std::abs((out.back().b - out.back().a).normalized().dot(dir) - 1.0) < 1e-12) {
          out.back().b = q;
          out.back().length = (q - out.back().a).norm();
        } else {
          out.push_back(BoundarySegment{std::move(ids), p, q, l});
        }
      }
    }
    if (out.empty()) throw GeometryError("region " + std::to_string(id) + " has no boundary");
    return out;
  }

  Box bbox_;
  std::vector<Region> regions_;
  std::vector<std::vector<BoundarySegment>> segments_;
};

/// Bounded Voronoi diagram of the seeds, each cell given as a halfspace list.
/// Only halfspaces that carry an edge of the clipped cell are kept.
inline Partition voronoi_partition(const std::vector<Vec2>& seeds, const Box& bbox,
                                   const std::vector<Vec2>& drifts = {}) {
  if (seeds.empty()) throw GeometryError("voronoi partition needs at least one seed");
  if (!drifts.empty() && drifts.size() != seeds.size()) {
    throw GeometryError("voronoi partition: one drift per seed required");
  }
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!bbox.contains(seeds[i], 0.0)) throw GeometryError("voronoi seed outside bounding box");
    for (std::size_t j = 0; j < i; ++j) {
      if ((seeds[i] - seeds[j]).norm() <= kGeoTol) throw GeometryError("duplicate voronoi seeds");
    }
  }
  std::vector<Region> regions;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    std::vector<Halfspace> candidates = bbox.halfspaces();
    for (std::size_t j = 0; j < seeds.size(); ++j) {
      if (j == i) continue;
      const Vec2 g = seeds[j] - seeds[i];
      candidates.push_back(Halfspace::make(g, 0.5 * (seeds[j].squaredNorm() - seeds[i].squaredNorm())));
    }
    std::vector<Vec2> poly = detail::box_polygon(bbox);
    for (const auto& h : candidates) poly = detail::clip(poly, h);
    std::vector<Halfspace> kept;
    for (const auto& h : candidates) {
      for (std::size_t v = 0; v < poly.size(); ++v) {
        const Vec2& p = poly[v];
        const Vec2& q = poly[(v + 1) % poly.size()];
        if (std::abs(h.slack(p)) <= 1e-9 && std::abs(h.slack(q)) <= 1e-9 && (q - p).norm() > kGeoTol) {
          kept.push_back(h);
          break;
        }
      }
    }
    const Vec2 d = drifts.empty() ? Vec2::Zero() : drifts[i];
    regions.emplace_back(static_cast<int>(i), std::move(kept), d, bbox);
  }
  return Partition(bbox, std::move(regions));
}

}  // namespace hyperm
