#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyperm/bilevel.hpp"
#include "hyperm/errors.hpp"
#include "hyperm/estimation.hpp"
#include "hyperm/geometry.hpp"
#include "hyperm/log.hpp"
#include "hyperm/rng.hpp"
#include "hyperm/rrbt.hpp"
#include "hyperm/sequencer.hpp"

namespace hyperm {

using json = nlohmann::json;

struct PlannerConfig {
  /// RRBT iterations per tree; 300 per region when unset.
  std::optional<std::size_t> iterations;
};

/// Mission data plus planner and optimizer settings.
struct Scenario {
  std::string name;
  std::uint64_t seed = 0;
  Partition partition;
  std::vector<Target> targets;
  std::vector<CovMatrix> omega0;  // initial covariance per target
  PlannerConfig planner;
  OptimizerConfig optimizer;
};

namespace detail {

inline Vec2 vec2_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ScenarioError(what + ": expected a 2-vector");
  }
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

inline json to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

inline Matrix matrix_from(const json& j, const std::string& what) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ScenarioError(what + ": expected a matrix (array of rows)");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ScenarioError(what + ": ragged matrix rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

template <class M>
json to_json_matrix(const M& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Halfspace halfspace_from(const json& j, const std::string& what) {
  const Vec2 n = vec2_from(j.at("normal"), what + ".normal");
  const double b = j.at("offset").get<double>();
  // Keep already-normalised data bit-exact so that save/load round-trips.
  if (std::abs(n.norm() - 1.0) <= 1e-12) return Halfspace{n, b};
  return Halfspace::make(n, b);
}

inline std::vector<Vec2> random_drifts(std::size_t n, std::uint64_t seed, double max_norm) {
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_stream(seed, "drift", i);
    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double mag = uniform(rng, 0.0, max_norm);
    out.emplace_back(mag * std::cos(angle), mag * std::sin(angle));
  }
  return out;
}

inline Partition partition_from(const json& j) {
  const json& bb = j.at("bbox");
  const Box box{vec2_from(bb.at("lo"), "bbox.lo"), vec2_from(bb.at("hi"), "bbox.hi")};
  if (!(box.hi.x() > box.lo.x()) || !(box.hi.y() > box.lo.y())) throw ScenarioError("bbox must have positive area");
  if (j.contains("regions")) {
    std::vector<Region> regions;
    int id = 0;
    for (const json& r : j.at("regions")) {
      const std::string what = "region " + std::to_string(id);
      std::vector<Halfspace> hs;
      for (const json& h : r.at("halfspaces")) hs.push_back(halfspace_from(h, what));
      const Vec2 d = r.contains("drift") ? vec2_from(r.at("drift"), what + ".drift") : Vec2::Zero();
      regions.emplace_back(id++, std::move(hs), d, box);
    }
    return Partition(box, std::move(regions));
  }
  if (j.contains("voronoi")) {
    const json& v = j.at("voronoi");
    std::vector<Vec2> seeds;
    for (const json& s : v.at("seeds")) seeds.push_back(vec2_from(s, "voronoi seed"));
    const double max_norm = v.value("drift_max_norm", 0.5);
    if (!(max_norm >= 0.0 && max_norm < 1.0)) throw ScenarioError("drift_max_norm must lie in [0, 1)");
    const auto drifts = random_drifts(seeds.size(), v.value("drift_seed", std::uint64_t{0}), max_norm);
    return voronoi_partition(seeds, box, drifts);
  }
  throw ScenarioError("scenario needs either 'regions' or 'voronoi'");
}

inline QualityField quality_from(const json& j, const std::string& what) {
  QualityField f;
  const std::string kind = j.value("kind", "gaussian");
  if (kind == "gaussian") {
    f.kind = QualityKind::gaussian;
  } else if (kind == "ring") {
    f.kind = QualityKind::ring;
  } else {
    throw ScenarioError(what + ": unknown quality kind '" + kind + "'");
  }
  f.sigma = j.at("sigma").get<double>();
  f.rho = j.at("rho").get<double>();
  f.ring_radius = j.value("ring_radius", 0.0);
  return f;
}

}  // namespace detail

/// Checks the load-time invariants that involve both partition and targets:
/// each target lies strictly inside one region together with its sensing
/// ball, and no region holds two targets. Assigns target regions.
inline void validate_mission(Partition& partition, std::vector<Target>& targets) {
  std::vector<int> owner(partition.size(), -1);
  for (auto& t : targets) {
    const std::string who = "target " + std::to_string(t.id);
    if (!partition.bbox().contains(t.position, 0.0)) throw ScenarioError(who + " lies outside the mission space");
    const auto ids = partition.locate(t.position);
    if (ids.size() != 1) throw ScenarioError(who + " must lie in the interior of exactly one region");
    const Region& r = partition.region(ids.front());
    if (r.boundary_distance(t.position) < t.quality.rho - kGeoTol) {
      throw ScenarioError(who + ": sensing ball of radius rho leaves region " + std::to_string(r.id()));
    }
    if (owner[static_cast<std::size_t>(r.id())] >= 0) {
      throw ScenarioError("region " + std::to_string(r.id()) + " holds targets " +
                          std::to_string(owner[static_cast<std::size_t>(r.id())]) + " and " + std::to_string(t.id));
    }
    owner[static_cast<std::size_t>(r.id())] = t.id;
    t.region = r.id();
    partition.assign_target(r.id(), t.id);
  }
}

inline Scenario scenario_from_json(const json& j) {
  try {
    Scenario s{.name = j.value("name", ""),
               .seed = j.value("seed", std::uint64_t{0}),
               .partition = detail::partition_from(j),
               .targets = {},
               .omega0 = {},
               .planner = {},
               .optimizer = {}};
    int id = 0;
    for (const json& t : j.at("targets")) {
      const std::string what = "target " + std::to_string(id);
      Target target = make_target(id, detail::vec2_from(t.at("position"), what + ".position"),
                                  detail::matrix_from(t.at("A"), what + ".A"), detail::matrix_from(t.at("Q"), what + ".Q"),
                                  detail::matrix_from(t.at("H"), what + ".H"), detail::matrix_from(t.at("R"), what + ".R"),
                                  detail::quality_from(t.at("quality"), what + ".quality"));
      const int m = target.dim();
      CovMatrix w0 = CovMatrix::Identity(m, m);
      if (t.contains("omega0")) {
        const Matrix w = detail::matrix_from(t.at("omega0"), what + ".omega0");
        if (w.rows() != m || w.cols() != m || !detail::is_spd(w)) {
          throw ScenarioError(what + ": omega0 must be symmetric positive definite of the state dimension");
        }
        w0 = w;
      }
      s.targets.push_back(std::move(target));
      s.omega0.push_back(w0);
      ++id;
    }
    if (s.targets.empty()) throw ScenarioError("scenario has no targets");
    validate_mission(s.partition, s.targets);
    if (j.contains("planner")) {
      const json& p = j.at("planner");
      if (p.contains("iterations") && !p.at("iterations").is_null()) {
        s.planner.iterations = p.at("iterations").get<std::size_t>();
      }
    }
    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      OptimizerConfig& c = s.optimizer;
      const int variant = o.value("variant", 1);
      if (variant != 1 && variant != 2) throw ScenarioError("optimizer.variant must be 1 or 2");
      c.variant = static_cast<Variant>(variant);
      if (o.contains("alpha0") && !o.at("alpha0").is_null()) c.alpha0 = o.at("alpha0").get<double>();
      c.alpha_scale = o.value("alpha_scale", c.alpha_scale);
      c.eps_ss = o.value("eps_ss", c.eps_ss);
      c.eps_tau = o.value("eps_tau", c.eps_tau);
      c.max_cycles = o.value("max_cycles", c.max_cycles);
      c.max_steady_state_cycles = o.value("max_steady_state_cycles", c.max_steady_state_cycles);
      c.tau_init_offset = o.value("tau_init_offset", c.tau_init_offset);
      c.monitor.intervals = o.value("intervals", c.monitor.intervals);
      c.monitor.substeps = o.value("substeps", c.monitor.substeps);
      c.monitor.tol_stat = o.value("tol_stat", c.monitor.tol_stat);
      c.monitor.tol_comp = o.value("tol_comp", c.monitor.tol_comp);
      c.monitor.max_iterations = o.value("max_inner_iterations", c.monitor.max_iterations);
      if (!(c.eps_ss > 0.0) || !(c.eps_tau > 0.0) || !(c.alpha_scale > 0.0) || c.max_cycles < 0 ||
          c.monitor.intervals < 2 || c.monitor.substeps < 1 || !(c.tau_init_offset >= 0.0) ||
          (c.alpha0 && !(*c.alpha0 > 0.0))) {
        throw ScenarioError("optimizer settings out of range");
      }
    }
    return s;
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("malformed scenario JSON: ") + e.what());
  } catch (const GeometryError& e) {
    throw ScenarioError(e.what());
  }
}

/// Serialises with explicit regions, so the result reloads to identical values.
inline json scenario_to_json(const Scenario& s) {
  json j;
  j["name"] = s.name;
  j["seed"] = s.seed;
  j["bbox"] = {{"lo", detail::to_json(s.partition.bbox().lo)}, {"hi", detail::to_json(s.partition.bbox().hi)}};
  json regions = json::array();
  for (const auto& r : s.partition.regions()) {
    json hs = json::array();
    for (const auto& h : r.halfspaces()) hs.push_back({{"normal", detail::to_json(h.normal)}, {"offset", h.offset}});
    regions.push_back({{"halfspaces", hs}, {"drift", detail::to_json(r.drift())}});
  }
  j["regions"] = regions;
  json targets = json::array();
  for (std::size_t i = 0; i < s.targets.size(); ++i) {
    const Target& t = s.targets[i];
    json q = {{"kind", t.quality.kind == QualityKind::gaussian ? "gaussian" : "ring"},
              {"sigma", t.quality.sigma},
              {"rho", t.quality.rho},
              {"ring_radius", t.quality.ring_radius}};
    targets.push_back({{"position", detail::to_json(t.position)},
                       {"A", detail::to_json_matrix(t.A)},
                       {"Q", detail::to_json_matrix(t.Q)},
                       {"H", detail::to_json_matrix(t.H)},
                       {"R", detail::to_json_matrix(t.R)},
                       {"quality", q},
                       {"omega0", detail::to_json_matrix(s.omega0[i])}});
  }
  j["targets"] = targets;
  j["planner"] = {{"iterations", s.planner.iterations ? json(*s.planner.iterations) : json(nullptr)}};
  const OptimizerConfig& c = s.optimizer;
  j["optimizer"] = {{"variant", static_cast<int>(c.variant)},
                    {"alpha0", c.alpha0 ? json(*c.alpha0) : json(nullptr)},
                    {"alpha_scale", c.alpha_scale},
                    {"eps_ss", c.eps_ss},
                    {"eps_tau", c.eps_tau},
                    {"max_cycles", c.max_cycles},
                    {"max_steady_state_cycles", c.max_steady_state_cycles},
                    {"tau_init_offset", c.tau_init_offset},
                    {"intervals", c.monitor.intervals},
                    {"substeps", c.monitor.substeps},
                    {"tol_stat", c.monitor.tol_stat},
                    {"tol_comp", c.monitor.tol_comp},
                    {"max_inner_iterations", c.monitor.max_iterations}};
  return j;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ScenarioError(path + ": " + e.what());
  }
}

inline Scenario load_scenario(const std::string& path) { return scenario_from_json(read_json_file(path)); }

inline void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << scenario_to_json(s).dump(2) << '\n';
}

inline std::vector<Vec2> target_positions(const std::vector<Target>& targets) {
  std::vector<Vec2> out;
  for (const auto& t : targets) out.push_back(t.position);
  return out;
}

/// Offline planning stage: RRBT trees per target, distance matrix, TSP and
/// the resulting cycle plan.
struct PlanResult {
  CyclePlan plan;
  VisitingSequence sequence;
  DistanceMatrix distances;
  std::vector<RrbtTree> trees;
};

inline PlanResult make_plan(const Scenario& s) {
  PlanResult out;
  const std::size_t iters = s.planner.iterations.value_or(default_rrbt_iterations(s.partition));
  if (s.targets.size() == 1) {
    logger().warn("single target: degenerate plan without switching or sequencing");
    Rng rng = make_stream(s.seed, "rrbt", 0);
    out.trees.push_back(grow_tree(s.targets[0].position, s.partition, iters, rng, 0));
    out.sequence = VisitingSequence{{0}, 0.0};
    out.distances.cost = Eigen::MatrixXd::Zero(1, 1);
    out.distances.paths.assign(1, std::vector<RrbtTree::Path>(1));
  } else {
    out.distances = distance_matrix(target_positions(s.targets), s.partition, iters, s.seed, &out.trees);
    out.sequence = solve_tsp(out.distances.cost);
  }
  out.plan = build_cycle_plan(out.sequence, out.distances, s.partition, s.targets);
  return out;
}

}  // namespace hyperm
