// Command-line pipeline: plan -> optimize -> simulate.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "hyperm/bilevel.hpp"
#include "hyperm/errors.hpp"
#include "hyperm/io.hpp"
#include "hyperm/log.hpp"
#include "hyperm/scenario.hpp"

namespace fs = std::filesystem;
using namespace hyperm;

namespace {

enum ExitCode { kOk = 0, kInvalid = 1, kUnreachable = 2, kSolver = 3 };

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int report(int code, const std::string& kind, const std::string& message, std::optional<int> segment = std::nullopt) {
  std::cerr << "error code=" << code << " kind=" << kind;
  if (segment) std::cerr << " segment=" << *segment;
  std::cerr << " message=\"" << one_line(message) << "\"\n";
  return code;
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

json read_manifest(const fs::path& dir) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) return json{{"files", json::array()}, {"stages", json::object()}};
  return read_json_file(p.string());
}

void record_stage(const fs::path& dir, const std::string& stage, double seconds, const std::vector<std::string>& files,
                  const json& config) {
  json m = read_manifest(dir);
  m["output_directory"] = fs::absolute(dir).string();
  std::vector<std::string> all = m["files"].get<std::vector<std::string>>();
  for (const auto& f : files) {
    if (std::find(all.begin(), all.end(), f) == all.end()) all.push_back(f);
  }
  std::sort(all.begin(), all.end());
  m["files"] = all;
  m["stages"][stage] = {{"wall_clock_seconds", seconds}, {"config", config}};
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

struct Loaded {
  Scenario scenario;
  CyclePlan plan;
};

Loaded load_plan_dir(const fs::path& dir) {
  const json j = read_json_file((dir / "plan.json").string());
  if (!j.contains("scenario")) throw ScenarioError("plan.json lacks the scenario echo");
  return Loaded{scenario_from_json(j.at("scenario")), plan_from_json(j)};
}

int cmd_plan(const std::string& scenario_path, const fs::path& out, std::optional<std::uint64_t> seed,
             std::optional<std::size_t> iterations) {
  Stopwatch sw;
  Scenario s = load_scenario(scenario_path);
  if (seed) s.seed = *seed;
  if (iterations) s.planner.iterations = *iterations;
  const PlanResult r = make_plan(s);
  fs::create_directories(out / "trees");
  std::vector<std::string> files{"plan.json"};
  std::ofstream(out / "plan.json") << plan_to_json(r, s).dump(2) << '\n';
  for (std::size_t i = 0; i < r.trees.size(); ++i) {
    const std::string name = "trees/tree_" + std::to_string(i) + ".json";
    std::ofstream(out / name) << tree_to_json(r.trees[i]).dump() << '\n';
    files.push_back(name);
  }
  logger().info("plan: K = {}, tour cost {:.6f}, switching time {:.6f}", r.plan.size(), r.sequence.cost,
                r.plan.switching_time());
  record_stage(out, "plan", sw.seconds(), files,
               {{"scenario", scenario_path},
                {"seed", s.seed},
                {"rrbt_iterations", s.planner.iterations.value_or(default_rrbt_iterations(s.partition))}});
  std::cout << "plan: " << r.plan.size() << " targets, sequence";
  for (int t : r.plan.sequence) std::cout << ' ' << t;
  std::cout << ", written to " << out.string() << '\n';
  return kOk;
}

void write_trace_file(const fs::path& path, const std::vector<CycleTrace>& traces, std::size_t num_targets) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  write_trace_header(os, num_targets);
  double t0 = 0.0;
  for (std::size_t c = 0; c < traces.size(); ++c) {
    write_trace_rows(os, traces[c], static_cast<int>(c), t0);
    if (!traces[c].times.empty()) t0 += traces[c].times.back();
  }
}

int cmd_optimize(const fs::path& dir, int variant, std::optional<int> max_cycles, std::optional<double> alpha0,
                 std::optional<std::uint64_t> seed) {
  Stopwatch sw;
  Loaded in = load_plan_dir(dir);
  OptimizerConfig cfg = in.scenario.optimizer;
  cfg.variant = static_cast<Variant>(variant);
  if (max_cycles) cfg.max_cycles = *max_cycles;
  if (alpha0) cfg.alpha0 = *alpha0;
  const std::string v = std::to_string(variant);
  const std::string history_name = "history_v" + v + ".csv";
  std::ofstream history(dir / history_name, std::ios::binary);
  if (!history) throw Error("cannot write history file");
  history << history_header(in.plan.size()) << '\n' << std::flush;
  const OptimizeResult res =
      optimize(in.plan, in.scenario.partition, in.scenario.targets, in.scenario.omega0, cfg, std::nullopt,
               [&](const HistoryRow& row) { history << history_line(row) << '\n' << std::flush; });
  history.close();

  const CycleState& st = res.final_state;
  const std::string trace_name = "final_trace_v" + v + ".csv";
  write_trace_file(dir / trace_name, {cycle_trace(st, in.plan)}, in.scenario.targets.size());
  const std::string state_name = "final_state_v" + v + ".json";
  std::ofstream(dir / state_name) << cycle_state_to_json(st).dump(2) << '\n';
  const std::string summary_name = "summary_v" + v + ".json";
  const json summary = {{"variant", variant},
                        {"J", st.cost},
                        {"T", st.period},
                        {"tau", st.tau},
                        {"tau_min", st.tau_min},
                        {"converged", res.converged},
                        {"cycles", res.cycles},
                        {"updates", res.updates},
                        {"alpha0", res.alpha0},
                        {"best_J", res.best_cost},
                        {"best_tau", res.best_tau},
                        {"periodicity_gap", st.periodicity_gap()}};
  std::ofstream(dir / summary_name) << summary.dump(2) << '\n';
  record_stage(dir, "optimize_v" + v, sw.seconds(), {history_name, trace_name, state_name, summary_name},
               {{"variant", variant},
                {"max_cycles", cfg.max_cycles},
                {"alpha0", cfg.alpha0 ? json(*cfg.alpha0) : json(nullptr)},
                {"seed", seed ? json(*seed) : json(in.scenario.seed)},
                {"eps_ss", cfg.eps_ss},
                {"eps_tau", cfg.eps_tau}});
  std::cout << "optimize v" << v << ": J = " << detail::fmt_double(st.cost) << ", T = " << detail::fmt_double(st.period)
            << ", cycles = " << res.cycles << ", updates = " << res.updates
            << (res.converged ? "" : " (not converged)") << '\n';
  return kOk;
}

int cmd_simulate(const fs::path& dir, int cycles, std::optional<int> variant) {
  Stopwatch sw;
  Loaded in = load_plan_dir(dir);
  std::vector<double> tau = initial_durations(in.plan, in.scenario.optimizer.tau_init_offset);
  std::vector<CovMatrix> omega = in.scenario.omega0;
  std::string source = "initial";
  std::vector<int> candidates = variant ? std::vector<int>{*variant} : std::vector<int>{1, 2};
  for (int v : candidates) {
    const fs::path p = dir / ("final_state_v" + std::to_string(v) + ".json");
    if (!fs::exists(p)) continue;
    const json st = read_json_file(p.string());
    tau = st.at("tau").get<std::vector<double>>();
    omega = covariances_from_json(st.at("omega_start"));
    source = p.filename().string();
    break;
  }
  if (variant && source == "initial") throw ScenarioError("no final state for variant " + std::to_string(*variant));
  if (cycles < 1) throw ScenarioError("--cycles must be at least 1");
  const MonitorOptions& mopt = in.scenario.optimizer.monitor;
  std::vector<CycleTrace> traces;
  json per_cycle = json::array();
  std::optional<CycleState> prev;
  for (int c = 0; c < cycles; ++c) {
    CycleState st = simulate_cycle(in.plan, in.scenario.partition, in.scenario.targets, tau, omega, mopt,
                                   prev ? &*prev : nullptr);
    traces.push_back(cycle_trace(st, in.plan));
    per_cycle.push_back({{"cycle", c}, {"J", st.cost}, {"T", st.period}, {"periodicity_gap", st.periodicity_gap()}});
    omega = st.omega_end;
    prev = std::move(st);
  }
  write_trace_file(dir / "trace.csv", traces, in.scenario.targets.size());
  const json summary = {{"source", source}, {"tau", tau}, {"cycles", per_cycle}};
  std::ofstream(dir / "simulate_summary.json") << summary.dump(2) << '\n';
  record_stage(dir, "simulate", sw.seconds(), {"trace.csv", "simulate_summary.json"},
               {{"cycles", cycles}, {"source", source}});
  std::cout << "simulate: " << cycles << " cycle(s) from " << source << ", last J = "
            << detail::fmt_double(per_cycle.back()["J"].get<double>()) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persistent monitoring with hybrid agent dynamics"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir;
  std::optional<std::uint64_t> plan_seed;
  std::optional<std::size_t> plan_iterations;
  auto* plan = app.add_subcommand("plan", "grow RRBT trees, sequence targets, write the cycle plan");
  plan->add_option("scenario", scenario_path, "scenario JSON")->required()->check(CLI::ExistingFile);
  plan->add_option("-o,--output", out_dir, "output directory")->required();
  plan->add_option("--seed", plan_seed, "override the scenario seed");
  plan->add_option("--iterations", plan_iterations, "RRBT iterations per tree");

  std::string dir;
  int variant = 1;
  std::optional<int> max_cycles;
  std::optional<double> alpha0;
  std::optional<std::uint64_t> opt_seed;
  auto* opt = app.add_subcommand("optimize", "optimise the monitoring durations of a plan");
  opt->add_option("dir", dir, "plan directory")->required()->check(CLI::ExistingDirectory);
  opt->add_option("--variant", variant, "1: steady state before update, 2: update every cycle")
      ->check(CLI::IsMember({1, 2}));
  opt->add_option("--max-cycles", max_cycles, "cycle budget")->check(CLI::NonNegativeNumber);
  opt->add_option("--alpha0", alpha0, "initial step size")->check(CLI::PositiveNumber);
  opt->add_option("--seed", opt_seed, "run seed (recorded in the manifest)");

  int sim_cycles = 2;
  std::optional<int> sim_variant;
  auto* sim = app.add_subcommand("simulate", "replay cycles of a plan or optimised state");
  sim->add_option("dir", dir, "plan directory")->required()->check(CLI::ExistingDirectory);
  sim->add_option("--cycles", sim_cycles, "number of cycles")->check(CLI::PositiveNumber);
  sim->add_option("--variant", sim_variant, "replay final_state_v<variant>.json")->check(CLI::IsMember({1, 2}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*plan) return cmd_plan(scenario_path, out_dir, plan_seed, plan_iterations);
    if (*opt) return cmd_optimize(dir, variant, max_cycles, alpha0, opt_seed);
    if (*sim) return cmd_simulate(dir, sim_cycles, sim_variant);
  } catch (const UnreachableError& e) {
    return report(kUnreachable, "unreachable", e.what());
  } catch (const SolverError& e) {
    return report(kSolver, "solver", e.what(), e.segment());
  } catch (const ScenarioError& e) {
    return report(kInvalid, "scenario", e.what());
  } catch (const GeometryError& e) {
    return report(kInvalid, "geometry", e.what());
  } catch (const std::exception& e) {
    return report(kInvalid, "internal", e.what());
  }
  return kOk;
}
