#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string cli() {
  const char* p = std::getenv("HYPERM_CLI");
  return p ? p : HYPERM_CLI_PATH;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("hyperm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = "HYPERM_LOG=error " + cli() + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return Outcome{WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
  }

  fs::path write_scenario(const json& j, const std::string& name = "scenario.json") const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  fs::path plan(const json& scenario, const std::string& name = "plan") const {
    const fs::path out = dir_ / name;
    const Outcome r = run("plan " + write_scenario(scenario).string() + " -o " + out.string());
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }

  fs::path dir_;
};

json mini_scenario() {
  return json::parse(R"({
    "name": "mini", "seed": 5,
    "bbox": {"lo": [0, 0], "hi": [1, 1]},
    "voronoi": {"seeds": [[0.25, 0.5], [0.75, 0.5]], "drift_seed": 2, "drift_max_norm": 0.3},
    "targets": [
      {"position": [0.25, 0.5], "A": [[0]], "Q": [[1]], "H": [[1]], "R": [[0.5]],
       "quality": {"kind": "gaussian", "sigma": 0.1, "rho": 0.2}},
      {"position": [0.75, 0.5], "A": [[0]], "Q": [[1]], "H": [[1]], "R": [[0.5]],
       "quality": {"kind": "gaussian", "sigma": 0.1, "rho": 0.2}}
    ],
    "optimizer": {"tau_init_offset": 1.0}
  })");
}

void expect_single_line_error(const Outcome& r, int code) {
  EXPECT_EQ(r.code, code);
  ASSERT_FALSE(r.err.empty());
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  EXPECT_EQ(r.err.rfind("error code=" + std::to_string(code) + " kind=", 0), 0u) << r.err;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("missing column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

TEST_F(CliTest, InvalidScenarioExitsWithCodeOne) {
  json j = mini_scenario();
  j["targets"][0]["R"] = {{-1}};
  const Outcome r = run("plan " + write_scenario(j).string() + " -o " + (dir_ / "out").string());
  expect_single_line_error(r, 1);
  EXPECT_NE(r.err.find("kind=scenario"), std::string::npos);

  std::ofstream(dir_ / "broken.json") << "{ not json";
  expect_single_line_error(run("plan " + (dir_ / "broken.json").string() + " -o " + (dir_ / "out").string()), 1);
}

TEST_F(CliTest, UnreachablePairExitsWithCodeTwo) {
  json j = mini_scenario();
  j["voronoi"]["seeds"] = {{0.25, 0.5}, {0.75, 0.5}, {0.5, 0.1}, {0.5, 0.9}, {0.5, 0.5}};
  for (auto& t : j["targets"]) t["quality"] = {{"kind", "gaussian"}, {"sigma", 0.05}, {"rho", 0.1}};
  const Outcome r = run("plan " + write_scenario(j).string() + " -o " + (dir_ / "out").string() + " --iterations 1");
  expect_single_line_error(r, 2);
  EXPECT_NE(r.err.find("kind=unreachable"), std::string::npos);
}

TEST_F(CliTest, InnerSolverFailureExitsWithCodeThreeAndSegment) {
  json j = mini_scenario();
  j["optimizer"]["max_inner_iterations"] = 1;
  const fs::path p = plan(j);
  const Outcome r = run("optimize " + p.string() + " --variant 2 --max-cycles 1");
  expect_single_line_error(r, 3);
  EXPECT_NE(r.err.find("segment="), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingPlanDirectoryIsAnError) {
  const Outcome r = run("optimize " + (dir_ / "nowhere").string());
  EXPECT_NE(r.code, 0);
  fs::create_directories(dir_ / "empty");
  expect_single_line_error(run("optimize " + (dir_ / "empty").string()), 1);
}

TEST_F(CliTest, ZeroCyclesEchoesInitialCost) {
  const fs::path p = plan(mini_scenario());
  const Outcome r = run("optimize " + p.string() + " --variant 1 --max-cycles 0");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(p / "history_v1.csv");
  ASSERT_EQ(rows.size(), 2u);
  const auto& h = rows[0];
  EXPECT_EQ(rows[1][column(h, "cycle")], "0");
  EXPECT_EQ(rows[1][column(h, "grad_1")], "nan");
  const json summary = json::parse(read_file(p / "summary_v1.json"));
  EXPECT_EQ(summary["cycles"], 1);
  EXPECT_EQ(summary["updates"], 0);
  EXPECT_EQ(std::stod(rows[1][column(h, "J")]), summary["J"].get<double>());
}

TEST_F(CliTest, FixedSeedRunsAreByteIdentical) {
  const fs::path a = plan(mini_scenario(), "a");
  const fs::path b = plan(mini_scenario(), "b");
  EXPECT_EQ(read_file(a / "plan.json"), read_file(b / "plan.json"));
  for (const fs::path& p : {a, b}) ASSERT_EQ(run("optimize " + p.string() + " --variant 2 --max-cycles 3").code, 0);
  const std::string h = read_file(a / "history_v2.csv");
  EXPECT_EQ(std::count(h.begin(), h.end(), '\n'), 5);
  EXPECT_EQ(h, read_file(b / "history_v2.csv"));
  EXPECT_EQ(read_file(a / "final_trace_v2.csv"), read_file(b / "final_trace_v2.csv"));
}

TEST_F(CliTest, ManifestListsReadableFiles) {
  const fs::path p = plan(mini_scenario());
  ASSERT_EQ(run("optimize " + p.string() + " --variant 2 --max-cycles 1").code, 0);
  const json m = json::parse(read_file(p / "manifest.json"));
  EXPECT_TRUE(m["stages"].contains("plan"));
  EXPECT_TRUE(m["stages"].contains("optimize_v2"));
  for (const auto& f : m["files"]) {
    const fs::path file = p / f.get<std::string>();
    ASSERT_TRUE(fs::exists(file)) << file;
    if (file.extension() == ".json") {
      EXPECT_TRUE(json::accept(read_file(file))) << file;
    }
  }
}

TEST_F(CliTest, OutputsFollowTheDocumentedFormats) {
  const fs::path p = plan(mini_scenario());
  ASSERT_EQ(run("optimize " + p.string() + " --variant 2 --max-cycles 1").code, 0);
  EXPECT_EQ(read_csv(p / "history_v2.csv")[0],
            std::vector<std::string>({"cycle", "variant", "J", "T", "tau_1", "tau_2", "grad_1", "grad_2",
                                      "steady_state_flag"}));
  EXPECT_EQ(read_csv(p / "final_trace_v2.csv")[0],
            std::vector<std::string>({"cycle", "t", "x", "y", "region", "segment", "ux", "uy", "u_norm", "tr_0", "tr_1"}));

  const json pl = json::parse(read_file(p / "plan.json"));
  EXPECT_EQ(pl["sequence"].size(), 2u);
  EXPECT_EQ(pl["monitors"].size(), 2u);
  EXPECT_EQ(pl["switching"].size(), 2u);
  const auto& dm = pl["distance_matrix"];
  ASSERT_EQ(dm.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(dm[i][i].get<double>(), 0.0);

  for (int k = 0; k < 2; ++k) {
    const json t = json::parse(read_file(p / "trees" / ("tree_" + std::to_string(k) + ".json")));
    EXPECT_EQ(t["root_target"], k);
    const auto& nodes = t["nodes"];
    ASSERT_FALSE(nodes.empty());
    EXPECT_EQ(nodes[0]["parent"], -1);
    EXPECT_EQ(nodes[0]["cost_to_root"].get<double>(), 0.0);
    for (std::size_t n = 1; n < nodes.size(); ++n) {
      const int parent = nodes[n]["parent"];
      ASSERT_GE(parent, 0);
      ASSERT_LT(static_cast<std::size_t>(parent), n);
      EXPECT_GE(nodes[n]["cost_to_root"].get<double>(), nodes[static_cast<std::size_t>(parent)]["cost_to_root"].get<double>());
    }
  }
}

TEST_F(CliTest, ReplayMatchesOptimizerAndRespectsControlBounds) {
  const fs::path p = plan(mini_scenario());
  ASSERT_EQ(run("optimize " + p.string() + " --variant 1 --max-cycles 5").code, 0);
  const int cycles = 10;
  const Outcome r = run("simulate " + p.string() + " --variant 1 --cycles " + std::to_string(cycles));
  ASSERT_EQ(r.code, 0) << r.err;
  const json opt = json::parse(read_file(p / "summary_v1.json"));
  const json sim = json::parse(read_file(p / "simulate_summary.json"));
  EXPECT_EQ(sim["source"], "final_state_v1.json");
  const double j_opt = opt["J"].get<double>();
  EXPECT_LT(std::abs(sim["cycles"][0]["J"].get<double>() - j_opt), 1e-6 * j_opt);

  const auto rows = read_csv(p / "trace.csv");
  const auto& h = rows[0];
  const std::size_t un = column(h, "u_norm");
  const std::size_t cyc = column(h, "cycle");
  std::map<std::string, std::vector<std::vector<double>>> traces;  // cycle -> samples x targets
  double umax = 0.0;
  for (std::size_t n = 1; n < rows.size(); ++n) {
    umax = std::max(umax, std::stod(rows[n][un]));
    traces[rows[n][cyc]].push_back({std::stod(rows[n][column(h, "tr_0")]), std::stod(rows[n][column(h, "tr_1")])});
  }
  EXPECT_LE(umax, 1.0 + 1e-8);

  // Long replays settle on the periodic orbit: the last two cycles coincide.
  ASSERT_EQ(traces.size(), static_cast<std::size_t>(cycles));
  const auto& c0 = traces[std::to_string(cycles - 2)];
  const auto& c1 = traces[std::to_string(cycles - 1)];
  ASSERT_EQ(c0.size(), c1.size());
  for (std::size_t n = 0; n < c0.size(); ++n) {
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(c0[n][i], c1[n][i], 1e-3);
  }
}

TEST_F(CliTest, UsageErrorsAreRejected) {
  EXPECT_NE(run("").code, 0);
  const fs::path p = plan(mini_scenario());
  EXPECT_NE(run("optimize " + p.string() + " --variant 3").code, 0);
  EXPECT_NE(run("optimize " + p.string() + " --alpha0 -1").code, 0);
  expect_single_line_error(run("simulate " + p.string() + " --variant 2"), 1);
}
