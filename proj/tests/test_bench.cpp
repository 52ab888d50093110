#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "csp/bench/commands.hpp"
#include "oracles.hpp"

using namespace csp;
using namespace csp::bench;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("csp_test_bench_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

BenchRecord record(const std::string& id, const std::string& solver, double cost, double time) {
  BenchRecord r;
  r.instance_id = id;
  r.n = 5;
  r.spec = "k_nearest(2)";
  r.solver = solver;
  r.cost = cost;
  r.feasible = true;
  r.wall_time_s = time;
  return r;
}

// Small untrained model written as a checkpoint.
std::string tiny_checkpoint(const fs::path& dir) {
  const model::ModelConfig config{model::EncoderConfig{8, 1, 2, 16}};
  const std::string path = (dir / "model.bin").string();
  train::save_model(path, model::init_model(config, 11), config);
  return path;
}

struct ThreadsEnv {
  explicit ThreadsEnv(const char* value) { setenv("CSP_THREADS", value, 1); }
  ~ThreadsEnv() { unsetenv("CSP_THREADS"); }
};

}  // namespace

TEST_CASE("solver names") {
  for (Solver s : {Solver::kModelGreedy, Solver::kModelGreedyLs, Solver::kLs1, Solver::kLs2, Solver::kExact}) {
    CHECK(parse_solver(solver_name(s)) == s);
  }
  CHECK(needs_model(Solver::kModelGreedyLs));
  CHECK_FALSE(needs_model(Solver::kLs2));
  CHECK_THROWS_AS(parse_solver("lk"), std::invalid_argument);
}

TEST_CASE("summary gaps") {
  const std::vector<BenchRecord> one = {record("a", "ls1", 2.0, 0.1), record("b", "ls1", 3.0, 0.3)};
  const BenchSummary s1 = summarize(one);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].gap_percent == 0.0);
  CHECK(s1[0].mean_cost == 2.5);
  CHECK(s1[0].mean_time_s == doctest::Approx(0.2));

  auto two = one;
  two.push_back(record("a", "ls2", 2.5, 0.0));
  two.push_back(record("b", "ls2", 3.5, 0.0));
  const BenchSummary s2 = summarize(two);
  REQUIRE(s2.size() == 2);
  CHECK(s2[0].solver == "ls1");
  CHECK(s2[0].gap_percent == 0.0);
  CHECK(s2[1].gap_percent == doctest::Approx(20.0));
  CHECK(format_summary(s2).find("0.00%") != std::string::npos);
  CHECK(format_summary(s2).find("20.00%") != std::string::npos);
}

TEST_CASE("record CSV round trip and recomputation") {
  std::vector<BenchRecord> records;
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    records.push_back(record("i" + std::to_string(i / 2), i % 2 ? "ls2" : "ls1", rng.uniform(1, 4), rng.uniform()));
  }
  std::stringstream csv;
  write_records_csv(csv, records);
  const auto back = read_records_csv(csv);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].cost == records[i].cost);
    CHECK(back[i].wall_time_s == records[i].wall_time_s);
    CHECK(back[i].instance_id == records[i].instance_id);
  }

  // Independent recomputation of the per-solver means.
  std::map<std::string, std::pair<double, int>> sums;
  for (const auto& r : back) {
    sums[r.solver].first += r.cost;
    sums[r.solver].second += 1;
  }
  const double best = std::min(sums["ls1"].first / sums["ls1"].second, sums["ls2"].first / sums["ls2"].second);
  for (const auto& s : summarize(records)) {
    const double mean = sums[s.solver].first / sums[s.solver].second;
    CHECK(s.mean_cost == doctest::Approx(mean).epsilon(1e-14));
    CHECK(s.gap_percent == doctest::Approx((mean - best) / best * 100.0).epsilon(1e-12));
    CHECK(s.gap_percent >= 0.0);
  }

  std::stringstream bad("instance_id,cost\n");
  CHECK_THROWS_AS(read_records_csv(bad), ParseError);
}

TEST_CASE("generate") {
  const fs::path dir = scratch("generate");
  GenerateOptions options;
  options.n = 50;
  options.count = 100;
  options.seed = 7;
  options.out_dir = (dir / "a").string();
  const auto paths = cmd_generate(options);
  REQUIRE(paths.size() == 100);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const Instance inst = load_instance(paths[i]);
    CHECK(inst.n() == 50);
    CHECK(inst.seed() == 7 + i);
    CHECK(inst.spec() == CoverageSpec{KNearest{7}});
    CHECK(inst == generate_instance(50, KNearest{7}, 7 + i));
  }

  options.out_dir = (dir / "b").string();
  const auto again = cmd_generate(options);
  for (std::size_t i = 0; i < paths.size(); ++i) CHECK(slurp(paths[i]) == slurp(again[i]));

  for (const char* kind : {"fixed-radius", "per-city-radius", "variable-nc"}) {
    GenerateOptions other = options;
    other.count = 3;
    other.spec.kind = kind;
    other.out_dir = (dir / kind).string();
    for (const auto& p : cmd_generate(other)) CHECK(load_instance(p).n() == 50);
  }
  SpecFlags flags;
  flags.kind = "variable-nc";
  const auto nc = std::get<KNearestPerCity>(make_spec(flags, 100, 4));
  for (std::size_t k : nc.ks) CHECK((k >= 2 && k <= 15));
  flags.kind = "spiral";
  CHECK_THROWS_AS(make_spec(flags, 10, 1), std::invalid_argument);
}

TEST_CASE("solve") {
  const fs::path dir = scratch("solve");
  GenerateOptions gen;
  gen.n = 7;
  gen.count = 6;
  gen.spec.k = 2;
  gen.out_dir = (dir / "small").string();
  const auto paths = cmd_generate(gen);

  std::ostringstream out;
  const auto exact = cmd_exact(gen.out_dir, "", out);
  REQUIRE(exact.size() == 6);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const Instance inst = load_instance(paths[i]);
    CHECK(exact[i].cost == solve_exact(inst).cost);
    CHECK(exact[i].feasible);
  }

  SolveOptions options;
  options.input = gen.out_dir;
  options.solvers = {Solver::kModelGreedy, Solver::kModelGreedyLs};
  CHECK_THROWS_AS(cmd_solve(options, out), std::invalid_argument);
  options.checkpoint = (dir / "missing.bin").string();
  CHECK_THROWS_AS(cmd_solve(options, out), std::runtime_error);

  gen.n = 30;
  gen.count = 20;
  gen.spec.k = 4;
  gen.out_dir = (dir / "mid").string();
  cmd_generate(gen);
  options.input = gen.out_dir;
  options.checkpoint = tiny_checkpoint(dir);
  const auto records = cmd_solve(options, out);
  REQUIRE(records.size() == 40);
  for (std::size_t i = 0; i < records.size(); i += 2) {
    CHECK(records[i].solver == "model-greedy");
    CHECK(records[i + 1].solver == "model-greedy-ls");
    CHECK(records[i + 1].cost <= records[i].cost + 1e-12);
    CHECK(records[i].wall_time_s > 0.0);
  }
  for (const auto& r : records) {
    const Instance inst = load_instance((fs::path(gen.out_dir) / (r.instance_id + ".json")).string());
    CHECK(oracle::covers_all(inst.cover_sets(), inst.n(), r.tour.order));
    CHECK(r.cost == doctest::Approx(oracle::cycle_length(inst.coords(), r.tour.order)).epsilon(1e-12));
  }

  SolveOptions nothing;
  nothing.input = (dir / "nowhere").string();
  nothing.solvers = {Solver::kLs1};
  CHECK_THROWS_AS(cmd_solve(nothing, out), std::runtime_error);

  gen.n = 12;
  gen.count = 1;
  gen.out_dir = (dir / "big").string();
  cmd_generate(gen);
  CHECK_THROWS_AS(cmd_exact(gen.out_dir, "", out), SizeError);
}

TEST_CASE("bench files are deterministic and parallel runs match serial ones") {
  const fs::path dir = scratch("bench");
  GenerateOptions gen;
  gen.n = 40;
  gen.count = 12;
  gen.out_dir = (dir / "inst").string();
  cmd_generate(gen);

  SolveOptions options;
  options.input = gen.out_dir;
  options.solvers = {Solver::kLs1, Solver::kLs2, Solver::kModelGreedyLs};
  options.checkpoint = tiny_checkpoint(dir);
  options.record_timing = false;
  options.stall_iters = 30;
  std::ostringstream out;

  std::string first;
  for (const char* threads : {"1", "3"}) {
    ThreadsEnv env(threads);
    options.out = (dir / (std::string("run") + threads + ".csv")).string();
    const BenchSummary summary = cmd_bench(options, out);
    const std::string csv = slurp(options.out);
    if (first.empty()) first = csv;
    CHECK(csv == first);

    std::ifstream f(options.out);
    const auto records = read_records_csv(f);
    CHECK(records.size() == 36);
    for (const auto& r : records) CHECK(r.wall_time_s == 0.0);
    const BenchSummary again = summarize(records);
    REQUIRE(again.size() == summary.size());
    for (std::size_t i = 0; i < again.size(); ++i) {
      CHECK(again[i].mean_cost == summary[i].mean_cost);
      CHECK(again[i].gap_percent == summary[i].gap_percent);
    }
  }
  CHECK(slurp(dir / "run1_summary.csv") == slurp(dir / "run3_summary.csv"));

  {
    ThreadsEnv env("zero");
    CHECK_THROWS_AS(worker_threads(), std::invalid_argument);
  }
  {
    ThreadsEnv env("2");
    CHECK(worker_threads() == 2);
  }
}

TEST_CASE("stop at cost") {
  const fs::path dir = scratch("stop");
  GenerateOptions gen;
  gen.n = 50;
  gen.count = 8;
  gen.out_dir = (dir / "inst").string();
  cmd_generate(gen);

  StopOptions options;
  options.input = gen.out_dir;
  options.target_override = std::numeric_limits<double>::infinity();
  options.out = (dir / "inf.csv").string();
  std::ostringstream out;
  auto summary = cmd_stop_at_cost(options, out);
  {
    std::ifstream f(options.out);
    for (const auto& r : read_stops_csv(f)) {
      CHECK(r.reached);
      CHECK(r.iterations == 0);
      CHECK(r.stop_time_s == r.init_time_s);
    }
  }
  for (const auto& s : summary) CHECK(s.reach_rate == 1.0);

  StopOptions missing = options;
  missing.target_override.reset();
  CHECK_THROWS_AS(cmd_stop_at_cost(missing, out), std::invalid_argument);
  missing.checkpoint = (dir / "missing.bin").string();
  CHECK_THROWS_AS(cmd_stop_at_cost(missing, out), std::runtime_error);
  StopOptions wrong = options;
  wrong.heuristics = {Solver::kExact};
  CHECK_THROWS_AS(cmd_stop_at_cost(wrong, out), std::invalid_argument);

  options.target_override.reset();
  options.checkpoint = tiny_checkpoint(dir);
  options.out = (dir / "model.csv").string();
  summary = cmd_stop_at_cost(options, out);
  std::ifstream f(options.out);
  const auto records = read_stops_csv(f);
  REQUIRE(records.size() == 16);
  std::map<std::string, std::pair<std::size_t, double>> reached;
  std::map<std::string, std::size_t> total;
  for (const auto& r : records) {
    ++total[r.solver];
    if (r.reached) {
      CHECK(r.stop_cost <= r.target);
      ++reached[r.solver].first;
      reached[r.solver].second += r.stop_time_s;
    } else {
      CHECK(r.stop_cost > r.target);
    }
  }
  // The CSV reproduces the summary exactly.
  REQUIRE(summary.size() == 2);
  for (const auto& s : summary) {
    CHECK(s.instances == total[s.solver]);
    CHECK(s.reached == reached[s.solver].first);
    CHECK(s.reach_rate == static_cast<double>(reached[s.solver].first) / static_cast<double>(total[s.solver]));
    if (s.reached > 0) {
      CHECK(s.mean_stop_time_s == reached[s.solver].second / static_cast<double>(reached[s.solver].first));
    }
  }
}
