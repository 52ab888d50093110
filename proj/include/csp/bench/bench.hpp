#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "csp/search/local_search.hpp"
#include "csp/train/trainer.hpp"

namespace csp::bench {

enum class Solver { kModelGreedy, kModelGreedyLs, kLs1, kLs2, kExact };

/// "model-greedy", "model-greedy-ls", "ls1", "ls2" or "exact".
Solver parse_solver(const std::string& name);
std::string solver_name(Solver solver);
bool needs_model(Solver solver);

struct NamedInstance {
  std::string id;
  Instance instance;
};

/// One file, or every *.json file of a directory in name order.
std::vector<NamedInstance> load_instances(const std::string& path);

struct BenchRecord {
  std::string instance_id;
  std::size_t n = 0;
  std::string spec;
  std::string solver;
  double cost = 0.0;
  bool feasible = false;
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  Tour tour;  // not written to CSV
};

struct SolverSummary {
  std::string solver;
  std::size_t count = 0;
  double mean_cost = 0.0;
  double gap_percent = 0.0;  // vs the lowest mean cost
  double mean_time_s = 0.0;
};

using BenchSummary = std::vector<SolverSummary>;

struct RunOptions {
  search::LsConfig ls;
  train::LoadedModel* model = nullptr;
  bool record_timing = true;
  /// Worker count for untimed runs; timed runs are always serial.
  std::size_t threads = 1;
};

/// Solves one instance and re-validates feasibility. Throws
/// std::runtime_error if a solver returns an infeasible tour.
BenchRecord run_solver(Solver solver, const NamedInstance& inst, const RunOptions& options);

/// Records in (instance, solver) order.
std::vector<BenchRecord> run_all(const std::vector<NamedInstance>& instances,
                                 const std::vector<Solver>& solvers, const RunOptions& options);

/// Per-solver means in first-appearance order, with
/// gap = (mean - best mean) / best mean * 100.
BenchSummary summarize(const std::vector<BenchRecord>& records);

void write_records_csv(std::ostream& out, const std::vector<BenchRecord>& records);
std::vector<BenchRecord> read_records_csv(std::istream& in);
void write_summary_csv(std::ostream& out, const BenchSummary& summary);
/// Solver | Cost | Gap | Time/s table.
std::string format_summary(const BenchSummary& summary);

struct StopRecord {
  std::string instance_id;
  std::string solver;
  double target = 0.0;
  bool reached = false;
  double stop_cost = 0.0;
  double stop_time_s = 0.0;
  double init_time_s = 0.0;
  std::size_t iterations = 0;
};

struct StopSummary {
  std::string solver;
  std::size_t instances = 0;
  std::size_t reached = 0;
  double reach_rate = 0.0;
  double mean_stop_time_s = 0.0;  // over reached instances only
};

/// Runs each heuristic with target_cost = targets[i] on instance i.
std::vector<StopRecord> stop_at_cost(const std::vector<NamedInstance>& instances,
                                     const std::vector<double>& targets,
                                     const std::vector<Solver>& heuristics, const RunOptions& options);

std::vector<StopSummary> summarize_stops(const std::vector<StopRecord>& records);
void write_stops_csv(std::ostream& out, const std::vector<StopRecord>& records);
std::vector<StopRecord> read_stops_csv(std::istream& in);
void write_stop_summary_csv(std::ostream& out, const std::vector<StopSummary>& summary);
std::string format_stop_summary(const std::vector<StopSummary>& summary);

/// Shortest decimal text that parses back to the same double.
std::string format_exact(double v);

}  // namespace csp::bench
