#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "csp/bench/bench.hpp"

namespace csp::bench {

struct SpecFlags {
  std::string kind = "k-nearest";  // k-nearest | fixed-radius | per-city-radius | variable-nc
  std::size_t k = 7;
  double radius = 0.2;
  double radius_max = 0.25;
  std::size_t nc_min = 2;
  std::size_t nc_max = 15;
};

/// Per-city draws (radii, neighbour counts) use `seed`.
CoverageSpec make_spec(const SpecFlags& flags, std::size_t n, std::uint64_t seed);

/// Worker count from CSP_THREADS, else the hardware concurrency.
std::size_t worker_threads();

struct GenerateOptions {
  std::size_t n = 50;
  SpecFlags spec;
  std::size_t count = 100;
  std::uint64_t seed = 1;
  std::string out_dir;
};

/// Writes instance_{i}.json (zero-padded) with seed seed + i. Returns the paths.
std::vector<std::string> cmd_generate(const GenerateOptions& options);

/// Prints the validation cost of every epoch to `out`.
train::TrainResult cmd_train(const train::TrainConfig& config, std::ostream& out);

struct SolveOptions {
  std::string input;  // instance file or directory
  std::vector<Solver> solvers;
  std::string checkpoint;
  std::uint64_t seed = 1;
  std::string out;  // records CSV; bench also writes <stem>_summary.csv next to it
  std::size_t stall_iters = 200;
  std::optional<double> time_limit_s;
  bool record_timing = true;
};

/// One record per (instance, solver); prints a per-record table.
std::vector<BenchRecord> cmd_solve(const SolveOptions& options, std::ostream& out);

/// Like cmd_solve, but prints and writes the summary table.
BenchSummary cmd_bench(const SolveOptions& options, std::ostream& out);

struct StopOptions {
  std::string input;
  std::string checkpoint;
  std::vector<Solver> heuristics = {Solver::kLs1, Solver::kLs2};
  std::uint64_t seed = 1;
  std::string out;  // stop records CSV; also writes <stem>_summary.csv
  std::size_t stall_iters = 200;
  std::optional<double> time_limit_s;
  bool record_timing = true;
  /// Replaces the model-greedy-ls targets (test hook, e.g. +inf).
  std::optional<double> target_override;
};

std::vector<StopSummary> cmd_stop_at_cost(const StopOptions& options, std::ostream& out);

/// Exact optimum of every instance under `input`.
std::vector<BenchRecord> cmd_exact(const std::string& input, const std::string& csv_out, std::ostream& out);

}  // namespace csp::bench
