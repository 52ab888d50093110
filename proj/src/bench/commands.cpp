#include "csp/bench/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace csp::bench {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& what, auto&& writer) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + what + " " + path.string());
  writer(f);
}

fs::path summary_path(const std::string& out) {
  fs::path p(out);
  return p.parent_path() / (p.stem().string() + "_summary" + p.extension().string());
}

RunOptions run_options(std::uint64_t seed, std::size_t stall_iters, std::optional<double> time_limit_s,
                       bool record_timing) {
  RunOptions options;
  options.ls.seed = seed;
  options.ls.max_stall_iters = stall_iters;
  options.ls.time_limit_s = time_limit_s;
  options.ls.validate();
  options.record_timing = record_timing;
  options.threads = worker_threads();
  return options;
}

}  // namespace

CoverageSpec make_spec(const SpecFlags& flags, std::size_t n, std::uint64_t seed) {
  if (flags.kind == "k-nearest") return KNearest{flags.k};
  if (flags.kind == "fixed-radius") return FixedRadius{flags.radius};
  if (flags.kind == "per-city-radius") return random_radius_spec(n, flags.radius_max, seed);
  if (flags.kind == "variable-nc") {
    if (flags.nc_min == 0 || flags.nc_min > flags.nc_max) {
      throw std::invalid_argument("variable-nc needs 1 <= nc-min <= nc-max");
    }
    return random_nc_spec(n, flags.nc_min, flags.nc_max, seed);
  }
  throw std::invalid_argument("unknown spec '" + flags.kind +
                              "' (expected k-nearest, fixed-radius, per-city-radius or variable-nc)");
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("CSP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    throw std::invalid_argument(std::string("CSP_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<std::string> cmd_generate(const GenerateOptions& options) {
  if (options.out_dir.empty()) throw std::invalid_argument("generate needs --out");
  if (options.n == 0) throw std::invalid_argument("generate needs --n >= 1");
  fs::create_directories(options.out_dir);
  const int width = std::max<int>(4, static_cast<int>(std::to_string(options.count).size()));
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < options.count; ++i) {
    const std::uint64_t seed = options.seed + i;
    // The spec draw gets its own stream so coordinates do not depend on it.
    const CoverageSpec spec = make_spec(options.spec, options.n, mix_seed(seed, 1));
    const Instance inst = generate_instance(options.n, spec, seed);
    char name[64];
    std::snprintf(name, sizeof(name), "instance_%0*zu.json", width, i);
    const fs::path path = fs::path(options.out_dir) / name;
    save_instance(inst, path.string());
    paths.push_back(path.string());
  }
  return paths;
}

train::TrainResult cmd_train(const train::TrainConfig& config, std::ostream& out) {
  return train::train(config, &out);
}

std::vector<BenchRecord> cmd_solve(const SolveOptions& options, std::ostream& out) {
  if (options.solvers.empty()) throw std::invalid_argument("no solver given");
  std::optional<train::LoadedModel> model;
  for (Solver s : options.solvers) {
    if (needs_model(s) && !model) {
      if (options.checkpoint.empty()) throw std::invalid_argument(solver_name(s) + " requires --checkpoint");
      model = train::load_model(options.checkpoint);
    }
  }
  const auto instances = load_instances(options.input);
  RunOptions run = run_options(options.seed, options.stall_iters, options.time_limit_s, options.record_timing);
  if (model) run.model = &*model;
  const auto records = run_all(instances, options.solvers, run);

  if (!options.out.empty()) {
    write_file(options.out, "CSV", [&](std::ostream& f) { write_records_csv(f, records); });
  }
  out << std::left << std::setw(20) << "Instance" << std::setw(18) << "Solver" << std::right << std::setw(10)
      << "Cost" << std::setw(12) << "Time/s" << '\n';
  for (const auto& r : records) {
    out << std::left << std::setw(20) << r.instance_id << std::setw(18) << r.solver << std::right << std::fixed
        << std::setprecision(4) << std::setw(10) << r.cost << std::setw(12) << r.wall_time_s << '\n';
  }
  out.unsetf(std::ios::floatfield);
  return records;
}

BenchSummary cmd_bench(const SolveOptions& options, std::ostream& out) {
  std::ostringstream discard;
  const auto records = cmd_solve(options, discard);
  const BenchSummary summary = summarize(records);
  if (!options.out.empty()) {
    write_file(summary_path(options.out), "summary CSV", [&](std::ostream& f) { write_summary_csv(f, summary); });
  }
  out << format_summary(summary);
  return summary;
}

std::vector<StopSummary> cmd_stop_at_cost(const StopOptions& options, std::ostream& out) {
  if (options.heuristics.empty()) throw std::invalid_argument("no heuristic given");
  for (Solver s : options.heuristics) {
    if (s != Solver::kLs1 && s != Solver::kLs2) {
      throw std::invalid_argument("stop-at-cost heuristics must be ls1 or ls2, got " + solver_name(s));
    }
  }
  const auto instances = load_instances(options.input);
  RunOptions run = run_options(options.seed, options.stall_iters, options.time_limit_s, options.record_timing);

  std::vector<double> targets(instances.size());
  if (options.target_override) {
    std::fill(targets.begin(), targets.end(), *options.target_override);
  } else {
    if (options.checkpoint.empty()) throw std::invalid_argument("stop-at-cost requires --checkpoint");
    train::LoadedModel model = train::load_model(options.checkpoint);
    run.model = &model;
    const auto records = run_all(instances, {Solver::kModelGreedyLs}, run);
    for (std::size_t i = 0; i < records.size(); ++i) targets[i] = records[i].cost;
    run.model = nullptr;
  }

  const auto records = stop_at_cost(instances, targets, options.heuristics, run);
  const auto summary = summarize_stops(records);
  if (!options.out.empty()) {
    write_file(options.out, "CSV", [&](std::ostream& f) { write_stops_csv(f, records); });
    write_file(summary_path(options.out), "summary CSV",
               [&](std::ostream& f) { write_stop_summary_csv(f, summary); });
  }
  out << format_stop_summary(summary);
  return summary;
}

std::vector<BenchRecord> cmd_exact(const std::string& input, const std::string& csv_out, std::ostream& out) {
  SolveOptions options;
  options.input = input;
  options.solvers = {Solver::kExact};
  options.out = csv_out;
  return cmd_solve(options, out);
}

}  // namespace csp::bench
