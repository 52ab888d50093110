#include "csp/bench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace csp::bench {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs job(i) for i in [0, count) on up to `threads` workers. The first
// exception is rethrown after all workers join.
template <typename Job>
void parallel_for(std::size_t count, std::size_t threads, Job job) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream in(line);
  std::string field;
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("bad number in CSV: '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("bad integer in CSV: '" + s + "'");
  return v;
}

// Reads the header and checks it, then returns the data rows split into fields.
std::vector<std::vector<std::string>> read_rows(std::istream& in, const std::string& header) {
  std::string line;
  if (!std::getline(in, line) || line != header) throw ParseError("unexpected CSV header: '" + line + "'");
  const std::size_t width = split_csv_line(header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != width) throw ParseError("wrong field count in CSV row: '" + line + "'");
    rows.push_back(std::move(fields));
  }
  return rows;
}

constexpr const char* kRecordHeader = "instance_id,n,spec,solver,cost,feasible,wall_time_s,seed";
constexpr const char* kStopHeader =
    "instance_id,solver,target,reached,stop_cost,stop_time_s,init_time_s,iterations";

search::LsResult run_heuristic(Solver solver, const Instance& inst, const search::LsConfig& config) {
  if (solver == Solver::kLs1) return search::ls1_solve(inst, config);
  if (solver == Solver::kLs2) return search::ls2_solve(inst, config);
  throw std::invalid_argument("not a local-search heuristic: " + solver_name(solver));
}

}  // namespace

Solver parse_solver(const std::string& name) {
  if (name == "model-greedy") return Solver::kModelGreedy;
  if (name == "model-greedy-ls") return Solver::kModelGreedyLs;
  if (name == "ls1") return Solver::kLs1;
  if (name == "ls2") return Solver::kLs2;
  if (name == "exact") return Solver::kExact;
  throw std::invalid_argument("unknown solver '" + name +
                              "' (expected model-greedy, model-greedy-ls, ls1, ls2 or exact)");
}

std::string solver_name(Solver solver) {
  switch (solver) {
    case Solver::kModelGreedy: return "model-greedy";
    case Solver::kModelGreedyLs: return "model-greedy-ls";
    case Solver::kLs1: return "ls1";
    case Solver::kLs2: return "ls2";
    case Solver::kExact: return "exact";
  }
  return "?";
}

bool needs_model(Solver solver) { return solver == Solver::kModelGreedy || solver == Solver::kModelGreedyLs; }

std::vector<NamedInstance> load_instances(const std::string& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .json instances in " + path);
  } else if (fs::exists(path)) {
    files.emplace_back(path);
  } else {
    throw std::runtime_error("instance path not found: " + path);
  }
  std::vector<NamedInstance> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back({f.stem().string(), load_instance(f.string())});
  return out;
}

BenchRecord run_solver(Solver solver, const NamedInstance& named, const RunOptions& options) {
  const Instance& inst = named.instance;
  if (needs_model(solver) && options.model == nullptr) {
    throw std::invalid_argument(solver_name(solver) + " requires a checkpoint");
  }
  BenchRecord rec;
  rec.instance_id = named.id;
  rec.n = inst.n();
  rec.spec = describe(inst.spec());
  rec.solver = solver_name(solver);
  rec.seed = options.ls.seed;

  const auto start = Clock::now();
  switch (solver) {
    case Solver::kModelGreedy:
    case Solver::kModelGreedyLs: {
      rec.tour = model::rollout(inst, options.model->params, options.model->config).tour;
      if (solver == Solver::kModelGreedyLs) rec.tour = search::posterior_improve(inst, rec.tour);
      break;
    }
    case Solver::kLs1:
    case Solver::kLs2:
      rec.tour = run_heuristic(solver, inst, options.ls).tour;
      break;
    case Solver::kExact:
      rec.tour = solve_exact(inst).tour;
      break;
  }
  const double elapsed = seconds_since(start);

  rec.feasible = is_feasible(inst, rec.tour);
  if (!rec.feasible) {
    throw std::runtime_error(rec.solver + " returned an infeasible tour on " + rec.instance_id);
  }
  rec.cost = tour_length(inst, rec.tour);
  rec.wall_time_s = options.record_timing ? elapsed : 0.0;
  return rec;
}

std::vector<BenchRecord> run_all(const std::vector<NamedInstance>& instances,
                                 const std::vector<Solver>& solvers, const RunOptions& options) {
  std::vector<BenchRecord> records(instances.size() * solvers.size());
  const std::size_t threads = options.record_timing ? 1 : options.threads;
  parallel_for(records.size(), threads, [&](std::size_t i) {
    records[i] = run_solver(solvers[i % solvers.size()], instances[i / solvers.size()], options);
  });
  return records;
}

BenchSummary summarize(const std::vector<BenchRecord>& records) {
  BenchSummary summary;
  for (const auto& r : records) {
    auto it = std::find_if(summary.begin(), summary.end(), [&](const auto& s) { return s.solver == r.solver; });
    if (it == summary.end()) {
      summary.push_back({r.solver, 0, 0.0, 0.0, 0.0});
      it = summary.end() - 1;
    }
    ++it->count;
    it->mean_cost += r.cost;
    it->mean_time_s += r.wall_time_s;
  }
  if (summary.empty()) return summary;
  for (auto& s : summary) {
    s.mean_cost /= static_cast<double>(s.count);
    s.mean_time_s /= static_cast<double>(s.count);
  }
  const double best =
      std::min_element(summary.begin(), summary.end(), [](const auto& a, const auto& b) {
        return a.mean_cost < b.mean_cost;
      })->mean_cost;
  for (auto& s : summary) s.gap_percent = best > 0.0 ? (s.mean_cost - best) / best * 100.0 : 0.0;
  return summary;
}

std::string format_exact(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_exact failed");
  return std::string(buf, ptr);
}

void write_records_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    out << r.instance_id << ',' << r.n << ',' << r.spec << ',' << r.solver << ',' << format_exact(r.cost) << ','
        << (r.feasible ? 1 : 0) << ',' << format_exact(r.wall_time_s) << ',' << r.seed << '\n';
  }
}

std::vector<BenchRecord> read_records_csv(std::istream& in) {
  std::vector<BenchRecord> records;
  for (const auto& f : read_rows(in, kRecordHeader)) {
    BenchRecord r;
    r.instance_id = f[0];
    r.n = parse_uint(f[1]);
    r.spec = f[2];
    r.solver = f[3];
    r.cost = parse_double(f[4]);
    r.feasible = f[5] == "1";
    r.wall_time_s = parse_double(f[6]);
    r.seed = parse_uint(f[7]);
    records.push_back(std::move(r));
  }
  return records;
}

void write_summary_csv(std::ostream& out, const BenchSummary& summary) {
  out << "solver,count,mean_cost,gap_percent,mean_time_s\n";
  for (const auto& s : summary) {
    out << s.solver << ',' << s.count << ',' << format_exact(s.mean_cost) << ',' << format_exact(s.gap_percent)
        << ',' << format_exact(s.mean_time_s) << '\n';
  }
}

std::string format_summary(const BenchSummary& summary) {
  std::ostringstream out;
  out << std::left << std::setw(18) << "Solver" << std::right << std::setw(10) << "Cost" << std::setw(10) << "Gap"
      << std::setw(12) << "Time/s" << std::setw(8) << "N" << '\n';
  char gap[32];
  for (const auto& s : summary) {
    std::snprintf(gap, sizeof(gap), "%.2f%%", s.gap_percent);
    out << std::left << std::setw(18) << s.solver << std::right << std::fixed << std::setprecision(4)
        << std::setw(10) << s.mean_cost << std::setw(10) << gap << std::setprecision(4) << std::setw(12)
        << s.mean_time_s << std::setw(8) << s.count << '\n';
  }
  return out.str();
}

std::vector<StopRecord> stop_at_cost(const std::vector<NamedInstance>& instances,
                                     const std::vector<double>& targets,
                                     const std::vector<Solver>& heuristics, const RunOptions& options) {
  if (targets.size() != instances.size()) throw std::invalid_argument("stop_at_cost: one target per instance");
  std::vector<StopRecord> records(instances.size() * heuristics.size());
  const std::size_t threads = options.record_timing ? 1 : options.threads;
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const Solver solver = heuristics[i % heuristics.size()];
    const std::size_t idx = i / heuristics.size();
    const Instance& inst = instances[idx].instance;
    search::LsConfig config = options.ls;
    config.target_cost = targets[idx];
    const search::LsResult r = run_heuristic(solver, inst, config);
    if (!is_feasible(inst, r.tour)) {
      throw std::runtime_error(solver_name(solver) + " returned an infeasible tour on " + instances[idx].id);
    }
    StopRecord& rec = records[i];
    rec.instance_id = instances[idx].id;
    rec.solver = solver_name(solver);
    rec.target = targets[idx];
    rec.reached = r.trace.reached_target;
    rec.stop_cost = r.cost;
    rec.stop_time_s = options.record_timing ? r.trace.stop_seconds : 0.0;
    rec.init_time_s = options.record_timing ? r.trace.init_seconds : 0.0;
    rec.iterations = r.trace.iterations;
  });
  return records;
}

std::vector<StopSummary> summarize_stops(const std::vector<StopRecord>& records) {
  std::vector<StopSummary> summary;
  for (const auto& r : records) {
    auto it = std::find_if(summary.begin(), summary.end(), [&](const auto& s) { return s.solver == r.solver; });
    if (it == summary.end()) {
      summary.push_back({r.solver, 0, 0, 0.0, 0.0});
      it = summary.end() - 1;
    }
    ++it->instances;
    if (r.reached) {
      ++it->reached;
      it->mean_stop_time_s += r.stop_time_s;
    }
  }
  for (auto& s : summary) {
    s.reach_rate = static_cast<double>(s.reached) / static_cast<double>(s.instances);
    if (s.reached > 0) s.mean_stop_time_s /= static_cast<double>(s.reached);
  }
  return summary;
}

void write_stops_csv(std::ostream& out, const std::vector<StopRecord>& records) {
  out << kStopHeader << '\n';
  for (const auto& r : records) {
    out << r.instance_id << ',' << r.solver << ',' << format_exact(r.target) << ',' << (r.reached ? 1 : 0) << ','
        << format_exact(r.stop_cost) << ',' << format_exact(r.stop_time_s) << ',' << format_exact(r.init_time_s)
        << ',' << r.iterations << '\n';
  }
}

std::vector<StopRecord> read_stops_csv(std::istream& in) {
  std::vector<StopRecord> records;
  for (const auto& f : read_rows(in, kStopHeader)) {
    StopRecord r;
    r.instance_id = f[0];
    r.solver = f[1];
    r.target = parse_double(f[2]);
    r.reached = f[3] == "1";
    r.stop_cost = parse_double(f[4]);
    r.stop_time_s = parse_double(f[5]);
    r.init_time_s = parse_double(f[6]);
    r.iterations = parse_uint(f[7]);
    records.push_back(std::move(r));
  }
  return records;
}

void write_stop_summary_csv(std::ostream& out, const std::vector<StopSummary>& summary) {
  out << "solver,instances,reached,reach_rate,mean_stop_time_s\n";
  for (const auto& s : summary) {
    out << s.solver << ',' << s.instances << ',' << s.reached << ',' << format_exact(s.reach_rate) << ','
        << format_exact(s.mean_stop_time_s) << '\n';
  }
}

std::string format_stop_summary(const std::vector<StopSummary>& summary) {
  std::ostringstream out;
  out << std::left << std::setw(10) << "Solver" << std::right << std::setw(12) << "Reached" << std::setw(14)
      << "Stop time/s" << '\n';
  for (const auto& s : summary) {
    const std::string reached = std::to_string(s.reached) + "/" + std::to_string(s.instances);
    out << std::left << std::setw(10) << s.solver << std::right << std::setw(12) << reached << std::fixed
        << std::setprecision(4) << std::setw(14) << s.mean_stop_time_s << '\n';
  }
  return out.str();
}

}  // namespace csp::bench
