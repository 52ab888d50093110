// Command-line front end: generate | train | solve | bench | stop-at-cost | exact.

#include <exception>
#include <iostream>
#include <limits>
#include <string>

#include "CLI11.hpp"
#include "csp/bench/commands.hpp"

using namespace csp;
using namespace csp::bench;

namespace {

void add_spec_flags(CLI::App* cmd, SpecFlags& spec) {
  cmd->add_option("--spec", spec.kind, "Coverage model")
      ->check(CLI::IsMember({"k-nearest", "fixed-radius", "per-city-radius", "variable-nc"}));
  cmd->add_option("--k", spec.k, "Neighbours per city (k-nearest)");
  cmd->add_option("--radius", spec.radius, "Coverage radius (fixed-radius)");
  cmd->add_option("--radius-max", spec.radius_max, "Upper radius bound (per-city-radius)");
  cmd->add_option("--nc-min", spec.nc_min, "Smallest neighbour count (variable-nc)");
  cmd->add_option("--nc-max", spec.nc_max, "Largest neighbour count (variable-nc)");
}

void add_search_flags(CLI::App* cmd, std::uint64_t& seed, std::size_t& stall, std::optional<double>& limit,
                      bool& no_timing) {
  cmd->add_option("--seed", seed, "Local-search seed");
  cmd->add_option("--stall-iters", stall, "Iterations without improvement before stopping");
  cmd->add_option("--time-limit-s", limit, "Per-instance time limit for ls1/ls2");
  cmd->add_flag("--no-timing", no_timing, "Write wall times as 0 so reruns are byte-identical");
}

std::vector<Solver> parse_solvers(const std::vector<std::string>& names) {
  std::vector<Solver> out;
  for (const auto& n : names) out.push_back(parse_solver(n));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covering salesman solvers, training and benchmarks"};
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Write random instances as JSON files");
  generate->add_option("--n", gen.n, "Cities per instance");
  generate->add_option("--count", gen.count, "Number of instances");
  generate->add_option("--seed", gen.seed, "Seed of the first instance");
  generate->add_option("--out", gen.out_dir, "Output directory")->required();
  add_spec_flags(generate, gen.spec);

  train::TrainConfig tc;
  SpecFlags train_spec;
  bool train_no_timing = false;
  auto* trainer = app.add_subcommand("train", "Train the policy with REINFORCE");
  trainer->add_option("--n", tc.n_cities, "Cities per training instance");
  trainer->add_option("--batch-size", tc.batch_size, "Instances per step");
  trainer->add_option("--epochs", tc.epochs, "Epochs");
  trainer->add_option("--instances-per-epoch", tc.instances_per_epoch, "Training instances per epoch");
  trainer->add_option("--validation-size", tc.validation_size, "Validation instances");
  trainer->add_option("--lr", tc.lr, "Adam learning rate");
  trainer->add_option("--seed", tc.seed, "Run seed");
  trainer->add_option("--out", tc.out_dir, "Directory for checkpoints and metrics")->required();
  trainer->add_option("--checkpoint", tc.resume_from, "Resume from this checkpoint");
  trainer->add_flag("--no-timing", train_no_timing, "Write wall_time_s as 0");
  trainer->add_option("--spec", train_spec.kind, "Coverage model")->check(CLI::IsMember({"k-nearest", "fixed-radius"}));
  trainer->add_option("--k", train_spec.k, "Neighbours per city (k-nearest)");
  trainer->add_option("--radius", train_spec.radius, "Coverage radius (fixed-radius)");

  SolveOptions solve;
  std::vector<std::string> solver_names;
  bool solve_no_timing = false;
  auto* solver = app.add_subcommand("solve", "Solve instances and print one row per result");
  auto* bench = app.add_subcommand("bench", "Solve instances and print the Cost | Gap | Time table");
  for (auto* cmd : {solver, bench}) {
    cmd->add_option("input", solve.input, "Instance file or directory")->required();
    cmd->add_option("--solver", solver_names, "model-greedy, model-greedy-ls, ls1, ls2 or exact")
        ->required()
        ->delimiter(',');
    cmd->add_option("--checkpoint", solve.checkpoint, "Checkpoint for the model solvers");
    cmd->add_option("--out", solve.out, "Records CSV");
    add_search_flags(cmd, solve.seed, solve.stall_iters, solve.time_limit_s, solve_no_timing);
  }

  StopOptions stop;
  std::vector<std::string> heuristic_names = {"ls1", "ls2"};
  bool stop_no_timing = false;
  double target_override = 0.0;
  auto* stopper = app.add_subcommand("stop-at-cost", "Time ls1/ls2 until they reach the model-greedy-ls cost");
  stopper->add_option("input", stop.input, "Instance file or directory")->required();
  stopper->add_option("--checkpoint", stop.checkpoint, "Checkpoint providing the targets");
  stopper->add_option("--heuristics", heuristic_names, "ls1 and/or ls2")->delimiter(',');
  stopper->add_option("--out", stop.out, "Stop records CSV");
  auto* target_opt = stopper->add_option("--target", target_override, "Fixed target for every instance (testing)");
  add_search_flags(stopper, stop.seed, stop.stall_iters, stop.time_limit_s, stop_no_timing);

  std::string exact_input;
  std::string exact_out;
  auto* exact = app.add_subcommand("exact", "Exact optimum for n <= 10");
  exact->add_option("input", exact_input, "Instance file or directory")->required();
  exact->add_option("--out", exact_out, "Records CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) {
      const auto paths = cmd_generate(gen);
      std::cout << "wrote " << paths.size() << " instances to " << gen.out_dir << '\n';
    } else if (*trainer) {
      tc.spec = make_spec(train_spec, tc.n_cities, tc.seed);
      tc.record_timing = !train_no_timing;
      cmd_train(tc, std::cout);
    } else if (*solver || *bench) {
      solve.solvers = parse_solvers(solver_names);
      solve.record_timing = !solve_no_timing;
      if (*solver) {
        cmd_solve(solve, std::cout);
      } else {
        cmd_bench(solve, std::cout);
      }
    } else if (*stopper) {
      stop.heuristics = parse_solvers(heuristic_names);
      stop.record_timing = !stop_no_timing;
      if (target_opt->count() > 0) stop.target_override = target_override;
      cmd_stop_at_cost(stop, std::cout);
    } else if (*exact) {
      cmd_exact(exact_input, exact_out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
