#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "csp/core.hpp"
#include "csp/rng.hpp"

namespace csp::search {

struct LsConfig {
  std::size_t max_stall_iters = 200;
  double destroy_fraction = 0.2;  // LS1 only
  std::uint64_t seed = 0;
  std::optional<double> time_limit_s;
  /// Stop as soon as the best-so-far cost is at or below this value.
  std::optional<double> target_cost;

  /// Throws std::invalid_argument for a fraction outside (0, 1] or a zero stall limit.
  void validate() const;
};

struct LsTrace {
  std::vector<double> best_costs;  // entry 0 is the initial solution
  std::size_t iterations = 0;
  double init_seconds = 0.0;       // building the initial solution
  double stop_seconds = 0.0;       // total until return
  bool reached_target = false;
};

struct LsResult {
  Tour tour;
  double cost = 0.0;
  LsTrace trace;
};

/// Greedy cover: while some city is uncovered, pick one uniformly and add the
/// candidate (that city or one covering it) covering the most uncovered
/// cities, ties to the lower index. The visited cities are then ordered by
/// nearest neighbour from the first one chosen.
Tour initial_solution(const Instance& instance, Rng& rng);

/// First-improvement 2-opt until no exchange shortens the cycle.
Tour two_opt(const Instance& instance, Tour tour);

/// Drops visited cities whose removal keeps the tour feasible and shortens
/// it, scanning in tour order until a full pass changes nothing.
Tour remove_redundant(const Instance& instance, Tour tour);

/// remove_redundant and two_opt alternated to a joint fixed point.
Tour posterior_improve(const Instance& instance, Tour tour);

/// Destroy and repair: removes ceil(destroy_fraction * k) cities drawn with
/// probability proportional to their removal saving, then while infeasible
/// inserts a helpful city drawn with probability proportional to
/// 1 / (1e-6 + its best insertion cost). Each candidate is polished with
/// posterior_improve; the search restarts from the best-so-far tour.
LsResult ls1_solve(const Instance& instance, const LsConfig& config);

/// Removes one visited city uniformly, then while infeasible inserts a
/// helpful city from the removed city's coverage neighbourhood (its cover
/// set and the cities covering it) with the cheapest insertion, falling back
/// to the helpful city nearest the removed one. Followed by posterior_improve.
LsResult ls2_solve(const Instance& instance, const LsConfig& config);

}  // namespace csp::search
