#include <algorithm>
#include <limits>

#include "csp/core.hpp"

namespace csp {

namespace {

constexpr double kTieTolerance = 1e-12;

// Held-Karp over `cities`, anchored at cities[0]. Returns the optimal cycle.
Tour subset_tsp_dp(const Instance& instance, const std::vector<City>& cities,
                   std::uint64_t& expanded) {
  const std::size_t m = cities.size();
  const std::size_t full = std::size_t{1} << (m - 1);  // subsets of cities[1..m)
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(full * m, inf);
  std::vector<std::uint8_t> parent(full * m, 0);
  const auto at = [m](std::size_t mask, std::size_t j) { return mask * m + j; };

  for (std::size_t j = 1; j < m; ++j) {
    best[at(std::size_t{1} << (j - 1), j)] = instance.dist(cities[0], cities[j]);
  }
  for (std::size_t mask = 1; mask < full; ++mask) {
    for (std::size_t j = 1; j < m; ++j) {
      const std::size_t bit = std::size_t{1} << (j - 1);
      if (!(mask & bit)) continue;
      const double here = best[at(mask, j)];
      if (here == inf) continue;
      ++expanded;
      for (std::size_t next = 1; next < m; ++next) {
        const std::size_t nbit = std::size_t{1} << (next - 1);
        if (mask & nbit) continue;
        const double cand = here + instance.dist(cities[j], cities[next]);
        double& slot = best[at(mask | nbit, next)];
        if (cand < slot) {
          slot = cand;
          parent[at(mask | nbit, next)] = static_cast<std::uint8_t>(j);
        }
      }
    }
  }
  const std::size_t all = full - 1;
  double total = inf;
  std::size_t last = 1;
  for (std::size_t j = 1; j < m; ++j) {
    const double cand = best[at(all, j)] + instance.dist(cities[j], cities[0]);
    if (cand < total) {
      total = cand;
      last = j;
    }
  }
  std::vector<City> rev;
  std::size_t mask = all;
  std::size_t j = last;
  while (mask != 0) {
    rev.push_back(cities[j]);
    const std::size_t prev = parent[at(mask, j)];
    mask &= ~(std::size_t{1} << (j - 1));
    j = prev;
  }
  rev.push_back(cities[0]);
  std::reverse(rev.begin(), rev.end());
  return Tour{rev};
}

// Tours of at most three cities have a single cycle up to reversal.
Tour subset_tsp_small(const std::vector<City>& cities) { return Tour{cities}; }

}  // namespace

OracleResult solve_exact(const Instance& instance, std::size_t max_n) {
  const std::size_t n = instance.n();
  if (n > max_n) {
    throw SizeError("solve_exact: n=" + std::to_string(n) + " exceeds max_n=" +
                    std::to_string(max_n));
  }
  if (n > 20) throw SizeError("solve_exact: n=" + std::to_string(n) + " is not tractable");

  std::vector<std::uint32_t> reach(n);
  for (City i = 0; i < n; ++i) {
    reach[i] = std::uint32_t{1} << i;
    for (City j : instance.cover_set(i)) reach[i] |= std::uint32_t{1} << j;
  }
  const std::uint32_t everyone = (n == 32) ? ~0u : ((std::uint32_t{1} << n) - 1);

  OracleResult result;
  result.cost = std::numeric_limits<double>::infinity();
  std::vector<City> cities;
  for (std::uint32_t subset = 1; subset <= everyone; ++subset) {
    std::uint32_t covered = 0;
    cities.clear();
    for (City i = 0; i < n; ++i) {
      if (subset & (std::uint32_t{1} << i)) {
        covered |= reach[i];
        cities.push_back(i);
      }
    }
    if (covered != everyone) continue;
    ++result.nodes_expanded;

    Tour cycle = cities.size() >= 4 ? subset_tsp_dp(instance, cities, result.nodes_expanded)
                                    : subset_tsp_small(cities);
    cycle = canonical_cycle(cycle);
    const double cost = tour_length(instance, cycle);
    if (cost < result.cost - kTieTolerance ||
        (cost <= result.cost + kTieTolerance && cycle.order < result.tour.order)) {
      result.cost = cost;
      result.tour = std::move(cycle);
    }
  }
  result.cost = tour_length(instance, result.tour);
  return result;
}

}  // namespace csp
