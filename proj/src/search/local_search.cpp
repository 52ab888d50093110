#include "csp/search/local_search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace csp::search {

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kImprovement = 1e-12;
constexpr double kInsertEps = 1e-6;
constexpr double kRemoveEps = 1e-9;

// How many visited cities cover (or are) each city.
class Coverage {
 public:
  explicit Coverage(const Instance& inst) : inst_(inst), count_(inst.n(), 0), uncovered_(inst.n()) {}

  Coverage(const Instance& inst, const std::vector<City>& visited) : Coverage(inst) {
    for (City c : visited) add(c);
  }

  void add(City c) {
    bump(c, 1);
    for (City j : inst_.cover_set(c)) bump(j, 1);
  }

  void remove(City c) {
    bump(c, -1);
    for (City j : inst_.cover_set(c)) bump(j, -1);
  }

  bool removable(City c) const {
    if (count_[c] < 2) return false;
    for (City j : inst_.cover_set(c)) {
      if (count_[j] < 2) return false;
    }
    return true;
  }

  bool covered(City c) const { return count_[c] > 0; }
  bool feasible() const { return uncovered_ == 0; }

  // Uncovered cities that adding `c` would cover.
  std::size_t gain(City c) const {
    std::size_t g = covered(c) ? 0 : 1;
    for (City j : inst_.cover_set(c)) g += covered(j) ? 0 : 1;
    return g;
  }

 private:
  void bump(City c, int delta) {
    const bool before = count_[c] > 0;
    count_[c] += delta;
    const bool after = count_[c] > 0;
    if (before && !after) ++uncovered_;
    if (!before && after) --uncovered_;
  }

  const Instance& inst_;
  std::vector<int> count_;
  std::size_t uncovered_;
};

double removal_saving(const Instance& inst, const std::vector<City>& t, std::size_t pos) {
  const std::size_t k = t.size();
  if (k == 1) return 0.0;
  if (k == 2) return 2.0 * inst.dist(t[0], t[1]);
  const City a = t[(pos + k - 1) % k];
  const City b = t[(pos + 1) % k];
  return inst.dist(a, t[pos]) + inst.dist(t[pos], b) - inst.dist(a, b);
}

struct Insertion {
  double cost = 0.0;
  std::size_t pos = 0;  // insert before this index
};

Insertion best_insertion(const Instance& inst, const std::vector<City>& t, City c) {
  const std::size_t k = t.size();
  if (k == 0) return {0.0, 0};
  if (k == 1) return {2.0 * inst.dist(t[0], c), 1};
  Insertion best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i < k; ++i) {
    const City a = t[i];
    const City b = t[(i + 1) % k];
    const double cost = inst.dist(a, c) + inst.dist(c, b) - inst.dist(a, b);
    if (cost < best.cost) best = {cost, i + 1};
  }
  return best;
}

// Cities not in the tour that would cover at least one uncovered city.
std::vector<City> helpful_candidates(const Instance& inst, const Coverage& cov,
                                     const std::vector<char>& in_tour) {
  std::vector<char> seen(inst.n(), 0);
  std::vector<City> out;
  for (City u = 0; u < inst.n(); ++u) {
    if (cov.covered(u)) continue;
    const auto consider = [&](City c) {
      if (!in_tour[c] && !seen[c]) {
        seen[c] = 1;
        out.push_back(c);
      }
    };
    consider(u);
    for (City c : inst.covered_by(u)) consider(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t sample_weighted(const std::vector<double>& w, Rng& rng) {
  double total = 0.0;
  for (double x : w) total += x;
  const double u = rng.uniform() * total;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    cumulative += w[i];
    if (u < cumulative) return i;
  }
  return w.size() - 1;
}

double cost_of(const Instance& inst, const Tour& t) { return t.empty() ? 0.0 : tour_length(inst, t); }

std::vector<City> ls1_neighbour(const Instance& inst, std::vector<City> t, Rng& rng, double fraction) {
  const auto removals = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(t.size())));
  for (std::size_t r = 0; r < std::max<std::size_t>(1, removals) && !t.empty(); ++r) {
    std::vector<double> w(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) w[i] = removal_saving(inst, t, i) + kRemoveEps;
    t.erase(t.begin() + static_cast<std::ptrdiff_t>(sample_weighted(w, rng)));
  }
  Coverage cov(inst, t);
  std::vector<char> in_tour(inst.n(), 0);
  for (City c : t) in_tour[c] = 1;
  while (!cov.feasible()) {
    const std::vector<City> cands = helpful_candidates(inst, cov, in_tour);
    std::vector<Insertion> ins(cands.size());
    std::vector<double> w(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      ins[i] = best_insertion(inst, t, cands[i]);
      w[i] = 1.0 / (kInsertEps + ins[i].cost);
    }
    const std::size_t pick = sample_weighted(w, rng);
    t.insert(t.begin() + static_cast<std::ptrdiff_t>(ins[pick].pos), cands[pick]);
    cov.add(cands[pick]);
    in_tour[cands[pick]] = 1;
  }
  return t;
}

std::vector<City> ls2_neighbour(const Instance& inst, std::vector<City> t, Rng& rng) {
  const std::size_t idx = rng.below(t.size());
  const City removed = t[idx];
  t.erase(t.begin() + static_cast<std::ptrdiff_t>(idx));
  std::vector<char> neighbours(inst.n(), 0);
  for (City c : inst.cover_set(removed)) neighbours[c] = 1;
  for (City c : inst.covered_by(removed)) neighbours[c] = 1;
  Coverage cov(inst, t);
  std::vector<char> in_tour(inst.n(), 0);
  for (City c : t) in_tour[c] = 1;
  while (!cov.feasible()) {
    std::vector<City> cands = helpful_candidates(inst, cov, in_tour);
    if (cands.size() > 1) std::erase(cands, removed);
    // Prefer the removed city's coverage neighbours, cheapest insertion first;
    // otherwise the helpful city closest to it.
    City best = inst.n();
    double best_cost = std::numeric_limits<double>::infinity();
    for (City c : cands) {
      if (!neighbours[c]) continue;
      const double cost = best_insertion(inst, t, c).cost;
      if (cost < best_cost) {
        best = c;
        best_cost = cost;
      }
    }
    if (best == inst.n()) {
      best = cands.front();
      for (City c : cands) {
        if (inst.dist(removed, c) < inst.dist(removed, best)) best = c;
      }
    }
    t.insert(t.begin() + static_cast<std::ptrdiff_t>(best_insertion(inst, t, best).pos), best);
    cov.add(best);
    in_tour[best] = 1;
  }
  return t;
}

template <typename Neighbour>
LsResult iterate(const Instance& inst, const LsConfig& config, Neighbour neighbour) {
  config.validate();
  const auto start = Clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };
  Rng rng(config.seed);
  LsResult out;
  out.tour = posterior_improve(inst, initial_solution(inst, rng));
  out.cost = cost_of(inst, out.tour);
  out.trace.best_costs.push_back(out.cost);
  out.trace.init_seconds = elapsed();
  const auto reached = [&] { return config.target_cost && out.cost <= *config.target_cost; };

  std::size_t stall = 0;
  while (!reached() && stall < config.max_stall_iters && inst.n() > 1) {
    if (config.time_limit_s && elapsed() >= *config.time_limit_s) break;
    Tour candidate{neighbour(out.tour.order, rng)};
    candidate = posterior_improve(inst, std::move(candidate));
    const double cost = cost_of(inst, candidate);
    ++out.trace.iterations;
    if (cost < out.cost - kImprovement) {
      out.tour = std::move(candidate);
      out.cost = cost;
      stall = 0;
    } else {
      ++stall;
    }
    out.trace.best_costs.push_back(out.cost);
  }
  out.trace.reached_target = reached();
  // With no iteration the search stopped right after initialization.
  out.trace.stop_seconds = out.trace.iterations == 0 ? out.trace.init_seconds : elapsed();
  return out;
}

}  // namespace

void LsConfig::validate() const {
  if (!(destroy_fraction > 0.0 && destroy_fraction <= 1.0)) {
    throw std::invalid_argument("destroy fraction must lie in (0, 1]");
  }
  if (max_stall_iters == 0) throw std::invalid_argument("stall limit must be at least 1");
}

Tour initial_solution(const Instance& inst, Rng& rng) {
  Coverage cov(inst);
  std::vector<City> chosen;
  std::vector<char> in_tour(inst.n(), 0);
  while (!cov.feasible()) {
    std::vector<City> uncovered;
    for (City c = 0; c < inst.n(); ++c) {
      if (!cov.covered(c)) uncovered.push_back(c);
    }
    const City u = uncovered[rng.below(uncovered.size())];
    City best = u;
    std::size_t best_gain = cov.gain(u);
    for (City c : inst.covered_by(u)) {
      const std::size_t g = cov.gain(c);
      if (g > best_gain || (g == best_gain && c < best)) {
        best = c;
        best_gain = g;
      }
    }
    chosen.push_back(best);
    in_tour[best] = 1;
    cov.add(best);
  }

  Tour tour;
  if (chosen.empty()) return tour;
  std::vector<char> placed(inst.n(), 0);
  City current = chosen.front();
  tour.order.push_back(current);
  placed[current] = 1;
  while (tour.order.size() < chosen.size()) {
    City next = current;
    double best = std::numeric_limits<double>::infinity();
    for (City c : chosen) {
      if (!placed[c] && inst.dist(current, c) < best) {
        best = inst.dist(current, c);
        next = c;
      }
    }
    tour.order.push_back(next);
    placed[next] = 1;
    current = next;
  }
  return tour;
}

Tour two_opt(const Instance& inst, Tour tour) {
  auto& t = tour.order;
  const std::size_t k = t.size();
  if (k < 4) return tour;
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 0; i + 2 < k; ++i) {
      for (std::size_t j = i + 2; j < k; ++j) {
        if (i == 0 && j == k - 1) continue;
        const City a = t[i], b = t[i + 1], c = t[j], d = t[(j + 1) % k];
        const double delta = inst.dist(a, c) + inst.dist(b, d) - inst.dist(a, b) - inst.dist(c, d);
        if (delta < -kImprovement) {
          std::reverse(t.begin() + static_cast<std::ptrdiff_t>(i + 1), t.begin() + static_cast<std::ptrdiff_t>(j + 1));
          improved = true;
        }
      }
    }
  }
  return tour;
}

Tour remove_redundant(const Instance& inst, Tour tour) {
  auto& t = tour.order;
  Coverage cov(inst, t);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < t.size() && t.size() > 1;) {
      if (cov.removable(t[i]) && removal_saving(inst, t, i) > 0.0) {
        cov.remove(t[i]);
        t.erase(t.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
      } else {
        ++i;
      }
    }
  }
  return tour;
}

Tour posterior_improve(const Instance& inst, Tour tour) {
  while (true) {
    Tour next = two_opt(inst, remove_redundant(inst, tour));
    if (next == tour) return next;
    tour = std::move(next);
  }
}

LsResult ls1_solve(const Instance& instance, const LsConfig& config) {
  return iterate(instance, config, [&](const std::vector<City>& t, Rng& rng) {
    return ls1_neighbour(instance, t, rng, config.destroy_fraction);
  });
}

LsResult ls2_solve(const Instance& instance, const LsConfig& config) {
  return iterate(instance, config,
                 [&](const std::vector<City>& t, Rng& rng) { return ls2_neighbour(instance, t, rng); });
}

}  // namespace csp::search
