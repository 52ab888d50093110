#include "csp/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "csp/rng.hpp"

namespace csp {

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::vector<City> k_nearest(const std::vector<Point>& coords, City i, std::size_t k) {
  std::vector<City> others;
  others.reserve(coords.size());
  for (City j = 0; j < coords.size(); ++j) {
    if (j != i) others.push_back(j);
  }
  std::vector<double> d(coords.size());
  for (City j : others) d[j] = distance(coords[i], coords[j]);
  const auto closer = [&](City a, City b) { return d[a] < d[b] || (d[a] == d[b] && a < b); };
  std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(k), others.end(),
                    closer);
  others.resize(k);
  return others;
}

std::vector<City> within_radius(const std::vector<Point>& coords, City i, double r) {
  std::vector<City> out;
  for (City j = 0; j < coords.size(); ++j) {
    if (j != i && distance(coords[i], coords[j]) <= r) out.push_back(j);
  }
  return out;
}

}  // namespace

void validate_spec(const CoverageSpec& spec, std::size_t n) {
  std::visit(
      Overloaded{
          [n](const KNearest& s) {
            if (s.k == 0) throw std::invalid_argument("k_nearest: k must be positive");
            if (s.k + 1 > n) {
              throw std::invalid_argument("k_nearest: k=" + std::to_string(s.k) +
                                          " requires k <= n-1 (n=" + std::to_string(n) + ")");
            }
          },
          [n](const KNearestPerCity& s) {
            if (s.ks.size() != n) {
              throw std::invalid_argument("k_nearest_per_city: expected " + std::to_string(n) +
                                          " entries, got " + std::to_string(s.ks.size()));
            }
            for (std::size_t i = 0; i < n; ++i) {
              if (s.ks[i] == 0 || s.ks[i] + 1 > n) {
                throw std::invalid_argument("k_nearest_per_city: ks[" + std::to_string(i) +
                                            "]=" + std::to_string(s.ks[i]) +
                                            " outside [1, n-1]");
              }
            }
          },
          [](const FixedRadius& s) {
            if (!(s.r >= 0.0) || !std::isfinite(s.r)) {
              throw std::invalid_argument("fixed_radius: r must be a finite nonnegative value");
            }
          },
          [n](const PerCityRadius& s) {
            if (s.rs.size() != n) {
              throw std::invalid_argument("per_city_radius: expected " + std::to_string(n) +
                                          " entries, got " + std::to_string(s.rs.size()));
            }
            for (std::size_t i = 0; i < n; ++i) {
              if (!(s.rs[i] >= 0.0) || !std::isfinite(s.rs[i])) {
                throw std::invalid_argument("per_city_radius: rs[" + std::to_string(i) +
                                            "] must be finite and nonnegative");
              }
            }
          },
      },
      spec);
}

std::string describe(const CoverageSpec& spec) {
  std::ostringstream out;
  std::visit(Overloaded{
                 [&](const KNearest& s) { out << "k_nearest(" << s.k << ")"; },
                 [&](const KNearestPerCity& s) {
                   const auto [lo, hi] = std::minmax_element(s.ks.begin(), s.ks.end());
                   out << "k_nearest_per_city(" << (s.ks.empty() ? 0 : *lo) << ".."
                       << (s.ks.empty() ? 0 : *hi) << ")";
                 },
                 [&](const FixedRadius& s) { out << "fixed_radius(" << s.r << ")"; },
                 [&](const PerCityRadius& s) {
                   const auto hi = std::max_element(s.rs.begin(), s.rs.end());
                   out << "per_city_radius(0.." << (s.rs.empty() ? 0.0 : *hi) << ")";
                 },
             },
             spec);
  return out.str();
}

CoverSets compute_cover_sets(const std::vector<Point>& coords, const CoverageSpec& spec) {
  if (coords.empty()) throw std::invalid_argument("compute_cover_sets: no cities");
  validate_spec(spec, coords.size());
  CoverSets sets(coords.size());
  for (City i = 0; i < coords.size(); ++i) {
    sets[i] = std::visit(
        Overloaded{
            [&](const KNearest& s) { return k_nearest(coords, i, s.k); },
            [&](const KNearestPerCity& s) { return k_nearest(coords, i, s.ks[i]); },
            [&](const FixedRadius& s) { return within_radius(coords, i, s.r); },
            [&](const PerCityRadius& s) { return within_radius(coords, i, s.rs[i]); },
        },
        spec);
  }
  return sets;
}

Instance::Instance(std::vector<Point> coords, CoverageSpec spec, std::uint64_t seed)
    : coords_(std::move(coords)), spec_(std::move(spec)), seed_(seed) {
  if (coords_.empty()) throw std::invalid_argument("instance needs at least one city");
  for (const Point& p : coords_) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw std::invalid_argument("instance coordinates must be finite");
    }
  }
  cover_sets_ = compute_cover_sets(coords_, spec_);
  const std::size_t n = coords_.size();
  covered_by_.assign(n, {});
  for (City i = 0; i < n; ++i) {
    for (City j : cover_sets_[i]) covered_by_[j].push_back(i);
  }
  dist_.resize(n * n);
  for (City i = 0; i < n; ++i) {
    for (City j = 0; j < n; ++j) dist_[i * n + j] = distance(coords_[i], coords_[j]);
  }
}

bool Instance::outside_unit_square() const {
  return std::any_of(coords_.begin(), coords_.end(), [](const Point& p) {
    return p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0;
  });
}

Instance generate_instance(std::size_t n, const CoverageSpec& spec, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate_instance: n must be positive");
  validate_spec(spec, n);
  Rng rng(seed);
  std::vector<Point> coords(n);
  for (Point& p : coords) {
    p.x = rng.uniform();
    p.y = rng.uniform();
  }
  return Instance(std::move(coords), spec, seed);
}

KNearestPerCity random_nc_spec(std::size_t n, std::size_t nc_min, std::size_t nc_max,
                               std::uint64_t seed) {
  if (nc_min == 0 || nc_min > nc_max) {
    throw std::invalid_argument("random_nc_spec: need 1 <= nc_min <= nc_max");
  }
  if (n < 2) throw std::invalid_argument("random_nc_spec: need at least two cities");
  Rng rng(mix_seed(seed, 0x6e63));
  KNearestPerCity spec;
  spec.ks.resize(n);
  for (auto& k : spec.ks) {
    k = std::min<std::size_t>(nc_min + rng.below(nc_max - nc_min + 1), n - 1);
  }
  return spec;
}

PerCityRadius random_radius_spec(std::size_t n, double r_max, std::uint64_t seed) {
  if (!(r_max >= 0.0)) throw std::invalid_argument("random_radius_spec: r_max must be >= 0");
  Rng rng(mix_seed(seed, 0x7261));
  PerCityRadius spec;
  spec.rs.resize(n);
  for (auto& r : spec.rs) r = rng.uniform(0.0, r_max);
  return spec;
}

void check_tour(const Instance& instance, const Tour& tour) {
  std::vector<char> seen(instance.n(), 0);
  for (City c : tour.order) {
    if (c >= instance.n()) {
      throw std::out_of_range("tour city " + std::to_string(c) + " out of range for n=" +
                              std::to_string(instance.n()));
    }
    if (seen[c]) throw std::invalid_argument("tour repeats city " + std::to_string(c));
    seen[c] = 1;
  }
}

bool is_feasible(const Instance& instance, const Tour& tour) {
  check_tour(instance, tour);
  std::vector<char> covered(instance.n(), 0);
  for (City c : tour.order) {
    covered[c] = 1;
    for (City j : instance.cover_set(c)) covered[j] = 1;
  }
  return std::all_of(covered.begin(), covered.end(), [](char v) { return v != 0; });
}

double tour_length(const Instance& instance, const Tour& tour) {
  if (tour.empty()) throw std::invalid_argument("tour_length: empty tour");
  check_tour(instance, tour);
  const auto& o = tour.order;
  double total = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    total += instance.dist(o[i], o[(i + 1) % o.size()]);
  }
  return total;
}

Tour canonical_cycle(const Tour& tour) {
  const auto& o = tour.order;
  if (o.size() < 3) {
    Tour t = tour;
    if (o.size() == 2 && o[1] < o[0]) std::swap(t.order[0], t.order[1]);
    return t;
  }
  const std::size_t k = o.size();
  const std::size_t start =
      static_cast<std::size_t>(std::min_element(o.begin(), o.end()) - o.begin());
  const City next = o[(start + 1) % k];
  const City prev = o[(start + k - 1) % k];
  Tour out;
  out.order.reserve(k);
  for (std::size_t s = 0; s < k; ++s) {
    out.order.push_back(next < prev ? o[(start + s) % k] : o[(start + k - s) % k]);
  }
  return out;
}

}  // namespace csp
