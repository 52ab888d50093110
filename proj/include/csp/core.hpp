/**
 * @file core.hpp
 * @brief Covering salesman instances, coverage semantics, tours and the
 * exact small-instance solver.
 *
 * A covering salesman tour is a cycle over a subset of cities such that every
 * city is either on the cycle or covered by some city on it. Edge costs are
 * Euclidean distances between points.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace csp {

using City = std::size_t;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

double distance(const Point& a, const Point& b);

/// Raised when an instance exceeds a solver's size limit.
class SizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed instance or checkpoint document.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Coverage specifications. Every city covers only *other* cities.
struct KNearest {
  std::size_t k = 0;
  friend bool operator==(const KNearest&, const KNearest&) = default;
};
struct KNearestPerCity {
  std::vector<std::size_t> ks;
  friend bool operator==(const KNearestPerCity&, const KNearestPerCity&) = default;
};
struct FixedRadius {
  double r = 0.0;
  friend bool operator==(const FixedRadius&, const FixedRadius&) = default;
};
struct PerCityRadius {
  std::vector<double> rs;
  friend bool operator==(const PerCityRadius&, const PerCityRadius&) = default;
};

using CoverageSpec = std::variant<KNearest, KNearestPerCity, FixedRadius, PerCityRadius>;

/// Throws std::invalid_argument when `spec` cannot be attached to n cities.
void validate_spec(const CoverageSpec& spec, std::size_t n);

/// Short human-readable descriptor, e.g. "k_nearest(7)".
std::string describe(const CoverageSpec& spec);

using CoverSets = std::vector<std::vector<City>>;

/// S_i for every city. k-nearest sets list neighbours by increasing distance
/// (ties by lower index); radius sets list neighbours by increasing index.
CoverSets compute_cover_sets(const std::vector<Point>& coords, const CoverageSpec& spec);

/// Immutable problem instance with derived coverage data.
class Instance {
 public:
  Instance(std::vector<Point> coords, CoverageSpec spec, std::uint64_t seed = 0);

  std::size_t n() const { return coords_.size(); }
  const std::vector<Point>& coords() const { return coords_; }
  const Point& coord(City i) const { return coords_[i]; }
  const CoverageSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  /// Cities covered by `i` (never contains `i`).
  const std::vector<City>& cover_set(City i) const { return cover_sets_[i]; }
  const CoverSets& cover_sets() const { return cover_sets_; }
  /// Cities whose cover set contains `j`.
  const std::vector<City>& covered_by(City j) const { return covered_by_[j]; }

  double dist(City i, City j) const { return dist_[i * coords_.size() + j]; }

  /// True if any coordinate lies outside the unit square (loaded files only).
  bool outside_unit_square() const;

  friend bool operator==(const Instance& a, const Instance& b) {
    return a.coords_ == b.coords_ && a.spec_ == b.spec_ && a.seed_ == b.seed_;
  }

 private:
  std::vector<Point> coords_;
  CoverageSpec spec_;
  std::uint64_t seed_;
  CoverSets cover_sets_;
  CoverSets covered_by_;
  std::vector<double> dist_;
};

/// Ordered, duplicate-free list of visited cities; the cycle closes implicitly.
struct Tour {
  std::vector<City> order;

  std::size_t size() const { return order.size(); }
  bool empty() const { return order.empty(); }
  friend bool operator==(const Tour&, const Tour&) = default;
};

/// Coordinates i.i.d. uniform on the unit square; a pure function of its
/// arguments.
Instance generate_instance(std::size_t n, const CoverageSpec& spec, std::uint64_t seed);

/// Per-city neighbour counts drawn uniformly from [nc_min, nc_max], clamped to n-1.
KNearestPerCity random_nc_spec(std::size_t n, std::size_t nc_min, std::size_t nc_max,
                               std::uint64_t seed);
/// Per-city radii drawn uniformly from [0, r_max].
PerCityRadius random_radius_spec(std::size_t n, double r_max, std::uint64_t seed);

/// Throws std::out_of_range for indices >= n and std::invalid_argument for
/// repeated cities.
void check_tour(const Instance& instance, const Tour& tour);

bool is_feasible(const Instance& instance, const Tour& tour);

/// Cyclic Euclidean length. Throws std::invalid_argument on an empty tour.
double tour_length(const Instance& instance, const Tour& tour);

struct OracleResult {
  double cost = 0.0;
  Tour tour;
  std::uint64_t nodes_expanded = 0;
};

/// Exhaustive optimum: every covering subset, each solved as an exact subset
/// TSP. Equal-cost optima resolve to the lexicographically smallest canonical
/// sequence. Throws SizeError when n > max_n.
OracleResult solve_exact(const Instance& instance, std::size_t max_n = 10);

/// Rotates the cycle to start at its smallest city and picks the direction
/// whose second city is smaller.
Tour canonical_cycle(const Tour& tour);

std::string serialize_instance(const Instance& instance);
/// Throws ParseError with the offending line or field.
Instance deserialize_instance(const std::string& text);

Instance load_instance(const std::string& path);
void save_instance(const Instance& instance, const std::string& path);

}  // namespace csp
