#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "csp/nd/array.hpp"
#include "json.hpp"

namespace csp {
class Rng;
}

namespace csp::nd {

struct Param {
  Array value;
  Array grad;
  Array m;  // Adam first moment
  Array v;  // Adam second moment
};

/// Named learnable arrays plus optimizer state. Iteration order is the
/// lexicographic order of names.
class ParamStore {
 public:
  Param& add(const std::string& name, Array init);
  /// uniform(-bound, bound) entries.
  Param& add_uniform(const std::string& name, Shape shape, double bound, Rng& rng);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  const Array& value(const std::string& name) const { return at(name).value; }

  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  void zero_grad();
  /// Replaces all values with those of `other` (same names and shapes).
  void copy_values_from(const ParamStore& other);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Param> params_;
  std::uint64_t step_ = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter; clears gradients.
void adam_step(ParamStore& store, const AdamConfig& config);

/// Flat container of named arrays with a JSON header.
struct ArrayFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Array>> arrays;

  const Array* find(const std::string& name) const;
};

/// Layout: one line of JSON {"version":1,"names":[...],"shapes":[...],
/// "dtype":"f64","meta":{...}}, a newline, then each array's elements as
/// little-endian IEEE-754 doubles in name order.
void write_array_file(const std::string& path, const ArrayFile& file);
ArrayFile read_array_file(const std::string& path);

/// Adds values as `prefix + name`, Adam moments as `prefix + "adam.m." + name`
/// and `prefix + "adam.v." + name`, and the step counter to meta.
void export_params(const ParamStore& store, ArrayFile& file, const std::string& prefix = "",
                   bool with_moments = true);
/// Inverse of export_params. Every parameter already in `store` must be
/// present with a matching shape.
void import_params(ParamStore& store, const ArrayFile& file, const std::string& prefix = "",
                   bool with_moments = true);

}  // namespace csp::nd
