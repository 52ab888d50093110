#include "csp/nd/params.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "csp/core.hpp"
#include "csp/rng.hpp"

namespace csp::nd {

Param& ParamStore::add(const std::string& name, Array init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  const Shape shape = init.shape();
  Param p{std::move(init), Array(shape, 0.0), Array(shape, 0.0), Array(shape, 0.0)};
  return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
  Array init(std::move(shape));
  for (double& v : init.values()) v = rng.uniform(-bound, bound);
  return add(name, std::move(init));
}

Param& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::element_count() const {
  std::size_t total = 0;
  for (const auto& [name, p] : params_) total += p.value.size();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

void ParamStore::copy_values_from(const ParamStore& other) {
  for (auto& [name, p] : params_) {
    const Array& src = other.value(name);
    if (src.shape() != p.value.shape()) {
      throw DimensionError("parameter '" + name + "' shape " + shape_string(src.shape()) +
                           " differs from " + shape_string(p.value.shape()));
    }
    p.value = src;
  }
}

void adam_step(ParamStore& store, const AdamConfig& config) {
  store.set_step(store.step() + 1);
  const double t = static_cast<double>(store.step());
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, p] : store) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = config.beta1 * p.m[i] + (1.0 - config.beta1) * g;
      p.v[i] = config.beta2 * p.v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = p.m[i] / correction1;
      const double v_hat = p.v[i] / correction2;
      p.value[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
    p.grad.fill(0.0);
  }
}

const Array* ArrayFile::find(const std::string& name) const {
  for (const auto& [n, a] : arrays) {
    if (n == name) return &a;
  }
  return nullptr;
}

void write_array_file(const std::string& path, const ArrayFile& file) {
  nlohmann::json header;
  header["version"] = 1;
  header["dtype"] = "f64";
  header["names"] = nlohmann::json::array();
  header["shapes"] = nlohmann::json::array();
  for (const auto& [name, a] : file.arrays) {
    header["names"].push_back(name);
    header["shapes"].push_back(a.shape());
  }
  header["meta"] = file.meta;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out << header.dump() << '\n';
  std::vector<char> bytes;
  for (const auto& [name, a] : file.arrays) {
    bytes.resize(a.size() * 8);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(a[i]);
      for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

ArrayFile read_array_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": malformed checkpoint header: " + e.what());
  }
  ArrayFile file;
  try {
    if (header.at("version").get<int>() != 1) throw ParseError(path + ": unsupported checkpoint version");
    if (header.at("dtype").get<std::string>() != "f64") throw ParseError(path + ": unsupported dtype");
    const auto names = header.at("names").get<std::vector<std::string>>();
    const auto shapes = header.at("shapes").get<std::vector<Shape>>();
    if (names.size() != shapes.size()) throw ParseError(path + ": names/shapes length mismatch");
    if (header.contains("meta")) file.meta = header.at("meta");
    std::vector<unsigned char> bytes;
    for (std::size_t k = 0; k < names.size(); ++k) {
      Array a(shapes[k]);
      bytes.resize(a.size() * 8);
      in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw ParseError(path + ": truncated data for '" + names[k] + "'");
      }
      for (std::size_t i = 0; i < a.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t{bytes[i * 8 + b]} << (8 * b);
        a[i] = std::bit_cast<double>(bits);
      }
      file.arrays.emplace_back(names[k], std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad checkpoint header field: " + e.what());
  }
  return file;
}

void export_params(const ParamStore& store, ArrayFile& file, const std::string& prefix,
                   bool with_moments) {
  for (const auto& [name, p] : store) file.arrays.emplace_back(prefix + name, p.value);
  if (with_moments) {
    for (const auto& [name, p] : store) file.arrays.emplace_back(prefix + "adam.m." + name, p.m);
    for (const auto& [name, p] : store) file.arrays.emplace_back(prefix + "adam.v." + name, p.v);
    file.meta[prefix + "adam_step"] = store.step();
  }
}

void import_params(ParamStore& store, const ArrayFile& file, const std::string& prefix,
                   bool with_moments) {
  const auto fetch = [&](const std::string& key, const Array& like) -> const Array& {
    const Array* a = file.find(key);
    if (!a) throw ParseError("checkpoint lacks array '" + key + "'");
    if (a->shape() != like.shape()) {
      throw ParseError("checkpoint array '" + key + "' has shape " + shape_string(a->shape()) +
                       ", expected " + shape_string(like.shape()));
    }
    return *a;
  };
  for (auto& [name, p] : store) {
    p.value = fetch(prefix + name, p.value);
    if (with_moments) {
      p.m = fetch(prefix + "adam.m." + name, p.m);
      p.v = fetch(prefix + "adam.v." + name, p.v);
    }
    p.grad.fill(0.0);
  }
  if (with_moments) {
    const std::string key = prefix + "adam_step";
    if (!file.meta.contains(key)) throw ParseError("checkpoint lacks '" + key + "'");
    store.set_step(file.meta.at(key).get<std::uint64_t>());
  }
}

}  // namespace csp::nd
