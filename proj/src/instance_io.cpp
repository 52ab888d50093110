#include <cstdio>
#include <fstream>
#include <sstream>

#include "csp/core.hpp"
#include "json.hpp"

namespace csp {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

const json& field(const json& obj, const char* name, const std::string& where) {
  if (!obj.is_object() || !obj.contains(name)) {
    throw ParseError("instance: missing field '" + where + name + "'");
  }
  return obj.at(name);
}

template <class T>
T as(const json& v, const std::string& name) {
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ParseError("instance: field '" + name + "' has wrong type: " + e.what());
  }
}

std::uint64_t as_count(const json& v, const std::string& name) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ParseError("instance: field '" + name + "' must be a nonnegative integer");
  }
  return v.get<std::uint64_t>();
}

double as_real(const json& v, const std::string& name) {
  if (!v.is_number()) throw ParseError("instance: field '" + name + "' must be a number");
  return v.get<double>();
}

CoverageSpec parse_spec(const json& s) {
  const std::string type = as<std::string>(field(s, "type", "spec."), "spec.type");
  if (type == "k_nearest") {
    return KNearest{static_cast<std::size_t>(as_count(field(s, "k", "spec."), "spec.k"))};
  }
  if (type == "k_nearest_per_city") {
    const json& ks = field(s, "ks", "spec.");
    if (!ks.is_array()) throw ParseError("instance: field 'spec.ks' must be an array");
    KNearestPerCity out;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      out.ks.push_back(static_cast<std::size_t>(
          as_count(ks[i], "spec.ks[" + std::to_string(i) + "]")));
    }
    return out;
  }
  if (type == "fixed_radius") return FixedRadius{as_real(field(s, "r", "spec."), "spec.r")};
  if (type == "per_city_radius") {
    const json& rs = field(s, "rs", "spec.");
    if (!rs.is_array()) throw ParseError("instance: field 'spec.rs' must be an array");
    PerCityRadius out;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      out.rs.push_back(as_real(rs[i], "spec.rs[" + std::to_string(i) + "]"));
    }
    return out;
  }
  throw ParseError("instance: unknown spec.type '" + type + "'");
}

}  // namespace

std::string serialize_instance(const Instance& instance) {
  std::ostringstream out;
  out << "{\"version\":1,\"n\":" << instance.n() << ",\"seed\":" << instance.seed()
      << ",\"spec\":";
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, KNearest>) {
          out << "{\"type\":\"k_nearest\",\"k\":" << s.k << "}";
        } else if constexpr (std::is_same_v<S, KNearestPerCity>) {
          out << "{\"type\":\"k_nearest_per_city\",\"ks\":[";
          for (std::size_t i = 0; i < s.ks.size(); ++i) out << (i ? "," : "") << s.ks[i];
          out << "]}";
        } else if constexpr (std::is_same_v<S, FixedRadius>) {
          out << "{\"type\":\"fixed_radius\",\"r\":" << format_double(s.r) << "}";
        } else {
          out << "{\"type\":\"per_city_radius\",\"rs\":[";
          for (std::size_t i = 0; i < s.rs.size(); ++i) {
            out << (i ? "," : "") << format_double(s.rs[i]);
          }
          out << "]}";
        }
      },
      instance.spec());
  out << ",\"coords\":[";
  for (std::size_t i = 0; i < instance.n(); ++i) {
    const Point& p = instance.coord(i);
    out << (i ? "," : "") << "\n[" << format_double(p.x) << "," << format_double(p.y) << "]";
  }
  out << "\n]}\n";
  return out.str();
}

Instance deserialize_instance(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("instance: malformed JSON at line " + std::to_string(line_of(text, e.byte)) +
                     ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError("instance: document must be a JSON object");
  const auto version = as_count(field(doc, "version", ""), "version");
  if (version != 1) throw ParseError("instance: unsupported version " + std::to_string(version));
  const auto n = static_cast<std::size_t>(as_count(field(doc, "n", ""), "n"));
  const auto seed = as_count(field(doc, "seed", ""), "seed");
  const CoverageSpec spec = parse_spec(field(doc, "spec", ""));
  const json& coords = field(doc, "coords", "");
  if (!coords.is_array()) throw ParseError("instance: field 'coords' must be an array");
  if (coords.size() != n) {
    throw ParseError("instance: field 'coords' has " + std::to_string(coords.size()) +
                     " entries but n=" + std::to_string(n));
  }
  std::vector<Point> points;
  points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = "coords[" + std::to_string(i) + "]";
    const json& c = coords[i];
    if (!c.is_array() || c.size() != 2) throw ParseError("instance: field '" + name + "' must be [x,y]");
    points.push_back({as_real(c[0], name + "[0]"), as_real(c[1], name + "[1]")});
  }
  try {
    return Instance(std::move(points), spec, seed);
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("instance: invalid content: ") + e.what());
  }
}

Instance load_instance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open instance file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return deserialize_instance(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void save_instance(const Instance& instance, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write instance file '" + path + "'");
  out << serialize_instance(instance);
}

}  // namespace csp
