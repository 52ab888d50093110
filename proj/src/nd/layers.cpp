#include "csp/nd/layers.hpp"

#include <cmath>

#include "csp/rng.hpp"

namespace csp::nd {

Var linear(Var x, Var weight) { return matmul(x, weight); }

Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }

GruWeights GruWeights::bind(Tape& tape, ParamStore& store, const std::string& prefix) {
  const auto p = [&](const char* name) { return tape.param(store, prefix + name); };
  return GruWeights{p("w_z"), p("u_z"), p("b_z"), p("w_r"), p("u_r"),
                    p("b_r"), p("w_n"), p("u_n"), p("b_n")};
}

void add_gru_params(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* gate : {"z", "r", "n"}) {
    store.add_uniform(prefix + "w_" + gate, {d, d}, bound, rng);
    store.add_uniform(prefix + "u_" + gate, {d, d}, bound, rng);
    store.add(prefix + "b_" + gate, Array({d}, 0.0));
  }
}

GruOutput gru_cell(Var input, Var hidden, const GruWeights& w) {
  if (input.value().size() != hidden.value().size()) {
    throw DimensionError("gru_cell: input " + shape_string(input.shape()) + " vs hidden " +
                         shape_string(hidden.shape()));
  }
  const Var z = sigmoid(add(add(matmul(input, w.w_z), matmul(hidden, w.u_z)), w.b_z));
  const Var r = sigmoid(add(add(matmul(input, w.w_r), matmul(hidden, w.u_r)), w.b_r));
  const Var n = tanh(add(add(matmul(input, w.w_n), matmul(mul(r, hidden), w.u_n)), w.b_n));
  // h' = n + z * (h - n)
  const Var h = add(n, mul(z, sub(hidden, n)));
  return GruOutput{h, h};
}

}  // namespace csp::nd
