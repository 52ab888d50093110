#pragma once

#include <string>

#include "csp/nd/ops.hpp"
#include "csp/nd/params.hpp"
#include "csp/rng.hpp"

namespace csp::nd {

/// x W (+ b). Weights are stored input-major: W is [d_in x d_out].
Var linear(Var x, Var weight);
Var linear(Var x, Var weight, Var bias);

/// Gated recurrent unit weights for input and hidden width d.
struct GruWeights {
  Var w_z, u_z, b_z;  // update gate
  Var w_r, u_r, b_r;  // reset gate
  Var w_n, u_n, b_n;  // candidate

  static GruWeights bind(Tape& tape, ParamStore& store, const std::string& prefix);
};

void add_gru_params(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng);

struct GruOutput {
  Var output;  // equals hidden
  Var hidden;
};

/// z = sigmoid(x W_z + h U_z + b_z), r = sigmoid(x W_r + h U_r + b_r),
/// n = tanh(x W_n + (r * h) U_n + b_n), h' = (1 - z) * n + z * h.
GruOutput gru_cell(Var input, Var hidden, const GruWeights& w);

}  // namespace csp::nd
