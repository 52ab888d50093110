#pragma once

#include <cstddef>
#include <vector>

#include "csp/nd/tape.hpp"

namespace csp::nd {

// Differentiable primitives. All of them are pure: inputs are never modified
// and every call appends exactly one node to the operands' tape.
//
// Binary elementwise operations accept `b` with the same shape as `a`, a
// single row of width a.cols() (broadcast over every leading row), or a
// single element.

Var matmul(Var a, Var b);  // a: [... x k], b: [k x p] -> [... x p]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var neg(Var a);

Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);

/// Row-wise softmax. Entries equal to -inf, or flagged in `mask`
/// (size a.rows()*a.cols(), nonzero = excluded), get probability exactly 0.
/// Throws std::domain_error if a row has no selectable entry.
Var softmax_rows(Var a, const std::vector<char>* mask = nullptr);
Var log_softmax_rows(Var a, const std::vector<char>* mask = nullptr);

/// Row-wise normalisation to zero mean and unit variance (population
/// variance, `eps` inside the square root) followed by gain * x + bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var transpose(Var a);  // 2-D only
Var reshape(Var a, Shape shape);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);

Var sum(Var a);        // -> [1]
Var mean(Var a);       // -> [1]
Var mean_rows(Var a);  // [r x c] -> [1 x c]
Var pick(Var a, std::size_t flat_index);  // -> [1]

/// Scaled dot-product attention evaluated independently inside each row
/// segment and each head. q, k, v: [rows x d], heads split the columns into
/// equal blocks. Row segment s spans [starts[s], starts[s+1]) with an
/// implicit final bound at rows. Returns [rows x d] with head outputs
/// side by side.
Var segment_attention(Var q, Var k, Var v, const std::vector<std::size_t>& starts,
                      std::size_t heads, double scale);

}  // namespace csp::nd
