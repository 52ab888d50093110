#include "csp/nd/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace csp::nd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap mat(const Array& a) {
  return ConstMap(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}
MutMap mat(Array& a) {
  return MutMap(a.data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols()));
}

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw std::logic_error("operation on an unbound Var");
  if (&a.tape() != &b.tape()) throw std::logic_error("operands recorded on different tapes");
  return a.tape();
}

enum class Broadcast { kSame, kRow, kScalar };

Broadcast broadcast_kind(const Array& a, const Array& b, const char* op) {
  if (a.shape() == b.shape() || (a.rows() == b.rows() && a.cols() == b.cols())) {
    return Broadcast::kSame;
  }
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(b.shape()) +
                       " onto " + shape_string(a.shape()));
}

std::size_t b_index(Broadcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame: return i;
    case Broadcast::kRow: return i % cols;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

template <class Forward, class Derivative>
Var unary(Var a, Forward f, Derivative df) {
  const Array& x = a.value();
  Array out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().push(std::move(out), {a}, [a, df](Tape& t, const Array& g, const Array& y) {
    const Array& x = t.value(a);
    Array& gx = t.grad_buffer(a);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
  });
}

// Largest selectable entry of a row; -inf when nothing is selectable.
double row_max(const double* row, std::size_t cols, const char* mask) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cols; ++j) {
    if (mask && mask[j]) continue;
    if (row[j] > m) m = row[j];
  }
  return m;
}

const char* mask_row(const std::vector<char>* mask, std::size_t r, std::size_t cols) {
  return mask ? mask->data() + r * cols : nullptr;
}

void check_mask(const Array& x, const std::vector<char>* mask) {
  if (mask && mask->size() != x.size()) {
    throw DimensionError("softmax mask has " + std::to_string(mask->size()) +
                         " entries, input " + shape_string(x.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Array& x = a.value();
  const Array& w = b.value();
  if (w.shape().size() != 2 || x.cols() != w.shape()[0]) {
    throw DimensionError("matmul: shapes " + shape_string(x.shape()) + " and " +
                         shape_string(w.shape()) + " are incompatible");
  }
  Shape shape = x.shape();
  shape.back() = w.shape()[1];
  Array out(shape);
  mat(out).noalias() = mat(x) * mat(w);
  return tape.push(std::move(out), {a, b}, [a, b](Tape& t, const Array& g, const Array&) {
    if (t.needs_grad(a)) mat(t.grad_buffer(a)).noalias() += mat(g) * mat(t.value(b)).transpose();
    if (t.needs_grad(b)) mat(t.grad_buffer(b)).noalias() += mat(t.value(a)).transpose() * mat(g);
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Array& x = a.value();
  const Array& y = b.value();
  const Broadcast kind = broadcast_kind(x, y, "add");
  Array out(x.shape());
  const std::size_t cols = x.cols();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[b_index(kind, i, cols)];
  return tape.push(std::move(out), {a, b}, [a, b, kind, cols](Tape& t, const Array& g, const Array&) {
    if (t.needs_grad(a)) {
      Array& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      Array& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[b_index(kind, i, cols)] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Array& x = a.value();
  const Array& y = b.value();
  const Broadcast kind = broadcast_kind(x, y, "sub");
  Array out(x.shape());
  const std::size_t cols = x.cols();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[b_index(kind, i, cols)];
  return tape.push(std::move(out), {a, b}, [a, b, kind, cols](Tape& t, const Array& g, const Array&) {
    if (t.needs_grad(a)) {
      Array& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      Array& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[b_index(kind, i, cols)] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Array& x = a.value();
  const Array& y = b.value();
  const Broadcast kind = broadcast_kind(x, y, "mul");
  Array out(x.shape());
  const std::size_t cols = x.cols();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[b_index(kind, i, cols)];
  return tape.push(std::move(out), {a, b}, [a, b, kind, cols](Tape& t, const Array& g, const Array&) {
    const Array& x = t.value(a);
    const Array& y = t.value(b);
    if (t.needs_grad(a)) {
      Array& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[b_index(kind, i, cols)];
    }
    if (t.needs_grad(b)) {
      Array& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[b_index(kind, i, cols)] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  return unary(a, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(a, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  const auto s = [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  };
  return unary(a, s, [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var softmax_rows(Var a, const std::vector<char>* mask) {
  const Array& x = a.value();
  check_mask(x, mask);
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (cols == 0) throw DimensionError("softmax_rows: empty last dimension");
  Array out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* o = out.data() + r * cols;
    const char* m = mask_row(mask, r, cols);
    const double mx = row_max(in, cols, m);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw std::domain_error("softmax_rows: row " + std::to_string(r) +
                              " has no selectable entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = (m && m[j]) ? 0.0 : std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= total;
  }
  return a.tape().push(std::move(out), {a}, [a, cols](Tape& t, const Array& g, const Array& y) {
    Array& gx = t.grad_buffer(a);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const std::size_t base = r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < cols; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

Var log_softmax_rows(Var a, const std::vector<char>* mask) {
  const Array& x = a.value();
  check_mask(x, mask);
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (cols == 0) throw DimensionError("log_softmax_rows: empty last dimension");
  const double ninf = -std::numeric_limits<double>::infinity();
  Array out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * cols;
    double* o = out.data() + r * cols;
    const char* m = mask_row(mask, r, cols);
    const double mx = row_max(in, cols, m);
    if (mx == ninf) {
      throw std::domain_error("log_softmax_rows: row " + std::to_string(r) +
                              " has no selectable entry");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!(m && m[j]) && in[j] != ninf) total += std::exp(in[j] - mx);
    }
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = ((m && m[j]) || in[j] == ninf) ? ninf : in[j] - lse;
    }
  }
  std::vector<char> excluded(x.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    excluded[i] = (mask && (*mask)[i]) || x[i] == ninf;
  }
  return a.tape().push(std::move(out), {a},
                       [a, cols, excluded = std::move(excluded)](Tape& t, const Array& g,
                                                                 const Array& y) {
                         Array& gx = t.grad_buffer(a);
                         for (std::size_t r = 0; r < y.rows(); ++r) {
                           const std::size_t base = r * cols;
                           double total = 0.0;
                           for (std::size_t j = 0; j < cols; ++j) {
                             if (!excluded[base + j]) total += g[base + j];
                           }
                           for (std::size_t j = 0; j < cols; ++j) {
                             if (excluded[base + j]) continue;
                             gx[base + j] += g[base + j] - std::exp(y[base + j]) * total;
                           }
                         }
                       });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = same_tape(x, gain);
  same_tape(x, bias);
  const Array& in = x.value();
  const std::size_t d = in.cols();
  if (d < 2) throw DimensionError("layer_norm: width must be at least 2");
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()) + " do not match input " +
                         shape_string(in.shape()));
  }
  const std::size_t rows = in.rows();
  auto normalized = std::make_shared<Array>(in.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Array out(in.shape());
  const Array& gv = gain.value();
  const Array& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * inv;
      (*normalized)[r * d + j] = xh;
      out[r * d + j] = gv[j] * xh + bv[j];
    }
  }
  return tape.push(std::move(out), {x, gain, bias},
                   [x, gain, bias, normalized, inv_std, d](Tape& t, const Array& g, const Array&) {
                     const Array& xh = *normalized;
                     const Array& gv = t.value(gain);
                     const std::size_t rows = xh.rows();
                     if (t.needs_grad(gain)) {
                       Array& gg = t.grad_buffer(gain);
                       for (std::size_t i = 0; i < xh.size(); ++i) gg[i % d] += g[i] * xh[i];
                     }
                     if (t.needs_grad(bias)) {
                       Array& gb = t.grad_buffer(bias);
                       for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
                     }
                     if (!t.needs_grad(x)) return;
                     Array& gx = t.grad_buffer(x);
                     std::vector<double> dxh(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double mean_d = 0.0;
                       double mean_dx = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         dxh[j] = g[r * d + j] * gv[j];
                         mean_d += dxh[j];
                         mean_dx += dxh[j] * xh[r * d + j];
                       }
                       mean_d /= static_cast<double>(d);
                       mean_dx /= static_cast<double>(d);
                       const double inv = (*inv_std)[r];
                       for (std::size_t j = 0; j < d; ++j) {
                         gx[r * d + j] += inv * (dxh[j] - mean_d - xh[r * d + j] * mean_dx);
                       }
                     }
                   });
}

Var transpose(Var a) {
  const Array& x = a.value();
  if (x.shape().size() != 2) throw DimensionError("transpose: needs a 2-D array, got " + shape_string(x.shape()));
  Array out({x.cols(), x.rows()});
  mat(out) = mat(x).transpose();
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Array& g, const Array&) {
    mat(t.grad_buffer(a)) += mat(g).transpose();
  });
}

Var reshape(Var a, Shape shape) {
  Array out = a.value().reshaped(std::move(shape));
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Array& g, const Array&) {
    Array& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    if (p.value().rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    cols += p.value().cols();
  }
  Array out({rows, cols});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Array& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) out.at(r, off + c) = v.at(r, c);
    }
    off += v.cols();
  }
  return parts[0].tape().push(std::move(out), parts, [parts, offsets, cols](Tape& t, const Array& g, const Array&) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (!t.needs_grad(parts[k])) continue;
      Array& gp = t.grad_buffer(parts[k]);
      const std::size_t w = gp.cols();
      for (std::size_t r = 0; r < gp.rows(); ++r) {
        for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * cols + offsets[k] + c];
      }
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    if (p.value().cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts[0].shape()) +
                           " vs " + shape_string(p.shape()));
    }
    rows += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) {
    const auto v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
  }
  return parts[0].tape().push(Array({rows, cols}, std::move(data)), parts,
                              [parts](Tape& t, const Array& g, const Array&) {
                                std::size_t off = 0;
                                for (const Var& p : parts) {
                                  const std::size_t n = t.value(p).size();
                                  if (t.needs_grad(p)) {
                                    Array& gp = t.grad_buffer(p);
                                    for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
                                  }
                                  off += n;
                                }
                              });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Array& x = a.value();
  if (begin + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  Array out({x.rows(), count});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out.at(r, c) = x.at(r, begin + c);
  }
  return a.tape().push(std::move(out), {a}, [a, begin, count](Tape& t, const Array& g, const Array&) {
    Array& ga = t.grad_buffer(a);
    const std::size_t w = ga.cols();
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (std::size_t c = 0; c < count; ++c) ga[r * w + begin + c] += g[r * count + c];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Array& x = a.value();
  if (begin + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(x.shape()));
  }
  const std::size_t cols = x.cols();
  std::vector<double> data(x.data() + begin * cols, x.data() + (begin + count) * cols);
  return a.tape().push(Array({count, cols}, std::move(data)), {a},
                       [a, begin, cols](Tape& t, const Array& g, const Array&) {
                         Array& ga = t.grad_buffer(a);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
                       });
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  const Array& x = a.value();
  const std::size_t cols = x.cols();
  Array out({rows.size(), cols});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= x.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[k]) + " outside " +
                           shape_string(x.shape()));
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(k, c) = x.at(rows[k], c);
  }
  return a.tape().push(std::move(out), {a}, [a, rows, cols](Tape& t, const Array& g, const Array&) {
    Array& ga = t.grad_buffer(a);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      for (std::size_t c = 0; c < cols; ++c) ga[rows[k] * cols + c] += g[k * cols + c];
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return a.tape().push(Array::scalar(total), {a}, [a](Tape& t, const Array& g, const Array&) {
    Array& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(Var a) {
  const Array& x = a.value();
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (rows == 0) throw DimensionError("mean_rows: no rows");
  Array out({1, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += x.at(r, c);
  }
  for (std::size_t c = 0; c < cols; ++c) out[c] /= static_cast<double>(rows);
  return a.tape().push(std::move(out), {a}, [a, rows, cols](Tape& t, const Array& g, const Array&) {
    Array& ga = t.grad_buffer(a);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c] * inv;
    }
  });
}

Var pick(Var a, std::size_t flat_index) {
  const Array& x = a.value();
  if (flat_index >= x.size()) {
    throw DimensionError("pick: index " + std::to_string(flat_index) + " outside " +
                         shape_string(x.shape()));
  }
  return a.tape().push(Array::scalar(x[flat_index]), {a}, [a, flat_index](Tape& t, const Array& g, const Array&) {
    t.grad_buffer(a)[flat_index] += g[0];
  });
}

Var segment_attention(Var q, Var k, Var v, const std::vector<std::size_t>& starts,
                      std::size_t heads, double scale_factor) {
  Tape& tape = same_tape(q, k);
  same_tape(q, v);
  const Array& qa = q.value();
  const Array& ka = k.value();
  const Array& va = v.value();
  const std::size_t rows = qa.rows();
  const std::size_t d = qa.cols();
  if (ka.rows() != rows || va.rows() != rows || ka.cols() != d || va.cols() != d) {
    throw DimensionError("segment_attention: q " + shape_string(qa.shape()) + ", k " +
                         shape_string(ka.shape()) + ", v " + shape_string(va.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("segment_attention: width " + std::to_string(d) +
                         " not divisible by heads " + std::to_string(heads));
  }
  if (starts.empty() || starts[0] != 0) {
    throw DimensionError("segment_attention: segments must start at row 0");
  }
  std::vector<std::size_t> bounds = starts;
  bounds.push_back(rows);
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    if (bounds[s] >= bounds[s + 1]) throw DimensionError("segment_attention: empty or unordered segment");
  }
  const std::size_t dk = d / heads;
  const auto segments = bounds.size() - 1;
  auto weights = std::make_shared<std::vector<RowMat>>(segments * heads);
  Array out(qa.shape());
  const auto Q = mat(qa);
  const auto K = mat(ka);
  const auto V = mat(va);
  auto O = mat(out);
  for (std::size_t s = 0; s < segments; ++s) {
    const auto r0 = static_cast<Eigen::Index>(bounds[s]);
    const auto m = static_cast<Eigen::Index>(bounds[s + 1] - bounds[s]);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h * dk);
      const auto w = static_cast<Eigen::Index>(dk);
      RowMat scores = (Q.block(r0, c0, m, w) * K.block(r0, c0, m, w).transpose()) * scale_factor;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double mx = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - mx).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      O.block(r0, c0, m, w).noalias() = scores * V.block(r0, c0, m, w);
      (*weights)[s * heads + h] = std::move(scores);
    }
  }
  return tape.push(std::move(out), {q, k, v},
                   [q, k, v, bounds, heads, dk, scale_factor, weights](Tape& t, const Array& g, const Array&) {
                     const auto Q = mat(t.value(q));
                     const auto K = mat(t.value(k));
                     const auto V = mat(t.value(v));
                     const auto G = mat(g);
                     const bool need_q = t.needs_grad(q);
                     const bool need_k = t.needs_grad(k);
                     const bool need_v = t.needs_grad(v);
                     Array* gq = need_q ? &t.grad_buffer(q) : nullptr;
                     Array* gk = need_k ? &t.grad_buffer(k) : nullptr;
                     Array* gv = need_v ? &t.grad_buffer(v) : nullptr;
                     for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
                       const auto r0 = static_cast<Eigen::Index>(bounds[s]);
                       const auto m = static_cast<Eigen::Index>(bounds[s + 1] - bounds[s]);
                       for (std::size_t h = 0; h < heads; ++h) {
                         const auto c0 = static_cast<Eigen::Index>(h * dk);
                         const auto w = static_cast<Eigen::Index>(dk);
                         const RowMat& A = (*weights)[s * heads + h];
                         const auto Go = G.block(r0, c0, m, w);
                         if (gv) mat(*gv).block(r0, c0, m, w).noalias() += A.transpose() * Go;
                         if (!gq && !gk) continue;
                         RowMat dA = Go * V.block(r0, c0, m, w).transpose();
                         const Eigen::VectorXd rowdot = (dA.array() * A.array()).rowwise().sum();
                         RowMat dS = (A.array() * (dA.array().colwise() - rowdot.array())).matrix();
                         dS *= scale_factor;
                         if (gq) mat(*gq).block(r0, c0, m, w).noalias() += dS * K.block(r0, c0, m, w);
                         if (gk) mat(*gk).block(r0, c0, m, w).noalias() += dS.transpose() * Q.block(r0, c0, m, w);
                       }
                     }
                   });
}

}  // namespace csp::nd
