#include "csp/model/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace csp::model {

double ModelConfig::key_scale() const {
  return 1.0 / std::sqrt(static_cast<double>(encoder.head_width()));
}

void add_decoder_params(ParamStore& store, const ModelConfig& config, Rng& rng) {
  const std::size_t d = config.d_h();
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  store.add_uniform("decoder.start", {1, d}, bound, rng);
  nd::add_gru_params(store, "decoder.gru.", d, rng);
  store.add_uniform("decoder.w_k1", {d, d}, bound, rng);
  store.add_uniform("decoder.w_v1", {d, d}, bound, rng);
  store.add_uniform("decoder.w_key", {d, d}, bound, rng);
  store.add_uniform("decoder.w_g", {1, d}, bound, rng);
}

ParamStore init_model(const ModelConfig& config, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  add_encoder_params(store, config.encoder, rng);
  add_decoder_params(store, config, rng);
  return store;
}

DecoderState init_state(const Instance& instance, const EncoderOutput& encoded) {
  DecoderState s;
  const std::size_t n = instance.n();
  s.visited.assign(n, 0);
  s.g.assign(n, 1.0);
  s.covered.assign(n, 0);
  s.hidden = encoded.h_mean;
  return s;
}

void update_guidance(DecoderState& state, const Instance& instance, City visited_city) {
  if (visited_city >= instance.n()) {
    throw std::out_of_range("update_guidance: city " + std::to_string(visited_city) +
                            " out of range for n=" + std::to_string(instance.n()));
  }
  std::vector<City> covered = instance.cover_set(visited_city);
  std::sort(covered.begin(), covered.end(), [&](City a, City b) {
    const double da = instance.dist(visited_city, a);
    const double db = instance.dist(visited_city, b);
    return da < db || (da == db && a < b);
  });
  const double count = static_cast<double>(covered.size());
  for (std::size_t rank = 0; rank < covered.size(); ++rank) {
    state.g[covered[rank]] *= static_cast<double>(rank + 1) / count;
  }
  const auto mark = [&](City c) {
    if (!state.covered[c]) {
      state.covered[c] = 1;
      ++state.covered_count;
    }
  };
  mark(visited_city);
  for (City c : covered) mark(c);
}

DecoderContext make_context(Tape& tape, ParamStore& params, const ModelConfig& config,
                            const Instance& instance, const EncoderOutput& encoded) {
  DecoderContext ctx;
  ctx.instance = &instance;
  ctx.encoded = encoded;
  const Var h = encoded.h_final;
  ctx.key_proj = nd::matmul(h, tape.param(params, "decoder.w_key"));
  ctx.attn_keys = nd::transpose(nd::matmul(h, tape.param(params, "decoder.w_k1")));
  ctx.attn_values = nd::matmul(h, tape.param(params, "decoder.w_v1"));
  ctx.w_g = tape.param(params, "decoder.w_g");
  ctx.start = tape.param(params, "decoder.start");
  ctx.gru = nd::GruWeights::bind(tape, params, "decoder.gru.");
  ctx.scale = config.key_scale();
  return ctx;
}

Var build_keys(const DecoderContext& ctx, const std::vector<double>& g) {
  Tape& tape = ctx.key_proj.tape();
  const Var column = tape.constant(nd::Array({g.size(), 1}, g));
  const Var dynamic = nd::matmul(column, ctx.w_g);  // G_i = g_i w_G
  return nd::mul(ctx.key_proj, dynamic);
}

Var build_query(DecoderState& state, const DecoderContext& ctx, std::optional<City> prev_city) {
  Var input;
  if (state.step == 0) {
    input = ctx.start;
  } else {
    if (!prev_city) throw std::invalid_argument("build_query: previous city required after step 1");
    input = nd::gather_rows(ctx.encoded.h_final, {*prev_city});
  }
  const nd::GruOutput out = nd::gru_cell(input, state.hidden, ctx.gru);
  state.hidden = out.hidden;
  const Var weights = nd::softmax_rows(nd::scale(nd::matmul(out.hidden, ctx.attn_keys), ctx.scale));
  return nd::matmul(weights, ctx.attn_values);
}

Var step_log_probabilities(Var query, Var keys, const std::vector<char>& masked, double scale) {
  const std::size_t n = keys.value().rows();
  if (masked.size() != n) {
    throw nd::DimensionError("step_log_probabilities: mask has " + std::to_string(masked.size()) +
                             " entries for " + std::to_string(n) + " cities");
  }
  if (std::all_of(masked.begin(), masked.end(), [](char m) { return m != 0; })) {
    throw std::domain_error("step_log_probabilities: every city is masked");
  }
  const Var logits = nd::scale(nd::matmul(query, nd::transpose(keys)), scale);  // [1 x n]
  return nd::log_softmax_rows(logits, &masked);
}

std::vector<double> step_probabilities(Var query, Var keys, const std::vector<char>& masked,
                                       double scale) {
  const Var lp = step_log_probabilities(query, keys, masked, scale);
  std::vector<double> p(lp.value().size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(lp.value()[i]);
  return p;
}

namespace {

City select_city(const nd::Array& log_probs, const DecodeOptions& options, std::size_t step,
                 Rng& rng) {
  const std::size_t n = log_probs.size();
  switch (options.mode) {
    case DecodeMode::kGreedy: {
      City best = n;
      for (City i = 0; i < n; ++i) {
        if (std::isinf(log_probs[i])) continue;
        if (best == n || log_probs[i] > log_probs[best]) best = i;
      }
      return best;
    }
    case DecodeMode::kSample: {
      const double u = rng.uniform();
      double cumulative = 0.0;
      City last = n;
      for (City i = 0; i < n; ++i) {
        if (std::isinf(log_probs[i])) continue;
        cumulative += std::exp(log_probs[i]);
        last = i;
        if (u < cumulative) return i;
      }
      return last;
    }
    case DecodeMode::kForced: {
      if (step >= options.forced.size()) {
        throw std::invalid_argument("forced decode: action sequence ended before coverage");
      }
      const City c = options.forced[step];
      if (c >= n || std::isinf(log_probs[c])) {
        throw std::invalid_argument("forced decode: city " + std::to_string(c) +
                                    " is not selectable at step " + std::to_string(step));
      }
      return c;
    }
  }
  return n;
}

}  // namespace

Rollout decode(Tape& tape, ParamStore& params, const ModelConfig& config,
               const Instance& instance, const EncoderOutput& encoded,
               const DecodeOptions& options) {
  const std::size_t n = instance.n();
  if (!options.blocked.empty() && options.blocked.size() != n) {
    throw std::invalid_argument("decode: blocked mask must have one entry per city");
  }
  const DecoderContext ctx = make_context(tape, params, config, instance, encoded);
  DecoderState state = init_state(instance, encoded);
  Rng rng(options.seed);
  Rollout out;
  std::vector<Var> picked;
  std::optional<City> prev;
  std::vector<char> masked(n, 0);
  while (state.covered_count < n) {
    for (City i = 0; i < n; ++i) {
      masked[i] = state.visited[i] || (!options.blocked.empty() && options.blocked[i]);
    }
    const Var query = build_query(state, ctx, prev);
    const Var keys = build_keys(ctx, state.g);
    const Var log_probs = step_log_probabilities(query, keys, masked, ctx.scale);
    const City city = select_city(log_probs.value(), options, state.step, rng);
    if (options.record_steps) {
      std::vector<double> p(n);
      for (City i = 0; i < n; ++i) p[i] = std::exp(log_probs.value()[i]);
      out.step_probs.push_back(std::move(p));
    }
    picked.push_back(nd::pick(log_probs, city));
    out.log_prob += log_probs.value()[city];
    state.visited[city] = 1;
    state.chosen.push_back(city);
    update_guidance(state, instance, city);
    ++state.step;
    prev = city;
    if (options.record_steps) out.guidance.push_back(state.g);
  }
  out.tour.order = state.chosen;
  out.steps = state.step;
  out.cost = tour_length(instance, out.tour);
  out.log_prob_var = nd::sum(nd::concat_rows(picked));
  return out;
}

Rollout rollout(const Instance& instance, ParamStore& params, const ModelConfig& config,
                const DecodeOptions& options) {
  Tape tape(false);
  const EncoderOutput encoded = encode(tape, params, instance, config.encoder);
  Rollout r = decode(tape, params, config, instance, encoded, options);
  r.log_prob_var = Var{};
  return r;
}

}  // namespace csp::model
