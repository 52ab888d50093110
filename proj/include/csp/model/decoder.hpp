#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "csp/model/encoder.hpp"

namespace csp::model {

/// Attention-dynamic model sizes. The decoder reuses d_h and the head count
/// (for its d_k = d_h / heads scaling).
struct ModelConfig {
  EncoderConfig encoder;

  std::size_t d_h() const { return encoder.d_h; }
  double key_scale() const;  // 1 / sqrt(d_h / heads)
};

/// Registers "decoder.*" parameters.
void add_decoder_params(ParamStore& store, const ModelConfig& config, Rng& rng);

/// Fresh parameters: weight matrices uniform(-1/sqrt(d_h), 1/sqrt(d_h)),
/// biases zero, layer-norm gains one.
ParamStore init_model(const ModelConfig& config, std::uint64_t seed);

/// Mutable per-rollout bookkeeping.
struct DecoderState {
  std::vector<char> visited;
  std::vector<double> g;     // guidance, in (0, 1], non-increasing
  Var hidden;                // GRU state d_t, [1 x d_h]
  std::size_t step = 0;      // number of cities chosen so far
  std::vector<City> chosen;
  std::vector<char> covered;  // visited or covered by a visited city
  std::size_t covered_count = 0;
};

DecoderState init_state(const Instance& instance, const EncoderOutput& encoded);

/// Shrinks g over the cities covered by `visited_city`: the j-th nearest of
/// N covered cities is scaled by j / N. Also marks coverage. Throws
/// std::out_of_range for an invalid city.
void update_guidance(DecoderState& state, const Instance& instance, City visited_city);

/// Decoder projections of one encoded instance, computed once per rollout.
struct DecoderContext {
  const Instance* instance = nullptr;
  EncoderOutput encoded;
  Var key_proj;    // h W^K, [n x d_h]
  Var attn_keys;   // (h W^K1)^T, [d_h x n]
  Var attn_values; // h W^V1, [n x d_h]
  Var w_g;         // [1 x d_h]
  Var start;       // learned first GRU input, [1 x d_h]
  nd::GruWeights gru;
  double scale = 1.0;
};

DecoderContext make_context(Tape& tape, ParamStore& params, const ModelConfig& config,
                            const Instance& instance, const EncoderOutput& encoded);

/// k_i = (h_i W^K) * (g_i w_G), elementwise.
Var build_keys(const DecoderContext& ctx, const std::vector<double>& g);

/// Advances the GRU with the previous city's embedding (or the start token
/// on the first step) and attends over the static embeddings. Updates
/// state.hidden and returns the query [1 x d_h].
Var build_query(DecoderState& state, const DecoderContext& ctx, std::optional<City> prev_city);

/// Log-probabilities [1 x n] of the next city; masked cities are -inf.
/// Throws std::domain_error if every city is masked.
Var step_log_probabilities(Var query, Var keys, const std::vector<char>& masked, double scale);

/// exp of step_log_probabilities; masked entries are exactly zero.
std::vector<double> step_probabilities(Var query, Var keys, const std::vector<char>& masked,
                                       double scale);

enum class DecodeMode { kGreedy, kSample, kForced };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  std::uint64_t seed = 0;
  std::vector<City> forced;    // action sequence for kForced
  std::vector<char> blocked;   // cities that may never be selected
  bool record_steps = false;
};

struct Rollout {
  Tour tour;
  double log_prob = 0.0;
  double cost = 0.0;
  std::size_t steps = 0;
  Var log_prob_var;  // differentiable sum of selected log-probabilities
  // Filled when record_steps is set.
  std::vector<std::vector<double>> step_probs;
  std::vector<std::vector<double>> guidance;  // g after each step
};

/// Decodes on `tape` until every city is visited or covered. Greedy ties
/// resolve to the lower index.
Rollout decode(Tape& tape, ParamStore& params, const ModelConfig& config,
               const Instance& instance, const EncoderOutput& encoded,
               const DecodeOptions& options);

/// Encodes and decodes on a private tape that records no gradients.
Rollout rollout(const Instance& instance, ParamStore& params, const ModelConfig& config,
                const DecodeOptions& options = {});

}  // namespace csp::model
