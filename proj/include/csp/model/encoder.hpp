#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "csp/core.hpp"
#include "csp/nd/layers.hpp"
#include "csp/rng.hpp"

namespace csp::model {

using nd::ParamStore;
using nd::Tape;
using nd::Var;

struct EncoderConfig {
  std::size_t d_h = 128;
  std::size_t num_layers = 3;
  std::size_t num_heads = 8;
  std::size_t d_ff = 512;

  /// Throws std::invalid_argument unless all sizes are positive and d_h is a
  /// multiple of num_heads.
  void validate() const;
  std::size_t head_width() const { return d_h / num_heads; }
};

/// Registers "encoder.*" parameters.
void add_encoder_params(ParamStore& store, const EncoderConfig& config, Rng& rng);

std::string encoder_layer_prefix(std::size_t layer);

struct EncoderOutput {
  Var h_final;  // [n x d_h] static embeddings
  Var h_mean;   // [1 x d_h] row mean of h_final
};

/// Row-wise affine map of the coordinates, [n x d_h].
Var embed_cities(Tape& tape, ParamStore& params, const std::vector<Point>& coords);

/// Multi-head self-attention of one layer. `segments` lists the first row of
/// each independent instance when several instances are stacked; attention
/// never crosses a segment boundary.
Var mha(Var h, Tape& tape, ParamStore& params, const std::string& layer_prefix,
        const EncoderConfig& config, const std::vector<std::size_t>& segments);

/// Norm(h + MHA(h)) followed by Norm(t + FF(t)).
Var encoder_layer(Var h, Tape& tape, ParamStore& params, const std::string& layer_prefix,
                  const EncoderConfig& config, const std::vector<std::size_t>& segments);

EncoderOutput encode(Tape& tape, ParamStore& params, const Instance& instance,
                     const EncoderConfig& config);

/// Encodes several instances in one stacked pass. Results equal separate
/// encode() calls up to floating-point summation order.
std::vector<EncoderOutput> encode_batch(Tape& tape, ParamStore& params,
                                        const std::vector<const Instance*>& instances,
                                        const EncoderConfig& config);

}  // namespace csp::model
