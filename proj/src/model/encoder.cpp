#include "csp/model/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace csp::model {

void EncoderConfig::validate() const {
  if (d_h == 0 || num_heads == 0 || d_ff == 0) {
    throw std::invalid_argument("encoder sizes must be positive");
  }
  if (d_h % num_heads != 0) {
    throw std::invalid_argument("d_h=" + std::to_string(d_h) + " is not divisible by " +
                                std::to_string(num_heads) + " heads");
  }
  if (d_h < 2) throw std::invalid_argument("d_h must be at least 2 for layer normalisation");
}

std::string encoder_layer_prefix(std::size_t layer) {
  return "encoder.layer" + std::to_string(layer) + ".";
}

void add_encoder_params(ParamStore& store, const EncoderConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.d_h;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  store.add_uniform("encoder.embed.weight", {2, d}, bound, rng);
  store.add("encoder.embed.bias", nd::Array({d}, 0.0));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = encoder_layer_prefix(l);
    for (const char* w : {"mha.w_q", "mha.w_k", "mha.w_v", "mha.w_o"}) {
      store.add_uniform(p + w, {d, d}, bound, rng);
    }
    store.add(p + "norm1.gain", nd::Array({d}, 1.0));
    store.add(p + "norm1.bias", nd::Array({d}, 0.0));
    store.add_uniform(p + "ff.w1", {d, config.d_ff}, bound, rng);
    store.add(p + "ff.b1", nd::Array({config.d_ff}, 0.0));
    store.add_uniform(p + "ff.w2", {config.d_ff, d}, bound, rng);
    store.add(p + "ff.b2", nd::Array({d}, 0.0));
    store.add(p + "norm2.gain", nd::Array({d}, 1.0));
    store.add(p + "norm2.bias", nd::Array({d}, 0.0));
  }
}

Var embed_cities(Tape& tape, ParamStore& params, const std::vector<Point>& coords) {
  if (coords.empty()) throw std::invalid_argument("embed_cities: no cities");
  nd::Array x({coords.size(), 2});
  for (std::size_t i = 0; i < coords.size(); ++i) {
    x.at(i, 0) = coords[i].x;
    x.at(i, 1) = coords[i].y;
  }
  return nd::linear(tape.constant(std::move(x)), tape.param(params, "encoder.embed.weight"),
                    tape.param(params, "encoder.embed.bias"));
}

Var mha(Var h, Tape& tape, ParamStore& params, const std::string& layer_prefix,
        const EncoderConfig& config, const std::vector<std::size_t>& segments) {
  const auto w = [&](const char* name) { return tape.param(params, layer_prefix + name); };
  const Var q = nd::matmul(h, w("mha.w_q"));
  const Var k = nd::matmul(h, w("mha.w_k"));
  const Var v = nd::matmul(h, w("mha.w_v"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.head_width()));
  const Var heads = nd::segment_attention(q, k, v, segments, config.num_heads, scale);
  return nd::matmul(heads, w("mha.w_o"));
}

Var encoder_layer(Var h, Tape& tape, ParamStore& params, const std::string& layer_prefix,
                  const EncoderConfig& config, const std::vector<std::size_t>& segments) {
  const auto w = [&](const char* name) { return tape.param(params, layer_prefix + name); };
  const Var attended = nd::add(h, mha(h, tape, params, layer_prefix, config, segments));
  const Var tmp = nd::layer_norm(attended, w("norm1.gain"), w("norm1.bias"));
  const Var hidden = nd::relu(nd::linear(tmp, w("ff.w1"), w("ff.b1")));
  const Var ff = nd::linear(hidden, w("ff.w2"), w("ff.b2"));
  return nd::layer_norm(nd::add(tmp, ff), w("norm2.gain"), w("norm2.bias"));
}

EncoderOutput encode(Tape& tape, ParamStore& params, const Instance& instance,
                     const EncoderConfig& config) {
  Var h = embed_cities(tape, params, instance.coords());
  const std::vector<std::size_t> segments{0};
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    h = encoder_layer(h, tape, params, encoder_layer_prefix(l), config, segments);
  }
  return EncoderOutput{h, nd::mean_rows(h)};
}

std::vector<EncoderOutput> encode_batch(Tape& tape, ParamStore& params,
                                        const std::vector<const Instance*>& instances,
                                        const EncoderConfig& config) {
  if (instances.empty()) return {};
  if (instances.size() == 1) return {encode(tape, params, *instances[0], config)};
  std::vector<Point> coords;
  std::vector<std::size_t> segments;
  for (const Instance* inst : instances) {
    segments.push_back(coords.size());
    coords.insert(coords.end(), inst->coords().begin(), inst->coords().end());
  }
  Var h = embed_cities(tape, params, coords);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    h = encoder_layer(h, tape, params, encoder_layer_prefix(l), config, segments);
  }
  std::vector<EncoderOutput> out;
  out.reserve(instances.size());
  for (std::size_t b = 0; b < instances.size(); ++b) {
    const Var rows = nd::slice_rows(h, segments[b], instances[b]->n());
    out.push_back(EncoderOutput{rows, nd::mean_rows(rows)});
  }
  return out;
}

}  // namespace csp::model
