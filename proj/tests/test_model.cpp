#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csp/model/decoder.hpp"
#include "csp/nd/ops.hpp"
#include "oracles.hpp"

using namespace csp;
using namespace csp::model;
using nd::Array;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Array& a) {
  Matrix m(a.rows(), std::vector<double>(a.cols()));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) m[r][c] = a.at(r, c);
  }
  return m;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

std::vector<double> softmax(std::vector<double> u) {
  const double top = *std::max_element(u.begin(), u.end());
  double total = 0.0;
  for (double& v : u) total += (v = std::exp(v - top));
  for (double& v : u) v /= total;
  return u;
}

double max_abs_diff(const Array& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r) {
    for (std::size_t c = 0; c < b[r].size(); ++c) worst = std::max(worst, std::abs(a.at(r, c) - b[r][c]));
  }
  return worst;
}

ModelConfig small_config(std::size_t layers = 2) {
  ModelConfig c;
  c.encoder = EncoderConfig{16, layers, 4, 32};
  return c;
}

Instance random_instance(std::size_t n, std::size_t k, std::uint64_t seed) {
  return generate_instance(n, KNearest{k}, seed);
}

Array random_rows(std::size_t n, std::size_t d, Rng& rng) {
  Array a({n, d});
  for (double& v : a.values()) v = rng.uniform(-1.0, 1.0);
  return a;
}

}  // namespace

TEST_CASE("embed_cities") {
  ParamStore params = init_model(small_config(), 1);
  const Instance inst = random_instance(7, 2, 3);
  Tape tape(false);
  const Array h = embed_cities(tape, params, inst.coords()).value();
  const Array& w = params.value("encoder.embed.weight");
  const Array& b = params.value("encoder.embed.bias");
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t c = 0; c < 16; ++c) {
      const double expect = inst.coord(i).x * w.at(0, c) + inst.coord(i).y * w.at(1, c) + b[c];
      CHECK(std::abs(h.at(i, c) - expect) <= 1e-15);
    }
  }

  params.at("encoder.embed.weight").value.fill(0.0);
  for (std::size_t c = 0; c < 16; ++c) params.at("encoder.embed.bias").value[c] = 0.1 * c;
  Tape fresh(false);
  const Array flat = embed_cities(fresh, params, inst.coords()).value();
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t c = 0; c < 16; ++c) CHECK(flat.at(i, c) == 0.1 * c);
  }
  CHECK(embed_cities(tape, params, {{0.3, 0.4}}).shape() == nd::Shape{1, 16});
}

TEST_CASE("multi-head attention") {
  const ModelConfig config = small_config();
  ParamStore params = init_model(config, 2);
  const std::string p = encoder_layer_prefix(0);
  Rng rng(3);

  SUBCASE("single city attends to itself") {
    Tape tape(false);
    const Array h = random_rows(1, 16, rng);
    const Array out = mha(tape.constant(h), tape, params, p, config.encoder, {0}).value();
    const Matrix hv = multiply(to_matrix(h), to_matrix(params.value(p + "mha.w_v")));
    const Matrix expect = multiply(hv, to_matrix(params.value(p + "mha.w_o")));
    CHECK(max_abs_diff(out, expect) <= 1e-12);
  }
  SUBCASE("identical rows give identical outputs") {
    Tape tape(false);
    Array h({5, 16});
    const Array row = random_rows(1, 16, rng);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t c = 0; c < 16; ++c) h.at(i, c) = row[c];
    }
    const Array out = mha(tape.constant(h), tape, params, p, config.encoder, {0}).value();
    for (std::size_t i = 1; i < 5; ++i) {
      for (std::size_t c = 0; c < 16; ++c) CHECK(out.at(i, c) == out.at(0, c));
    }
  }
  SUBCASE("matches a loop reference") {
    Tape tape(false);
    const Array h = random_rows(4, 16, rng);
    const Array out = mha(tape.constant(h), tape, params, p, config.encoder, {0}).value();
    const Matrix hm = to_matrix(h);
    const Matrix q = multiply(hm, to_matrix(params.value(p + "mha.w_q")));
    const Matrix k = multiply(hm, to_matrix(params.value(p + "mha.w_k")));
    const Matrix v = multiply(hm, to_matrix(params.value(p + "mha.w_v")));
    const std::size_t dk = 4;
    Matrix heads(4, std::vector<double>(16, 0.0));
    for (std::size_t m = 0; m < 4; ++m) {
      for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> u(4, 0.0);
        for (std::size_t j = 0; j < 4; ++j) {
          for (std::size_t c = m * dk; c < (m + 1) * dk; ++c) u[j] += q[i][c] * k[j][c];
          u[j] /= std::sqrt(static_cast<double>(dk));
        }
        const auto a = softmax(u);
        for (std::size_t c = m * dk; c < (m + 1) * dk; ++c) {
          for (std::size_t j = 0; j < 4; ++j) heads[i][c] += a[j] * v[j][c];
        }
      }
    }
    CHECK(max_abs_diff(out, multiply(heads, to_matrix(params.value(p + "mha.w_o")))) <= 1e-12);
  }
}

TEST_CASE("encoder is permutation equivariant") {
  const ModelConfig config = small_config();
  ParamStore params = init_model(config, 4);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Instance inst = random_instance(9, 3, seed);
    std::vector<City> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed + 100);
    for (std::size_t i = 8; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<Point> shuffled;
    for (City c : perm) shuffled.push_back(inst.coord(c));
    const Instance other(shuffled, KNearest{3}, seed);

    Tape tape(false);
    const EncoderOutput a = encode(tape, params, inst, config.encoder);
    const EncoderOutput b = encode(tape, params, other, config.encoder);
    for (std::size_t i = 0; i < 9; ++i) {
      for (std::size_t c = 0; c < 16; ++c) {
        CHECK(std::abs(b.h_final.value().at(i, c) - a.h_final.value().at(perm[i], c)) <= 1e-12);
      }
    }
    for (std::size_t c = 0; c < 16; ++c) {
      CHECK(std::abs(a.h_mean.value()[c] - b.h_mean.value()[c]) <= 1e-12);
      double mean = 0.0;
      for (std::size_t i = 0; i < 9; ++i) mean += a.h_final.value().at(i, c) / 9.0;
      CHECK(std::abs(a.h_mean.value()[c] - mean) <= 1e-12);
    }
    CHECK(a.h_final.value().all_finite());
  }
}

TEST_CASE("encoder without layers returns the embedding") {
  const ModelConfig config = small_config(0);
  ParamStore params = init_model(config, 5);
  const Instance inst = random_instance(6, 2, 1);
  Tape tape(false);
  CHECK(encode(tape, params, inst, config.encoder).h_final.value() ==
        embed_cities(tape, params, inst.coords()).value());
}

TEST_CASE("encoding is deterministic and batch encoding agrees") {
  const ModelConfig config = small_config();
  ParamStore params = init_model(config, 6);
  std::vector<Instance> insts;
  for (std::uint64_t s = 0; s < 4; ++s) insts.push_back(random_instance(5 + s, 2, s));
  std::vector<const Instance*> ptrs;
  for (const auto& i : insts) ptrs.push_back(&i);
  Tape tape(false);
  const auto batch = encode_batch(tape, params, ptrs, config.encoder);
  for (std::size_t b = 0; b < insts.size(); ++b) {
    const EncoderOutput one = encode(tape, params, insts[b], config.encoder);
    const EncoderOutput two = encode(tape, params, insts[b], config.encoder);
    CHECK(one.h_final.value() == two.h_final.value());
    for (std::size_t i = 0; i < one.h_final.value().size(); ++i) {
      CHECK(std::abs(one.h_final.value()[i] - batch[b].h_final.value()[i]) <= 1e-12);
    }
  }
}

TEST_CASE("encoder gradients match finite differences") {
  const ModelConfig config = small_config();
  ParamStore params = init_model(config, 7);
  const Instance inst = random_instance(5, 2, 8);
  const auto objective = [&](ParamStore& store) {
    Tape tape(false);
    return nd::mean(encode(tape, store, inst, config.encoder).h_final).value()[0];
  };
  Tape tape;
  tape.backward(nd::mean(encode(tape, params, inst, config.encoder).h_final));
  Rng rng(9);
  for (const std::string& name : {encoder_layer_prefix(0) + "mha.w_q", std::string("encoder.embed.weight")}) {
    CAPTURE(name);
    const Array grad = params.at(name).grad;
    for (int s = 0; s < 15; ++s) {
      const std::size_t coord = rng.below(grad.size());
      const auto f = [&](const std::vector<double>& flat) {
        ParamStore copy = params;
        copy.at(name).value = Array(grad.shape(), flat);
        return objective(copy);
      };
      const auto& v = params.value(name).values();
      const double numeric =
          oracle::central_difference(f, std::vector<double>(v.begin(), v.end()), coord, 1e-6);
      CHECK(oracle::relative_error(grad[coord], numeric) <= 1e-5);
    }
  }
}

TEST_CASE("guidance update") {
  SUBCASE("one covered city keeps its guidance") {
    const Instance inst({{0, 0}, {0.1, 0}, {0.9, 0}}, FixedRadius{0.2});
    DecoderState s;
    s.g.assign(3, 1.0);
    s.covered.assign(3, 0);
    update_guidance(s, inst, 0);
    CHECK(s.g == std::vector<double>{1.0, 1.0, 1.0});
    CHECK(s.covered_count == 2);
  }
  SUBCASE("nearest of two is halved") {
    const Instance inst({{0, 0}, {0.3, 0}, {0, 0.1}}, KNearest{2});
    DecoderState s;
    s.g.assign(3, 1.0);
    s.covered.assign(3, 0);
    update_guidance(s, inst, 0);
    CHECK(s.g == std::vector<double>{1.0, 1.0, 0.5});
    CHECK_THROWS_AS(update_guidance(s, inst, 3), std::out_of_range);
  }
  SUBCASE("factors compose") {
    const Instance inst({{0.5, 0.5}, {0.5, 0.6}, {0.9, 0.9}, {0.1, 0.1}, {0.9, 0.1}}, KNearest{4});
    DecoderState s;
    s.g = {1.0, 0.5, 1.0, 1.0, 1.0};
    s.covered.assign(5, 0);
    update_guidance(s, inst, 0);
    CHECK(s.g[1] == 0.125);
  }
}

TEST_CASE("guidance after a full rollout equals a replay from scratch") {
  const ModelConfig config = small_config();
  ParamStore params = init_model(config, 10);
  const Instance inst = random_instance(8, 2, 11);
  DecodeOptions options;
  options.mode = DecodeMode::kSample;
  options.seed = 3;
  options.record_steps = true;
  const Rollout r = rollout(inst, params, config, options);
  const auto sets = oracle::k_nearest_by_full_sort(inst.coords(), 2);
  for (std::size_t t = 0; t < r.tour.order.size(); ++t) {
    std::vector<double> g(8, 1.0);
    for (std::size_t u = 0; u <= t; ++u) {
      const City v = r.tour.order[u];
      std::vector<std::pair<double, City>> ranked;
      for (City j : sets[v]) {
        ranked.emplace_back(oracle::plain_distance(inst.coord(v), inst.coord(j)), j);
      }
      std::sort(ranked.begin(), ranked.end());
      for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
        g[ranked[rank].second] *= static_cast<double>(rank + 1) / ranked.size();
      }
    }
    CHECK(r.guidance[t] == g);
  }
}

TEST_CASE("keys, query and step probabilities match loop references") {
  const ModelConfig config = small_config();
  ParamStore params = init_model(config, 12);
  const Instance inst = random_instance(5, 2, 13);
  Tape tape(false);
  const EncoderOutput enc = encode(tape, params, inst, config.encoder);
  const DecoderContext ctx = make_context(tape, params, config, inst, enc);
  const Matrix h = to_matrix(enc.h_final.value());
  const Matrix hk = multiply(h, to_matrix(params.value("decoder.w_key")));
  const Array& wg = params.value("decoder.w_g");

  const std::vector<double> g{1.0, 0.5, 0.25, 0.0, 0.75};
  const Array keys = build_keys(ctx, g).value();
  Matrix expect_keys(5, std::vector<double>(16));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 16; ++c) expect_keys[i][c] = hk[i][c] * (g[i] * wg[c]);
  }
  CHECK(max_abs_diff(keys, expect_keys) <= 1e-12);
  for (std::size_t c = 0; c < 16; ++c) CHECK(keys.at(3, c) == 0.0);

  DecoderState state = init_state(inst, enc);
  CHECK(state.g == std::vector<double>(5, 1.0));
  CHECK(state.covered_count == 0);
  CHECK(state.hidden.value() == enc.h_mean.value());
  CHECK_THROWS_AS(
      [&] {
        DecoderState late = init_state(inst, enc);
        late.step = 1;
        build_query(late, ctx, std::nullopt);
      }(),
      std::invalid_argument);
  const Var query = build_query(state, ctx, std::nullopt);
  const Matrix d = to_matrix(state.hidden.value());
  const Matrix k1 = multiply(h, to_matrix(params.value("decoder.w_k1")));
  const Matrix v1 = multiply(h, to_matrix(params.value("decoder.w_v1")));
  std::vector<double> u(5, 0.0);
  for (std::size_t j = 0; j < 5; ++j) {
    for (std::size_t c = 0; c < 16; ++c) u[j] += d[0][c] * k1[j][c];
    u[j] /= std::sqrt(4.0);
  }
  const auto a = softmax(u);
  Matrix expect_q(1, std::vector<double>(16, 0.0));
  for (std::size_t c = 0; c < 16; ++c) {
    for (std::size_t j = 0; j < 5; ++j) expect_q[0][c] += a[j] * v1[j][c];
  }
  CHECK(max_abs_diff(query.value(), expect_q) <= 1e-12);

  const std::vector<char> masked{0, 1, 0, 0, 1};
  const auto p = step_probabilities(query, build_keys(ctx, state.g), masked, ctx.scale);
  const Matrix full_keys = multiply(h, to_matrix(params.value("decoder.w_key")));
  std::vector<double> logits;
  std::vector<City> open{0, 2, 3};
  for (City i : open) {
    double s = 0.0;
    for (std::size_t c = 0; c < 16; ++c) s += expect_q[0][c] * full_keys[i][c] * wg[c];
    logits.push_back(s / 2.0);
  }
  const auto expect_p = softmax(logits);
  CHECK(p[1] == 0.0);
  CHECK(p[4] == 0.0);
  for (std::size_t t = 0; t < open.size(); ++t) CHECK(std::abs(p[open[t]] - expect_p[t]) <= 1e-12);
  CHECK_THROWS_AS(step_probabilities(query, build_keys(ctx, state.g), std::vector<char>(5, 1), ctx.scale), std::domain_error);
}

TEST_CASE("query and probabilities in degenerate cases") {
  const ModelConfig config = small_config();
  ParamStore params = init_model(config, 14);
  {
    const Instance one({{0.2, 0.7}}, FixedRadius{0.1});
    Tape tape(false);
    const EncoderOutput enc = encode(tape, params, one, config.encoder);
    const DecoderContext ctx = make_context(tape, params, config, one, enc);
    DecoderState state = init_state(one, enc);
    CHECK(build_query(state, ctx, std::nullopt).value() == ctx.attn_values.value());
  }
  {
    Tape tape(false);
    const Array q = Array::row({0.3, -0.2});
    const Array k({3, 2}, {1.0, 1.0, 1.0, 1.0, 5.0, 0.0});
    const auto p = step_probabilities(tape.constant(q), tape.constant(k), {0, 0, 1}, 0.5);
    CHECK(p[0] == p[1]);
    CHECK(std::abs(p[0] - 0.5) <= 1e-15);
    CHECK(p[2] == 0.0);
  }
}

TEST_CASE("rollouts") {
  const ModelConfig config = small_config();
  ParamStore params = init_model(config, 15);
  const Instance inst = random_instance(12, 3, 16);
  const Rollout a = rollout(inst, params, config);
  const Rollout b = rollout(inst, params, config);
  CHECK(a.tour == b.tour);
  CHECK(a.log_prob == b.log_prob);

  DecodeOptions sample{DecodeMode::kSample, 77, {}, {}, true};
  const Rollout s1 = rollout(inst, params, config, sample);
  const Rollout s2 = rollout(inst, params, config, sample);
  CHECK(s1.tour == s2.tour);
  double total = 0.0;
  for (std::size_t t = 0; t < s1.steps; ++t) total += std::log(s1.step_probs[t][s1.tour.order[t]]);
  CHECK(std::abs(total - s1.log_prob) <= 1e-9);

  const Instance star({{0.5, 0.5}, {0.4, 0.5}, {0.6, 0.5}, {0.5, 0.4}}, FixedRadius{0.2});
  DecodeOptions forced;
  forced.blocked = {0, 1, 1, 1};
  const Rollout only = rollout(star, params, config, forced);
  CHECK(only.tour.order == std::vector<City>{0});
  CHECK(only.cost == 0.0);
  CHECK(only.log_prob == 0.0);
}

TEST_CASE("decoder invariants over random rollouts") {
  const ModelConfig config = small_config(1);
  ParamStore params = init_model(config, 17);
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t n = 2 + seed % 15;
    const std::size_t k = 1 + seed % (n - 1);
    const Instance inst = random_instance(n, std::min<std::size_t>(k, 4), seed);
    for (std::uint64_t rep = 0; rep < 30; ++rep, ++cases) {
      DecodeOptions options{rep == 0 ? DecodeMode::kGreedy : DecodeMode::kSample, seed * 100 + rep, {}, {}, true};
      const Rollout r = rollout(inst, params, config, options);
      CHECK(is_feasible(inst, r.tour));
      CHECK(r.tour.order.size() <= n);
      CHECK(r.log_prob <= 0.0);
      std::vector<char> seen(n, 0);
      std::vector<double> prev(n, 1.0);
      for (std::size_t t = 0; t < r.steps; ++t) {
        const auto& p = r.step_probs[t];
        double total = 0.0;
        for (City i = 0; i < n; ++i) {
          CHECK(p[i] >= 0.0);
          if (seen[i]) CHECK(p[i] == 0.0);
          total += p[i];
          CHECK(r.guidance[t][i] > 0.0);
          CHECK(r.guidance[t][i] <= prev[i]);
        }
        CHECK(std::abs(total - 1.0) <= 1e-9);
        prev = r.guidance[t];
        CHECK(!seen[r.tour.order[t]]);
        seen[r.tour.order[t]] = 1;
      }
    }
  }
  CHECK(cases >= 1000);
}

TEST_CASE("log-probability gradient matches finite differences end to end") {
  ModelConfig config;
  config.encoder = EncoderConfig{8, 2, 2, 16};
  ParamStore params = init_model(config, 18);
  const Instance inst = random_instance(6, 2, 19);
  const Rollout greedy = rollout(inst, params, config);
  DecodeOptions forced;
  forced.mode = DecodeMode::kForced;
  forced.forced = greedy.tour.order;

  const auto log_prob = [&](ParamStore& store) { return rollout(inst, store, config, forced).log_prob; };
  Tape tape;
  const EncoderOutput enc = encode(tape, params, inst, config.encoder);
  const Rollout r = decode(tape, params, config, inst, enc, forced);
  tape.backward(r.log_prob_var);

  const auto names = params.names();
  Rng rng(20);
  for (int s = 0; s < 20; ++s) {
    const std::string& name = names[rng.below(names.size())];
    const Array& grad = params.at(name).grad;
    const std::size_t coord = rng.below(grad.size());
    CAPTURE(name);
    CAPTURE(coord);
    const auto f = [&](const std::vector<double>& flat) {
      ParamStore copy = params;
      copy.at(name).value = Array(grad.shape(), flat);
      return log_prob(copy);
    };
    const auto& v = params.value(name).values();
    const double numeric =
        oracle::central_difference(f, std::vector<double>(v.begin(), v.end()), coord, 1e-4);
    CHECK(oracle::relative_error(grad[coord], numeric) <= 1e-3);
  }
}
