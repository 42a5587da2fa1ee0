#include <cmath>
#include <cstring>

#include "afp/checkpoint.hpp"
#include "afp/model.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace afp;

namespace {

ModelConfig tiny() { return ModelConfig{20, 8, 2, 2, 16, 12}; }

TokenBatch single(const std::vector<std::int32_t>& toks) {
  TokenBatch b;
  b.batch = 1;
  b.seq = toks.size();
  b.tokens = toks;
  b.pad_mask.assign(toks.size(), 1);
  b.loss_mask.assign(toks.size(), 0);
  return b;
}

// Random weights at a larger scale than init so every block matters.
ModelParams<double> random_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = init_params<double>(c, seed);
  Pcg32 r(seed, 99);
  for (auto& t : p.tensors)
    for (auto& x : t.value.vec()) x += 0.3 * r.normal();
  return p;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter count matches the closed form") {
  for (const ModelConfig& c : {tiny(), ModelConfig{64, 16, 2, 2, 64, 32}, ModelConfig{267, 64, 4, 4, 256, 32}}) {
    const auto p = init_params<float>(c, 1);
    const std::size_t V = c.vocab_size, d = c.d_model, L = c.n_layers, F = c.d_ff, S = c.max_seq_len;
    const std::size_t expect = V * d + S * d + L * (2 * d + 4 * (d * d + d) + 2 * d + d * F + F + F * d + d) + 2 * d + d * V;
    CHECK(p.scalar_count() == expect);
    CHECK(c.param_count() == expect);
  }
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS((ModelConfig{20, 9, 2, 2, 16, 12}.validate()), ConfigError);
  CHECK_THROWS_AS((ModelConfig{0, 8, 2, 2, 16, 12}.validate()), ConfigError);
  CHECK_THROWS_AS((ModelConfig{20, 8, -1, 2, 16, 12}.validate()), ConfigError);
  CHECK_NOTHROW(tiny().validate());
}

TEST_CASE("init is deterministic and scaled") {
  const auto a = init_params<double>(tiny(), 5);
  const auto b = init_params<double>(tiny(), 5);
  const auto c = init_params<double>(tiny(), 6);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const ModelConfig big{200, 64, 4, 4, 256, 32};
  const auto p = init_params<double>(big, 3);
  auto stdev = [](const num::Tensor<double>& t) {
    double s = 0, s2 = 0;
    for (double x : t.vec()) {
      s += x;
      s2 += x * x;
    }
    const double n = static_cast<double>(t.size());
    return std::sqrt(s2 / n - (s / n) * (s / n));
  };
  CHECK(stdev(p.tensors[model::kTokEmb].value) == doctest::Approx(0.02).epsilon(0.05));
  CHECK(stdev(p.tensors[model::head_index(big)].value) == doctest::Approx(0.02 / std::sqrt(8.0)).epsilon(0.05));
  for (double x : p.tensors[model::layer_index(0, model::LayerSlot::ln1_gain)].value.vec()) CHECK(x == 1.0);
  for (double x : p.tensors[model::layer_index(0, model::LayerSlot::bq)].value.vec()) CHECK(x == 0.0);
}

TEST_CASE("forward matches the scalar reference implementation") {
  const ModelConfig c = tiny();
  const auto params = random_params(c, 11);
  const std::vector<std::int32_t> toks{3, 7, 1, 19, 0, 4, 4, 12};
  const auto ref = oracle::forward(params, toks);
  num::Graph<double> g;
  const auto bp = bind_const(g, params);
  const auto fr = forward(g, bp, c, single(toks));
  const auto& logits = g.value(*fr.logits);
  for (std::size_t t = 0; t < toks.size(); ++t)
    for (int v = 0; v < c.vocab_size; ++v) CHECK(logits.at(t, v) == doctest::Approx(ref.logits[t][v]).epsilon(1e-10));
  REQUIRE(fr.hidden_states.size() == 3);
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& h = g.value(fr.hidden_states[l]);
    for (std::size_t t = 0; t < toks.size(); ++t)
      for (int d = 0; d < c.d_model; ++d) CHECK(h.at(t, d) == doctest::Approx(ref.hidden[l][t][d]).epsilon(1e-10));
  }
}

TEST_CASE("truncated forward stops early without logits") {
  const ModelConfig c = tiny();
  const auto params = random_params(c, 12);
  num::Graph<double> g;
  const auto bp = bind_const(g, params);
  const auto fr = forward(g, bp, c, single({1, 2, 3}), ForwardOptions{1});
  CHECK(fr.hidden_states.size() == 2);
  CHECK_FALSE(fr.logits.has_value());
  CHECK_THROWS_AS(forward(g, bp, c, single({1, 2, 3}), ForwardOptions{3}), UsageError);
}

TEST_CASE("logits are causal and padding does not leak") {
  const ModelConfig c = tiny();
  const auto params = random_params(c, 13);
  auto logits_of = [&](const TokenBatch& b) {
    num::Graph<double> g;
    const auto bp = bind_const(g, params);
    return g.value(*forward(g, bp, c, b).logits);
  };
  const auto a = logits_of(single({5, 6, 7, 8}));
  const auto b = logits_of(single({5, 6, 9, 2}));
  for (int v = 0; v < c.vocab_size; ++v) {
    CHECK(a.at(0, v) == b.at(0, v));
    CHECK(a.at(1, v) == b.at(1, v));
  }
  TokenBatch padded;
  padded.batch = 2;
  padded.seq = 4;
  padded.tokens = {5, 6, 7, 8, 5, 6, 0, 0};
  padded.pad_mask = {1, 1, 1, 1, 1, 1, 0, 0};
  padded.loss_mask.assign(8, 0);
  const auto p = logits_of(padded);
  const auto short_row = logits_of(single({5, 6}));
  for (int v = 0; v < c.vocab_size; ++v) {
    CHECK(p.at(4, v) == doctest::Approx(short_row.at(0, v)).epsilon(1e-13));
    CHECK(p.at(5, v) == doctest::Approx(short_row.at(1, v)).epsilon(1e-13));
  }
}

TEST_CASE("bad inputs raise named errors") {
  const ModelConfig c = tiny();
  const auto params = init_params<double>(c, 1);
  num::Graph<double> g;
  const auto bp = bind_const(g, params);
  CHECK_THROWS_AS(forward(g, bp, c, single(std::vector<std::int32_t>(13, 1))), LengthError);
  CHECK_THROWS_AS(forward(g, bp, c, single({1, 20})), IndexError);
  auto b = single({1, 2, 3});
  b.loss_mask = {0, 0, 1};
  CHECK_THROWS_AS(sequence_nll(g, bp, c, b), UsageError);
}

TEST_CASE("sequence_nll matches the per-position oracle") {
  const ModelConfig c = tiny();
  const auto params = random_params(c, 14);
  const std::vector<std::vector<std::int32_t>> seqs{{1, 4, 6, 2, 9, 3}, {1, 8, 2, 5}};
  const std::vector<std::vector<std::uint8_t>> masks{{0, 0, 1, 1, 1, 0}, {0, 1, 1, 0}};
  TokenBatch b;
  b.batch = 2;
  b.seq = 6;
  b.tokens = {1, 4, 6, 2, 9, 3, 1, 8, 2, 5, 0, 0};
  b.pad_mask = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
  b.loss_mask = {0, 0, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0};
  num::Graph<double> g;
  const auto bp = bind_const(g, params);
  const double got = g.value(sequence_nll(g, bp, c, b).value).item();
  CHECK(got == doctest::Approx(oracle::sequence_nll(params, seqs, masks)).epsilon(1e-10));
}

TEST_CASE("untrained model is close to uniform") {
  const ModelConfig c{64, 16, 2, 2, 64, 32};
  const auto params = init_params<double>(c, 2);
  auto b = single({1, 10, 20, 30, 40, 50, 3});
  b.loss_mask = {1, 1, 1, 1, 1, 1, 0};
  num::Graph<double> g;
  const auto bp = bind_const(g, params);
  const double nll = g.value(sequence_nll(g, bp, c, b).value).item();
  CHECK(nll == doctest::Approx(std::log(64.0)).epsilon(0.05));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto dir = testutil::temp_dir("ckpt");
  const auto pf = init_params<float>(tiny(), 21);
  const auto pd = random_params(tiny(), 22);
  save_checkpoint(dir / "f.afpt", pf);
  save_checkpoint(dir / "d.afpt", pd);
  CHECK(load_checkpoint_as<float>(dir / "f.afpt") == pf);
  CHECK(load_checkpoint_as<double>(dir / "d.afpt") == pd);
  CHECK(std::holds_alternative<ModelParams<float>>(load_checkpoint(dir / "f.afpt")));

  const auto bytes = read_file_bytes(dir / "f.afpt");
  REQUIRE(bytes.size() > 8);
  CHECK(std::memcmp(bytes.data(), "AFPT", 4) == 0);
  const auto recs = decode_checkpoint(bytes);
  CHECK(recs.front().name == "config");
  CHECK(recs.front().dtype == DType::i64);
  CHECK(recs.size() == pf.tensors.size() + 1);
  CHECK(encode_checkpoint(recs) == bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), CorruptArtifact);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> trunc(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(deserialize_params(trunc), CorruptArtifact);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(deserialize_params(extra), CorruptArtifact);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.afpt"), IoError);
}

}  // TEST_SUITE
