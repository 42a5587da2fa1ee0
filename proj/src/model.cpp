#include "afp/model.hpp"

#include <cmath>
#include <string>

#include "afp/rng.hpp"

namespace afp {

using num::Graph;
using num::Parameter;
using num::Tensor;
using num::Var;

namespace {

constexpr const char* kSlotNames[model::kPerLayer] = {
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq",  "attn.wk",  "attn.bk", "attn.wv", "attn.bv",
    "attn.wo",  "attn.bo",  "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1",  "mlp.w2",  "mlp.b2"};

}  // namespace

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (vocab_size < 1) bad("vocab_size must be positive");
  if (d_model < 1) bad("d_model must be positive");
  if (n_layers < 0) bad("n_layers must be non-negative");
  if (n_heads < 1) bad("n_heads must be positive");
  if (d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
  if (d_ff < 1) bad("d_ff must be positive");
  if (max_seq_len < 2) bad("max_seq_len must be at least 2");
}

std::size_t ModelConfig::param_count() const {
  const std::size_t V = vocab_size, d = d_model, S = max_seq_len, F = d_ff, L = n_layers;
  const std::size_t per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * F + F) + (F * d + d);
  return V * d + S * d + L * per_layer + 2 * d + d * V;
}

std::size_t TokenBatch::length(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < seq; ++t)
    if (pad_mask.empty() || pad_mask[b * seq + t]) n = t + 1;
  return n;
}

template <class T>
Parameter<T>& ModelParams<T>::by_name(const std::string& name) {
  for (auto& p : tensors)
    if (p.name == name) return p;
  throw UsageError("no parameter named '" + name + "'");
}

template <class T>
std::size_t ModelParams<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : tensors) n += p.value.size();
  return n;
}

template <class T>
void ModelParams<T>::zero_grad() {
  for (auto& p : tensors) p.zero_grad();
}

template <class T>
bool ModelParams<T>::operator==(const ModelParams& o) const {
  if (!(config == o.config) || tensors.size() != o.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != o.tensors[i].name || !(tensors[i].value == o.tensors[i].value))
      return false;
  }
  return true;
}

template <class T>
template <class U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.config = config;
  for (const auto& p : tensors) out.tensors.emplace_back(p.name, p.value.template cast<U>());
  return out;
}

template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t V = config.vocab_size, d = config.d_model, S = config.max_seq_len,
                    F = config.d_ff;
  ModelParams<T> params;
  params.config = config;
  Pcg32 root = make_stream(seed, "init");
  auto normal = [&](std::string name, num::Shape shape, double stddev) {
    Tensor<T> t(std::move(shape));
    Pcg32 rng = root.derive(name);
    for (auto& x : t.vec()) x = static_cast<T>(stddev * rng.normal());
    params.tensors.emplace_back(std::move(name), std::move(t));
  };
  auto constant = [&](std::string name, num::Shape shape, T v) {
    params.tensors.emplace_back(std::move(name), Tensor<T>(std::move(shape), v));
  };
  constexpr double kStd = 0.02;
  normal("tok_emb", {V, d}, kStd);
  normal("pos_emb", {S, d}, kStd);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    auto nm = [&](model::LayerSlot s) { return pre + kSlotNames[static_cast<std::size_t>(s)]; };
    using S_ = model::LayerSlot;
    constant(nm(S_::ln1_gain), {d}, T{1});
    constant(nm(S_::ln1_bias), {d}, T{0});
    normal(nm(S_::wq), {d, d}, kStd);
    constant(nm(S_::bq), {d}, T{0});
    normal(nm(S_::wk), {d, d}, kStd);
    constant(nm(S_::bk), {d}, T{0});
    normal(nm(S_::wv), {d, d}, kStd);
    constant(nm(S_::bv), {d}, T{0});
    normal(nm(S_::wo), {d, d}, kStd);
    constant(nm(S_::bo), {d}, T{0});
    constant(nm(S_::ln2_gain), {d}, T{1});
    constant(nm(S_::ln2_bias), {d}, T{0});
    normal(nm(S_::w1), {d, F}, kStd);
    constant(nm(S_::b1), {F}, T{0});
    normal(nm(S_::w2), {F, d}, kStd);
    constant(nm(S_::b2), {d}, T{0});
  }
  constant("ln_f.gain", {d}, T{1});
  constant("ln_f.bias", {d}, T{0});
  const double head_std =
      kStd / std::sqrt(2.0 * static_cast<double>(std::max(config.n_layers, 1)));
  normal("head", {d, V}, head_std);
  return params;
}

template <class T>
BoundParams bind(Graph<T>& g, ModelParams<T>& params, bool trainable) {
  BoundParams b;
  b.vars.reserve(params.tensors.size());
  for (auto& p : params.tensors) b.vars.push_back(trainable ? g.param(p) : g.constant_ref(p.value));
  return b;
}

template <class T>
BoundParams bind_const(Graph<T>& g, const ModelParams<T>& params) {
  BoundParams b;
  b.vars.reserve(params.tensors.size());
  for (const auto& p : params.tensors) b.vars.push_back(g.constant_ref(p.value));
  return b;
}

namespace {

template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  return num::add_bias(g, num::matmul(g, x, w), b);
}

void check_batch(const ModelConfig& config, const TokenBatch& batch) {
  const std::size_t n = batch.batch * batch.seq;
  if (batch.tokens.size() != n) {
    throw DimensionError("token batch holds " + std::to_string(batch.tokens.size()) +
                         " ids for shape [" + std::to_string(batch.batch) + ", " +
                         std::to_string(batch.seq) + "]");
  }
  if (!batch.pad_mask.empty() && batch.pad_mask.size() != n) {
    throw DimensionError("pad mask length does not match the token batch");
  }
  if (batch.seq > static_cast<std::size_t>(config.max_seq_len)) {
    throw LengthError("sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                      std::to_string(config.max_seq_len));
  }
  if (batch.seq == 0 || batch.batch == 0) throw DimensionError("empty token batch");
  for (auto id : batch.tokens) {
    if (id < 0 || id >= config.vocab_size) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
}

}  // namespace

template <class T>
ForwardResult forward(Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                      const TokenBatch& batch, ForwardOptions options) {
  check_batch(config, batch);
  const int last = options.upto_layer.value_or(config.n_layers);
  if (last < 0 || last > config.n_layers) {
    throw UsageError("layer " + std::to_string(last) + " outside [0, " +
                     std::to_string(config.n_layers) + "]");
  }
  const std::size_t B = batch.batch, S = batch.seq;
  std::vector<std::int32_t> positions(B * S);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % S);

  ForwardResult out;
  out.batch = B;
  out.seq = S;
  Var x = num::add(g, num::embedding(g, p[model::kTokEmb], batch.tokens),
                   num::embedding(g, p[model::kPosEmb], positions));
  out.hidden_states.push_back(x);
  using model::LayerSlot;
  for (int l = 0; l < last; ++l) {
    auto P = [&](LayerSlot s) { return p[model::layer_index(l, s)]; };
    Var a = num::layer_norm(g, x, P(LayerSlot::ln1_gain), P(LayerSlot::ln1_bias), model::kLayerNormEps);
    Var q = linear(g, a, P(LayerSlot::wq), P(LayerSlot::bq));
    Var k = linear(g, a, P(LayerSlot::wk), P(LayerSlot::bk));
    Var v = linear(g, a, P(LayerSlot::wv), P(LayerSlot::bv));
    Var att = num::causal_attention(g, q, k, v, B, S, config.n_heads, batch.pad_mask);
    x = num::add(g, x, linear(g, att, P(LayerSlot::wo), P(LayerSlot::bo)));
    Var m = num::layer_norm(g, x, P(LayerSlot::ln2_gain), P(LayerSlot::ln2_bias), model::kLayerNormEps);
    Var h = num::gelu(g, linear(g, m, P(LayerSlot::w1), P(LayerSlot::b1)));
    x = num::add(g, x, linear(g, h, P(LayerSlot::w2), P(LayerSlot::b2)));
    out.hidden_states.push_back(x);
  }
  if (!options.upto_layer || *options.upto_layer == config.n_layers) {
    Var f = num::layer_norm(g, x, p[model::lnf_gain_index(config)], p[model::lnf_bias_index(config)],
                            model::kLayerNormEps);
    out.logits = num::matmul(g, f, p[model::head_index(config)]);
  }
  return out;
}

ScoredPositions scored_positions(const TokenBatch& batch) {
  const std::size_t n = batch.batch * batch.seq;
  if (batch.loss_mask.size() != n) {
    throw DimensionError("loss mask length " + std::to_string(batch.loss_mask.size()) +
                         " does not match the token batch");
  }
  ScoredPositions s;
  s.targets.assign(n, 0);
  s.mask.assign(n, 0);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t < batch.seq; ++t) {
      const std::size_t i = b * batch.seq + t;
      if (!batch.loss_mask[i]) continue;
      if (t + 1 >= batch.seq) {
        throw UsageError("loss mask selects the final position of row " + std::to_string(b) +
                         ", which has no next token");
      }
      s.targets[i] = batch.tokens[i + 1];
      s.mask[i] = 1;
    }
  }
  return s;
}

template <class T>
num::LossResult sequence_nll(Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                             const TokenBatch& batch) {
  ScoredPositions s = scored_positions(batch);
  ForwardResult fr = forward(g, p, config, batch);
  return num::cross_entropy_rows(g, *fr.logits, s.targets, s.mask);
}

#define AFP_INSTANTIATE_MODEL(T)                                                                 \
  template struct ModelParams<T>;                                                                \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                     \
  template BoundParams bind<T>(Graph<T>&, ModelParams<T>&, bool);                                \
  template BoundParams bind_const<T>(Graph<T>&, const ModelParams<T>&);                          \
  template ForwardResult forward<T>(Graph<T>&, const BoundParams&, const ModelConfig&,           \
                                    const TokenBatch&, ForwardOptions);                          \
  template num::LossResult sequence_nll<T>(Graph<T>&, const BoundParams&, const ModelConfig&,    \
                                           const TokenBatch&);

AFP_INSTANTIATE_MODEL(float)
AFP_INSTANTIATE_MODEL(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace afp
