#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "afp/ops.hpp"

namespace afp {

/// Architecture of the decoder-only model. Positions use a learned absolute
/// table; blocks are pre-norm with a GELU MLP; input and output embeddings
/// are untied.
struct ModelConfig {
  int vocab_size = 64;
  int d_model = 16;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 64;
  int max_seq_len = 32;

  void validate() const;
  /// Closed-form number of scalar weights.
  std::size_t param_count() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Right-padded token matrix. pad_mask is 1 on real tokens; loss_mask is 1
/// on positions whose next-token prediction is scored.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> tokens;
  std::vector<std::uint8_t> pad_mask;
  std::vector<std::uint8_t> loss_mask;

  std::int32_t token(std::size_t b, std::size_t t) const { return tokens[b * seq + t]; }
  /// Number of leading valid positions of row b.
  std::size_t length(std::size_t b) const;
};

namespace model {

// Index layout of ModelParams::tensors.
inline constexpr std::size_t kTokEmb = 0;
inline constexpr std::size_t kPosEmb = 1;
inline constexpr std::size_t kPerLayer = 16;

enum class LayerSlot : std::size_t {
  ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2
};

inline std::size_t layer_index(std::size_t layer, LayerSlot slot) {
  return 2 + layer * kPerLayer + static_cast<std::size_t>(slot);
}
inline std::size_t lnf_gain_index(const ModelConfig& c) { return 2 + c.n_layers * kPerLayer; }
inline std::size_t lnf_bias_index(const ModelConfig& c) { return lnf_gain_index(c) + 1; }
inline std::size_t head_index(const ModelConfig& c) { return lnf_gain_index(c) + 2; }

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace model

template <class T>
struct ModelParams {
  ModelConfig config;
  std::vector<num::Parameter<T>> tensors;

  num::Parameter<T>& at(std::size_t i) { return tensors.at(i); }
  const num::Parameter<T>& at(std::size_t i) const { return tensors.at(i); }
  num::Parameter<T>& by_name(const std::string& name);

  std::size_t scalar_count() const;
  void zero_grad();
  bool operator==(const ModelParams& o) const;

  template <class U>
  ModelParams<U> cast() const;
};

/// Scaled-normal initialization: std 0.02 for weight matrices and
/// embeddings, 0.02/sqrt(2*n_layers) for the output projection, zero biases
/// and unit layer-norm gains.
template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Parameters placed into one graph; reuse for every forward in that graph.
struct BoundParams {
  std::vector<num::Var> vars;
  num::Var operator[](std::size_t i) const { return vars[i]; }
};

template <class T>
BoundParams bind(num::Graph<T>& g, ModelParams<T>& params, bool trainable);
template <class T>
BoundParams bind_const(num::Graph<T>& g, const ModelParams<T>& params);

/// hidden_states[0] is the embedding output and hidden_states[l] the output
/// of block l, each [batch*seq, d_model]. Logits are [batch*seq, vocab].
struct ForwardResult {
  std::vector<num::Var> hidden_states;
  std::optional<num::Var> logits;
  std::size_t batch = 0;
  std::size_t seq = 0;
};

struct ForwardOptions {
  /// Stop after this block (hidden_states then has upto_layer+1 entries and
  /// no logits are produced). Unset runs the whole model.
  std::optional<int> upto_layer;
};

template <class T>
ForwardResult forward(num::Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                      const TokenBatch& batch, ForwardOptions options = {});

/// Mean -log P over the next-token predictions selected by batch.loss_mask.
template <class T>
num::LossResult sequence_nll(num::Graph<T>& g, const BoundParams& p, const ModelConfig& config,
                             const TokenBatch& batch);

/// (logit row, target) pairs selected by a loss mask, in row-major order.
struct ScoredPositions {
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> mask;
};
ScoredPositions scored_positions(const TokenBatch& batch);

}  // namespace afp
