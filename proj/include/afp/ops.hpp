#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "afp/graph.hpp"

namespace afp::num {

enum class Pooling { mean, max, last_token };

std::string_view pooling_name(Pooling p);
Pooling parse_pooling(std::string_view name);

/// Scalar loss plus the number of rows that contributed. When every row is
/// masked out the value is exactly zero and `empty` is set.
struct LossResult {
  Var value;
  std::size_t counted = 0;
  bool empty = false;
};

// Linear algebra. All matrices are rank-2.
template <class T> Var matmul(Graph<T>& g, Var a, Var b);
template <class T> Var transpose(Graph<T>& g, Var a);

// Elementwise, identical shapes.
template <class T> Var add(Graph<T>& g, Var a, Var b);
template <class T> Var sub(Graph<T>& g, Var a, Var b);
template <class T> Var mul(Graph<T>& g, Var a, Var b);
template <class T> Var scale(Graph<T>& g, Var a, double c);
template <class T> Var gelu(Graph<T>& g, Var x);

/// x[..., n] + bias[n]
template <class T> Var add_bias(Graph<T>& g, Var x, Var bias);

template <class T> Var sum(Graph<T>& g, Var x);
template <class T> Var mean(Graph<T>& g, Var x);
template <class T> Var reshape(Graph<T>& g, Var x, Shape shape);

template <class T> Var softmax_lastdim(Graph<T>& g, Var x);
template <class T> Var layer_norm(Graph<T>& g, Var x, Var gain, Var bias, double eps);

/// Mean over unmasked rows of -log softmax(logits)[target]. `mask` may be
/// empty, meaning every row counts.
template <class T>
LossResult cross_entropy_rows(Graph<T>& g, Var logits, std::span<const std::int32_t> targets,
                              std::span<const std::uint8_t> mask);

/// Row lookup: out[i] = table[ids[i]].
template <class T> Var embedding(Graph<T>& g, Var table, std::span<const std::int32_t> ids);

/// Multi-head causal self-attention on packed projections q, k, v of shape
/// [batch*seq, d]. Key positions with key_valid == 0 are excluded.
template <class T>
Var causal_attention(Graph<T>& g, Var q, Var k, Var v, std::size_t batch, std::size_t seq,
                     std::size_t heads, std::span<const std::uint8_t> key_valid);

/// Reduces x[batch*seq, d] to [batch, d] over the valid positions of each row.
template <class T>
Var pool_rows(Graph<T>& g, Var x, std::size_t batch, std::size_t seq,
              std::span<const std::uint8_t> valid, Pooling method);

/// Divides each row by its L2 norm. Zero rows raise NumericError.
template <class T> Var l2_normalize_rows(Graph<T>& g, Var x);

}  // namespace afp::num
