#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "afp/model.hpp"

namespace afp::repr {

using Matrix = num::Tensor<double>;

/// Sentence vectors pooled from one layer of the model.
struct PooledBatch {
  Matrix vectors;  // [batch, d_model]
  num::Pooling method = num::Pooling::mean;
  int layer = 1;

  std::size_t size() const { return vectors.rows(); }
};

/// Pools hidden[batch*seq, d] (or [batch, seq, d]) over valid positions.
template <class T>
PooledBatch pool(const num::Tensor<T>& hidden, std::size_t batch, std::size_t seq,
                 std::span<const std::uint8_t> pad_mask, num::Pooling method, int layer);

/// Runs the model up to `layer` on `batch` and pools that layer.
template <class T>
PooledBatch encode(const ModelParams<T>& params, const TokenBatch& batch, int layer,
                   num::Pooling method);

double cosine(std::span<const double> u, std::span<const double> v);

/// Mean squared distance between row i of `x` and row i of `x_pos`, after
/// L2-normalizing every row.
double alignment_metric(const Matrix& x, const Matrix& x_pos);

/// log of the mean of exp(-2 |x_i - x_j|^2) over ordered pairs i != j of
/// L2-normalized rows, evaluated with log-sum-exp.
double uniformity_metric(const Matrix& points);

/// Fraction of rows i whose nearest target (by cosine) is row i. Ties go
/// to the lowest index.
double retrieval_acc_at_1(const PooledBatch& src, const PooledBatch& tgt);
double retrieval_acc_at_1(const Matrix& src, const Matrix& tgt);

struct Pca2 {
  Matrix coords;      // [n, 2]
  Matrix components;  // [2, d], unit rows
  std::array<double, 2> eigenvalues{};
  double total_variance = 0;  // trace of the covariance
  std::array<int, 2> iterations{};
};

struct PcaOptions {
  double tolerance = 1e-9;
  int max_iterations = 10'000;
};

/// Projection of mean-centered rows onto the two leading covariance
/// eigenvectors, found by power iteration with deflation. Each component
/// is oriented so its first non-negligible coordinate is positive.
Pca2 pca2(const Matrix& vectors, PcaOptions options = {});

/// Copies selected rows, e.g. for splitting a stacked batch.
Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t end);
Matrix stack_rows(const Matrix& a, const Matrix& b);

}  // namespace afp::repr
